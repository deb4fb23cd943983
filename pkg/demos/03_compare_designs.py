"""How much does cross-classification cost against two-stage sampling?

For each pair of SI sample sizes the script prints the two-stage
(rows first) variance as a percentage of the cross-classified one.
"""

from ccsampling.exact import variance_ratio_sweep
from ccsampling.population import ModelParams, generate_grid

grid = generate_grid(ModelParams(200, 5, 5, 5, 1000, 1000, seed=1))
sizes = (5, 10, 100, 500)
rows = variance_ratio_sweep(grid, [(a, b) for a in sizes for b in sizes])
table = {(r["n_m"], r["n_d"]): r["ratio_pct"] for r in rows}

print("n_M \\ n_D " + "".join(f"{b:>8d}" for b in sizes))
for a in sizes:
    print(f"{a:>9d} " + "".join(f"{table[(a, b)]:8.1f}" for b in sizes))
