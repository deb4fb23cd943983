"""Draw one cross sample from a model population and estimate its total.

Rows play the role of maternity units and columns of days.  Both
dimensions are sampled independently by simple random sampling and the
sampled cells are their cross product.
"""

from ccsampling import streams
from ccsampling.designs import CrossSample, DesignSpec
from ccsampling.estimation import ht_total
from ccsampling.population import ModelParams, generate_grid
from ccsampling.varest import estimate_variances

grid = generate_grid(ModelParams(mu=200, sigma_m=5, sigma_d=5, sigma_e=5, n_rows=40, n_cols=30, seed=11))
dm, dd = DesignSpec.si(40, 8), DesignSpec.si(30, 6)

rng = streams.generator(11, streams.REPLICATION, 0)
sample = CrossSample(dm.draw(rng), dd.draw(rng))
est = ht_total(grid, dm, dd, sample)
print(f"true total      {grid.total:12.1f}")
print(f"HT estimate     {est.t_hat:12.1f}  from {sample.shape[0]} x {sample.shape[1]} cells")

# The unbiased estimators can go negative; the simplified ones cannot.
rep = estimate_variances(grid, dm, dd, sample)
for name in ("v_ht", "v_yg", "v_simp1", "v_simp2", "v_simp3"):
    print(f"{name:8s} {getattr(rep, name):14.1f}")
