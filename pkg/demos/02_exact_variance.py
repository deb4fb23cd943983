"""Exact design variance and its decompositions.

The fast route works from centered block sums; the generic route runs the
defining quadruple sums literally in rational arithmetic.  On a small grid
both are available and agree.
"""

from ccsampling.designs import DesignSpec
from ccsampling.exact import decompose
from ccsampling.population import ModelParams, generate_grid

grid = generate_grid(ModelParams(200, 5, 5, 5, 6, 5, seed=3))
dm = DesignSpec.stsi([(3, 2), (3, 2)])
dd = DesignSpec.si(5, 3)

fast = decompose(grid, dm, dd, method="fast")
slow = decompose(grid, dm, dd, method="generic")
for key, value in fast.to_dict().items():
    print(f"{key:10s} fast={value:14.4f} generic={getattr(slow, key):14.4f}")

# The same variance, split by sampling stage under each two-stage reading.
print("v1 + v2 - v3        ", fast.v1 + fast.v2 - fast.v3)
print("md_psu + dm_psu + v3", fast.v_md_psu + fast.v_dm_psu + fast.v3)
