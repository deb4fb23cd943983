"""Estimating a ratio of two count totals.

Counts are drawn around the model grid and thinned with probability 0.3;
the variance estimators are applied to the estimated linearized variable.
"""

from ccsampling import streams
from ccsampling.designs import CrossSample, DesignSpec
from ccsampling.estimation import ht_ratio, linearize
from ccsampling.population import ConstantP, ModelParams, generate_count_pair
from ccsampling.varest import estimate_variances

pair = generate_count_pair(ModelParams(200, 5, 5, 5, 50, 50, seed=9), ConstantP(0.3))
dm = dd = DesignSpec.si(50, 10)
rng = streams.generator(9, streams.REPLICATION, 0)
s = CrossSample(dm.draw(rng), dd.draw(rng))

r = ht_ratio(pair.y, pair.x, dm, dd, s)
print(f"true ratio {pair.y.total / pair.x.total:.4f}, estimate {r.r_hat:.4f}")
u = linearize(pair.y, pair.x, dm, dd, s)
rep = estimate_variances(u, dm, dd, s)
print(f"standard error from v_simp3: {rep.v_simp3 ** 0.5:.5f}")
