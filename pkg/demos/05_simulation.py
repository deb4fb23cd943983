"""A replicated Monte Carlo cell: relative bias, negative counts, coverage.

Workers only change the wall time; the summary is identical for any
worker count because every replication has its own random stream.
"""

import json

from ccsampling.designs import DesignSpec
from ccsampling.montecarlo import ExperimentSpec, run_experiment
from ccsampling.population import ModelParams, generate_grid

grid = generate_grid(ModelParams(200, 5, 5, 5, 100, 100, seed=2))
spec = ExperimentSpec(
    y=grid,
    dm=DesignSpec.si(100, 5),
    dd=DesignSpec.si(100, 5),
    reps=2000,
    truth="exact",
    ci_level=0.95,
    seed=5,
)
summary = run_experiment(spec, workers=1)
print(json.dumps({k: summary.to_dict()[k] for k in ("rb_mc", "neg_count", "coverage", "true_variance")}, indent=2))
