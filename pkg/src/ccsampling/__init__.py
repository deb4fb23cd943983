"""Estimation under cross-classified sampling of a two-way population."""

from .bias import BiasInputs, BiasResult, closed_form_rb, monotonicity_check
from .designs import (
    CrossSample,
    DesignError,
    DesignSpec,
    DesignSyntaxError,
    ZeroJointProbabilityError,
    enumerate_cross,
    parse_design,
)
from .estimation import (
    DegenerateSampleError,
    ZeroInclusionProbabilityError,
    expanded,
    ht_ratio,
    ht_total,
    linearize,
)
from .exact import (
    ExactVarianceReport,
    ccs_vs_dm_difference,
    ccs_vs_dm_difference_fixed,
    decompose,
    v_ccs,
    variance_ratio_sweep,
)
from .io import read_manifest, read_population, write_manifest, write_population
from .montecarlo import (
    ExperimentSpec,
    SimulationSummary,
    coverage_study,
    model_bias_experiment,
    run_experiment,
    run_table,
)
from .population import (
    ConstantP,
    CountVariablePair,
    LogitP,
    ModelParams,
    PopulationGrid,
    calibrate_beta,
    generate_count_pair,
    generate_grid,
)
from .varest import estimate_variances, find_negative_case, v_ht, v_simplified, v_yg

__version__ = "0.1.0"
