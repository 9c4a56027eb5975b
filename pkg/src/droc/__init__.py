"""Distributionally robust optimal control with data-driven ambiguity sets.

Learns a Gaussian noise reference (stationary MLE or per-dimension GPs over
states) and a KL-divergence ambiguity radius (kNN estimation, global max over
receding-horizon windows), then solves receding-horizon control by
risk-sensitive DDP with a cross-entropy search over the risk-sensitivity
parameter. The iLQG baseline is the same solver at theta = 0.
"""

from .benchmark import BenchmarkSpec, ResultTable, emit_plot_data, run_benchmark
from .config import DEFAULT_CONFIG, load_config
from .costs import CostExpansion, QuadCost, expand, stage_cost, terminal_cost, total_cost
from .dynamics import (
    Linearization,
    PlantModel,
    car_like_robot,
    linear_plant,
    linearize,
    step,
)
from .errors import (
    DegenerateDistanceWarning,
    DimensionError,
    DrocError,
    IllConditionedKernel,
    NumericalFault,
    RiskInfeasible,
    SingularH,
    SingularLinearization,
    TooFewSamples,
    WindowTooLarge,
)
from .kl_bound import KnnConfig, horizon_bound, knn_kl, stationary_bound
from .mpc import (
    CeResult,
    CrossEntropyConfig,
    DrocObjective,
    InnerProblem,
    MpcRecord,
    MpcRun,
    NoiseStream,
    ZeroNoise,
    cross_entropy_theta,
    droc_objective,
    minimize_log_scalar,
    run_mpc,
)
from .noise_learning import (
    GaussianRef,
    GpModel,
    MixtureNoise,
    StateDependentRef,
    StationaryRef,
    TrainingSet,
    collect_training_data,
    fit_gp,
    fit_state_dependent,
    gaussian_bump_mixture,
    grid_states,
    load_gp_models,
    load_training_set,
    mle_gaussian,
    predict_ref,
    sample_true_noise,
    save_gp_models,
    save_training_set,
)
from .risk_ddp import (
    AffinePolicy,
    BackwardAux,
    QuadraticValue,
    RiskParams,
    SolveResult,
    SolverOptions,
    backward_pass,
    entropic_risk_mc,
    evaluate_policy_risk,
    forward_rollout,
    rollout_cost,
    solve_inner,
)

__version__ = "0.1.0"
