"""Safe run-to-run controller tuning via contextual constrained Bayesian
optimization, with a cascade motion-axis simulator for validation."""

from .baselines import GainGrid, lpv_interpolate, record_grid, select_per_task_optima
from .config import ExperimentConfig, load_config, save_config, scenario_config, validate_config
from .experiments import RunArtifact, run_experiment
from .goose import Criteria, GooseConfig, GooseSnapshot, GooseTuner, compute_optimizer
from .gp import (
    FactorizationError,
    GpModel,
    InputPoint,
    KernelSpec,
    joint_kernel,
    kernel_eval,
    multi_task_kernel_eval,
    validate_hyperparameters,
)
from .metrics import MetricConfig, constraint, cost, sigmoid_filter
from .parallel import (
    OptimaGrid,
    ParallelConfig,
    ParallelCoordinator,
    ThreadedWorkerPool,
    lookup_query,
    lookup_update,
    phase_switch_refresh,
)
from .plant import (
    ControllerGains,
    MotionLimits,
    MotionProfile,
    MotionRun,
    PlantParams,
    TaskLayout,
    apply_task,
    generate_trajectory,
    simulate_closed_loop,
    simulate_cycle,
)
from .pso import PsoConfig, PsoResult, Swarm, init_swarm, pso_optimize
from .reports import emit_report
from .safeset import (
    EvaluationHistory,
    SafeSeed,
    expander_set,
    expansion_operator,
    optimistic_member,
    pessimistic_member,
    safe_set_from_history,
)

__version__ = "0.1.0"
