"""Training laboratory for flow-based samplers on small enumerable DAGs."""

from .envs import (
    EnumerationBudgetError,
    Edge,
    Trajectory,
    make_env,
    parse_state,
    trajectories_to,
)
from .rewards import BagReward, StringMotifReward, TableReward, load_reward_table
from .policy import (
    EnvTable,
    FlowModel,
    TabularTrajectoryFlow,
    TrajBatch,
    forward_dp,
    sample_backward_batch,
    sample_forward_batch,
)
from .objectives import (
    SubstructureGuide,
    back_gtb_loss_batch,
    flow_entropy,
    forward_gtb_loss_batch,
    tb_loss,
    tb_loss_batch,
)
from .replay import DatasetX
from .evaluation import (
    TargetDistribution,
    anderson_darling,
    build_target,
    exact_sampler_distribution,
    rounds_to_match_target,
    summary_metrics,
    tv_distance,
)
from .training import TrainConfig, Trainer, run_experiment
from .config import ConfigError, ExperimentConfig, load_config, render_config
from . import theory

__version__ = "0.1.0"

__all__ = [
    "BagReward",
    "ConfigError",
    "DatasetX",
    "Edge",
    "EnumerationBudgetError",
    "EnvTable",
    "ExperimentConfig",
    "FlowModel",
    "StringMotifReward",
    "SubstructureGuide",
    "TableReward",
    "TabularTrajectoryFlow",
    "TargetDistribution",
    "TrainConfig",
    "Trainer",
    "TrajBatch",
    "Trajectory",
    "anderson_darling",
    "back_gtb_loss_batch",
    "build_target",
    "exact_sampler_distribution",
    "flow_entropy",
    "forward_dp",
    "forward_gtb_loss_batch",
    "load_config",
    "load_reward_table",
    "make_env",
    "parse_state",
    "render_config",
    "rounds_to_match_target",
    "run_experiment",
    "sample_backward_batch",
    "sample_forward_batch",
    "summary_metrics",
    "tb_loss",
    "tb_loss_batch",
    "theory",
    "trajectories_to",
    "tv_distance",
]
