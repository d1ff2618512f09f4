"""Off-policy evaluation for adaptively collected contextual bandit data."""
from .agents import (
    AgentConfig,
    FloorSchedule,
    LinearThompsonSampling,
    TabularThompsonSampling,
    apply_floor,
    collect,
    ts_probabilities,
)
from .core import (
    BanditLog,
    ContextSpace,
    FunctionPolicy,
    LoggedStep,
    PolicyTable,
    PropensitySnapshot,
    true_policy_value,
)
from .envs import (
    ClassificationEnv,
    DiscreteEnv,
    RegionEnv,
    load_classification_csv,
    make_env,
)
from .estimators import (
    ContextualWeights,
    PolicyValueEstimator,
    VarianceProxy,
    WeightedEstimate,
    WeightScheme,
    confidence_interval,
    contextual_weights,
    dr_score,
    dr_scores,
    estimate,
    estimate_contrast,
    estimate_dm,
    estimate_dr,
    estimate_ipw,
    estimate_weighted,
    noncontextual_weights,
)
from .exceptions import (
    ConfigError,
    DatasetError,
    InfeasibleFloorError,
    NoAnalyticValueError,
    OverlapError,
)
from .harness import ExperimentConfig, ReplicationReport, run_dataset_suite, run_experiment
from .io import load_log, save_log
from .outcome_models import PerArmRidgeModel, TabularMeanModel, refit_prefix

__version__ = "0.1.0"
