"""Generative Thompson sampling for meta contextual bandits.

Offline training of autoregressive outcome-imputation models, posterior
sampling by generating the missing entries of the potential-outcome table,
policy fitting on the completed dataset, baseline agents, and a diagnostics
suite that numerically checks the supporting theory at desk scale.
"""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    ContractError,
    History,
    IDENTITY_REWARD,
    IdentityReward,
    PriorInfo,
    RewardFn,
    RngStream,
    TaskInstance,
    append_step,
    history_hash,
    reward,
)
from .env import (
    DiscreteMixtureEnv,
    SurrogateDgpConfig,
    SyntheticDgpConfig,
    exact_predictive,
    logistic,
    sample_task,
    symmetric_mixture_env,
)
from .seqmodel import (
    BetaBernoulliModel,
    ConstantModel,
    ExactMixtureModel,
    MlpSeqModel,
    SequenceModel,
    load_model,
    ridge_inverse,
    save_model,
)
from .generation import ArmOrdering, MissingnessMask, impute_task
from .policy import (
    BoostedTreeParams,
    Policy,
    evaluate_policy,
    fit_policy,
)
from .training import (
    HistoricalPool,
    TrainConfig,
    build_historical_pool,
    population_loss,
    resample_sequence,
    sequence_nll,
    train,
)
from .agents import AgentConfig, make_agent
from .evaluation import (
    BoundReport,
    ExperimentSettings,
    RegretTrace,
    conditional_entropy,
    run_experiment,
    sauer_shelah_bound,
    theorem_bound_report,
    verify_entropy_vc,
)

__all__ = [name for name in dir() if not name.startswith("_")]
