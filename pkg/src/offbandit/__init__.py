"""Offline contextual-bandit toolkit for configuration-parameter tuning.

Learns reward models and policies from a static logged dataset, optimizes
actions by gradient ascent on an uncertainty-penalized neural ensemble, and
evaluates everything against a synthetic ground-truth environment.
"""

from .actionopt import (
    GAConfig,
    RestartGrid,
    gradient_ascent,
    optimize_action,
    optimize_actions_batch,
    snap_discrete,
)
from .config import RunConfig, default_config_text, load_config, parse_space_spec, write_default_config
from .core import (
    AUGMENTED_PROPENSITY,
    ActionSpace,
    Continuous,
    Dataset,
    Discrete,
    bootstrap_sample,
    derive_seed,
    load_dataset,
    rng_from,
    save_dataset,
    split_dataset,
    validate_action,
)
from .evaluate import (
    BenchmarkResult,
    EvalReport,
    clipped_ips_estimate,
    dm_estimate,
    ips_estimate,
    run_benchmark,
)
from .neural import FeedforwardNet, TrainConfig, train_regression
from .policy import (
    OPPGConfig,
    StochasticPolicy,
    clip_weight,
    initialize_policy,
    load_policy,
    log_density_batch,
    oppg_train,
    sample_actions,
    save_policy,
)
from .report import render_figures, write_report
from .rewardmodel import (
    AugmentConfig,
    RewardEnsemble,
    augment_counterfactual,
    load_ensemble,
    penalized_objective_batch,
    predict_mean_std_batch,
    save_ensemble,
    train_ensemble,
)
from .synthenv import (
    SyntheticEnvSpec,
    brute_force_optimum,
    build_env,
    default_benchmark_space,
    generate_dataset,
    sample_contexts,
    sample_logging_actions,
    true_reward_batch,
    true_value,
)

__version__ = "0.1.0"
