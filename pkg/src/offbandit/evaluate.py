"""Off-policy value estimators and the end-to-end benchmark pipeline.

The estimators come in two families: model-based (direct method, scoring a
deterministic action chooser with the learned ensemble) and importance
sampling (IPS and its clipped variant, scoring a stochastic policy on logged
data).  ``run_benchmark`` chains data generation, model fitting, policy
training, and the action-search sweeps into one reproducible run and
optionally writes the report artifacts.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .actionopt import optimize_action, optimize_actions_batch
from .config import RunConfig
from .core import AUGMENTED_PROPENSITY, Dataset, derive_seed, rng_from, split_dataset, validate_action
from .policy import StochasticPolicy, initialize_policy, log_density_batch, oppg_train, sample_actions
from .rewardmodel import RewardEnsemble, augment_counterfactual, predict_mean_std_batch, train_ensemble
from .synthenv import generate_dataset, sample_logging_actions, true_reward_batch

__all__ = [
    "BenchmarkResult",
    "EvalReport",
    "clipped_ips_estimate",
    "dm_estimate",
    "ips_estimate",
    "run_benchmark",
]


# ---------------------------------------------------------------------------
# estimators


def dm_estimate(ensemble: RewardEnsemble, contexts, chooser) -> tuple[float, np.ndarray]:
    """Mean predicted reward of ``chooser`` over contexts, plus per-context values.

    ``chooser(s) -> action`` is called once per row; every returned action is
    validated against the ensemble's action space before scoring.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    space = ensemble.space
    actions = np.empty((contexts.shape[0], space.n_dims))
    for i, s in enumerate(contexts):
        a = np.asarray(chooser(s), dtype=float).reshape(-1)
        problems = validate_action(space, a)
        if problems:
            raise ValueError(f"context {i}: invalid action ({'; '.join(problems)})")
        actions[i] = a
    values, _ = predict_mean_std_batch(ensemble, contexts, actions)
    return float(values.mean()), values


def _checked_log_ratios(policy: StochasticPolicy, dataset: Dataset) -> np.ndarray:
    if dataset.size < 1:
        raise ValueError("IPS needs at least one record")
    props = dataset.propensities
    for i in np.flatnonzero(props <= 0.0):
        if props[i] == AUGMENTED_PROPENSITY:
            raise ValueError(
                f"record {i}: augmented sentinel propensity; IPS needs logged records only"
            )
        raise ValueError(f"record {i}: propensity must be positive, got {props[i]}")
    logp = log_density_batch(policy, dataset.contexts, dataset.actions)
    return logp - np.log(props)


def _mean_se(summands: np.ndarray) -> tuple[float, float]:
    n = summands.size
    se = float(summands.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(summands.mean()), se


def ips_estimate(policy: StochasticPolicy, dataset: Dataset) -> tuple[float, float]:
    """Importance-sampling value estimate of ``policy`` on logged data.

    Returns (estimate, standard error); the SE is the sample standard
    deviation of the per-record summands over sqrt(N).
    """
    ratios = np.exp(_checked_log_ratios(policy, dataset))
    return _mean_se(ratios * dataset.rewards)


def clipped_ips_estimate(policy: StochasticPolicy, dataset: Dataset, m: float) -> tuple[float, float]:
    """IPS with each importance ratio capped at ``m`` (m >= 1; inf recovers
    the unclipped estimate exactly)."""
    if not m >= 1.0:
        raise ValueError(f"clipping threshold must be >= 1, got {m}")
    log_ratios = _checked_log_ratios(policy, dataset)
    # cap in log space so extreme ratios never overflow before the min
    weights = np.exp(np.minimum(log_ratios, np.log(m)))
    return _mean_se(weights * dataset.rewards)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    """Per-method evaluation summary over a shared set of contexts.

    ``predicted_values`` and ``true_values`` are row-aligned per-context
    samples (the box-plot export); ``wall_clock_per_context`` is the median
    decision time in seconds, NaN for methods that were not timed.
    """

    method: str
    predicted_mean_tp: float
    predicted_std_tp: float
    true_mean_tp: float
    true_se: float
    mean_sigma: float
    predicted_values: np.ndarray
    true_values: np.ndarray
    wall_clock_per_context: float = math.nan
    iterations_total: int | None = None

    def __post_init__(self):
        if not self.method:
            raise ValueError("method tag must be nonempty")
        if len(self.predicted_values) == 0 or len(self.predicted_values) != len(self.true_values):
            raise ValueError("per-context samples must be nonempty and row-aligned")
        if self.true_se < 0 or self.predicted_std_tp < 0:
            raise ValueError("spread statistics must be nonnegative")


def _make_report(method, env, ensemble, contexts, actions, *, wall_clock=math.nan,
                 iterations=None) -> EvalReport:
    mu, sigma = predict_mean_std_batch(ensemble, contexts, actions)
    true_vals = true_reward_batch(env, contexts, actions)
    true_mean, true_se = _mean_se(true_vals)
    return EvalReport(
        method=method,
        predicted_mean_tp=float(mu.mean()),
        predicted_std_tp=float(mu.std(ddof=1)) if mu.size > 1 else 0.0,
        true_mean_tp=true_mean,
        true_se=true_se,
        mean_sigma=float(sigma.mean()),
        predicted_values=mu,
        true_values=true_vals,
        wall_clock_per_context=wall_clock,
        iterations_total=None if iterations is None else int(iterations),
    )


@dataclass(frozen=True)
class BenchmarkResult:
    """Everything one benchmark run produced.

    ``summary`` holds only deterministic values (it is what lands in
    summary.json); wall-clock numbers live in ``timings`` and
    ``stage_seconds`` and are written separately to timing.txt.
    """

    config: RunConfig
    reports: tuple[EvalReport, ...]
    restart_rows: tuple[dict, ...]
    beta_rows: tuple[dict, ...]
    m_rows: tuple[dict, ...]
    summary: dict
    timings: dict
    stage_seconds: dict
    out_dir: Path | None
    # the fitted artifacts, for downstream scoring without a reload
    env: object = None
    ensemble: RewardEnsemble | None = None
    policy: StochasticPolicy | None = None

    def report(self, method: str) -> EvalReport:
        for rep in self.reports:
            if rep.method == method:
                return rep
        raise KeyError(f"no report for method {method!r}")


# sub-stream keys for the pipeline seed, one per stage
_K_DATA, _K_SPLIT, _K_AUGMENT, _K_ENSEMBLE, _K_POLICY_INIT, _K_OPPG = 1, 2, 3, 4, 5, 6
_K_RESTARTS, _K_BETA, _K_HYBRID, _K_LOGGING, _K_OPPG_DRAW, _K_TIMING = 7, 8, 9, 10, 11, 12


@contextmanager
def _stage(name, seed, stage_seconds, progress):
    if progress is not None:
        progress(f"[{name}]")
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        raise RuntimeError(f"stage '{name}' failed (seed {seed}): {exc}") from exc
    stage_seconds[name] = time.perf_counter() - start


def _median_seconds(samples) -> float:
    return float(np.median(np.asarray(samples, dtype=float)))


def run_benchmark(config: RunConfig, out_dir: str | Path | None = None,
                  progress=None) -> BenchmarkResult:
    """Run the full pipeline and (when ``out_dir`` is given) write the report.

    Every stage draws from its own sub-stream of ``config.seed``, so a rerun
    with the same config reproduces the run bit for bit; on failure the
    raised error names the stage and the seed to replay it.
    """
    cfg = config
    seed = cfg.seed
    stage_seconds: dict[str, float] = {}
    env = cfg.make_env()

    with _stage("generate-data", seed, stage_seconds, progress):
        data = generate_dataset(env, cfg.train_records + cfg.heldout, derive_seed(seed, _K_DATA))
        train, held = split_dataset(data, cfg.heldout, derive_seed(seed, _K_SPLIT))
        contexts = held.contexts

    with _stage("train-reward", seed, stage_seconds, progress):
        fit_data = train
        if cfg.augment_enabled:
            fit_data = augment_counterfactual(train, cfg.augment, derive_seed(seed, _K_AUGMENT))
        ensemble = train_ensemble(
            fit_data, cfg.members, cfg.reward_train,
            seed=derive_seed(seed, _K_ENSEMBLE), hidden=cfg.reward_hidden,
        )

    with _stage("train-policy", seed, stage_seconds, progress):
        policy0 = initialize_policy(
            cfg.space, cfg.context_dim, seed=derive_seed(seed, _K_POLICY_INIT),
            hidden=cfg.policy_hidden, init_width=cfg.policy_init_width,
        )
        policy, _ = oppg_train(policy0, train, replace(cfg.oppg, seed=derive_seed(seed, _K_OPPG)))

    ga_seed = derive_seed(seed, _K_RESTARTS)
    with _stage("restart-sweep", seed, stage_seconds, progress):
        r_max = cfg.restart_grid[-1]
        grid = optimize_actions_batch(ensemble, contexts, cfg.ga_config(restarts=r_max, seed=ga_seed))

    beta_seed = derive_seed(seed, _K_BETA)
    with _stage("beta-sweep", seed, stage_seconds, progress):
        # one shared seed across the grid keeps restart inits paired per beta
        beta_grids = {
            beta: optimize_actions_batch(
                ensemble, contexts,
                cfg.ga_config(restarts=cfg.beta_restarts, beta=beta, seed=beta_seed))
            for beta in cfg.beta_grid
        }

    hybrid_seed = derive_seed(seed, _K_HYBRID)
    with _stage("hybrid", seed, stage_seconds, progress):
        hybrid_grid = optimize_actions_batch(
            ensemble, contexts,
            cfg.ga_config(restarts=1, seed=hybrid_seed, init_source="policy"),
            policy=policy,
        )

    with _stage("baselines", seed, stage_seconds, progress):
        logging_actions = sample_logging_actions(env, contexts, rng_from(seed, _K_LOGGING))
        oppg_actions = np.stack([
            sample_actions(policy, s, 1, rng_from(seed, _K_OPPG_DRAW, i))[0]
            for i, s in enumerate(contexts)
        ])

    with _stage("oracle", seed, stage_seconds, progress):
        reports: list[EvalReport] = []
        reports.append(_make_report("logging", env, ensemble, contexts, logging_actions))
        reports.append(_make_report("logged-actions-DM", env, ensemble, contexts, held.actions))
        restart_rows = []
        dm_reports = {}
        for k in cfg.restart_grid:
            actions_k, _ = grid.select(k)
            iters_k = int(grid.iterations[:, :k].sum())
            rep = _make_report(f"DM-{k}-restarts", env, ensemble, contexts, actions_k,
                               iterations=iters_k)
            dm_reports[k] = rep
            reports.append(rep)
            restart_rows.append({
                "restarts": k,
                "predicted_mean_tp": rep.predicted_mean_tp,
                "predicted_std_tp": rep.predicted_std_tp,
                "true_mean_tp": rep.true_mean_tp,
                "true_se": rep.true_se,
                "mean_sigma": rep.mean_sigma,
                "iterations_total": iters_k,
            })
        beta_rows = []
        for beta in cfg.beta_grid:
            g = beta_grids[beta]
            actions_b, _ = g.select(cfg.beta_restarts)
            rep = _make_report(f"DM-beta-{beta:g}", env, ensemble, contexts, actions_b,
                               iterations=int(g.iterations.sum()))
            reports.append(rep)
            beta_rows.append({
                "beta": beta,
                "mean_mu": rep.predicted_mean_tp,
                "mean_sigma": rep.mean_sigma,
                "true_mean_tp": rep.true_mean_tp,
                "true_se": rep.true_se,
            })
        reports.append(_make_report("OPPG", env, ensemble, contexts, oppg_actions))
        hybrid_actions, _ = hybrid_grid.select(1)
        reports.append(_make_report("hybrid", env, ensemble, contexts, hybrid_actions,
                                    iterations=int(hybrid_grid.iterations.sum())))

    with _stage("m-sweep", seed, stage_seconds, progress):
        m_rows = []
        for m in cfg.m_grid:
            est, se = clipped_ips_estimate(policy, held, m)
            m_rows.append({"m": m, "estimate": est, "standard_error": se})
        est, se = ips_estimate(policy, held)
        m_rows.append({"m": math.inf, "estimate": est, "standard_error": se})

    with _stage("timing", seed, stage_seconds, progress):
        timings = _measure_timings(cfg, env, ensemble, policy, contexts,
                                   ga_seed, hybrid_seed, seed)
        reports = [
            replace(rep, wall_clock_per_context=timings[rep.method])
            if rep.method in timings else rep
            for rep in reports
        ]

    named = {rep.method: rep for rep in reports}
    dm_max = named[f"DM-{r_max}-restarts"]
    hybrid = named["hybrid"]
    summary = _build_summary(cfg, named, restart_rows, beta_rows, m_rows, dm_max, hybrid)

    result = BenchmarkResult(
        config=cfg,
        reports=tuple(reports),
        restart_rows=tuple(restart_rows),
        beta_rows=tuple(beta_rows),
        m_rows=tuple(m_rows),
        summary=summary,
        timings=timings,
        stage_seconds=stage_seconds,
        out_dir=None if out_dir is None else Path(out_dir),
        env=env,
        ensemble=ensemble,
        policy=policy,
    )
    if out_dir is not None:
        with _stage("write-report", seed, stage_seconds, progress):
            from .report import write_report
            write_report(result, out_dir)
    return result


def _measure_timings(cfg, env, ensemble, policy, contexts, ga_seed, hybrid_seed, seed):
    """Median per-context decision time per method, model loading excluded.

    Each timed search replays the sub-seed the batch stage used for that
    context, so the measured work matches the reported actions.  BLAS
    threading is pinned to one thread for the duration so medians are
    comparable across machines.
    """
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        return _measure_timings_pinned(cfg, env, ensemble, policy, contexts,
                                       ga_seed, hybrid_seed, seed)


def _measure_timings_pinned(cfg, env, ensemble, policy, contexts, ga_seed, hybrid_seed, seed):
    n = min(cfg.timing_contexts, contexts.shape[0])
    rows = contexts[:n]
    timings: dict[str, float] = {}

    for k in cfg.restart_grid:
        samples = []
        for i, s in enumerate(rows):
            ga = cfg.ga_config(restarts=k, seed=derive_seed(ga_seed, i))
            start = time.perf_counter()
            optimize_action(ensemble, s, ga)
            samples.append(time.perf_counter() - start)
        timings[f"DM-{k}-restarts"] = _median_seconds(samples)

    samples = []
    for i, s in enumerate(rows):
        ga = cfg.ga_config(restarts=1, seed=derive_seed(hybrid_seed, i), init_source="policy")
        start = time.perf_counter()
        optimize_action(ensemble, s, ga, policy=policy)
        samples.append(time.perf_counter() - start)
    timings["hybrid"] = _median_seconds(samples)

    samples = []
    for i, s in enumerate(rows):
        rng = rng_from(seed, _K_TIMING, i)
        start = time.perf_counter()
        sample_logging_actions(env, s[None, :], rng)
        samples.append(time.perf_counter() - start)
    timings["logging"] = _median_seconds(samples)

    samples = []
    for i, s in enumerate(rows):
        rng = rng_from(seed, _K_TIMING, n + i)
        start = time.perf_counter()
        sample_actions(policy, s, 1, rng)
        samples.append(time.perf_counter() - start)
    timings["OPPG"] = _median_seconds(samples)
    return timings


def _non_increasing(values, slack_frac):
    """True when each step down the list drops by at most slack_frac of the
    previous magnitude (small rises inside the slack band still pass)."""
    for prev, cur in zip(values, values[1:]):
        if cur > prev + slack_frac * abs(prev):
            return False
    return True


def _build_summary(cfg, named, restart_rows, beta_rows, m_rows, dm_max, hybrid):
    logging_rep = named["logging"]
    logged_rep = named["logged-actions-DM"]
    oppg_rep = named["OPPG"]
    first_k = cfg.restart_grid[0]
    dm_first = named[f"DM-{first_k}-restarts"]

    predicted_by_k = [row["predicted_mean_tp"] for row in restart_rows]
    sigma_by_beta = [row["mean_sigma"] for row in beta_rows]
    mu_by_beta = [row["mean_mu"] for row in beta_rows]

    gain_hybrid = hybrid.true_mean_tp - logging_rep.true_mean_tp
    gain_dm = dm_max.true_mean_tp - logging_rep.true_mean_tp
    p10_gain = float(np.percentile(hybrid.true_values - dm_max.true_values, 10.0))

    checks = {
        "predicted_tp_monotone_in_restarts": all(
            b >= a for a, b in zip(predicted_by_k, predicted_by_k[1:])
        ),
        "dm_first_beats_logged_actions": dm_first.predicted_mean_tp >= logged_rep.predicted_mean_tp,
        "dm_first_beats_logging_predicted": dm_first.predicted_mean_tp > logging_rep.predicted_mean_tp,
        "beta_sigma_non_increasing_5pct": _non_increasing(sigma_by_beta, 0.05),
        "beta_mu_non_increasing_5pct": _non_increasing(mu_by_beta, 0.05),
        "dm_vs_logging_true_ratio": dm_max.true_mean_tp / logging_rep.true_mean_tp,
        "oppg_minus_logging_true": oppg_rep.true_mean_tp - logging_rep.true_mean_tp,
        "hybrid_gain_ratio": gain_hybrid / gain_dm if gain_dm != 0.0 else math.inf,
        "hybrid_iteration_ratio": (
            dm_max.iterations_total / hybrid.iterations_total
            if hybrid.iterations_total else math.inf
        ),
    }
    methods = {
        rep.method: {
            "predicted_mean_tp": rep.predicted_mean_tp,
            "predicted_std_tp": rep.predicted_std_tp,
            "true_mean_tp": rep.true_mean_tp,
            "true_se": rep.true_se,
            "mean_sigma": rep.mean_sigma,
            "iterations_total": rep.iterations_total,
        }
        for rep in named.values()
    }
    return {
        "config": cfg.echo(),
        "methods": methods,
        "restart_sweep": list(restart_rows),
        "beta_sweep": list(beta_rows),
        "m_sweep": [
            {"m": ("inf" if math.isinf(row["m"]) else row["m"]),
             "estimate": row["estimate"], "standard_error": row["standard_error"]}
            for row in m_rows
        ],
        "hybrid": {
            "p10_true_gain_vs_dm_max": p10_gain,
            "iterations_total": hybrid.iterations_total,
            "dm_max_iterations_total": dm_max.iterations_total,
        },
        "checks": checks,
    }
