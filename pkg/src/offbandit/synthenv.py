"""Synthetic ground-truth environment with a known logging policy.

Stands in for the real network: a smooth multi-modal reward surface (sum of
Gaussian bumps plus a linear term), uniform contexts on the unit box, and a
full-support logging policy whose action densities are available in closed
form.  Every propensity recorded in generated data is the exact joint
density of the sampled action, which is what makes importance-weighted
estimators well-defined downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .core import (
    ActionSpace,
    Continuous,
    Dataset,
    Discrete,
    LoggedInteraction,
    rng_from,
    validate_action,
)

_SQRT2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousLogging:
    """Truncated-Gaussian logging marginal: center affine in context."""

    intercept: float
    coef: np.ndarray
    width: float

    def __post_init__(self):
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        if self.width <= 0:
            raise ValueError(f"logging width must be positive, got {self.width}")


@dataclass(frozen=True)
class DiscreteLogging:
    """Fixed preference weights over the dimension's levels."""

    prefs: np.ndarray

    def __post_init__(self):
        prefs = np.asarray(self.prefs, dtype=float)
        if prefs.ndim != 1 or (prefs <= 0).any() or abs(prefs.sum() - 1.0) > 1e-9:
            raise ValueError("prefs must be positive and sum to 1")
        prefs.setflags(write=False)
        object.__setattr__(self, "prefs", prefs)


@dataclass(frozen=True)
class LoggingPolicySpec:
    """Informative per-dim components plus the uniform mixture weight.

    The generative story: with probability ``eps`` the whole action vector is
    drawn uniformly over the space, otherwise each dim draws from its
    informative component.  The joint density is the two-term mixture, so it
    is bounded below by eps times the uniform density everywhere.
    """

    dims: tuple
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must be in (0, 1], got {self.eps}")


@dataclass(frozen=True)
class SyntheticEnvSpec:
    """Fully specified environment: reward surface, noise, logging policy."""

    context_dim: int
    space: ActionSpace
    length_scale: float
    bump_weights: np.ndarray
    bump_centers: np.ndarray
    linear_term: np.ndarray
    noise_std: float
    logging: LoggingPolicySpec
    seed: int

    def __post_init__(self):
        if self.context_dim < 1:
            raise ValueError("context_dim must be >= 1")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        w = np.asarray(self.bump_weights, dtype=float)
        c = np.asarray(self.bump_centers, dtype=float)
        lin = np.asarray(self.linear_term, dtype=float)
        joint = self.context_dim + self.space.n_dims
        if w.ndim != 1 or w.size < 1:
            raise ValueError("bump_weights must be a nonempty vector")
        if c.shape != (w.size, joint):
            raise ValueError(f"bump_centers shape {c.shape} != ({w.size}, {joint})")
        if lin.shape != (joint,):
            raise ValueError(f"linear_term shape {lin.shape} != ({joint},)")
        ctx_part = c[:, : self.context_dim]
        if (ctx_part < 0).any() or (ctx_part > 1).any():
            raise ValueError("bump centers must lie inside the unit context box")
        act_part = c[:, self.context_dim:]
        if (act_part < self.space.lows).any() or (act_part > self.space.highs).any():
            raise ValueError("bump centers must lie inside the action boxes")
        if len(self.logging.dims) != self.space.n_dims:
            raise ValueError("logging spec does not cover every action dim")
        for j, (dim, ldim) in enumerate(zip(self.space.dims, self.logging.dims)):
            if isinstance(dim, Continuous) and not isinstance(ldim, ContinuousLogging):
                raise ValueError(f"dim {j}: continuous dim needs a ContinuousLogging spec")
            if isinstance(dim, Discrete):
                if not isinstance(ldim, DiscreteLogging):
                    raise ValueError(f"dim {j}: discrete dim needs a DiscreteLogging spec")
                if ldim.prefs.size != len(dim.levels):
                    raise ValueError(f"dim {j}: prefs size != level count")
            if isinstance(ldim, ContinuousLogging) and ldim.coef.shape != (self.context_dim,):
                raise ValueError(f"dim {j}: coef length != context_dim")
        for name, arr in (("bump_weights", w), ("bump_centers", c), ("linear_term", lin)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def bumps(self) -> int:
        return self.bump_weights.size

    @property
    def logging_mix(self) -> float:
        return self.logging.eps

    @property
    def joint_dim(self) -> int:
        return self.context_dim + self.space.n_dims


# ---------------------------------------------------------------------------
# Ground-truth reward
# ---------------------------------------------------------------------------

def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    b = x[None, :] if single else x
    if b.ndim != 2 or b.shape[1] != dim:
        raise ValueError(f"{what} has shape {x.shape}, expected (*, {dim})")
    return b, single


def _require_valid(space, action):
    problems = validate_action(space, action)
    if problems:
        raise ValueError("invalid action: " + "; ".join(problems))


def true_reward_batch(env: SyntheticEnvSpec, contexts, actions) -> np.ndarray:
    """Noiseless reward for row-aligned contexts and actions."""
    s, _ = _as_batch(contexts, env.context_dim, "contexts")
    a, _ = _as_batch(actions, env.space.n_dims, "actions")
    if s.shape[0] != a.shape[0]:
        raise ValueError("contexts and actions row counts differ")
    x = np.hstack([s, a])
    diff = x[:, None, :] - env.bump_centers[None, :, :]
    d2 = np.einsum("ngj,ngj->ng", diff, diff)
    bumps = np.exp(-d2 / (2.0 * env.length_scale**2)) @ env.bump_weights
    return bumps + x @ env.linear_term


def true_reward(env: SyntheticEnvSpec, s, a) -> float:
    _require_valid(env.space, np.asarray(a, dtype=float))
    return float(true_reward_batch(env, s, a)[0])


def true_reward_grad_batch(env: SyntheticEnvSpec, contexts, actions) -> np.ndarray:
    """Analytic gradient of the noiseless reward w.r.t. the action block."""
    s, _ = _as_batch(contexts, env.context_dim, "contexts")
    a, _ = _as_batch(actions, env.space.n_dims, "actions")
    x = np.hstack([s, a])
    diff = x[:, None, :] - env.bump_centers[None, :, :]
    d2 = np.einsum("ngj,ngj->ng", diff, diff)
    ell2 = env.length_scale**2
    coef = env.bump_weights * np.exp(-d2 / (2.0 * ell2))  # (n, G)
    grad = -(coef[:, :, None] * diff).sum(axis=1) / ell2 + env.linear_term
    return grad[:, env.context_dim:]


def true_reward_grad(env: SyntheticEnvSpec, s, a) -> np.ndarray:
    return true_reward_grad_batch(env, s, a)[0]


def reward_bound(env: SyntheticEnvSpec) -> float:
    """Upper bound on |noiseless reward| over the whole context/action box."""
    lo = np.concatenate([np.zeros(env.context_dim), env.space.lows])
    hi = np.concatenate([np.ones(env.context_dim), env.space.highs])
    lin = np.maximum(np.abs(env.linear_term * lo), np.abs(env.linear_term * hi)).sum()
    return float(np.abs(env.bump_weights).sum() + lin)


# ---------------------------------------------------------------------------
# Logging policy: sampling and exact densities
# ---------------------------------------------------------------------------

class _LoggingSampler:
    """Precomputed arrays for vectorized logging-policy draws and densities."""

    def __init__(self, env: SyntheticEnvSpec):
        self.env = env
        space = env.space
        self.cont_idx = [j for j, d in enumerate(space.dims) if isinstance(d, Continuous)]
        self.disc_idx = [j for j, d in enumerate(space.dims) if isinstance(d, Discrete)]
        if self.cont_idx:
            self.cont_lo = np.array([space.dims[j].lo for j in self.cont_idx])
            self.cont_hi = np.array([space.dims[j].hi for j in self.cont_idx])
            self.cont_w = np.array([env.logging.dims[j].width for j in self.cont_idx])
            self.cont_b = np.array([env.logging.dims[j].intercept for j in self.cont_idx])
            self.cont_C = np.stack([env.logging.dims[j].coef for j in self.cont_idx])
        self.disc_levels = [np.asarray(space.dims[j].levels) for j in self.disc_idx]
        self.disc_cum = [np.cumsum(env.logging.dims[j].prefs) for j in self.disc_idx]
        # uniform joint density: product of 1/range and 1/level-count
        u = 1.0
        for d in space.dims:
            u /= (d.hi - d.lo) if isinstance(d, Continuous) else len(d.levels)
        self.uniform_density = u

    def _trunc_params(self, contexts):
        m = self.cont_b + contexts @ self.cont_C.T  # (n, dc)
        alpha = (self.cont_lo - m) / self.cont_w
        beta = (self.cont_hi - m) / self.cont_w
        fa = ndtr(alpha)
        z = ndtr(beta) - fa
        return m, fa, z

    def draw(self, rng: np.random.Generator, contexts: np.ndarray) -> np.ndarray:
        """One action row per context row.

        Draw order is fixed (mixture flags, then one variate per dim in dim
        order) so results are reproducible for a given generator state.
        """
        n = contexts.shape[0]
        uniform_rows = rng.uniform(size=n) < self.env.logging.eps
        variates = np.column_stack(
            [rng.uniform(size=n) for _ in range(self.env.space.n_dims)]
        )
        actions = np.empty((n, self.env.space.n_dims))
        if self.cont_idx:
            m, fa, z = self._trunc_params(contexts)
            v = variates[:, self.cont_idx]
            informative = m + self.cont_w * ndtri(fa + v * z)
            np.clip(informative, self.cont_lo, self.cont_hi, out=informative)
            flat = self.cont_lo + v * (self.cont_hi - self.cont_lo)
            actions[:, self.cont_idx] = np.where(uniform_rows[:, None], flat, informative)
        for k, j in enumerate(self.disc_idx):
            levels, cum = self.disc_levels[k], self.disc_cum[k]
            v = variates[:, j]
            inf_pick = np.minimum(np.searchsorted(cum, v, side="right"), levels.size - 1)
            uni_pick = np.minimum((v * levels.size).astype(int), levels.size - 1)
            actions[:, j] = levels[np.where(uniform_rows, uni_pick, inf_pick)]
        return actions

    def density(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Exact joint mixture density of each action row given its context."""
        n = contexts.shape[0]
        informative = np.ones(n)
        if self.cont_idx:
            m, fa, z = self._trunc_params(contexts)
            zz = (actions[:, self.cont_idx] - m) / self.cont_w
            pdf = np.exp(-0.5 * zz * zz) / (_SQRT2PI * self.cont_w * z)
            informative *= pdf.prod(axis=1)
        for k, j in enumerate(self.disc_idx):
            levels = self.disc_levels[k]
            prefs = self.env.logging.dims[j].prefs
            pick = np.searchsorted(levels, actions[:, j])
            informative *= prefs[pick]
        eps = self.env.logging.eps
        return (1.0 - eps) * informative + eps * self.uniform_density


def logging_propensity_batch(env: SyntheticEnvSpec, contexts, actions) -> np.ndarray:
    s, _ = _as_batch(contexts, env.context_dim, "contexts")
    a, _ = _as_batch(actions, env.space.n_dims, "actions")
    return _LoggingSampler(env).density(s, a)


def logging_propensity(env: SyntheticEnvSpec, s, a) -> float:
    _require_valid(env.space, np.asarray(a, dtype=float))
    return float(logging_propensity_batch(env, s, a)[0])


def sample_logging_actions(env: SyntheticEnvSpec, contexts, rng: np.random.Generator) -> np.ndarray:
    """Batch draw from the logging policy, one action per context row."""
    s, _ = _as_batch(contexts, env.context_dim, "contexts")
    return _LoggingSampler(env).draw(rng, s)


def sample_contexts(env: SyntheticEnvSpec, n: int, seed: int) -> np.ndarray:
    """n i.i.d. contexts, uniform on the unit box."""
    if n < 1:
        raise ValueError("need n >= 1")
    return rng_from(seed, 0x5EED).uniform(size=(n, env.context_dim))


def _draw_interaction(env, sampler, s, rng):
    action = sampler.draw(rng, s[None, :])[0]
    propensity = float(sampler.density(s[None, :], action[None, :])[0])
    reward = float(true_reward_batch(env, s, action)[0])
    if env.noise_std > 0:
        reward += env.noise_std * rng.standard_normal()
    return action, reward, propensity


def sample_interaction(env: SyntheticEnvSpec, s, seed: int) -> LoggedInteraction:
    """One logged interaction at context ``s``, deterministic given seed."""
    s = np.asarray(s, dtype=float)
    if s.shape != (env.context_dim,):
        raise ValueError(f"context shape {s.shape} != ({env.context_dim},)")
    sampler = _LoggingSampler(env)
    action, reward, propensity = _draw_interaction(env, sampler, s, rng_from(seed))
    return LoggedInteraction(s, action, reward, propensity)


def generate_dataset(env: SyntheticEnvSpec, n: int, seed: int) -> Dataset:
    """n i.i.d. logged interactions.

    Each record draws from its own sub-stream hashed from (seed, record
    index), so generating shards [0, k) and [k, n) separately and
    concatenating reproduces the serial output bit for bit.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    sampler = _LoggingSampler(env)
    contexts = np.empty((n, env.context_dim))
    actions = np.empty((n, env.space.n_dims))
    rewards = np.empty(n)
    propensities = np.empty(n)
    for i in range(n):
        rng = rng_from(seed, i)
        contexts[i] = rng.uniform(size=env.context_dim)
        actions[i], rewards[i], propensities[i] = _draw_interaction(
            env, sampler, contexts[i], rng
        )
    return Dataset(env.space, contexts, actions, rewards, propensities)


# ---------------------------------------------------------------------------
# Oracle evaluation
# ---------------------------------------------------------------------------

def oracle_mean(env: SyntheticEnvSpec, contexts, actions) -> tuple[float, float]:
    """(mean, standard error) of noiseless reward over given pairs."""
    vals = true_reward_batch(env, contexts, actions)
    se = 0.0 if vals.size < 2 else float(vals.std(ddof=1) / math.sqrt(vals.size))
    return float(vals.mean()), se


def true_value(env: SyntheticEnvSpec, action_chooser, n_contexts: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo J(chooser): mean noiseless reward over sampled contexts.

    ``action_chooser`` maps one context vector to one action vector.
    Returns (value, standard error).
    """
    contexts = sample_contexts(env, n_contexts, seed)
    actions = np.empty((n_contexts, env.space.n_dims))
    for i in range(n_contexts):
        a = np.asarray(action_chooser(contexts[i]), dtype=float)
        problems = validate_action(env.space, a)
        if problems:
            raise ValueError(f"context {i}: invalid action: " + "; ".join(problems))
        actions[i] = a
    return oracle_mean(env, contexts, actions)


def brute_force_optimum(
    env: SyntheticEnvSpec, s, grid_resolution: int, max_grid: int = 200_000
) -> tuple[np.ndarray, float]:
    """Exhaustive-grid argmax of the noiseless reward at one context.

    Continuous dims are discretized to ``grid_resolution`` points; discrete
    dims enumerate their levels.  Only usable on small spaces.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    axes = []
    for d in env.space.dims:
        if isinstance(d, Continuous):
            axes.append(np.linspace(d.lo, d.hi, grid_resolution))
        else:
            axes.append(np.asarray(d.levels))
    total = math.prod(len(ax) for ax in axes)
    if total > max_grid:
        raise ValueError(f"grid of {total} points exceeds cap {max_grid}")
    mesh = np.meshgrid(*axes, indexing="ij")
    cands = np.column_stack([m.ravel() for m in mesh])
    s = np.asarray(s, dtype=float)
    vals = true_reward_batch(env, np.broadcast_to(s, (total, env.context_dim)), cands)
    best = int(np.argmax(vals))
    return cands[best].copy(), float(vals[best])


# ---------------------------------------------------------------------------
# Default benchmark
# ---------------------------------------------------------------------------

def default_benchmark_space() -> ActionSpace:
    """14 mixed dims: 10 continuous unit intervals, 4 discrete level sets."""
    dims = [Continuous(0.0, 1.0) for _ in range(10)]
    dims.append(Discrete((0.0, 0.25, 0.5, 0.75, 1.0)))
    dims.append(Discrete((0.0, 0.5, 1.0)))
    dims.append(Discrete((0.0, 1.0)))
    dims.append(Discrete((0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)))
    return ActionSpace(tuple(dims))


def build_env(
    space: ActionSpace,
    *,
    context_dim: int = 20,
    bumps: int = 8,
    length_scale: float = 0.8,
    noise_std: float = 0.1,
    logging_mix: float = 0.1,
    seed: int = 0,
    bump_weight_range: tuple[float, float] = (2.0, 6.0),
    bump_context_margin: float = 0.25,
    linear_action_scale: float = 0.05,
) -> SyntheticEnvSpec:
    """Derive a full environment spec from a handful of scalar knobs.

    Bump placement, weights, the linear term and the logging-policy
    parameters are all hashed out of ``seed``, so a config file only needs
    the scalars to reproduce the exact environment.

    bump_context_margin pulls the bumps' context coordinates away from the
    box walls; with many context dims and a sub-unit length scale this
    keeps the bumps within reach of typical contexts instead of letting
    distance wash them out.
    """
    if not 0.0 <= bump_context_margin < 0.5:
        raise ValueError(f"bump_context_margin must be in [0, 0.5), got {bump_context_margin}")
    rng = rng_from(seed, 0xE47)
    da = space.n_dims
    weights = rng.uniform(*bump_weight_range, size=bumps)
    centers = np.empty((bumps, context_dim + da))
    centers[:, :context_dim] = rng.uniform(
        bump_context_margin, 1.0 - bump_context_margin, size=(bumps, context_dim)
    )
    centers[:, context_dim:] = space.lows + rng.uniform(size=(bumps, da)) * space.ranges
    linear = np.zeros(context_dim + da)
    linear[context_dim:] = rng.uniform(-1.0, 1.0, size=da) * linear_action_scale
    ldims = []
    for d in space.dims:
        if isinstance(d, Continuous):
            rng_span = d.hi - d.lo
            coef = rng.uniform(-1.0, 1.0, size=context_dim)
            coef *= 0.15 * rng_span / np.abs(coef).sum()
            intercept = d.lo + rng_span * rng.uniform(0.35, 0.65)
            ldims.append(ContinuousLogging(intercept, coef, 0.25 * rng_span))
        else:
            ldims.append(DiscreteLogging(rng.dirichlet(np.full(len(d.levels), 3.0))))
    return SyntheticEnvSpec(
        context_dim=context_dim,
        space=space,
        length_scale=length_scale,
        bump_weights=weights,
        bump_centers=centers,
        linear_term=linear,
        noise_std=noise_std,
        logging=LoggingPolicySpec(tuple(ldims), logging_mix),
        seed=seed,
    )


def default_benchmark_env(seed: int = 0) -> SyntheticEnvSpec:
    return build_env(default_benchmark_space(), seed=seed)
