"""Action search: projected gradient ascent with restarts on ensemble objectives.

Discrete dimensions are relaxed to their [min level, max level] interval
during ascent; final points are snapped back to levels and re-scored, and
the snapped score decides the winner across restarts.
"""

from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .core import ActionSpace, Discrete, derive_seed, rng_from, validate_action
from .policy import StochasticPolicy, sample_actions
from .rewardmodel import (
    RewardEnsemble,
    penalized_objective_batch,
    predict_mean_std_batch,
)

_MAX_HALVINGS = 20

__all__ = [
    "GAConfig",
    "RestartGrid",
    "gradient_ascent",
    "optimize_action",
    "optimize_actions_batch",
    "snap_discrete",
]


@dataclass(frozen=True)
class GAConfig:
    """Ascent settings; step_size applies in normalized (unit-box) coordinates."""

    step_size: float = 0.05
    max_iters: int = 200
    improvement_tol: float = 1e-6
    restarts: int = 1
    beta: float = 0.0
    seed: int = 0
    init_source: str = "uniform"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.improvement_tol > 0:
            raise ValueError(f"improvement_tol must be > 0, got {self.improvement_tol}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.init_source not in ("uniform", "policy"):
            raise ValueError(f"init_source must be 'uniform' or 'policy', got {self.init_source!r}")


# ---------------------------------------------------------------------------
# batched ascent engine
# ---------------------------------------------------------------------------


def _checked(objective_batch, rows, points, need_grad):
    values, grads = objective_batch(rows, points, need_grad)
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if need_grad:
        grads = np.asarray(grads, dtype=float)
        bad |= ~np.isfinite(grads).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        msg = (
            f"non-finite objective at iterate {np.array2string(points[i], precision=6)}"
            f" (row {int(rows[i])}): value {values[i]}"
        )
        if need_grad:
            msg += f", grad {np.array2string(grads[i], precision=6)}"
        raise RuntimeError(msg)
    return values, (grads if need_grad else None)


def _ascend_batch(objective_batch, space: ActionSpace, z0, cfg: GAConfig):
    """Run one backtracking ascent per row of z0 (normalized coordinates).

    objective_batch(rows, points, need_grad) scores action-space points for
    the given engine rows. Every row's path depends only on its own start,
    so batched and one-row runs coincide.
    Returns (z, values, iters) with values at the final relaxed points.
    """
    lows, ranges = space.lows, space.ranges
    z = np.array(z0, dtype=float)
    m = z.shape[0]
    all_rows = np.arange(m)
    values, grads = _checked(objective_batch, all_rows, lows + z * ranges, True)
    iters = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    for _ in range(cfg.max_iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        iters[rows] += 1
        pending = rows
        gz = grads[pending] * ranges  # chain rule into normalized coordinates
        step = cfg.step_size
        movers = []
        for _ in range(_MAX_HALVINGS):
            if pending.size == 0:
                break
            cand_z = np.clip(z[pending] + step * gz, 0.0, 1.0)
            cand_v, _ = _checked(objective_batch, pending, lows + cand_z * ranges, False)
            better = cand_v > values[pending]
            if better.any():
                won = pending[better]
                gain = cand_v[better] - values[won]
                z[won] = cand_z[better]
                values[won] = cand_v[better]
                keep = gain >= cfg.improvement_tol
                active[won[~keep]] = False
                if keep.any():
                    movers.append(won[keep])
            pending = pending[~better]
            gz = gz[~better]
            step *= 0.5
        active[pending] = False  # no improving step at any scale
        if movers:
            moved = np.concatenate(movers)
            _, g = _checked(objective_batch, moved, lows + z[moved] * ranges, True)
            grads[moved] = g
    return z, values, iters


# ---------------------------------------------------------------------------
# public single-run entry points
# ---------------------------------------------------------------------------


def gradient_ascent(objective, space: ActionSpace, a0, cfg: GAConfig):
    """Ascend objective(a) -> (value, grad) from a0 inside the relaxed box.

    Accepted iterates improve strictly and monotonically; a round ends the
    run when its best improvement falls below cfg.improvement_tol.
    Returns (a_final, value, iters) with a_final still relaxed (not snapped).
    """
    a0 = np.asarray(a0, dtype=float)
    if a0.shape != (space.n_dims,):
        raise ValueError(f"a0 must have shape ({space.n_dims},), got {a0.shape}")
    if (a0 < space.lows).any() or (a0 > space.highs).any():
        raise ValueError(f"a0 outside the relaxed action box: {a0}")

    def batch(rows, points, need_grad):
        vals = np.empty(len(points))
        grads = np.empty_like(points)
        for i, p in enumerate(points):
            vals[i], grads[i] = objective(p)
        return vals, grads

    z, vals, iters = _ascend_batch(batch, space, space.normalize(a0)[None, :], cfg)
    return space.denormalize(z[0]), float(vals[0]), int(iters[0])


def snap_discrete(space: ActionSpace, a) -> np.ndarray:
    """Clamp continuous dims to their box and round discrete dims to the
    nearest level, breaking exact ties toward the lower level."""
    a = np.asarray(a, dtype=float)
    if a.shape != (space.n_dims,):
        raise ValueError(f"action must have shape ({space.n_dims},), got {a.shape}")
    return _snap_batch(space, a[None, :])[0]


def _snap_batch(space: ActionSpace, points: np.ndarray) -> np.ndarray:
    out = np.clip(points, space.lows, space.highs)
    for j, dim in enumerate(space.dims):
        if isinstance(dim, Discrete):
            levels = np.asarray(dim.levels)
            hi_idx = np.clip(np.searchsorted(levels, out[:, j]), 1, len(levels) - 1)
            lo_lv = levels[hi_idx - 1]
            hi_lv = levels[hi_idx]
            # strict > sends exact midpoints to the lower level
            out[:, j] = np.where(out[:, j] - lo_lv > hi_lv - out[:, j], hi_lv, lo_lv)
    return out


# ---------------------------------------------------------------------------
# restart search on ensemble objectives
# ---------------------------------------------------------------------------


def _single_context_objective(ensemble: RewardEnsemble, s: np.ndarray, beta: float):
    def batch(rows, points, need_grad):
        ctx = np.broadcast_to(s, (points.shape[0], s.size))
        if need_grad:
            return penalized_objective_batch(ensemble, ctx, points, beta)
        means, stds = predict_mean_std_batch(ensemble, ctx, points)
        return means - beta * stds, None

    return batch


def _per_row_context_objective(ensemble: RewardEnsemble, contexts_rep: np.ndarray, beta: float):
    def batch(rows, points, need_grad):
        ctx = contexts_rep[rows]
        if need_grad:
            return penalized_objective_batch(ensemble, ctx, points, beta)
        means, stds = predict_mean_std_batch(ensemble, ctx, points)
        return means - beta * stds, None

    return batch


def _draw_inits(space, cfg, s, policy, rng):
    """Initial points for one context; leading axis has the restart prefix
    property, so the first k rows match a k-restart draw from the same rng."""
    if cfg.init_source == "policy":
        if policy is None:
            raise ValueError("init_source 'policy' requires a policy")
        acts = sample_actions(policy, s, cfg.restarts, rng)
        return acts, space.normalize(acts)
    z0 = rng.uniform(size=(cfg.restarts, space.n_dims))
    return space.denormalize(z0), z0


def optimize_action(
    ensemble: RewardEnsemble,
    s,
    cfg: GAConfig,
    policy: StochasticPolicy | None = None,
):
    """Best snapped action over cfg.restarts ascent runs for one context.

    Each restart's relaxed endpoint is snapped and re-scored; the snapped
    score picks the winner, ties going to the lowest restart index.
    Returns (action, predicted_value, diagnostics) with JSON-ready
    per-restart diagnostics (init, value, iterations, wall clock).
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (ensemble.context_dim,):
        raise ValueError(f"context must have shape ({ensemble.context_dim},), got {s.shape}")
    space = ensemble.space
    inits, z0 = _draw_inits(space, cfg, s, policy, rng_from(cfg.seed))
    objective = _single_context_objective(ensemble, s, cfg.beta)

    per_restart = []
    snapped_actions = np.empty_like(inits)
    snapped_values = np.empty(cfg.restarts)
    t_all = perf_counter()
    for r in range(cfg.restarts):
        t0 = perf_counter()
        z, v_rel, iters = _ascend_batch(objective, space, z0[r][None, :], cfg)
        snap = _snap_batch(space, space.denormalize(z))
        v_snap, _ = _checked(objective, np.array([r]), snap, False)
        dt = perf_counter() - t0
        snapped_actions[r] = snap[0]
        snapped_values[r] = v_snap[0]
        per_restart.append(
            {
                "init": [float(x) for x in inits[r]],
                "value": float(v_snap[0]),
                "relaxed_value": float(v_rel[0]),
                "iterations": int(iters[0]),
                "wall_clock": dt,
            }
        )
    winner = int(np.argmax(snapped_values))
    diagnostics = {
        "init_source": cfg.init_source,
        "beta": float(cfg.beta),
        "restarts": int(cfg.restarts),
        "winner": winner,
        "iterations_total": int(sum(p["iterations"] for p in per_restart)),
        "wall_clock_total": perf_counter() - t_all,
        "per_restart": per_restart,
    }
    return snapped_actions[winner], float(snapped_values[winner]), diagnostics


@dataclass(frozen=True)
class RestartGrid:
    """Per-context, per-restart outcomes of a batched optimize run.

    actions: (n, R, d) snapped endpoints; values: (n, R) snapped scores;
    relaxed_values, iterations: (n, R); inits: (n, R, d).
    """

    actions: np.ndarray
    values: np.ndarray
    relaxed_values: np.ndarray
    iterations: np.ndarray
    inits: np.ndarray

    def select(self, k: int):
        """Winner over the first k restarts per context (prefix of the
        restart stream, so this equals a separate k-restart run).
        Returns (actions (n, d), values (n,))."""
        if not 1 <= k <= self.values.shape[1]:
            raise ValueError(f"k must be in [1, {self.values.shape[1]}], got {k}")
        vals = self.values[:, :k]
        idx = np.argmax(vals, axis=1)
        rows = np.arange(len(idx))
        return self.actions[rows, idx], vals[rows, idx]


def optimize_actions_batch(
    ensemble: RewardEnsemble,
    contexts,
    cfg: GAConfig,
    policy: StochasticPolicy | None = None,
) -> RestartGrid:
    """Run optimize_action's search for many contexts in one engine pass.

    Context i draws its restarts from derive_seed(cfg.seed, i), so row i
    reproduces optimize_action(ensemble, contexts[i], replace(cfg,
    seed=derive_seed(cfg.seed, i)), policy) up to float batching noise.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    if contexts.shape[1] != ensemble.context_dim:
        raise ValueError(
            f"contexts must have {ensemble.context_dim} columns, got {contexts.shape[1]}"
        )
    space = ensemble.space
    n, big_r = contexts.shape[0], cfg.restarts
    inits = np.empty((n * big_r, space.n_dims))
    z0 = np.empty_like(inits)
    for i in range(n):
        rng = rng_from(derive_seed(cfg.seed, i))
        a_i, z_i = _draw_inits(space, cfg, contexts[i], policy, rng)
        inits[i * big_r : (i + 1) * big_r] = a_i
        z0[i * big_r : (i + 1) * big_r] = z_i
    ctx_rep = np.repeat(contexts, big_r, axis=0)
    objective = _per_row_context_objective(ensemble, ctx_rep, cfg.beta)
    z, v_rel, iters = _ascend_batch(objective, space, z0, cfg)
    snapped = _snap_batch(space, space.denormalize(z))
    v_snap, _ = _checked(objective, np.arange(n * big_r), snapped, False)
    d = space.n_dims
    return RestartGrid(
        actions=snapped.reshape(n, big_r, d),
        values=v_snap.reshape(n, big_r),
        relaxed_values=v_rel.reshape(n, big_r),
        iterations=iters.reshape(n, big_r),
        inits=inits.reshape(n, big_r, d),
    )
