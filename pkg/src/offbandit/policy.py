"""Stochastic policy network and clipped off-policy policy gradient.

The policy factorizes over action dims: a shared tanh trunk embeds the
context, then each continuous dim gets a truncated Gaussian whose center is
an affine head squashed into the dim's box (width is a free per-dim
parameter, independent of the context), and each discrete dim gets softmax
logits over its levels.  Densities are exact, strictly positive on the
whole space, and cheap to evaluate, which is what the importance-weighted
training objective needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .core import (
    ActionSpace,
    Continuous,
    Dataset,
    rng_from,
    space_from_dict,
    space_to_dict,
    validate_action,
)

_SQRT2PI = math.sqrt(2.0 * math.pi)
# width = range * exp(log_width); keep widths inside a sane band so the
# truncated normalizer never degenerates
LOG_WIDTH_MIN = math.log(1e-3)
LOG_WIDTH_MAX = math.log(10.0)


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT2PI


@dataclass(frozen=True)
class OPPGConfig:
    clip_m: float = 10.0
    epochs: int = 40
    batch_size: int = 256
    step_size: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.clip_m < 1.0:
            raise ValueError("clip_m must be >= 1")
        if self.epochs < 0 or self.batch_size <= 0 or self.step_size <= 0:
            raise ValueError(f"invalid OPPG config: {self}")


@dataclass(frozen=True)
class StochasticPolicy:
    """Factorized policy: tanh trunk plus one head per action dim."""

    space: ActionSpace
    context_dim: int
    trunk_weights: tuple[np.ndarray, ...]
    trunk_biases: tuple[np.ndarray, ...]
    head_weights: tuple[np.ndarray, ...]   # (1, H) continuous, (L, H) discrete
    head_biases: tuple[np.ndarray, ...]    # (1,) continuous, (L,) discrete
    log_widths: np.ndarray                 # one entry per continuous dim

    def __post_init__(self):
        if len(self.trunk_weights) != len(self.trunk_biases) or not self.trunk_weights:
            raise ValueError("trunk needs at least one layer")
        if self.trunk_weights[0].shape[1] != self.context_dim:
            raise ValueError("trunk input size != context_dim")
        emb = self.trunk_weights[-1].shape[0]
        if len(self.head_weights) != self.space.n_dims:
            raise ValueError("need one head per action dim")
        n_cont = 0
        for j, dim in enumerate(self.space.dims):
            out = 1 if isinstance(dim, Continuous) else len(dim.levels)
            if self.head_weights[j].shape != (out, emb):
                raise ValueError(f"head {j}: weight shape {self.head_weights[j].shape} != ({out}, {emb})")
            if self.head_biases[j].shape != (out,):
                raise ValueError(f"head {j}: bias shape mismatch")
            n_cont += isinstance(dim, Continuous)
        lw = np.asarray(self.log_widths, dtype=float)
        if lw.shape != (n_cont,):
            raise ValueError(f"log_widths shape {lw.shape} != ({n_cont},)")
        if lw.size and ((lw < LOG_WIDTH_MIN - 1e-12) | (lw > LOG_WIDTH_MAX + 1e-12)).any():
            raise ValueError("log_widths outside the allowed band")
        lw.setflags(write=False)
        object.__setattr__(self, "log_widths", lw)

    @property
    def embedding_dim(self) -> int:
        return self.trunk_weights[-1].shape[0]


def initialize_policy(
    space: ActionSpace,
    context_dim: int,
    seed: int,
    hidden: tuple[int, ...] = (64, 64),
    init_width: float = 0.25,
    head_scale: float = 0.01,
) -> StochasticPolicy:
    """Near-flat starting policy.

    Small head weights put every continuous center mid-box and every
    discrete head near uniform; ``init_width`` (as a fraction of each box)
    sets the starting truncated-Gaussian width, so matching it to the
    logging policy's width keeps early importance ratios moderate.
    """
    if not LOG_WIDTH_MIN <= math.log(init_width) <= LOG_WIDTH_MAX:
        raise ValueError("init_width outside the allowed band")
    rng = rng_from(seed, 0xF0)
    sizes = [context_dim, *hidden]
    tw, tb = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / math.sqrt(fan_in)
        tw.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        tb.append(rng.uniform(-scale, scale, size=fan_out))
    hw, hb = [], []
    emb = sizes[-1]
    n_cont = 0
    for dim in space.dims:
        out = 1 if isinstance(dim, Continuous) else len(dim.levels)
        hw.append(rng.uniform(-head_scale, head_scale, size=(out, emb)))
        hb.append(np.zeros(out))
        n_cont += isinstance(dim, Continuous)
    return StochasticPolicy(
        space=space,
        context_dim=context_dim,
        trunk_weights=tuple(tw),
        trunk_biases=tuple(tb),
        head_weights=tuple(hw),
        head_biases=tuple(hb),
        log_widths=np.full(n_cont, math.log(init_width)),
    )


# ---------------------------------------------------------------------------
# Forward machinery (shared by inference and training)
# ---------------------------------------------------------------------------

def _trunk_forward(trunk_w, trunk_b, contexts):
    acts = [contexts]
    h = contexts
    for w, b in zip(trunk_w, trunk_b):
        h = np.tanh(h @ w.T + b)
        acts.append(h)
    return acts


def _cont_stats(dim, head_out, log_width):
    """Truncated-Gaussian pieces for one continuous dim.

    head_out is the raw affine output (n,); the center is squashed into the
    open box so the truncation normalizer can never degenerate.
    """
    span = dim.hi - dim.lo
    sig = expit(head_out)
    mean = dim.lo + span * sig
    width = span * math.exp(log_width)
    alpha = (dim.lo - mean) / width
    beta = (dim.hi - mean) / width
    z_norm = ndtr(beta) - ndtr(alpha)
    return mean, width, alpha, beta, z_norm, sig


class _Forward:
    """One forward pass over a batch: trunk activations and head outputs."""

    def __init__(self, policy: StochasticPolicy, contexts: np.ndarray):
        self.policy = policy
        self.acts = _trunk_forward(policy.trunk_weights, policy.trunk_biases, contexts)
        emb = self.acts[-1]
        self.head_outs = [
            emb @ w.T + b for w, b in zip(policy.head_weights, policy.head_biases)
        ]
        self.cont_pos = {}
        pos = 0
        for j, dim in enumerate(policy.space.dims):
            if isinstance(dim, Continuous):
                self.cont_pos[j] = pos
                pos += 1

    def dim_log_density(self, j: int, values: np.ndarray) -> np.ndarray:
        dim = self.policy.space.dims[j]
        if isinstance(dim, Continuous):
            mean, width, _, _, z_norm, _ = _cont_stats(
                dim, self.head_outs[j][:, 0], self.policy.log_widths[self.cont_pos[j]]
            )
            z = (values - mean) / width
            return -0.5 * z * z - math.log(_SQRT2PI * width) - np.log(z_norm)
        logits = self.head_outs[j]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        levels = np.asarray(dim.levels)
        idx = np.searchsorted(levels, values)
        return log_probs[np.arange(values.shape[0]), idx]

    def log_density(self, actions: np.ndarray) -> np.ndarray:
        total = np.zeros(actions.shape[0])
        for j in range(self.policy.space.n_dims):
            total += self.dim_log_density(j, actions[:, j])
        return total


def log_density_batch(policy: StochasticPolicy, contexts, actions) -> np.ndarray:
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    return _Forward(policy, contexts).log_density(actions)


def log_density(policy: StochasticPolicy, s, a) -> float:
    a = np.asarray(a, dtype=float)
    problems = validate_action(policy.space, a)
    if problems:
        raise ValueError("invalid action: " + "; ".join(problems))
    return float(log_density_batch(policy, np.asarray(s, dtype=float)[None, :], a[None, :])[0])


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_actions(policy: StochasticPolicy, s, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from the policy at a single context.

    Variates are consumed row-major (one full action row at a time), so the
    first k rows of an n-row draw equal a k-row draw from the same generator
    state; restart sweeps rely on that prefix property.
    """
    s = np.asarray(s, dtype=float)
    fwd = _Forward(policy, s[None, :])
    variates = rng.uniform(size=(n, policy.space.n_dims))
    out = np.empty((n, policy.space.n_dims))
    for j, dim in enumerate(policy.space.dims):
        v = variates[:, j]
        if isinstance(dim, Continuous):
            mean, width, alpha, _, z_norm, _ = _cont_stats(
                dim, fwd.head_outs[j][:, 0], policy.log_widths[fwd.cont_pos[j]]
            )
            fa = ndtr(alpha)
            draw = mean[0] + width * ndtri(fa[0] + v * z_norm[0])
            out[:, j] = np.clip(draw, dim.lo, dim.hi)
        else:
            logits = fwd.head_outs[j][0]
            shifted = np.exp(logits - logits.max())
            cum = np.cumsum(shifted / shifted.sum())
            idx = np.minimum(np.searchsorted(cum, v, side="right"), len(dim.levels) - 1)
            out[:, j] = np.asarray(dim.levels)[idx]
    return out


def sample(policy: StochasticPolicy, s, seed: int) -> tuple[np.ndarray, float]:
    """One action plus its exact log density, deterministic given seed."""
    action = sample_actions(policy, s, 1, rng_from(seed))[0]
    return action, log_density(policy, s, action)


def clip_weight(ratio, m):
    """min(ratio, m), elementwise on arrays."""
    return np.minimum(ratio, m)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _param_grads(policy, fwd: _Forward, actions, coeffs):
    """Gradients of sum_i coeffs[i] * log pi(s_i, a_i) w.r.t. all parameters."""
    emb = fwd.acts[-1]
    n = actions.shape[0]
    d_emb = np.zeros_like(emb)
    head_dw = []
    head_db = []
    d_logw = np.zeros_like(policy.log_widths)
    for j, dim in enumerate(policy.space.dims):
        w_j = policy.head_weights[j]
        if isinstance(dim, Continuous):
            pos = fwd.cont_pos[j]
            mean, width, alpha, beta, z_norm, sig = _cont_stats(
                dim, fwd.head_outs[j][:, 0], policy.log_widths[pos]
            )
            z = (actions[:, j] - mean) / width
            phi_a, phi_b = _phi(alpha), _phi(beta)
            dlogp_dmean = z / width + (phi_b - phi_a) / (z_norm * width)
            dmean_draw = (dim.hi - dim.lo) * sig * (1.0 - sig)
            g_raw = coeffs * dlogp_dmean * dmean_draw
            head_dw.append((g_raw @ emb)[None, :])
            head_db.append(np.array([g_raw.sum()]))
            d_emb += g_raw[:, None] * w_j
            dlogp_dlogw = (z * z - 1.0) - (alpha * phi_a - beta * phi_b) / z_norm
            d_logw[pos] = float(coeffs @ dlogp_dlogw)
        else:
            logits = fwd.head_outs[j]
            shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs = shifted / shifted.sum(axis=1, keepdims=True)
            levels = np.asarray(dim.levels)
            idx = np.searchsorted(levels, actions[:, j])
            grad_logits = -probs
            grad_logits[np.arange(n), idx] += 1.0
            grad_logits *= coeffs[:, None]
            head_dw.append(grad_logits.T @ emb)
            head_db.append(grad_logits.sum(axis=0))
            d_emb += grad_logits @ w_j
    trunk_dw = [None] * len(policy.trunk_weights)
    trunk_db = [None] * len(policy.trunk_biases)
    g = d_emb
    for i in range(len(policy.trunk_weights) - 1, -1, -1):
        gz = g * (1.0 - fwd.acts[i + 1] ** 2)
        trunk_dw[i] = gz.T @ fwd.acts[i]
        trunk_db[i] = gz.sum(axis=0)
        g = gz @ policy.trunk_weights[i]
    return trunk_dw, trunk_db, head_dw, head_db, d_logw


def oppg_train(
    policy: StochasticPolicy, dataset: Dataset, cfg: OPPGConfig
) -> tuple[StochasticPolicy, dict]:
    """Mini-batch ascent on the clipped importance-weighted return.

    Each update follows (1/|B|) sum_i min(pi/pi0, M) r_i grad log pi; the
    weight is treated as a constant of the update.  Augmented records
    (sentinel propensity) are dropped up front.  Returns the trained policy
    and a diagnostics dict with per-batch weight traces.
    """
    n_all = dataset.size
    data = dataset.real_records()
    excluded = n_all - data.size
    if not (data.propensities > 0).all():
        i = int(np.argmin(data.propensities))
        raise ValueError(f"record {i}: propensity {data.propensities[i]} is not > 0")
    trunk_w = [w.copy() for w in policy.trunk_weights]
    trunk_b = [b.copy() for b in policy.trunk_biases]
    head_w = [w.copy() for w in policy.head_weights]
    head_b = [b.copy() for b in policy.head_biases]
    log_w = policy.log_widths.copy()
    log_m = math.log(cfg.clip_m)
    log_prop = np.log(data.propensities)
    rng = rng_from(cfg.seed, 0x099)
    trace = {"batch_max_weight": [], "batch_mean_weight": [], "batch_value": []}
    n = data.size
    updates = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # pass a copy: the frozen policy write-protects its log_widths
            work = StochasticPolicy(
                policy.space, policy.context_dim,
                tuple(trunk_w), tuple(trunk_b), tuple(head_w), tuple(head_b), log_w.copy(),
            )
            fwd = _Forward(work, data.contexts[idx])
            logp = fwd.log_density(data.actions[idx])
            weights = np.exp(np.minimum(logp - log_prop[idx], log_m))
            coeffs = weights * data.rewards[idx] / idx.size
            grads = _param_grads(work, fwd, data.actions[idx], coeffs)
            flat = [g for part in grads[:4] for g in part] + [grads[4]]
            if not all(np.isfinite(g).all() for g in flat):
                raise RuntimeError(f"non-finite policy gradient in batch at offset {start}")
            tw, tb, hw, hb, dlw = grads
            for i in range(len(trunk_w)):
                trunk_w[i] += cfg.step_size * tw[i]
                trunk_b[i] += cfg.step_size * tb[i]
            for j in range(len(head_w)):
                head_w[j] += cfg.step_size * hw[j]
                head_b[j] += cfg.step_size * hb[j]
            log_w += cfg.step_size * dlw
            np.clip(log_w, LOG_WIDTH_MIN, LOG_WIDTH_MAX, out=log_w)
            trace["batch_max_weight"].append(float(weights.max()))
            trace["batch_mean_weight"].append(float(weights.mean()))
            trace["batch_value"].append(float(coeffs.sum()))
            updates += 1
    trained = StochasticPolicy(
        policy.space, policy.context_dim,
        tuple(w.copy() for w in trunk_w), tuple(b.copy() for b in trunk_b),
        tuple(w.copy() for w in head_w), tuple(b.copy() for b in head_b),
        log_w.copy(),
    )
    diagnostics = {
        "updates": updates,
        "excluded_augmented": excluded,
        "clip_m": cfg.clip_m,
        **trace,
    }
    return trained, diagnostics


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_policy(policy: StochasticPolicy, path: str | Path) -> None:
    doc = {
        "space": space_to_dict(policy.space),
        "context_dim": policy.context_dim,
        "trunk_weights": [w.tolist() for w in policy.trunk_weights],
        "trunk_biases": [b.tolist() for b in policy.trunk_biases],
        "head_weights": [w.tolist() for w in policy.head_weights],
        "head_biases": [b.tolist() for b in policy.head_biases],
        "log_widths": policy.log_widths.tolist(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_policy(path: str | Path) -> StochasticPolicy:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return StochasticPolicy(
        space=space_from_dict(doc["space"]),
        context_dim=int(doc["context_dim"]),
        trunk_weights=tuple(np.array(w) for w in doc["trunk_weights"]),
        trunk_biases=tuple(np.array(b) for b in doc["trunk_biases"]),
        head_weights=tuple(np.array(w) for w in doc["head_weights"]),
        head_biases=tuple(np.array(b) for b in doc["head_biases"]),
        log_widths=np.array(doc["log_widths"]),
    )
