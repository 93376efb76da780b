"""Bootstrap ensemble surrogate for the reward function.

K networks are fit to with-replacement resamples of the logged data; the
spread of their predictions serves as an epistemic-uncertainty estimate, and
the optimizer can subtract beta times that spread from the predicted mean to
stay out of regions the data does not support.  Also provides the
counterfactual augmentation that labels far-from-logged actions with a
pessimistic reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    AUGMENTED_PROPENSITY,
    ActionSpace,
    Dataset,
    bootstrap_sample,
    derive_seed,
    rng_from,
    space_from_dict,
    space_to_dict,
    validate_action,
)
from .neural import FeedforwardNet, TrainConfig, standardizer_from, train_regression


@dataclass(frozen=True)
class RewardEnsemble:
    """K reward networks sharing architecture and input standardization."""

    models: tuple[FeedforwardNet, ...]
    space: ActionSpace
    context_dim: int

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ValueError("ensemble needs at least one member")
        d_in = self.context_dim + self.space.n_dims
        sizes = self.models[0].layer_sizes
        for k, net in enumerate(self.models):
            if net.layer_sizes != sizes:
                raise ValueError(f"member {k}: architecture differs from member 0")
            if net.input_dim != d_in or net.output_dim != 1:
                raise ValueError(f"member {k}: wrong input/output dims for this space")

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def x_mean(self) -> np.ndarray:
        return self.models[0].x_mean

    @property
    def x_std(self) -> np.ndarray:
        return self.models[0].x_std


@dataclass(frozen=True)
class AugmentConfig:
    count_per_record: int = 1
    min_distance: float = 0.25
    pessimistic_quantile: float = 0.1

    def __post_init__(self):
        if self.count_per_record < 0:
            raise ValueError("count_per_record must be >= 0")
        if self.min_distance <= 0:
            raise ValueError("min_distance must be positive")
        if not 0.0 <= self.pessimistic_quantile <= 0.5:
            raise ValueError("pessimistic_quantile must be in [0, 0.5]")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_ensemble(
    dataset: Dataset,
    k: int,
    cfg: TrainConfig,
    seed: int,
    hidden: tuple[int, ...] = (64, 64),
) -> RewardEnsemble:
    """Fit K members, each on its own bootstrap resample of ``dataset``.

    Member j resamples with sub-seed (seed, j) and initializes with
    (seed, K + j); minibatch shuffling uses (seed, 2K + j).  Input
    standardization is computed once on the full dataset and shared.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if dataset.size < 1:
        raise ValueError("dataset is empty")
    inputs = np.hstack([dataset.contexts, dataset.actions])
    x_mean, x_std = standardizer_from(inputs)
    sizes = [inputs.shape[1], *hidden, 1]
    members = []
    for j in range(k):
        sample = bootstrap_sample(dataset, derive_seed(seed, j))
        net = FeedforwardNet.initialize(
            sizes, seed=derive_seed(seed, k + j), init_scale=cfg.init_scale,
            x_mean=x_mean, x_std=x_std,
        )
        member_cfg = replace(cfg, seed=derive_seed(seed, 2 * k + j))
        sample_inputs = np.hstack([sample.contexts, sample.actions])
        try:
            members.append(train_regression(net, sample_inputs, sample.rewards, member_cfg))
        except Exception as exc:
            raise RuntimeError(f"member {j}: training failed: {exc}") from exc
    return RewardEnsemble(tuple(members), dataset.space, dataset.context_dim)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def member_predictions_batch(ensemble: RewardEnsemble, contexts, actions) -> np.ndarray:
    """(K, n) raw member predictions at row-aligned pairs."""
    joint = np.hstack([np.atleast_2d(contexts), np.atleast_2d(actions)])
    return np.stack([net.forward(joint) for net in ensemble.models])


def _mean_std_from_preds(preds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # exact-zero spread when every member agrees; mean pinned to the member
    # range so float roundoff cannot push it outside
    lo = preds.min(axis=0)
    hi = preds.max(axis=0)
    mean = np.clip(preds.mean(axis=0), lo, hi)
    std = np.sqrt(np.maximum(preds.var(axis=0), 0.0))
    std[hi == lo] = 0.0
    return mean, std


def predict_mean_std_batch(ensemble: RewardEnsemble, contexts, actions) -> tuple[np.ndarray, np.ndarray]:
    """(means, population stds) over members, one entry per row."""
    return _mean_std_from_preds(member_predictions_batch(ensemble, contexts, actions))


def predict_mean_std(ensemble: RewardEnsemble, s, a) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    problems = validate_action(ensemble.space, a)
    if problems:
        raise ValueError("invalid action: " + "; ".join(problems))
    mean, std = predict_mean_std_batch(ensemble, np.asarray(s, dtype=float)[None, :], a[None, :])
    return float(mean[0]), float(std[0])


def penalized_objective_batch(
    ensemble: RewardEnsemble, contexts, actions, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Values and action-gradients of mean minus beta times spread.

    The spread gradient follows from the population variance:
    d std / da = (1/K) sum_k (R_k - mean) dR_k/da / std, taken as zero
    wherever the members coincide (std = 0).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    joint = np.hstack([contexts, actions])
    da = ensemble.space.n_dims
    preds = np.empty((ensemble.k, joint.shape[0]))
    grads = np.empty((ensemble.k, joint.shape[0], da))
    for j, net in enumerate(ensemble.models):
        vals, g = net.value_and_grad_input(joint)
        preds[j] = vals
        grads[j] = g[:, contexts.shape[1]:]
    mean, std = _mean_std_from_preds(preds)
    value = mean - beta * std
    grad = grads.mean(axis=0)
    if beta > 0:
        centered = preds - preds.mean(axis=0)
        live = std > 0
        if live.any():
            num = (centered[:, :, None] * grads).mean(axis=0)
            grad[live] -= beta * num[live] / std[live, None]
    return value, grad


def penalized_objective(ensemble: RewardEnsemble, s, a, beta: float) -> tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=float)
    problems = validate_action(ensemble.space, a)
    if problems:
        raise ValueError("invalid action: " + "; ".join(problems))
    value, grad = penalized_objective_batch(
        ensemble, np.asarray(s, dtype=float)[None, :], a[None, :], beta
    )
    return float(value[0]), grad[0]


# ---------------------------------------------------------------------------
# Counterfactual augmentation
# ---------------------------------------------------------------------------

def augment_counterfactual(dataset: Dataset, cfg: AugmentConfig, seed: int) -> Dataset:
    """Append pessimistically labeled fictitious actions to a dataset.

    For each logged record, draws uniform actions until ``count_per_record``
    of them are farther than ``min_distance`` from the logged action in the
    normalized max-metric, labels them with the ``pessimistic_quantile`` of
    all logged rewards, and marks their propensity with the sentinel so
    importance-weighted consumers skip them.  The concrete construction is
    this package's own reading of counterfactual augmentation; treat the
    labels as a regularizer, not as data.
    """
    if cfg.count_per_record == 0:
        return dataset
    n = dataset.size
    space = dataset.space
    pessimistic = float(np.quantile(dataset.rewards, cfg.pessimistic_quantile))
    logged_unit = space.normalize(dataset.actions)
    new_actions = np.empty((n * cfg.count_per_record, space.n_dims))
    tried = 0
    accepted = 0
    for i in range(n):
        rng = rng_from(seed, 0xA06, i)
        need = cfg.count_per_record
        got = 0
        budget = 200 * cfg.count_per_record
        while got < need:
            if budget <= 0:
                rate = accepted / max(tried, 1)
                raise RuntimeError(
                    f"record {i}: augmentation acceptance rate {rate:.3g} too low "
                    f"for min_distance {cfg.min_distance}"
                )
            batch = space.sample_uniform(rng, min(need - got, 16))
            tried += batch.shape[0]
            budget -= batch.shape[0]
            dist = np.abs(space.normalize(batch) - logged_unit[i]).max(axis=1)
            keep = batch[dist > cfg.min_distance]
            got_now = min(keep.shape[0], need - got)
            start = i * cfg.count_per_record + got
            new_actions[start:start + got_now] = keep[:got_now]
            got += got_now
            accepted += got_now
    contexts = np.vstack([
        dataset.contexts,
        np.repeat(dataset.contexts, cfg.count_per_record, axis=0),
    ])
    actions = np.vstack([dataset.actions, new_actions])
    rewards = np.concatenate([
        dataset.rewards, np.full(n * cfg.count_per_record, pessimistic)
    ])
    propensities = np.concatenate([
        dataset.propensities,
        np.full(n * cfg.count_per_record, AUGMENTED_PROPENSITY),
    ])
    return Dataset(space, contexts, actions, rewards, propensities)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_ensemble(ensemble: RewardEnsemble, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = [f"member_{j:02d}.json" for j in range(ensemble.k)]
    manifest = {
        "k": ensemble.k,
        "context_dim": ensemble.context_dim,
        "space": space_to_dict(ensemble.space),
        "x_mean": ensemble.x_mean.tolist(),
        "x_std": ensemble.x_std.tolist(),
        "members": names,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    for net, name in zip(ensemble.models, names):
        net.save(directory / name)


def load_ensemble(directory: str | Path) -> RewardEnsemble:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    models = tuple(FeedforwardNet.load(directory / name) for name in manifest["members"])
    return RewardEnsemble(
        models=models,
        space=space_from_dict(manifest["space"]),
        context_dim=int(manifest["context_dim"]),
    )
