"""Domain types, dataset CSV I/O, resampling and seeded RNG derivation.

Everything downstream (environment, models, optimizers, evaluation) works on
the types defined here: a mixed continuous/discrete ``ActionSpace``, and a
``Dataset`` of logged (context, action, reward, propensity) interactions.
Datasets and spaces are immutable after construction and safe to share across
threads; every random operation takes an explicit 64-bit seed.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

# Sentinel propensity for fictitious (augmented) records.  Never a valid
# density, so estimators that require real propensities can reject it.
AUGMENTED_PROPENSITY = -1.0


# ---------------------------------------------------------------------------
# Seed derivation
# ---------------------------------------------------------------------------

def derive_seed(seed: int, *keys: int) -> int:
    """Hash (seed, keys...) into a fresh 64-bit seed.

    Sub-streams for parallelizable work (bootstrap members, restarts,
    per-context optimization) are derived this way so serial and sharded
    execution see identical randomness.  blake2b keeps the mapping stable
    across platforms and Python/numpy versions.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in (seed, *keys):
        h.update(int(part).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def rng_from(seed: int, *keys: int) -> np.random.Generator:
    """Generator seeded by ``derive_seed(seed, *keys)``."""
    return np.random.default_rng(derive_seed(seed, *keys))


# ---------------------------------------------------------------------------
# Action space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Continuous:
    """Continuous dimension on the closed box [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"continuous bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise ValueError(f"continuous dim requires lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Discrete:
    """Discrete dimension taking one of ``levels`` (strictly increasing reals)."""

    levels: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if len(self.levels) < 2:
            raise ValueError(f"discrete dim needs >= 2 levels, got {self.levels}")
        if not all(np.isfinite(v) for v in self.levels):
            raise ValueError(f"discrete levels must be finite, got {self.levels}")
        if not all(a < b for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"discrete levels must be strictly increasing, got {self.levels}")


DimSpec = Union[Continuous, Discrete]


@dataclass(frozen=True)
class ActionSpace:
    """Ordered mixed continuous/discrete configuration-parameter space.

    Discrete dimensions are stored as real level values (not indices), so a
    single numeric action vector serves logging, modeling and optimization
    alike.
    """

    dims: tuple[DimSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise ValueError("action space needs at least one dimension")
        lo = np.array([d.lo if isinstance(d, Continuous) else d.levels[0] for d in self.dims])
        hi = np.array([d.hi if isinstance(d, Continuous) else d.levels[-1] for d in self.dims])
        disc = np.array([isinstance(d, Discrete) for d in self.dims])
        for arr in (lo, hi, disc):
            arr.setflags(write=False)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_discrete_mask", disc)

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def lows(self) -> np.ndarray:
        """Relaxed lower bounds (discrete dims relaxed to their min level)."""
        return self._lo

    @property
    def highs(self) -> np.ndarray:
        """Relaxed upper bounds (discrete dims relaxed to their max level)."""
        return self._hi

    @property
    def ranges(self) -> np.ndarray:
        return self._hi - self._lo

    @property
    def discrete_mask(self) -> np.ndarray:
        return self._discrete_mask

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        """Map actions into the relaxed unit box, dim by dim."""
        return (np.asarray(actions, dtype=float) - self._lo) / self.ranges

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        return self._lo + np.asarray(unit, dtype=float) * self.ranges

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n actions drawn uniformly: box-uniform on continuous dims, level-uniform on discrete."""
        out = np.empty((n, self.n_dims))
        for j, dim in enumerate(self.dims):
            if isinstance(dim, Continuous):
                out[:, j] = rng.uniform(dim.lo, dim.hi, size=n)
            else:
                levels = np.asarray(dim.levels)
                out[:, j] = levels[rng.integers(0, len(levels), size=n)]
        return out


def validate_action(space: ActionSpace, action: np.ndarray) -> list[str]:
    """Per-dimension violations for ``action``; empty list means valid.

    Raises ValueError on a length mismatch (structural error, as opposed to a
    per-dimension violation).
    """
    action = np.asarray(action, dtype=float)
    if action.ndim != 1 or action.shape[0] != space.n_dims:
        raise ValueError(
            f"action has shape {action.shape}, expected ({space.n_dims},)"
        )
    violations = []
    for j, (dim, value) in enumerate(zip(space.dims, action)):
        if not np.isfinite(value):
            violations.append(f"dim {j}: non-finite value {value}")
        elif isinstance(dim, Continuous):
            if not (dim.lo <= value <= dim.hi):
                violations.append(f"dim {j}: {value} outside [{dim.lo}, {dim.hi}]")
        else:
            if not any(value == lv for lv in dim.levels):
                violations.append(f"dim {j}: {value} not in levels {dim.levels}")
    return violations


def _validate_actions_batch(space: ActionSpace, actions: np.ndarray) -> np.ndarray:
    """Boolean validity per row; vectorized version of validate_action."""
    ok = np.isfinite(actions).all(axis=1)
    for j, dim in enumerate(space.dims):
        col = actions[:, j]
        if isinstance(dim, Continuous):
            ok &= (col >= dim.lo) & (col <= dim.hi)
        else:
            ok &= np.isin(col, np.asarray(dim.levels))
    return ok


# ---------------------------------------------------------------------------
# Logged data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoggedInteraction:
    """One (context, action, reward, logging-propensity) tuple."""

    context: np.ndarray
    action: np.ndarray
    reward: float
    propensity: float


@dataclass(frozen=True)
class Dataset:
    """Immutable logged dataset in struct-of-arrays layout.

    ``propensities`` are the logging densities/probabilities of the recorded
    actions; they are strictly positive except for fictitious augmented
    records which carry ``AUGMENTED_PROPENSITY``.
    """

    space: ActionSpace
    contexts: np.ndarray      # (N, context_dim)
    actions: np.ndarray       # (N, n_dims)
    rewards: np.ndarray       # (N,)
    propensities: np.ndarray  # (N,)

    def __post_init__(self):
        contexts = np.ascontiguousarray(self.contexts, dtype=float)
        actions = np.ascontiguousarray(self.actions, dtype=float)
        rewards = np.ascontiguousarray(self.rewards, dtype=float)
        propensities = np.ascontiguousarray(self.propensities, dtype=float)
        n = contexts.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one record")
        if contexts.ndim != 2:
            raise ValueError(f"contexts must be 2-D, got shape {contexts.shape}")
        if actions.shape != (n, self.space.n_dims):
            raise ValueError(
                f"actions shape {actions.shape} does not match "
                f"({n}, {self.space.n_dims})"
            )
        if rewards.shape != (n,) or propensities.shape != (n,):
            raise ValueError("rewards and propensities must be 1-D of length N")
        if not np.isfinite(contexts).all():
            raise ValueError("contexts contain non-finite values")
        if not np.isfinite(rewards).all():
            raise ValueError("rewards contain non-finite values")
        bad = ~_validate_actions_batch(self.space, actions)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            detail = "; ".join(validate_action(self.space, actions[i]))
            raise ValueError(f"record {i}: invalid action ({detail})")
        real = propensities != AUGMENTED_PROPENSITY
        if not (propensities[real] > 0).all():
            i = int(np.flatnonzero(real & ~(propensities > 0))[0])
            raise ValueError(f"record {i}: propensity {propensities[i]} is not > 0")
        for arr in (contexts, actions, rewards, propensities):
            arr.setflags(write=False)
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "propensities", propensities)

    @property
    def size(self) -> int:
        return self.contexts.shape[0]

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    def __len__(self) -> int:
        return self.size

    def record(self, i: int) -> LoggedInteraction:
        return LoggedInteraction(
            context=self.contexts[i],
            action=self.actions[i],
            reward=float(self.rewards[i]),
            propensity=float(self.propensities[i]),
        )

    def __iter__(self) -> Iterator[LoggedInteraction]:
        return (self.record(i) for i in range(self.size))

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            space=self.space,
            contexts=self.contexts[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            propensities=self.propensities[idx],
        )

    def real_records(self) -> "Dataset":
        """Drop fictitious augmented records (sentinel propensity)."""
        keep = self.propensities != AUGMENTED_PROPENSITY
        if not keep.any():
            raise ValueError("dataset contains no real (non-augmented) records")
        return self.subset(np.flatnonzero(keep))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------
#
# Schema: header `ctx_0..ctx_{d_s-1},act_0..act_{d_a-1},reward,propensity`,
# UTF-8, `.` decimal separator, one record per line.  Floats are written with
# repr() so a save/load round trip is bit-exact.

def _header(context_dim: int, n_dims: int) -> list[str]:
    return (
        [f"ctx_{j}" for j in range(context_dim)]
        + [f"act_{j}" for j in range(n_dims)]
        + ["reward", "propensity"]
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the dataset in the CSV schema above, rows in dataset order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header(dataset.context_dim, dataset.space.n_dims))
        for i in range(dataset.size):
            row = (
                [repr(float(v)) for v in dataset.contexts[i]]
                + [repr(float(v)) for v in dataset.actions[i]]
                + [repr(float(dataset.rewards[i])), repr(float(dataset.propensities[i]))]
            )
            writer.writerow(row)


def load_dataset(path: str | Path, space: ActionSpace, allow_sentinel: bool = False) -> Dataset:
    """Load a dataset CSV, validating every record; row order is preserved.

    Malformed rows fail with the 1-based data row number and field name.
    Propensities must be strictly positive unless ``allow_sentinel`` admits
    the augmented-record sentinel.
    """
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        ctx_cols = [c for c in header if c.startswith("ctx_")]
        expected = _header(len(ctx_cols), space.n_dims)
        if header != expected:
            raise ValueError(f"{path}: header {header} does not match expected {expected}")
        d_s, d_a = len(ctx_cols), space.n_dims
        contexts, actions, rewards, propensities = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(expected):
                raise ValueError(f"{path}: row {row_no}: expected {len(expected)} fields, got {len(row)}")
            values = []
            for field_name, text in zip(expected, row):
                try:
                    values.append(float(text))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {row_no}: field {field_name!r}: cannot parse {text!r}"
                    ) from None
            ctx = np.array(values[:d_s])
            act = np.array(values[d_s:d_s + d_a])
            reward, propensity = values[d_s + d_a], values[d_s + d_a + 1]
            if not np.isfinite(ctx).all():
                raise ValueError(f"{path}: row {row_no}: non-finite context value")
            if not np.isfinite(reward):
                raise ValueError(f"{path}: row {row_no}: field 'reward': non-finite value")
            bad = validate_action(space, act)
            if bad:
                raise ValueError(f"{path}: row {row_no}: invalid action ({'; '.join(bad)})")
            sentinel_ok = allow_sentinel and propensity == AUGMENTED_PROPENSITY
            if not sentinel_ok and not propensity > 0:
                raise ValueError(
                    f"{path}: row {row_no}: field 'propensity': {propensity} is not > 0"
                )
            contexts.append(ctx)
            actions.append(act)
            rewards.append(reward)
            propensities.append(propensity)
    if not contexts:
        raise ValueError(f"{path}: no records")
    return Dataset(
        space=space,
        contexts=np.vstack(contexts),
        actions=np.vstack(actions),
        rewards=np.array(rewards),
        propensities=np.array(propensities),
    )


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def bootstrap_sample(dataset: Dataset, seed: int) -> Dataset:
    """Uniform with-replacement resample of the same size N."""
    if dataset.size < 1:
        raise ValueError("cannot bootstrap an empty dataset")
    rng = rng_from(seed, 0xB007)
    idx = rng.integers(0, dataset.size, size=dataset.size)
    return dataset.subset(idx)


def split_dataset(dataset: Dataset, heldout_count: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint (train, heldout) partition without replacement.

    The union of the two parts equals the original record multiset; within
    each part the original row order is preserved.
    """
    n = dataset.size
    if not 0 < heldout_count < n:
        raise ValueError(f"heldout_count must be in (0, {n}), got {heldout_count}")
    rng = rng_from(seed, 0x5B117)
    perm = rng.permutation(n)
    heldout_idx = np.sort(perm[:heldout_count])
    train_idx = np.sort(perm[heldout_count:])
    return dataset.subset(train_idx), dataset.subset(heldout_idx)


# ---------------------------------------------------------------------------
# Space serialization
# ---------------------------------------------------------------------------

def space_to_dict(space: ActionSpace) -> dict:
    """JSON-ready description of an action space."""
    dims = []
    for d in space.dims:
        if isinstance(d, Continuous):
            dims.append({"kind": "continuous", "lo": d.lo, "hi": d.hi})
        else:
            dims.append({"kind": "discrete", "levels": list(d.levels)})
    return {"dims": dims}


def space_from_dict(d: dict) -> ActionSpace:
    dims = []
    for j, spec in enumerate(d["dims"]):
        kind = spec.get("kind")
        if kind == "continuous":
            dims.append(Continuous(float(spec["lo"]), float(spec["hi"])))
        elif kind == "discrete":
            dims.append(Discrete(tuple(float(v) for v in spec["levels"])))
        else:
            raise ValueError(f"dim {j}: unknown kind {kind!r}")
    return ActionSpace(tuple(dims))
