"""Run configuration: INI files with documented defaults and size profiles.

A config file needs only the keys that differ from the defaults below; the
"fast" profile shrinks dataset sizes for CI-scale runs, "full" keeps the
paper-scale sizes.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .actionopt import GAConfig
from .core import ActionSpace, Continuous, Discrete
from .neural import TrainConfig
from .policy import OPPGConfig
from .rewardmodel import AugmentConfig
from .synthenv import SyntheticEnvSpec, build_env, default_benchmark_space

__all__ = [
    "RunConfig",
    "default_config_text",
    "load_config",
    "parse_space_spec",
    "write_default_config",
]

# section -> key -> (default, comment); comments double as the key reference
_SPEC: dict[str, dict[str, tuple[str, str]]] = {
    "env": {
        "seed": ("0", "seed the environment structure is derived from"),
        "context_dim": ("20", "number of context dimensions"),
        "bumps": ("8", "number of Gaussian bumps in the true reward"),
        "length_scale": ("0.8", "bump length scale in raw input units"),
        "noise_std": ("0.1", "reward observation noise std"),
        "logging_mix": ("0.1", "uniform-exploration share of the logging policy"),
        "bump_weight_lo": ("2.0", "lower end of the bump weight draw"),
        "bump_weight_hi": ("6.0", "upper end of the bump weight draw"),
        "bump_context_margin": (
            "0.25",
            "bump context coordinates drawn in [margin, 1 - margin]",
        ),
        "linear_action_scale": ("0.05", "scale of the linear action term"),
    },
    "space": {
        "dims": (
            "benchmark",
            "'benchmark' preset, or ';'-separated dims: c:lo:hi | d:v1,v2,...",
        ),
    },
    "reward_model": {
        "members": ("5", "bootstrap ensemble size K"),
        "hidden": ("64,64", "hidden layer widths of each member"),
        "epochs": ("60", "training epochs per member"),
        "batch_size": ("256", "minibatch size"),
        "step_size": ("0.05", "SGD step size"),
        "momentum": ("0.9", "SGD momentum"),
    },
    "augment": {
        "enabled": ("false", "train the ensemble on counterfactually augmented data"),
        "count_per_record": ("1", "synthetic actions added per logged record"),
        "min_distance": ("0.25", "min normalized L-inf distance from the logged action"),
        "pessimistic_quantile": ("0.1", "logged-reward quantile used as the fake reward"),
    },
    "ga": {
        "step_size": ("0.05", "ascent step in normalized action coordinates"),
        "max_iters": ("200", "iteration cap per restart"),
        "improvement_tol": ("1e-6", "stop once a round improves less than this"),
        "beta": ("0.0", "uncertainty penalty for the headline DM runs"),
    },
    "policy": {
        "hidden": ("64,64", "hidden layer widths of the policy trunk"),
        "init_width": ("0.25", "initial truncated-Gaussian width, fraction of range"),
        "epochs": ("40", "off-policy gradient epochs"),
        "batch_size": ("256", "minibatch size"),
        "step_size": ("0.05", "ascent step size"),
        "clip_m": ("10.0", "importance weight cap M"),
    },
    "eval": {
        "seed": ("0", "pipeline seed (data, training, search streams)"),
        "train_records": ("20000", "logged records used for model fitting"),
        "heldout": ("10000", "heldout records reserved for evaluation contexts"),
        "restart_grid": ("1,5,10", "restart counts for the sweep (ascending)"),
        "beta_grid": ("0,0.5,1,2", "uncertainty penalties for the sweep (ascending)"),
        "beta_restarts": ("5", "restarts used inside the beta sweep"),
        "m_grid": ("1,10,100", "clipping thresholds for the IPS sweep"),
        "timing_contexts": ("30", "contexts timed individually for wall-clock medians"),
    },
}

_PROFILES: dict[str, dict[tuple[str, str], str]] = {
    "full": {},
    "fast": {
        ("eval", "train_records"): "4000",
        ("eval", "heldout"): "1000",
    },
}


def parse_space_spec(text: str) -> ActionSpace:
    """'benchmark', or ';'-separated dims like 'c:0:1; d:0,0.5,1'."""
    text = text.strip()
    if text == "benchmark":
        return default_benchmark_space()
    dims = []
    for item in (p.strip() for p in text.split(";")):
        if not item:
            continue
        kind, _, rest = item.partition(":")
        try:
            if kind == "c":
                lo, _, hi = rest.partition(":")
                dims.append(Continuous(float(lo), float(hi)))
            elif kind == "d":
                dims.append(Discrete(tuple(float(v) for v in rest.split(","))))
            else:
                raise ValueError("unknown dim kind")
        except ValueError as exc:
            raise ValueError(
                f"bad dim spec {item!r} (use c:lo:hi or d:v1,v2,...): {exc}"
            ) from exc
    if not dims:
        raise ValueError(f"space spec {text!r} contains no dimensions")
    return ActionSpace(tuple(dims))


def _space_to_spec(space: ActionSpace) -> str:
    parts = []
    for dim in space.dims:
        if isinstance(dim, Continuous):
            parts.append(f"c:{dim.lo}:{dim.hi}")
        else:
            parts.append("d:" + ",".join(str(v) for v in dim.levels))
    return "; ".join(parts)


def _parse_hidden(text: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in text.split(",") if v.strip())
    if not out or any(v < 1 for v in out):
        raise ValueError(f"hidden layers must be positive ints, got {text!r}")
    return out


def _ascending(values, what):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{what} must be strictly ascending, got {values}")
    return values


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one pipeline run."""

    profile: str
    env_seed: int
    context_dim: int
    bumps: int
    length_scale: float
    noise_std: float
    logging_mix: float
    bump_weight_lo: float
    bump_weight_hi: float
    bump_context_margin: float
    linear_action_scale: float
    space_spec: str
    space: ActionSpace = field(compare=False)
    members: int
    reward_hidden: tuple[int, ...]
    reward_train: TrainConfig
    augment_enabled: bool
    augment: AugmentConfig
    ga_step_size: float
    ga_max_iters: int
    ga_improvement_tol: float
    ga_beta: float
    policy_hidden: tuple[int, ...]
    policy_init_width: float
    oppg: OPPGConfig
    seed: int
    train_records: int
    heldout: int
    restart_grid: tuple[int, ...]
    beta_grid: tuple[float, ...]
    beta_restarts: int
    m_grid: tuple[float, ...]
    timing_contexts: int

    def make_env(self) -> SyntheticEnvSpec:
        return build_env(
            self.space,
            context_dim=self.context_dim,
            bumps=self.bumps,
            length_scale=self.length_scale,
            noise_std=self.noise_std,
            logging_mix=self.logging_mix,
            seed=self.env_seed,
            bump_weight_range=(self.bump_weight_lo, self.bump_weight_hi),
            bump_context_margin=self.bump_context_margin,
            linear_action_scale=self.linear_action_scale,
        )

    def ga_config(self, *, restarts: int, seed: int, beta: float | None = None,
                  init_source: str = "uniform") -> GAConfig:
        return GAConfig(
            step_size=self.ga_step_size,
            max_iters=self.ga_max_iters,
            improvement_tol=self.ga_improvement_tol,
            restarts=restarts,
            beta=self.ga_beta if beta is None else beta,
            seed=seed,
            init_source=init_source,
        )

    def echo(self) -> dict:
        """Scalar settings for the summary output (reproducibility echo)."""
        return {
            "profile": self.profile,
            "env": {
                "seed": self.env_seed, "context_dim": self.context_dim,
                "bumps": self.bumps, "length_scale": self.length_scale,
                "noise_std": self.noise_std, "logging_mix": self.logging_mix,
                "bump_weight_lo": self.bump_weight_lo,
                "bump_weight_hi": self.bump_weight_hi,
                "bump_context_margin": self.bump_context_margin,
                "linear_action_scale": self.linear_action_scale,
            },
            "space": self.space_spec,
            "reward_model": {
                "members": self.members, "hidden": list(self.reward_hidden),
                "epochs": self.reward_train.epochs,
                "batch_size": self.reward_train.batch_size,
                "step_size": self.reward_train.step_size,
                "momentum": self.reward_train.momentum,
            },
            "augment": {
                "enabled": self.augment_enabled,
                "count_per_record": self.augment.count_per_record,
                "min_distance": self.augment.min_distance,
                "pessimistic_quantile": self.augment.pessimistic_quantile,
            },
            "ga": {
                "step_size": self.ga_step_size, "max_iters": self.ga_max_iters,
                "improvement_tol": self.ga_improvement_tol, "beta": self.ga_beta,
            },
            "policy": {
                "hidden": list(self.policy_hidden),
                "init_width": self.policy_init_width,
                "epochs": self.oppg.epochs, "batch_size": self.oppg.batch_size,
                "step_size": self.oppg.step_size, "clip_m": self.oppg.clip_m,
            },
            "eval": {
                "seed": self.seed, "train_records": self.train_records,
                "heldout": self.heldout, "restart_grid": list(self.restart_grid),
                "beta_grid": list(self.beta_grid),
                "beta_restarts": self.beta_restarts,
                "m_grid": list(self.m_grid),
                "timing_contexts": self.timing_contexts,
            },
        }


def _resolved_values(path, profile, seed):
    if profile not in _PROFILES:
        raise ValueError(f"unknown profile {profile!r}, expected one of {sorted(_PROFILES)}")
    values = {(s, k): v for s, keys in _SPEC.items() for k, (v, _) in keys.items()}
    values.update(_PROFILES[profile])
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            if section == "DEFAULT":
                continue
            if section not in _SPEC:
                raise ValueError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in _SPEC[section]:
                    raise ValueError(f"unknown key '{key}' in section [{section}]")
                values[(section, key)] = value
    if seed is not None:
        values[("eval", "seed")] = str(int(seed))
    return values


def load_config(path: str | Path | None = None, profile: str = "fast",
                seed: int | None = None) -> RunConfig:
    """Resolve defaults, profile overrides, an optional INI file, and an
    optional seed override (in that precedence order) into a RunConfig."""
    v = _resolved_values(path, profile, seed)

    def s(sec, key):
        return v[(sec, key)]

    def f(sec, key):
        return float(s(sec, key))

    def i(sec, key):
        return int(s(sec, key))

    def b(sec, key):
        text = s(sec, key).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for [{sec}] {key}: {s(sec, key)!r}")

    space_spec = s("space", "dims")
    restart_grid = _ascending(
        tuple(int(x) for x in s("eval", "restart_grid").split(",") if x.strip()),
        "restart_grid",
    )
    beta_grid = _ascending(
        tuple(float(x) for x in s("eval", "beta_grid").split(",") if x.strip()),
        "beta_grid",
    )
    m_grid = _ascending(
        tuple(float(x) for x in s("eval", "m_grid").split(",") if x.strip()),
        "m_grid",
    )
    return RunConfig(
        profile=profile,
        env_seed=i("env", "seed"),
        context_dim=i("env", "context_dim"),
        bumps=i("env", "bumps"),
        length_scale=f("env", "length_scale"),
        noise_std=f("env", "noise_std"),
        logging_mix=f("env", "logging_mix"),
        bump_weight_lo=f("env", "bump_weight_lo"),
        bump_weight_hi=f("env", "bump_weight_hi"),
        bump_context_margin=f("env", "bump_context_margin"),
        linear_action_scale=f("env", "linear_action_scale"),
        space_spec=space_spec,
        space=parse_space_spec(space_spec),
        members=i("reward_model", "members"),
        reward_hidden=_parse_hidden(s("reward_model", "hidden")),
        reward_train=TrainConfig(
            epochs=i("reward_model", "epochs"),
            batch_size=i("reward_model", "batch_size"),
            step_size=f("reward_model", "step_size"),
            momentum=f("reward_model", "momentum"),
        ),
        augment_enabled=b("augment", "enabled"),
        augment=AugmentConfig(
            count_per_record=i("augment", "count_per_record"),
            min_distance=f("augment", "min_distance"),
            pessimistic_quantile=f("augment", "pessimistic_quantile"),
        ),
        ga_step_size=f("ga", "step_size"),
        ga_max_iters=i("ga", "max_iters"),
        ga_improvement_tol=f("ga", "improvement_tol"),
        ga_beta=f("ga", "beta"),
        policy_hidden=_parse_hidden(s("policy", "hidden")),
        policy_init_width=f("policy", "init_width"),
        oppg=OPPGConfig(
            clip_m=f("policy", "clip_m"),
            epochs=i("policy", "epochs"),
            batch_size=i("policy", "batch_size"),
            step_size=f("policy", "step_size"),
        ),
        seed=i("eval", "seed"),
        train_records=i("eval", "train_records"),
        heldout=i("eval", "heldout"),
        restart_grid=restart_grid,
        beta_grid=beta_grid,
        beta_restarts=i("eval", "beta_restarts"),
        m_grid=m_grid,
        timing_contexts=i("eval", "timing_contexts"),
    )


def default_config_text(profile: str = "fast") -> str:
    """A complete INI file with every key present, commented and set to the
    resolved default for the given profile."""
    values = {(s, k): v for s, keys in _SPEC.items() for k, (v, _) in keys.items()}
    values.update(_PROFILES.get(profile, {}))
    lines = [f"# run configuration ({profile} profile defaults)", ""]
    for section, keys in _SPEC.items():
        lines.append(f"[{section}]")
        for key, (_, comment) in keys.items():
            lines.append(f"# {comment}")
            lines.append(f"{key} = {values[(section, key)]}")
        lines.append("")
    return "\n".join(lines)


def write_default_config(path: str | Path, profile: str = "fast") -> None:
    Path(path).write_text(default_config_text(profile))
