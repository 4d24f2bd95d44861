"""Run configuration: TOML or JSON file, with CLI flags taking precedence."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .trainer import SURROGATE_BASE, SURROGATE_CAP, SURROGATE_NOISE, SURROGATE_RATE
from .usability import DEFAULT_EPS_KL, DEFAULT_PHI_CAP

# Metrics the scorer can compute; aggregate entries depend on the base six.
BASE_METRICS = ("dps", "fcs", "ssim", "psnr", "is", "fid")
DERIVED_METRICS = ("mean_dps_fcs", "me", "md", "mx", "mn")
SUPPORTED_METRICS = BASE_METRICS + DERIVED_METRICS


class ConfigError(Exception):
    pass


def load_config_file(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


@dataclass
class UsabilitySettings:
    k: int = 10
    w_p: float = 0.5
    w_d: float = 0.5
    eps_kl: float = DEFAULT_EPS_KL
    phi_cap: float = DEFAULT_PHI_CAP
    distance: str = "euclidean"


@dataclass
class LearnerSettings:
    kind: str = "surrogate"
    base: float = SURROGATE_BASE
    cap: float = SURROGATE_CAP
    rate: float = SURROGATE_RATE
    noise: float = SURROGATE_NOISE
    qualities: dict[str, float] = field(default_factory=dict)
    command: list[str] = field(default_factory=list)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: Path = Path("out")
    data: dict[str, Path] = field(default_factory=dict)
    images: dict[str, Path] = field(default_factory=dict)
    probs_path: Path | None = None
    usability: UsabilitySettings = field(default_factory=UsabilitySettings)
    metrics: list[str] = field(default_factory=lambda: ["dps", "fcs"])
    arms: list[str] = field(default_factory=list)
    m: int = 10
    total_epochs: int = 50
    patience: int = 3
    reset_on_switch: bool = True
    scores_csv: Path | None = None
    learner: LearnerSettings = field(default_factory=LearnerSettings)

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        raw = load_config_file(path)
        base_dir = Path(path).parent
        cfg = cls()

        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        cfg.seed = int(raw.get("seed", cfg.seed))
        if "out_dir" in raw:
            cfg.out_dir = resolve(raw["out_dir"])
        for key, value in raw.get("data", {}).items():
            if key not in ("real_midlevel", "syn_midlevel", "real_highlevel", "syn_highlevel"):
                raise ConfigError(f"unknown data key {key!r}")
            cfg.data[key] = resolve(value)
        for key, value in raw.get("images", {}).items():
            if key not in ("real_dir", "syn_dir"):
                raise ConfigError(f"unknown images key {key!r}")
            cfg.images[key] = resolve(value)
        if "probs" in raw:
            cfg.probs_path = resolve(raw["probs"]["path"])
        u = raw.get("usability", {})
        cfg.usability = UsabilitySettings(
            k=int(u.get("k", 10)),
            w_p=float(u.get("w_p", 0.5)),
            w_d=float(u.get("w_d", 0.5)),
            eps_kl=float(u.get("eps_kl", DEFAULT_EPS_KL)),
            phi_cap=float(u.get("phi_cap", DEFAULT_PHI_CAP)),
            distance=str(u.get("distance", "euclidean")),
        )
        if "score" in raw:
            cfg.metrics = [normalize_metric(m) for m in raw["score"].get("metrics", cfg.metrics)]
        b = raw.get("bandit", {})
        cfg.arms = [str(a) for a in b.get("arms", [])]
        cfg.m = int(b.get("m", cfg.m))
        cfg.total_epochs = int(b.get("total_epochs", cfg.total_epochs))
        cfg.patience = int(b.get("patience", cfg.patience))
        cfg.reset_on_switch = bool(b.get("reset_on_switch", True))
        if "scores_csv" in b:
            cfg.scores_csv = resolve(b["scores_csv"])
        lrn = raw.get("learner", {})
        cfg.learner = LearnerSettings(
            kind=str(lrn.get("type", "surrogate")),
            base=float(lrn.get("base", SURROGATE_BASE)),
            cap=float(lrn.get("cap", SURROGATE_CAP)),
            rate=float(lrn.get("rate", SURROGATE_RATE)),
            noise=float(lrn.get("noise", SURROGATE_NOISE)),
            qualities={str(k): float(v) for k, v in lrn.get("qualities", {}).items()},
            command=[str(c) for c in lrn.get("command", [])],
        )
        if cfg.learner.kind not in ("surrogate", "external"):
            raise ConfigError(f"unknown learner type {cfg.learner.kind!r}")
        return cfg


def normalize_metric(name: str) -> str:
    canon = name.strip().lower()
    if canon not in SUPPORTED_METRICS:
        raise ConfigError(
            f"unsupported metric {name!r}; choose from {', '.join(SUPPORTED_METRICS)}"
        )
    return canon
