"""Flat ``key = value`` experiment configuration with ``include`` directives.

Syntax, one entry per line::

    # comment
    include base.cfg        # path relative to the including file
    problem = ct20
    sigma_max = 10

Later assignments override earlier ones, including those pulled in by an include.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

# problem -> defaults: schedule endpoints, measurement noise, operator settings, and the
# data-consistency scale zeta. The normalized data step moves x by about zeta * ||A||, so
# zeta shrinks for the CT projector, whose line integrals run over up to ~90 pixels.
PROBLEMS: dict[str, dict] = {
    "ct8": {"sigma_max": 10.0, "sigma_min": 0.003, "noise_sigma": 0.0, "views": 8, "zeta": 0.03},
    "ct20": {"sigma_max": 10.0, "sigma_min": 0.002, "noise_sigma": 0.0, "views": 20, "zeta": 0.03},
    "ct60": {"sigma_max": 10.0, "sigma_min": 0.002, "noise_sigma": 0.0, "views": 60, "zeta": 0.03},
    "deblur9": {"sigma_max": 40.0, "sigma_min": 0.005, "noise_sigma": 0.01, "blur": 9, "zeta": 1.0},
    "deblur17": {"sigma_max": 40.0, "sigma_min": 0.005, "noise_sigma": 0.01, "blur": 17, "zeta": 1.0},
    "sr4": {"sigma_max": 40.0, "sigma_min": 0.01, "noise_sigma": 0.01, "sr_factor": 4, "zeta": 1.0},
    "generate": {"sigma_max": 40.0, "sigma_min": 0.002, "noise_sigma": 0.0, "zeta": 0.0},
}

METHODS = ("padis", "langevin", "pc", "ddnm", "naive", "admm_tv")


def read_config_file(path: str | os.PathLike, _stack: tuple = ()) -> dict[str, str]:
    path = Path(path).resolve()
    if path in _stack:
        raise ConfigError(f"include cycle through {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include ") or line.startswith("include\t"):
            target = line[len("include"):].strip()
            out.update(read_config_file(path.parent / target, _stack + (path,)))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_patch_sizes(text: str) -> dict[int, float]:
    """``"8:0.3, 16:0.7"`` -> ``{8: 0.3, 16: 0.7}``."""
    out = {}
    for item in text.split(","):
        size, _, prob = item.partition(":")
        out[int(size)] = float(prob) if prob else 1.0
    return out


def _list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "ct20"
    N: int = 64
    P: int = 16
    channels: int = 1
    # sampling
    sampler: str = "padis"
    mode: str = "padis_stochastic"
    T: int = 200
    sigma_min: float | None = None
    sigma_max: float | None = None
    eps: float = 1.0
    zeta: float | None = None
    r: float = 0.16
    clamp_border: bool = False
    seed: int = 0
    # measurements
    noise_sigma: float | None = None
    views: int | None = None
    detectors: int | None = None
    blur: int | None = None
    sr_factor: int | None = None
    tv_lambda: float | None = None
    tv_iters: int = 100
    methods: tuple = ("padis", "naive")
    # data
    dataset: str | None = None
    kind: str = "ct_phantom"
    test_count: int = 4
    test_seed: int = 1000
    train_count: int = 200
    train_seed: int = 1
    # prior
    checkpoint: str | None = None
    oracle: bool = False
    # training
    iterations: int = 5000
    batch_size: int = 32
    lr: float = 1e-3
    ema_halflife: float = 5_000.0
    patch_sizes: dict = field(default_factory=lambda: {8: 0.3, 16: 0.7})
    width: int = 32
    depth: int = 5
    positional: bool = True
    train_seed_net: int = 0
    # ablation
    ablate_values: tuple = ()
    out: str | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {sorted(PROBLEMS)}")
        if self.sampler not in METHODS[:4]:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.N < 2 or not 1 <= self.P < self.N:
            raise ConfigError(f"need 1 <= P < N, got N={self.N}, P={self.P}")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        for key, value in PROBLEMS[self.problem].items():
            if getattr(self, key, None) is None:
                object.__setattr__(self, key, value)
        if self.detectors is None:
            object.__setattr__(self, "detectors", int(-(-3 * self.N // 2)))
        if self.sigma_min >= self.sigma_max or self.sigma_min <= 0:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.zeta < 0 or not self.eps > 0:
            raise ConfigError("need zeta >= 0 and eps > 0")
        if self.checkpoint is not None and not self.oracle and not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint {self.checkpoint!r} does not exist")
        if self.dataset is not None and not (Path(self.dataset) / "manifest.json").is_file():
            raise ConfigError(f"dataset {self.dataset!r} has no manifest.json")
        if self.problem.startswith("ct") and self.channels != 1:
            raise ConfigError("CT problems need channels = 1")

    @property
    def kind_of_problem(self) -> str:
        return self.problem.rstrip("0123456789")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["ablate_values"] = list(self.ablate_values)
        d["patch_sizes"] = {int(k): float(v) for k, v in self.patch_sizes.items()}
        return d


def config_from_mapping(values: dict[str, str]) -> ExperimentConfig:
    """Typed :class:`ExperimentConfig` from raw string values; unknown keys are errors."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, text in values.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        t = str(types[key])
        try:
            if text.lower() in ("", "none") and "None" in t:
                kwargs[key] = None
            elif key == "patch_sizes":
                kwargs[key] = parse_patch_sizes(text)
            elif key in ("methods", "ablate_values"):
                kwargs[key] = tuple(_list(text))
            elif t.startswith("int"):
                kwargs[key] = int(text)
            elif t.startswith("float"):
                kwargs[key] = float(text)
            elif t.startswith("bool"):
                kwargs[key] = _parse_bool(text)
            else:
                kwargs[key] = text
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    values = read_config_file(path) if path is not None else {}
    values.update(overrides or {})
    return config_from_mapping(values)
