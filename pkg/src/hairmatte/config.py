"""Run configuration shared by every CLI command, with a canonical text form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .guided_filter import GuidedFilterParams
from .losses import LossConfig
from .model import ModelSpec
from .optim import Adadelta

COMMANDS = ("synth", "train", "infer", "eval", "refine", "recolor", "bench")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-7

    def build(self) -> Adadelta:
        return Adadelta(self.lr, self.rho, self.eps)


@dataclass(frozen=True)
class RefineConfig:
    enabled: bool = False
    radius: int = 4
    eps: float = 1e-3
    guide_mode: str = "gray"

    def params(self) -> GuidedFilterParams:
        return GuidedFilterParams(self.radius, self.eps, self.guide_mode)


@dataclass(frozen=True)
class SynthOptions:
    count: int = 140
    size: int = 64
    val: int = 20
    test: int = 20
    coarse_radius: int = 0


@dataclass(frozen=True)
class RunConfig:
    command: str = "train"
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    synth: SynthOptions = field(default_factory=SynthOptions)
    data: str | None = None
    split: str | None = None
    checkpoint: str | None = None
    predictions: str | None = None
    inputs: tuple[str, ...] = ()
    image: str | None = None
    mask: str | None = None
    color: str = "#b0302a"
    out: str | None = None
    seed: int = 0
    epochs: int = 50
    flip: bool = False
    batch: int = 4
    bench_iters: int = 20
    bench_warmup: int = 3

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.epochs < 0 or self.batch < 1 or self.bench_iters < 1 or self.bench_warmup < 0:
            raise ConfigError("epochs >= 0, batch >= 1, bench_iters >= 1 and bench_warmup >= 0 are required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        return d

    def to_text(self) -> str:
        """Canonical JSON: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        """A copy with ``overrides`` (possibly nested, possibly partial) applied on top."""
        return RunConfig.from_dict(_deep_merge(self.to_dict(), overrides))

    def with_command(self, command: str) -> "RunConfig":
        return replace(self, command=command)


_NESTED = {"model": ModelSpec, "loss": LossConfig, "optimizer": OptimizerConfig, "refine": RefineConfig, "synth": SynthOptions}


def _build(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        if cls is RunConfig and name in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{name} must be an object")
            value = _build(_NESTED[name], value, f"{where}.{name}")
        elif name == "inputs":
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out
