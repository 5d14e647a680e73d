"""Run configuration: nested dataclasses with a canonical JSON form.

Unknown keys are rejected at every level. ``dumps(load(text))`` is the
canonical serialization (sorted keys, two-space indent).
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass

from .corpus import GeneratorConfig, ProtocolSizes
from .errors import ConfigurationError
from .mlse import TrainConfig
from .verification import SvmConfig


@dataclass(frozen=True)
class NetworkSettings:
    preset: str = "desk"
    input_shape: tuple[int, int, int] = (1, 32, 32)


@dataclass(frozen=True)
class PipelineConfig:
    network: NetworkSettings = NetworkSettings()
    train: TrainConfig = TrainConfig()
    svm: SvmConfig = SvmConfig()
    protocol: ProtocolSizes = ProtocolSizes()


@dataclass(frozen=True)
class RunConfig:
    corpus: str = "corpus"
    out: str = "out"
    seed: int = 0
    runs: int = 10
    reps: int = 5
    combiner: str = "usmg"
    generator: GeneratorConfig = GeneratorConfig()
    pipeline: PipelineConfig = PipelineConfig()


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _coerce(tp, value, where):
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{where}: expected a table, got {type(value).__name__}")
        return from_dict(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple:
        return tuple(_coerce(typing.get_args(tp)[0], v, where) for v in value)
    if origin in (typing.Union, types.UnionType):
        return value
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool) and not isinstance(value, tp):
        raise ConfigurationError(f"{where}: expected {tp.__name__}, got {value!r}")
    return value


def from_dict(cls, data: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def dumps(cfg) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, indent=2) + "\n"


def loads(text: str, cls=RunConfig):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return from_dict(cls, data)


def load(path, cls=RunConfig):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), cls)


def replace_path(cfg, dotted: str, value):
    """Return a copy of ``cfg`` with ``a.b.c`` set to ``value``."""
    head, _, rest = dotted.partition(".")
    if head not in {f.name for f in dataclasses.fields(cfg)}:
        raise ConfigurationError(f"unknown key {head!r}")
    if rest:
        return dataclasses.replace(cfg, **{head: replace_path(getattr(cfg, head), rest, value)})
    return dataclasses.replace(cfg, **{head: value})
