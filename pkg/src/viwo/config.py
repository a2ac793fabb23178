"""Run configuration: nested dataclasses serialized as YAML.

Every field has a default, so ``--dump-default-config`` emits the full
configuration. Parsing is strict: unknown keys and mistyped values raise
:class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .lines.triangulation import LineConfig
from .points import PointConfig
from .propagation import NoiseConfig


@dataclass
class FeatureToggles:
    use_points: bool = True
    use_lines: bool = True
    use_mcc: bool = True
    use_wheel: bool = True
    rematch_lines: bool = False


@dataclass
class FilterConfig:
    n_clones: int = 11
    wheel_chi2_multiplier: float = 1.0
    # prior standard deviations at initialization
    init_sigma_theta: float = 1e-3
    init_sigma_p: float = 1e-3
    init_sigma_v: float = 1e-2
    init_sigma_bg: float = 2e-3
    init_sigma_ba: float = 2e-2
    check_covariance: bool = True


@dataclass
class RunConfig:
    dataset: str = ""
    output: str = ""
    seed: int = 0
    features: FeatureToggles = field(default_factory=FeatureToggles)
    filter: FilterConfig = field(default_factory=FilterConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    points: PointConfig = field(default_factory=PointConfig)
    lines: LineConfig = field(default_factory=LineConfig)


# -- generic dataclass <-> dict ----------------------------------------------

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def _coerce(tp, value, where):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, value, where)
            except ConfigError as e:
                errors.append(str(e))
        raise ConfigError(f"{where}: {'; '.join(errors)}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return value
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, d, where="config"):
    """Build dataclass ``cls`` from a mapping; missing keys take defaults."""
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in d.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def dump_yaml(obj) -> str:
    return yaml.safe_dump(to_dict(obj), sort_keys=False, default_flow_style=None)


def parse_yaml(cls, text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from None
    return from_dict(cls, data)


def load_yaml(cls, path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    return parse_yaml(cls, text)


def load_config(path) -> RunConfig:
    return load_yaml(RunConfig, path)


def default_config() -> RunConfig:
    return RunConfig()
