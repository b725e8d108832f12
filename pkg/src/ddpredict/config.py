"""Plain-text ``key = value`` configuration resolved into an ExperimentConfig.

Keys are the field names of SimConfig, TrainConfig and ExperimentConfig (they
do not collide).  Lines starting with ``#`` are comments.  Values are parsed
as int, float, bool (true/false), ``none``, or comma-separated lists.
"""
from __future__ import annotations

import ast
from dataclasses import fields, replace

from .chansim import SimConfig
from .errors import ConfigError
from .experiments import ExperimentConfig, TrainConfig, config_dict

_SIM_KEYS = {f.name for f in fields(SimConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_EXP_KEYS = {f.name for f in fields(ExperimentConfig)} - {"sim", "train"}
KNOWN_KEYS = frozenset(_SIM_KEYS | _TRAIN_KEYS | _EXP_KEYS)
_TUPLE_KEYS = {"split_ratios", "descriptors", "velocities"}


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    try:
        v = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    return v if isinstance(v, (int, float)) else text


def parse_text(text, source="<config>"):
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = parse_value(value)
    return out


def read_file(path):
    with open(path) as fh:
        return parse_text(fh.read(), str(path))


def parse_overrides(items):
    """``["key=value", ...]`` from the command line."""
    return parse_text("\n".join(items or []), "--set")


def resolve(values=None, base=None):
    """Apply flat ``values`` on top of ``base`` (default ExperimentConfig())."""
    base = base or ExperimentConfig()
    sim, train, exp = {}, {}, {}
    for k, v in (values or {}).items():
        if k in _TUPLE_KEYS and v is not None and not isinstance(v, tuple):
            v = (v,)
        if k in _SIM_KEYS:
            sim[k] = v
        elif k in _TRAIN_KEYS:
            train[k] = v
        elif k in _EXP_KEYS:
            exp[k] = v
        else:
            raise ConfigError(f"unknown key {k!r}")
    try:
        return base.with_(sim=base.sim.with_(**sim), train=replace(base.train, **train), **exp)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_text(cfg):
    """Round-trippable ``key = value`` text of a resolved config."""
    lines = []
    for k, v in config_dict(cfg).items():
        if isinstance(v, (list, tuple)):
            v = ", ".join(str(x) for x in v) + ("," if len(v) == 1 else "")
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
