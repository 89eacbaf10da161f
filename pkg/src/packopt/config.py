"""Case configuration and its flat ``key = value`` file format.

::

    # comments start with '#'
    fluid.mu = 1.728e-5
    optimizer.max_iterations = 50
    boundary.packing_jacket = sliding

Keys are ``section.field``; ``output_dir`` and ``seed`` have no section.
Unknown keys and malformed values are errors.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .fem import LinearSolverConfig
from .flow import FlowSolverConfig, FluidProps, InletSpec
from .shapeopt import BoundaryRoles, OptimizerConfig
from .transport import TransportProps, TransportSolverConfig


class ConfigError(ValueError):
    pass


@dataclass
class CaseConfig:
    """All inputs of a run.  Defaults are nitrogen with a cyclohexane/heptane tracer."""

    fluid: FluidProps = field(default_factory=FluidProps)
    transport: TransportProps = field(default_factory=TransportProps)
    inlet: InletSpec = field(default_factory=InletSpec)
    flow: FlowSolverConfig = field(default_factory=FlowSolverConfig)
    scalar: TransportSolverConfig = field(default_factory=TransportSolverConfig)
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    boundary: BoundaryRoles = field(default_factory=BoundaryRoles)
    output_dir: str = "out"
    seed: int = 0

    @property
    def flow_solver(self) -> FlowSolverConfig:
        return replace(self.flow, linear=self.linear)

    @property
    def transport_solver(self) -> TransportSolverConfig:
        return replace(self.scalar, linear=self.linear)


_SKIP = {("flow", "linear"), ("scalar", "linear")}


def _parse_value(text: str, current):
    if isinstance(current, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_items(cfg: CaseConfig):
    """Yield ``(key, value)`` for every settable key."""
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for g in fields(v):
                if (f.name, g.name) in _SKIP:
                    continue
                yield f"{f.name}.{g.name}", getattr(v, g.name)
        else:
            yield f.name, v


def parse_config(text: str, base: CaseConfig | None = None) -> CaseConfig:
    """Parse config text on top of ``base`` (default: all defaults)."""
    cfg = base or CaseConfig()
    sections = {f.name: dataclasses.asdict(getattr(cfg, f.name)) for f in fields(cfg)
                if dataclasses.is_dataclass(getattr(cfg, f.name))}
    top = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name not in sections}
    known = dict(config_items(cfg))
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _parse_value(value, known[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if "." in key:
            sec, name = key.split(".", 1)
            sections[sec][name] = parsed
        else:
            top[key] = parsed
    try:
        built = {}
        for f in fields(cfg):
            if f.name in sections:
                cls = type(getattr(cfg, f.name))
                vals = {k: v for k, v in sections[f.name].items() if (f.name, k) not in _SKIP}
                built[f.name] = cls(**vals)
            else:
                built[f.name] = top[f.name]
        return CaseConfig(**built)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> CaseConfig:
    if path is None:
        return CaseConfig()
    return parse_config(Path(path).read_text())


def dump_config(cfg: CaseConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in config_items(cfg))
