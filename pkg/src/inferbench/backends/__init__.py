"""Backend registry and the two built-in backends."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Mapping, Optional

from ..errors import ConfigError
from .base import Backend, BackendDescriptor, Session, footprint_bytes, full_support
from .replay import LatencyTrace, ReplayBackend, ReplaySession
from .synthetic import SyntheticBackend, SyntheticParams, SyntheticSession

BackendFactory = Callable[[Mapping, Path], Backend]

_BACKENDS: dict[str, BackendFactory] = {}


def register_backend(name: str):
    """Register a factory ``(params, base_dir) -> Backend`` under ``name``."""
    def decorator(factory: BackendFactory) -> BackendFactory:
        _BACKENDS[name] = factory
        return factory
    return decorator


def list_backends() -> list[str]:
    return sorted(_BACKENDS)


def create_backend(name: str, params: Optional[Mapping] = None, base_dir: str | Path = ".") -> Backend:
    factory = _BACKENDS.get(name)
    if factory is None:
        raise ConfigError(f"unknown backend {name!r}; available: {', '.join(list_backends())}")
    return factory(dict(params or {}), Path(base_dir))


@register_backend("synthetic")
def _synthetic(params: Mapping, base_dir: Path) -> SyntheticBackend:
    try:
        return SyntheticBackend(SyntheticParams.from_mapping(params))
    except TypeError as exc:
        raise ConfigError(f"synthetic backend: {exc}") from None


@register_backend("replay")
def _replay(params: Mapping, base_dir: Path) -> ReplayBackend:
    params = dict(params)
    spec = params.pop("traces", {}) or {}
    default = params.pop("default_trace", None)
    if default is not None:
        spec = {**spec, "*": default}

    def load(entry):
        if isinstance(entry, Mapping):  # inline {init_ms, entries_ms}
            try:
                return LatencyTrace(tuple(entry.get("entries_ms", ())), float(entry.get("init_ms", 0.0)))
            except ValueError as exc:
                raise ConfigError(f"inline trace: {exc}") from None
        path = Path(entry)
        return LatencyTrace.load(path if path.is_absolute() else base_dir / path)

    traces = {}
    for key, entry in spec.items():
        entries = entry if isinstance(entry, list) else [entry]
        traces[str(key)] = [load(e) for e in entries]
    try:
        return ReplayBackend(traces, **params)
    except TypeError as exc:
        raise ConfigError(f"replay backend: {exc}") from None


__all__ = [
    "Backend", "BackendDescriptor", "Session", "footprint_bytes", "full_support",
    "LatencyTrace", "ReplayBackend", "ReplaySession",
    "SyntheticBackend", "SyntheticParams", "SyntheticSession",
    "register_backend", "list_backends", "create_backend",
]
