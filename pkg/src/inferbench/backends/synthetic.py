"""Deterministic synthetic backend.

Outputs come from a counter-based splitmix64 generator keyed by
``(seed, input digest, element index)``: integer arithmetic only, so the
values are bitwise identical on every platform and independent of the order
in which elements or sessions are evaluated.

Simulated latency follows ``c * factor[mode] * (pixels * param_count) ** gamma``
with a small seeded jitter, a warm-up penalty on the first two inferences of a
session and an optional sustained-mode slowdown.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from typing import Mapping, Optional

import numpy as np

from ..clock import Clock
from ..core import InferenceMode, Precision, WorkloadSpec
from ..errors import ConfigError, OutOfMemoryError, SessionOpenError
from .base import Backend, BackendDescriptor, Session, footprint_bytes, full_support

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_UNIT = 2.0 ** -53

DEFAULT_MODE_FACTORS = {
    "cpu_int8": 5.0,
    "cpu_fp16": 8.0,
    "cpu_fp32": 8.0,
    "accelerator_int8": 0.7,
    "accelerator_fp16": 1.0,
    "accelerator_fp32": 1.6,
}


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int."""
    x = (x + _GOLDEN) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def _mix64_array(x: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def unit_stream(key: int, n: int) -> np.ndarray:
    """``n`` floats in [0, 1), element ``j`` depends only on ``(key, j)``."""
    idx = np.arange(n, dtype=np.uint64) * np.uint64(_GOLDEN)
    h = _mix64_array(idx ^ np.uint64(mix64(key)))
    return (h >> np.uint64(11)).astype(np.float64) * _UNIT


def unit_scalar(*parts: int | str) -> float:
    return (_key(*parts) >> 11) * _UNIT


def _key(*parts: int | str) -> int:
    h = 0
    for p in parts:
        if isinstance(p, str):
            p = int.from_bytes(hashlib.blake2b(p.encode(), digest_size=8).digest(), "little")
        h = mix64(h ^ (p & _M64))
    return h


def input_digest(inputs: np.ndarray) -> int:
    """Cheap, order-sensitive fingerprint of an input tensor."""
    flat = np.ascontiguousarray(inputs).reshape(-1)
    total = int(flat.sum(dtype=np.uint64))
    step = max(1, flat.size // 4096)
    sample = flat[::step].astype(np.uint64)
    weights = np.arange(1, sample.size + 1, dtype=np.uint64)
    weighted = int((sample * weights).sum(dtype=np.uint64))
    return _key(*inputs.shape, total, weighted)


@dataclass(frozen=True)
class SyntheticParams:
    seed: int = 0
    c: float = 1.2e-4
    gamma: float = 0.5
    mode_factors: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MODE_FACTORS))
    epsilon: float = 0.0
    epsilon_overrides: Mapping[str, float] = field(default_factory=dict)
    memory_budget_bytes: Optional[int] = None
    overhead_factor: float = 3.0
    channels: int = 4
    output_elements: int = 4096
    init_base_ms: float = 40.0
    init_ms_per_mb: float = 6.0
    init_jitter: float = 0.1
    declared_init_ms: Optional[float] = None
    latency_jitter: float = 0.05
    warmup_factor: float = 2.0
    sustained_factor: float = 1.15
    max_concurrent_sessions: int = 2
    fail_open: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SyntheticParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic backend parameters: {sorted(unknown)}")
        kwargs = dict(data)
        if "mode_factors" in kwargs:
            kwargs["mode_factors"] = {**DEFAULT_MODE_FACTORS, **kwargs["mode_factors"]}
        if "fail_open" in kwargs:
            kwargs["fail_open"] = tuple(kwargs["fail_open"])
        return cls(**kwargs)


class SyntheticSession(Session):
    backend: "SyntheticBackend"

    def __init__(self, *args, epsilon: float, **kwargs):
        super().__init__(*args, **kwargs)
        self.epsilon = epsilon

    def infer(self, inputs: np.ndarray) -> np.ndarray:
        b = self.backend
        p = b.params
        pixels = inputs.shape[0] * inputs.shape[1]
        if p.memory_budget_bytes is not None:
            need = b.footprint(pixels, self.mode.precision)
            if need > p.memory_budget_bytes:
                raise OutOfMemoryError(
                    f"{self.workload.id}: {inputs.shape[1]}x{inputs.shape[0]} needs "
                    f"{need:.0f} B, budget {p.memory_budget_bytes} B")
        self.clock.advance(b.latency_ms(self.workload, self.mode, pixels, self.instance,
                                        self.inferences, self.sustained))
        self.inferences += 1
        return b.output(inputs, self.mode.precision, self.epsilon)


class SyntheticBackend(Backend):
    name = "synthetic"

    def __init__(self, params: SyntheticParams = SyntheticParams()):
        super().__init__(BackendDescriptor(
            name=self.name,
            supported=full_support(),
            max_concurrent_sessions=params.max_concurrent_sessions,
            memory_budget_bytes=params.memory_budget_bytes,
            declared_init_ms=params.declared_init_ms,
        ))
        self.params = params

    def footprint(self, pixels: int, precision: Precision) -> float:
        return footprint_bytes(pixels, precision, channels=self.params.channels,
                               overhead_factor=self.params.overhead_factor)

    def fits_memory(self, pixels: int, precision: Precision) -> bool:
        budget = self.params.memory_budget_bytes
        return budget is None or self.footprint(pixels, precision) <= budget

    def init_ms(self, workload: WorkloadSpec, mode: InferenceMode) -> float:
        p = self.params
        if p.declared_init_ms is not None:
            return p.declared_init_ms
        size_mb = workload.model_size_mb * mode.precision.bytes_per_element / 4
        u = unit_scalar(p.seed, workload.id, mode.key, "init")
        return (p.init_base_ms + p.init_ms_per_mb * size_mb) * (1 + p.init_jitter * (2 * u - 1))

    def base_latency_ms(self, workload: WorkloadSpec, mode: InferenceMode, pixels: int) -> float:
        p = self.params
        factor = p.mode_factors.get(mode.key, 1.0)
        return p.c * factor * float(pixels * workload.param_count) ** p.gamma

    def latency_ms(self, workload, mode, pixels, instance, index, sustained) -> float:
        p = self.params
        t = self.base_latency_ms(workload, mode, pixels)
        u = unit_scalar(p.seed, workload.id, mode.key, instance, index)
        t *= 1 + p.latency_jitter * (2 * u - 1)
        if index < 2:
            t *= p.warmup_factor
        if sustained:
            t *= p.sustained_factor
        return t

    def output(self, inputs: np.ndarray, precision: Precision, epsilon: float) -> np.ndarray:
        key = _key(self.params.seed, input_digest(inputs))
        out = unit_stream(key, self.params.output_elements)
        if precision is Precision.INT8:
            out = np.round(out * 255.0) / 255.0
        if epsilon:
            noise = unit_stream(key ^ 0x5EED, self.params.output_elements)
            out = out + epsilon * (2.0 * noise - 1.0)
        return out

    def reference_output(self, workload: WorkloadSpec, inputs: np.ndarray) -> np.ndarray:
        return unit_stream(_key(self.params.seed, input_digest(inputs)), self.params.output_elements)

    def _create_session(self, workload, mode, clock: Clock, instance, sustained) -> SyntheticSession:
        p = self.params
        if workload.id in p.fail_open or f"{workload.id}#{instance}" in p.fail_open:
            raise SessionOpenError(f"injected open failure for {workload.id} instance {instance}")
        clock.advance(self.init_ms(workload, mode))
        eps = p.epsilon_overrides.get(workload.id, p.epsilon)
        return SyntheticSession(self, workload, mode, clock, instance, sustained, epsilon=eps)
