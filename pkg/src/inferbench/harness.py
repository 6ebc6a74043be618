"""Measurement protocol: timing loop, accuracy check, parallel test, memory probe.

Every test opens its session(s) first; the preparation time is reported as
``init_ms`` and is not part of the timed window. Inferences then run back to
back until the time limit has elapsed. The inference in flight at expiry is
completed and counted. Aggregation drops the first two latencies when three or
more are available, otherwise the last one is used.

The accuracy check reuses the timing inputs: outputs for the first pass over
the input pool are compared with the backend's reference outputs.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .backends.base import Backend, Session
from .clock import Clock, SimulatedClock
from .core import InferenceMode, TestResult, WorkloadSpec, make_test_id
from .errors import (BackendConcurrencyError, BackendError, HarnessError, NoInferencesError,
                     OutOfMemoryError, PlanError,
                     TraceExhaustedError, UnsupportedModeError)

DEFAULT_LADDER = (200, 300, 400, 500, 600, 800, 1000, 1200, 1400, 1600, 1800, 2000)
DEFAULT_INPUT_POOL = 4


@dataclass(frozen=True)
class RunPlan:
    workload: WorkloadSpec
    mode: InferenceMode
    backend_name: str = ""
    sustained_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in self.workload.supported_modes:
            raise PlanError(f"{self.workload.id} does not support mode {self.mode}")

    @property
    def test_id(self) -> str:
        return make_test_id(self.workload, self.mode)


@dataclass(frozen=True)
class MemoryLadder:
    resolutions_px: tuple[int, ...] = DEFAULT_LADDER

    def __post_init__(self):
        r = tuple(int(x) for x in self.resolutions_px)
        object.__setattr__(self, "resolutions_px", r)
        if not r:
            raise ValueError("memory ladder is empty")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError(f"memory ladder must be strictly ascending: {r}")
        if r[0] < 200 or r[-1] > 2000:
            raise ValueError(f"memory ladder must stay within 200..2000 px: {r}")


@dataclass(frozen=True)
class MemoryProbeResult:
    max_resolution_px: int
    first_rung_failed: bool
    latencies_ms: tuple[float, ...] = ()
    failed_at_px: Optional[int] = None


def aggregate_latencies(latencies_ms: Sequence[float]) -> tuple[float, float]:
    """Return ``(mean_ms, std_ms)`` under the discard-first-two rule.

    With three or more entries, mean and sample standard deviation are taken
    over entries 3..end; with one or two entries the last latency is the mean
    and the deviation is 0. Sums are accumulated exactly and rounded once.
    """
    if len(latencies_ms) == 0:
        raise ValueError("cannot aggregate an empty latency list")
    if len(latencies_ms) <= 2:
        return float(latencies_ms[-1]), 0.0
    kept = [Fraction(x) for x in latencies_ms[2:]]
    n = len(kept)
    mean = sum(kept) / n
    if n == 1:
        return float(mean), 0.0
    var = sum((x - mean) ** 2 for x in kept) / (n - 1)
    return float(mean), math.sqrt(float(var))


def compute_l1(target, actual) -> float:
    """Mean absolute elementwise difference."""
    t = np.asarray(target, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if t.shape != a.shape:
        raise ValueError(f"shape mismatch: target {t.shape} vs actual {a.shape}")
    if t.size == 0:
        raise ValueError("cannot compute L1 over empty tensors")
    return float(np.mean(np.abs(t - a)))


def make_inputs(workload: WorkloadSpec, seed: int, count: int = DEFAULT_INPUT_POOL,
                resolution: Optional[tuple[int, int]] = None) -> list[np.ndarray]:
    """Deterministic uint8 RGB images of shape (height, width, 3)."""
    w, h = resolution or workload.input_resolution
    rng = np.random.default_rng([seed, zlib.crc32(workload.id.encode())])
    return [rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8) for _ in range(count)]


def _check_supported(backend: Backend, workload: WorkloadSpec, mode: InferenceMode) -> None:
    if not backend.supports(workload, mode):
        raise UnsupportedModeError(f"backend {backend.name} cannot run {workload.id} in mode {mode}")


def _open_timed(backend: Backend, workload: WorkloadSpec, mode: InferenceMode, clock: Clock,
                instance: int = 0, sustained: bool = False) -> tuple[Session, float]:
    t0 = clock.now()
    session = backend.open_session(workload, mode, clock, instance=instance, sustained=sustained)
    return session, float(clock.now() - t0)


def measure_init(workload: WorkloadSpec, mode: InferenceMode, backend: Backend, clock: Clock, *,
                 sustained: bool = False) -> float:
    """Wall time of session open plus model preparation, no inference."""
    _check_supported(backend, workload, mode)
    session, init_ms = _open_timed(backend, workload, mode, clock, sustained=sustained)
    session.close()
    return init_ms


@dataclass
class _LaneRecord:
    latencies: list[float]
    completions: list
    outputs: list[tuple[int, np.ndarray]]


def _timing_loop(session: Session, inputs: Sequence[np.ndarray], clock: Clock, limit_ms: float,
                 start) -> _LaneRecord:
    rec = _LaneRecord([], [], [])
    i = 0
    while True:
        x = inputs[i % len(inputs)]
        t0 = clock.now()
        try:
            out = session.infer(x)
        except TraceExhaustedError as exc:
            if i == 0:
                raise NoInferencesError(f"{session.workload.id}: no inference completed ({exc})") from exc
            break  # recorded data ends before the time limit
        t1 = clock.now()
        rec.latencies.append(float(t1 - t0))
        rec.completions.append(t1)
        if out is not None and i < len(inputs):
            rec.outputs.append((i, out))
        i += 1
        if t1 - start >= limit_ms:
            break
    return rec


def _accuracy(backend: Backend, workload: WorkloadSpec, inputs: Sequence[np.ndarray],
              outputs: Sequence[tuple[int, np.ndarray]]) -> Optional[float]:
    if not workload.accuracy_check or not outputs:
        return None
    refs, got = [], []
    for i, out in outputs:
        ref = backend.reference_output(workload, inputs[i])
        if ref is None:
            return None
        refs.append(np.ravel(ref))
        got.append(np.ravel(out))
    return compute_l1(np.concatenate(refs), np.concatenate(got))


def _result(plan: RunPlan, latencies: list[float], init_ms: float, l1: Optional[float],
            max_memory: Optional[int] = None) -> TestResult:
    if latencies:
        mean, std = aggregate_latencies(latencies)
    else:
        mean, std = 0.0, 0.0
    return TestResult(
        workload_id=plan.workload.id,
        mode=plan.mode,
        latencies_ms=tuple(latencies),
        mean_ms=mean,
        std_ms=std,
        init_ms=init_ms,
        l1_error=l1,
        images_processed=len(latencies),
        max_memory_resolution_px=max_memory,
        test_id=plan.test_id,
        sustained=plan.sustained_mode,
    )


def run_workload(plan: RunPlan, backend: Backend, clock: Clock, *,
                 input_pool: int = DEFAULT_INPUT_POOL) -> TestResult:
    """Single-session timing protocol for one (workload, mode)."""
    wl = plan.workload
    _check_supported(backend, wl, plan.mode)
    inputs = make_inputs(wl, plan.seed, input_pool)
    session, init_ms = _open_timed(backend, wl, plan.mode, clock, sustained=plan.sustained_mode)
    with session:
        rec = _timing_loop(session, inputs, clock, wl.time_limit_s * 1000.0, clock.now())
    return _result(plan, rec.latencies, init_ms, _accuracy(backend, wl, inputs, rec.outputs))


def run_parallel(plan: RunPlan, backend: Backend, clock: Clock, *,
                 input_pool: int = DEFAULT_INPUT_POOL) -> TestResult:
    """Run ``parallel_instances`` sessions concurrently over one shared time limit.

    Each session gets its own lane of ``clock`` (``clock.fork()``), so under a
    simulated clock the sessions really overlap. Latencies are merged in
    completion order (ties by session index) before aggregation.
    """
    wl = plan.workload
    n = wl.parallel_instances
    if n < 2:
        raise PlanError(f"{wl.id} is a single-instance workload; use run_workload")
    if backend.descriptor.max_concurrent_sessions < n:
        raise BackendConcurrencyError(
            f"backend {backend.name} allows {backend.descriptor.max_concurrent_sessions} "
            f"concurrent sessions, {wl.id} needs {n}")
    _check_supported(backend, wl, plan.mode)
    inputs = make_inputs(wl, plan.seed, input_pool)
    lanes = [clock.fork() for _ in range(n)]

    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(_open_timed, backend, wl, plan.mode, lanes[k], k, plan.sustained_mode)
                   for k in range(n)]
        opened, errors = [], []
        for f in futures:
            try:
                opened.append(f.result())
            except Exception as exc:  # noqa: BLE001 - re-raised below
                errors.append(exc)
        if errors:
            for session, _ in opened:
                session.close()
            raise errors[0]
        try:
            start = max(lane.now() for lane in lanes)
            for lane in lanes:
                lane.sync_to(start)
            limit_ms = wl.time_limit_s * 1000.0
            runs = [pool.submit(_timing_loop, opened[k][0], inputs, lanes[k], limit_ms, start)
                    for k in range(n)]
            records = [f.result() for f in runs]
        finally:
            for session, _ in opened:
                session.close()

    clock.sync_to(max(lane.now() for lane in lanes))
    merged = sorted(
        (t, k, i, lat)
        for k, rec in enumerate(records)
        for i, (t, lat) in enumerate(zip(rec.completions, rec.latencies))
    )
    latencies = [lat for *_, lat in merged]
    outputs = [o for rec in records for o in rec.outputs]
    init_ms = max(init for _, init in opened)
    return _result(plan, latencies, init_ms, _accuracy(backend, wl, inputs, outputs))


def memory_probe(workload: WorkloadSpec, mode: InferenceMode, backend: Backend,
                 ladder: MemoryLadder = MemoryLadder(), clock: Optional[Clock] = None, *,
                 seed: int = 0, sustained: bool = False) -> MemoryProbeResult:
    """Climb the resolution ladder until the backend runs out of memory."""
    clock = clock if clock is not None else SimulatedClock()
    _check_supported(backend, workload, mode)
    best = 0
    latencies: list[float] = []
    failed_at = None
    session = backend.open_session(workload, mode, clock, sustained=sustained)
    with session:
        for r in ladder.resolutions_px:
            x = make_inputs(workload, seed, 1, resolution=(r, r))[0]
            t0 = clock.now()
            try:
                session.infer(x)
            except OutOfMemoryError:
                failed_at = r
                break
            latencies.append(float(clock.now() - t0))
            best = r
    return MemoryProbeResult(best, best == 0, tuple(latencies), failed_at)


def run_memory_test(plan: RunPlan, backend: Backend, clock: Clock,
                    ladder: MemoryLadder = MemoryLadder()) -> TestResult:
    init_ms = measure_init(plan.workload, plan.mode, backend, clock, sustained=plan.sustained_mode)
    probe = memory_probe(plan.workload, plan.mode, backend, ladder, clock,
                         seed=plan.seed, sustained=plan.sustained_mode)
    return _result(plan, list(probe.latencies_ms), init_ms, None, probe.max_resolution_px)


def run_test(plan: RunPlan, backend: Backend, clock: Clock, *,
             ladder: Optional[MemoryLadder] = None,
             input_pool: int = DEFAULT_INPUT_POOL) -> TestResult:
    """Dispatch to the memory, parallel or single-session protocol."""
    if plan.workload.is_memory_test:
        return run_memory_test(plan, backend, clock, ladder or MemoryLadder())
    if plan.workload.parallel_instances > 1:
        return run_parallel(plan, backend, clock, input_pool=input_pool)
    return run_workload(plan, backend, clock, input_pool=input_pool)


@dataclass(frozen=True)
class TestOutcome:
    plan: RunPlan
    result: Optional[TestResult] = None
    error: Optional[str] = None

    __test__ = False

    @property
    def ok(self) -> bool:
        return self.result is not None


def suite_plans(workloads: Sequence[WorkloadSpec], backend_name: str = "", *,
                sustained: bool = False, seed: int = 0) -> list[RunPlan]:
    return [RunPlan(wl, mode, backend_name, sustained, seed)
            for wl in workloads for mode in wl.sorted_modes()]


def run_suite(workloads: Sequence[WorkloadSpec], backend: Backend, clock: Clock, *,
              sustained: bool = False, seed: int = 0,
              ladder: Optional[MemoryLadder] = None) -> list[TestOutcome]:
    """Run every (workload, mode) pair in order; a failing test never stops the suite."""
    outcomes = []
    for plan in suite_plans(workloads, backend.name, sustained=sustained, seed=seed):
        try:
            outcomes.append(TestOutcome(plan, run_test(plan, backend, clock, ladder=ladder)))
        except (BackendError, HarnessError) as exc:
            outcomes.append(TestOutcome(plan, error=f"{type(exc).__name__}: {exc}"))
    return outcomes
