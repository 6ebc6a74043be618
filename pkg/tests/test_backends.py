from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inferbench.backends import (BackendDescriptor, LatencyTrace, ReplayBackend, SyntheticBackend,
                                 SyntheticParams, create_backend, footprint_bytes, full_support,
                                 list_backends)
from inferbench.backends.synthetic import input_digest, mix64, unit_stream
from inferbench.clock import MonotonicClock, SimulatedClock
from inferbench.core import ACC_FP16, ACC_FP32, ACC_INT8, CPU_FP32, Precision, WorkloadSpec
from inferbench.errors import (ConfigError, OutOfMemoryError, SessionLimitError, SessionOpenError,
                               TraceExhaustedError, UnsupportedModeError)
from inferbench.harness import compute_l1, make_inputs


def _wl(modes=(ACC_FP16,), **kw):
    base = dict(id="wl", section=1, task="Image Classification", architecture="Net",
                input_resolution=(64, 48), param_count=10_000, model_size_mb=8.0,
                supported_modes=frozenset(modes), time_limit_s=1.0)
    base.update(kw)
    return WorkloadSpec(**base)


class TestClock:
    def test_simulated_is_exact(self):
        c = SimulatedClock()
        for _ in range(10):
            c.advance(0.1)
        assert c.now() == 10 * Fraction(0.1)
        assert c.now() != 1.0  # exact binary sum, not the decimal 1.0

    def test_negative_advance(self):
        with pytest.raises(ValueError):
            SimulatedClock().advance(-1)

    def test_fork_and_sync(self):
        c = SimulatedClock(5)
        f = c.fork()
        f.advance(10)
        assert c.now() == 5
        c.sync_to(f.now())
        assert c.now() == 15
        c.sync_to(3)
        assert c.now() == 15

    def test_monotonic(self):
        c = MonotonicClock()
        t0 = c.now()
        c.advance(1)
        assert c.now() - t0 >= 1
        assert c.fork() is c


class TestDescriptor:
    def test_support_map_must_be_total(self):
        with pytest.raises(ValueError):
            BackendDescriptor("x", supported={("CONV_2D", Precision.FP16): True})

    def test_unsupported_entries(self):
        d = BackendDescriptor("x", supported=full_support([("CUSTOM", Precision.INT8)]))
        assert not d.supports_op("CUSTOM", Precision.INT8)
        assert d.supports_op("CUSTOM", Precision.FP16)

    def test_sessions_at_least_one(self):
        with pytest.raises(ValueError):
            BackendDescriptor("x", max_concurrent_sessions=0)

    def test_footprint_formula(self):
        assert footprint_bytes(1000 * 1000, Precision.FP16) == 1000 * 1000 * 4 * 2 * 3.0
        assert footprint_bytes(10, Precision.INT8, channels=3, overhead_factor=1.0) == 30


class TestSynthetic:
    def test_mix64_known_values(self):
        # splitmix64 outputs for seed 0: first state is the golden gamma itself
        assert mix64(0) == 0xE220A8397B1DCDAF
        assert mix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4

    def test_unit_stream_range_and_independence(self):
        a = unit_stream(42, 1000)
        assert a.min() >= 0 and a.max() < 1
        assert np.array_equal(unit_stream(42, 10), a[:10])
        assert not np.array_equal(unit_stream(43, 10), a[:10])

    def test_outputs_deterministic_across_instances(self):
        wl = _wl()
        x = make_inputs(wl, 1, 1)[0]
        outs = []
        for _ in range(2):
            b = SyntheticBackend(SyntheticParams(seed=3))
            with b.open_session(wl, ACC_FP16, SimulatedClock()) as s:
                outs.append(s.infer(x))
        assert np.array_equal(outs[0], outs[1])

    def test_float_output_equals_reference(self):
        wl = _wl()
        b = SyntheticBackend()
        x = make_inputs(wl, 0, 1)[0]
        with b.open_session(wl, ACC_FP16, SimulatedClock()) as s:
            assert compute_l1(b.reference_output(wl, x), s.infer(x)) == 0.0

    def test_int8_error_is_quantization_error(self):
        # rounding a uniform value to a 1/255 grid: E|err| = 1/(4*255)
        wl = _wl(modes=(ACC_INT8,))
        b = SyntheticBackend(SyntheticParams(output_elements=200_000))
        x = make_inputs(wl, 0, 1)[0]
        with b.open_session(wl, ACC_INT8, SimulatedClock()) as s:
            err = compute_l1(b.reference_output(wl, x), s.infer(x))
        assert err == pytest.approx(1 / 1020, rel=0.01)

    def test_epsilon_noise_level(self):
        # uniform noise on [-eps, eps] has mean absolute value eps/2
        wl = _wl()
        b = SyntheticBackend(SyntheticParams(epsilon=0.1, output_elements=200_000))
        x = make_inputs(wl, 0, 1)[0]
        with b.open_session(wl, ACC_FP16, SimulatedClock()) as s:
            err = compute_l1(b.reference_output(wl, x), s.infer(x))
        assert err == pytest.approx(0.05, rel=0.01)

    def test_epsilon_override(self):
        wl = _wl()
        b = SyntheticBackend(SyntheticParams(epsilon=0.0, epsilon_overrides={"wl": 0.2}))
        x = make_inputs(wl, 0, 1)[0]
        with b.open_session(wl, ACC_FP16, SimulatedClock()) as s:
            assert compute_l1(b.reference_output(wl, x), s.infer(x)) > 0.05

    def test_latency_cost_model(self):
        wl = _wl()
        p = SyntheticParams(latency_jitter=0.0)
        b = SyntheticBackend(p)
        base = 1.2e-4 * 1.0 * (64 * 48 * 10_000) ** 0.5
        assert b.base_latency_ms(wl, ACC_FP16, 64 * 48) == pytest.approx(base, rel=1e-15)
        clock = SimulatedClock()
        x = make_inputs(wl, 0, 1)[0]
        with b.open_session(wl, ACC_FP16, clock) as s:
            lat = []
            for _ in range(4):
                t0 = clock.now()
                s.infer(x)
                lat.append(float(clock.now() - t0))
        assert lat[0] == pytest.approx(2 * base) and lat[1] == pytest.approx(2 * base)
        assert lat[2] == pytest.approx(base) and lat[3] == pytest.approx(base)

    def test_mode_factors_and_sustained(self):
        wl = _wl(modes=(ACC_FP16, ACC_INT8, ACC_FP32, CPU_FP32))
        b = SyntheticBackend(SyntheticParams(latency_jitter=0.0))
        px = wl.pixels
        assert b.latency_ms(wl, ACC_INT8, px, 0, 5, False) < b.latency_ms(wl, ACC_FP16, px, 0, 5, False)
        assert b.latency_ms(wl, ACC_FP16, px, 0, 5, False) < b.latency_ms(wl, ACC_FP32, px, 0, 5, False)
        assert b.latency_ms(wl, ACC_FP32, px, 0, 5, False) < b.latency_ms(wl, CPU_FP32, px, 0, 5, False)
        assert b.latency_ms(wl, ACC_FP16, px, 0, 5, True) == pytest.approx(
            1.15 * b.latency_ms(wl, ACC_FP16, px, 0, 5, False))

    def test_jitter_bounded(self):
        wl = _wl()
        b = SyntheticBackend()
        base = b.base_latency_ms(wl, ACC_FP16, wl.pixels)
        for i in range(2, 200):
            assert abs(b.latency_ms(wl, ACC_FP16, wl.pixels, 0, i, False) / base - 1) <= 0.05 + 1e-12

    def test_init_time(self):
        wl = _wl()
        b = SyntheticBackend(SyntheticParams(init_jitter=0.0))
        assert b.init_ms(wl, ACC_FP16) == pytest.approx(40 + 6 * 8.0 * 2 / 4)
        clock = SimulatedClock()
        b.open_session(wl, ACC_FP16, clock).close()
        assert float(clock.now()) == pytest.approx(b.init_ms(wl, ACC_FP16))
        declared = SyntheticBackend(SyntheticParams(declared_init_ms=12.5))
        assert declared.init_ms(wl, ACC_FP16) == 12.5

    def test_memory_budget(self):
        wl = _wl()
        need = footprint_bytes(64 * 48, Precision.FP16)
        b = SyntheticBackend(SyntheticParams(memory_budget_bytes=int(need) - 1))
        with b.open_session(wl, ACC_FP16, SimulatedClock()) as s:
            with pytest.raises(OutOfMemoryError):
                s.infer(np.zeros((48, 64, 3), np.uint8))
        ok = SyntheticBackend(SyntheticParams(memory_budget_bytes=int(need)))
        with ok.open_session(wl, ACC_FP16, SimulatedClock()) as s:
            s.infer(np.zeros((48, 64, 3), np.uint8))

    def test_session_limit_and_release(self):
        wl = _wl()
        b = SyntheticBackend(SyntheticParams(max_concurrent_sessions=1))
        s = b.open_session(wl, ACC_FP16, SimulatedClock())
        with pytest.raises(SessionLimitError):
            b.open_session(wl, ACC_FP16, SimulatedClock())
        s.close()
        s.close()  # idempotent
        assert b.open_sessions == 0
        b.open_session(wl, ACC_FP16, SimulatedClock()).close()

    def test_unsupported_mode(self):
        with pytest.raises(UnsupportedModeError):
            SyntheticBackend().open_session(_wl(), ACC_INT8, SimulatedClock())

    def test_injected_open_failure_releases_slot(self):
        b = SyntheticBackend(SyntheticParams(fail_open=("wl#1",)))
        b.open_session(_wl(), ACC_FP16, SimulatedClock(), instance=0).close()
        with pytest.raises(SessionOpenError):
            b.open_session(_wl(), ACC_FP16, SimulatedClock(), instance=1)
        assert b.open_sessions == 0

    def test_unknown_params(self):
        with pytest.raises(ConfigError):
            SyntheticParams.from_mapping({"sigma": 1})

    def test_input_digest_sensitive(self):
        x = np.zeros((8, 8, 3), np.uint8)
        y = x.copy()
        y[0, 0, 0] = 1
        assert input_digest(x) != input_digest(y)
        assert input_digest(x) != input_digest(np.zeros((8, 8, 4), np.uint8))


class TestReplay:
    def test_parse_and_dump(self):
        t = LatencyTrace.parse("# recorded\ninit_ms=12.5\n10\n\n11.25  # note\n")
        assert t == LatencyTrace((10.0, 11.25), 12.5)
        assert LatencyTrace.parse(t.dumps()) == t

    @pytest.mark.parametrize("text, match", [
        ("10\n11\n", "missing init_ms"),
        ("10\ninit_ms=1\n", "header must come first"),
        ("init_ms=1\nabc\n", "not a number"),
        ("init_ms=1\n-3\n", "must be > 0"),
        ("init_ms=1\ninit_ms=2\n", "once"),
    ])
    def test_parse_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            LatencyTrace.parse(text)

    def test_replays_exact_latencies(self):
        wl = _wl()
        b = ReplayBackend({"wl": LatencyTrace((0.1, 0.2, 0.3), 7.0)})
        clock = SimulatedClock()
        with b.open_session(wl, ACC_FP16, clock) as s:
            assert clock.now() == 7
            got = []
            for _ in range(3):
                t0 = clock.now()
                assert s.infer(np.zeros((48, 64, 3), np.uint8)) is None
                got.append(float(clock.now() - t0))
            with pytest.raises(TraceExhaustedError):
                s.infer(np.zeros((48, 64, 3), np.uint8))
        assert got == [0.1, 0.2, 0.3]

    def test_lookup_order_and_instances(self):
        wl = _wl(modes=(ACC_FP16, ACC_INT8))
        t_test, t_wl, t_any = LatencyTrace((1.0,)), LatencyTrace((2.0,)), LatencyTrace((3.0,))
        b = ReplayBackend({"wl@accelerator_int8": t_test, "wl": [t_wl, t_any]})
        assert b.open_session(wl, ACC_INT8, SimulatedClock()).trace is t_test
        s0 = b.open_session(wl, ACC_FP16, SimulatedClock(), instance=0)
        assert s0.trace is t_wl
        s0.close()
        s1 = b.open_session(wl, ACC_FP16, SimulatedClock(), instance=1)
        assert s1.trace is t_any

    def test_no_trace_means_unsupported(self):
        b = ReplayBackend({"other": LatencyTrace((1.0,))})
        assert not b.supports(_wl(), ACC_FP16)
        assert ReplayBackend({"*": LatencyTrace((1.0,))}).supports(_wl(), ACC_FP16)

    def test_declared_init_overrides_trace(self):
        b = ReplayBackend({"*": LatencyTrace((1.0,), 50.0)}, declared_init_ms=5.0)
        clock = SimulatedClock()
        b.open_session(_wl(), ACC_FP16, clock).close()
        assert clock.now() == 5

    def test_replay_memory_budget(self):
        b = ReplayBackend({"*": LatencyTrace((1.0, 1.0))}, memory_budget_bytes=100)
        with b.open_session(_wl(), ACC_FP16, SimulatedClock()) as s:
            with pytest.raises(OutOfMemoryError):
                s.infer(np.zeros((10, 10, 3), np.uint8))


class TestRegistryOfBackends:
    def test_builtins(self):
        assert {"synthetic", "replay"} <= set(list_backends())

    def test_unknown(self):
        with pytest.raises(ConfigError, match="unknown backend"):
            create_backend("tpu")

    def test_synthetic_factory(self):
        b = create_backend("synthetic", {"seed": 5, "epsilon": 0.1})
        assert isinstance(b, SyntheticBackend) and b.params.seed == 5

    def test_replay_factory(self, tmp_path):
        (tmp_path / "t.txt").write_text("init_ms=3\n1\n2\n")
        b = create_backend("replay", {"traces": {"wl": "t.txt"}, "default_trace": {"entries_ms": [4.0]}},
                           base_dir=tmp_path)
        assert b.traces["wl"][0].entries_ms == (1.0, 2.0)
        assert b.traces["*"][0].entries_ms == (4.0,)

    def test_replay_factory_bad_params(self, tmp_path):
        with pytest.raises(ConfigError):
            create_backend("replay", {"traces": {"wl": "missing.txt"}}, base_dir=tmp_path)
        with pytest.raises(ConfigError):
            create_backend("replay", {"bogus": 1})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 64), st.integers(1, 64))
def test_output_depends_only_on_seed_and_input(seed, w, h):
    x = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    b1, b2 = SyntheticBackend(SyntheticParams(seed=seed)), SyntheticBackend(SyntheticParams(seed=seed))
    assert np.array_equal(b1.output(x, Precision.FP16, 0.0), b2.output(x.copy(), Precision.FP16, 0.0))
