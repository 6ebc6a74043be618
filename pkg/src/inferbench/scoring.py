"""Accuracy-penalized, category-weighted scoring.

Per test:        s_i = N_i / (t_i * max(1, e_i / e_ref_i) ** p)
Per category:    S_c = geometric mean of the s_i in category c
Final score:     A   = m * scale * sum_c(w_c * S_c) / 100

``m`` is the memory multiplier looked up from the largest resolution the
memory test survived. Init-time entries (keys ``<test id>:init``) are scored
with ``t = init_ms`` and no accuracy penalty.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import yaml

from .core import InferenceMode, Precision, Target, TestResult, WorkloadSpec, make_test_id
from .errors import ConfigError, ScoringError

INIT_SUFFIX = ":init"


class Category(enum.Enum):
    FP16 = "FP16"
    INT8 = "INT8"
    CPU_FLOAT = "CPU_FLOAT"
    CPU_INT8 = "CPU_INT8"
    FP32 = "FP32"
    PARALLEL = "PARALLEL"
    INIT_FLOAT = "INIT_FLOAT"
    INIT_QUANT = "INIT_QUANT"


DEFAULT_WEIGHTS = {
    Category.FP16: 48,
    Category.INT8: 24,
    Category.CPU_FLOAT: 12,
    Category.CPU_INT8: 6,
    Category.FP32: 4,
    Category.PARALLEL: 3,
    Category.INIT_FLOAT: 2,
    Category.INIT_QUANT: 1,
}

DEFAULT_MEMORY_TABLE = {
    200: 0.80, 300: 0.84, 400: 0.86, 500: 0.88, 600: 0.90, 800: 0.92,
    1000: 0.94, 1200: 0.95, 1400: 0.96, 1600: 0.97, 1800: 0.98, 2000: 1.00,
}


@dataclass(frozen=True)
class ScoreConfig:
    weights: Mapping[Category, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    normalization: Mapping[str, float] = field(default_factory=dict)
    error_reference: Mapping[str, float] = field(default_factory=dict)
    categories: Mapping[str, Category] = field(default_factory=dict)
    penalty_exponent: float = 1.5
    memory_multiplier_table: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_MEMORY_TABLE))
    scale: float = 10000.0
    memory_test: Optional[str] = None

    def violations(self) -> list[str]:
        out = []
        total = math.fsum(self.weights.values())
        if total != 100:
            out.append(f"weights sum to {total:g}, expected exactly 100")
        for c, w in self.weights.items():
            if w < 0:
                out.append(f"weight of {c.value} is negative")
        for key, n in self.normalization.items():
            if not n > 0:
                out.append(f"normalization[{key}] must be > 0")
        for key, e in self.error_reference.items():
            if not e > 0:
                out.append(f"error_reference[{key}] must be > 0")
        if not self.penalty_exponent > 0:
            out.append("penalty_exponent must be > 0")
        if not self.scale > 0:
            out.append("scale must be > 0")
        table = list(self.memory_multiplier_table.items())
        if not table:
            out.append("memory_multiplier_table is empty")
        else:
            keys = [k for k, _ in table]
            factors = [f for _, f in table]
            if any(b <= a for a, b in zip(keys, keys[1:])):
                out.append("memory_multiplier_table keys must be ascending")
            if any(b < a for a, b in zip(factors, factors[1:])):
                out.append("memory_multiplier_table factors must be non-decreasing")
            if any(not 0 < f <= 1 for f in factors):
                out.append("memory multiplier factors must lie in (0, 1]")
            if factors[-1] != 1:
                out.append("top memory multiplier factor must be 1")
        for key, c in self.categories.items():
            if c not in self.weights:
                out.append(f"category {c.value} of {key} has no weight")
            if key not in self.normalization:
                out.append(f"{key} has a category but no normalization coefficient")
        return out

    def validate(self) -> "ScoreConfig":
        problems = self.violations()
        if problems:
            raise ConfigError("invalid score config:\n  " + "\n  ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {
            "weights": {c.value: self.weights[c] for c in Category if c in self.weights},
            "normalization": dict(sorted(self.normalization.items())),
            "error_reference": dict(sorted(self.error_reference.items())),
            "categories": {k: v.value for k, v in sorted(self.categories.items())},
            "penalty_exponent": self.penalty_exponent,
            "memory_multiplier_table": {int(k): v for k, v in self.memory_multiplier_table.items()},
            "scale": self.scale,
            "memory_test": self.memory_test,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScoreConfig":
        known = {"weights", "normalization", "error_reference", "categories", "penalty_exponent",
                 "memory_multiplier_table", "scale", "memory_test"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown score config fields: {sorted(unknown)}")
        try:
            kwargs = {}
            if "weights" in data:
                kwargs["weights"] = {Category(k): float(v) for k, v in data["weights"].items()}
            for name in ("normalization", "error_reference"):
                if name in data:
                    kwargs[name] = {str(k): float(v) for k, v in (data[name] or {}).items()}
            if "categories" in data:
                kwargs["categories"] = {str(k): Category(v) for k, v in (data["categories"] or {}).items()}
            if "memory_multiplier_table" in data:
                kwargs["memory_multiplier_table"] = {
                    int(k): float(v) for k, v in data["memory_multiplier_table"].items()}
            for name in ("penalty_exponent", "scale"):
                if name in data:
                    kwargs[name] = float(data[name])
            if data.get("memory_test") is not None:
                kwargs["memory_test"] = str(data["memory_test"])
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed score config: {exc}") from None
        return cls(**kwargs).validate()

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def load_score_config(path: Optional[str | Path] = None) -> ScoreConfig:
    if path is None:
        text = resources.files("inferbench.data").joinpath("score_default.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read score config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"score config is not valid YAML: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("score config must be a mapping")
    return ScoreConfig.from_dict(data)


@dataclass(frozen=True)
class ScoreBreakdown:
    per_test_scores: Mapping[str, float]
    category_scores: Mapping[Category, float]
    memory_multiplier: float
    final_score: float
    weights: Mapping[Category, float] = field(default_factory=dict)
    scale: float = 1.0

    def recompute_final(self) -> float:
        return _combine(self.memory_multiplier, self.scale, self.weights, self.category_scores)

    def to_dict(self) -> dict:
        return {
            "per_test_scores": dict(sorted(self.per_test_scores.items())),
            "category_scores": {c.value: s for c, s in self.category_scores.items()},
            "memory_multiplier": self.memory_multiplier,
            "final_score": self.final_score,
        }


def penalty(l1_error: float, e_ref: float, p: float = 1.5) -> float:
    """``max(1, e / e_ref) ** p``; 1 for errors at or below the reference."""
    ratio = l1_error / e_ref
    return ratio ** p if ratio > 1 else 1.0


def test_score(t_ms: float, l1_error: Optional[float], N: float, e_ref: Optional[float] = None,
               p: float = 1.5) -> float:
    if not t_ms > 0 or not math.isfinite(t_ms):
        raise ScoringError(f"latency must be positive and finite, got {t_ms}")
    pen = 1.0
    if l1_error:
        if e_ref is None:
            raise ScoringError("l1_error given without an error reference")
        pen = penalty(l1_error, e_ref, p)
    return N / (t_ms * pen)


test_score.__test__ = False


def geometric_mean(values: Sequence[float]) -> float:
    values = list(values)
    if not values:
        raise ScoringError("geometric mean of an empty list")
    if any(not v > 0 for v in values):
        raise ScoringError(f"geometric mean needs positive values, got {min(values)}")
    prod = math.prod(values)
    if prod == 0 or not math.isfinite(prod):
        # exponent/mantissa accumulation keeps very long lists in range
        mant, exp = 1.0, 0
        for v in values:
            m, e = math.frexp(v)
            mant, e2 = math.frexp(mant * m)
            exp += e + e2
        q, r = divmod(exp, len(values))
        return (mant * 2.0 ** r) ** (1.0 / len(values)) * 2.0 ** q
    return prod ** (1.0 / len(values))


def category_score(scores: Sequence[float]) -> float:
    return geometric_mean(scores)


def memory_multiplier(max_resolution_px: Optional[int], table: Mapping[int, float]) -> float:
    """Factor of the largest rung not above ``max_resolution_px``; floor otherwise."""
    rungs = sorted(table.items())
    factor = rungs[0][1]
    if max_resolution_px is None:
        return factor
    for px, f in rungs:
        if px <= max_resolution_px:
            factor = f
    return factor


def _combine(m: float, scale: float, weights: Mapping[Category, float],
             category_scores: Mapping[Category, float]) -> float:
    weighted = math.fsum(weights[c] * s for c, s in category_scores.items())
    return m * scale * weighted / 100


def final_score(results: Iterable[TestResult], config: ScoreConfig) -> ScoreBreakdown:
    per_test: dict[str, float] = {}
    by_cat: dict[Category, list[float]] = {}
    max_mem: Optional[int] = None
    for r in results:
        if r.max_memory_resolution_px is not None or r.test_id == config.memory_test:
            max_mem = r.max_memory_resolution_px or 0
            continue
        entries = [(r.test_id, r.mean_ms, r.l1_error)]
        init_key = r.test_id + INIT_SUFFIX
        if init_key in config.categories:
            entries.append((init_key, r.init_ms, None))
        if r.test_id not in config.categories:
            raise ScoringError(f"test {r.test_id} has no configured category")
        for key, t, err in entries:
            if key not in config.normalization:
                raise ScoringError(f"missing normalization coefficient for {key}")
            e_ref = config.error_reference.get(key)
            if err and e_ref is None:
                raise ScoringError(f"missing error reference for {key}")
            s = test_score(t, err, config.normalization[key], e_ref, config.penalty_exponent)
            per_test[key] = s
            by_cat.setdefault(config.categories[key], []).append(s)
    missing = [c.value for c, w in config.weights.items() if w > 0 and c not in by_cat]
    if missing:
        raise ScoringError(f"no results for scored categories: {', '.join(missing)}")
    cat_scores = {c: category_score(by_cat[c]) for c in Category if c in by_cat}
    m = memory_multiplier(max_mem, config.memory_multiplier_table)
    weights = dict(config.weights)
    return ScoreBreakdown(
        per_test_scores=per_test,
        category_scores=cat_scores,
        memory_multiplier=m,
        final_score=_combine(m, config.scale, weights, cat_scores),
        weights=weights,
        scale=config.scale,
    )


def calibrate(results: Iterable[TestResult], base: ScoreConfig) -> ScoreConfig:
    """Copy of ``base`` whose coefficients make ``results`` score exactly 1 per test."""
    norm = dict(base.normalization)
    for r in results:
        if r.max_memory_resolution_px is not None:
            continue
        norm[r.test_id] = r.mean_ms
        if r.test_id + INIT_SUFFIX in base.categories:
            norm[r.test_id + INIT_SUFFIX] = r.init_ms
    return ScoreConfig(
        weights=base.weights, normalization=norm, error_reference=base.error_reference,
        categories=base.categories, penalty_exponent=base.penalty_exponent,
        memory_multiplier_table=base.memory_multiplier_table, scale=base.scale,
        memory_test=base.memory_test,
    )


def category_for(workload: WorkloadSpec, mode: InferenceMode) -> Category:
    if workload.parallel_instances > 1:
        return Category.PARALLEL
    if mode.target is Target.CPU:
        return Category.CPU_INT8 if mode.precision is Precision.INT8 else Category.CPU_FLOAT
    return {Precision.FP16: Category.FP16, Precision.INT8: Category.INT8,
            Precision.FP32: Category.FP32}[mode.precision]


def default_categories(workloads: Iterable[WorkloadSpec]) -> tuple[dict[str, Category], Optional[str]]:
    """Category of every scored key, plus the memory test id (if any)."""
    cats: dict[str, Category] = {}
    memory = None
    for wl in workloads:
        for mode in wl.sorted_modes():
            tid = make_test_id(wl, mode)
            if wl.is_memory_test:
                memory = tid
                continue
            cats[tid] = category_for(wl, mode)
            cats[tid + INIT_SUFFIX] = (Category.INIT_QUANT if mode.precision is Precision.INT8
                                       else Category.INIT_FLOAT)
    return cats, memory
