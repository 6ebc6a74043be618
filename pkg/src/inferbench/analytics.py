"""Per-device latency tables: ingestion, relative performance, ranking.

Table format: comma- or tab-delimited text with a header row. ``device_name``
and ``soc_name`` are required, ``accelerator`` is optional, columns prefixed
``meta_`` are kept as string metadata, and every other column is a test id
holding a latency in milliseconds. Blank cells mean "not measured".
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import IngestError
from .scoring import geometric_mean

REQUIRED_COLUMNS = ("device_name", "soc_name")
RESERVED_COLUMNS = REQUIRED_COLUMNS + ("accelerator",)
META_PREFIX = "meta_"
DEFAULT_MIN_OVERLAP = 4

RecordKey = tuple[str, str]


class BaselinePolicy(enum.Enum):
    TOP_RECORD = "top-record"
    PER_TEST_BEST = "per-test-best"

    @classmethod
    def parse(cls, text: str) -> "BaselinePolicy":
        norm = text.strip().lower().replace("_", "-")
        for p in cls:
            if p.value == norm:
                return p
        raise ValueError(f"unknown baseline policy {text!r}; expected top-record or per-test-best")


@dataclass(frozen=True)
class DeviceRecord:
    device_name: str
    soc_name: str
    accelerator: str = ""
    per_test_latency_ms: Mapping[str, float] = field(default_factory=dict)
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        bad = {k: v for k, v in self.per_test_latency_ms.items() if not (v > 0 and math.isfinite(v))}
        if bad:
            raise ValueError(f"{self.device_name}: latencies must be positive and finite: {bad}")

    @property
    def key(self) -> RecordKey:
        return (self.device_name, self.soc_name)


@dataclass(frozen=True)
class RankingEntry:
    record: DeviceRecord
    relative_perf_percent: float
    rank: int

    @property
    def display_percent(self) -> int:
        return round_half_away(self.relative_perf_percent)


def round_half_away(x: float) -> int:
    """Nearest integer, halves rounded away from zero."""
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _parse_number(cell: str, column: str, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise IngestError(f"column {column!r}: not a number: {cell!r}", row=row) from None
    if not (value > 0 and math.isfinite(value)):
        raise IngestError(f"column {column!r}: latency must be positive, got {cell!r}", row=row)
    return value


def ingest_table(document: str) -> list[DeviceRecord]:
    """Parse a latency table; row numbers in errors are 1-based file lines."""
    if not document.strip():
        raise IngestError("empty table document")
    first = document.lstrip().splitlines()[0]
    delimiter = "\t" if "\t" in first else ","
    reader = csv.reader(io.StringIO(document.lstrip()), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise IngestError(f"header is missing required columns: {', '.join(missing)}", row=1)
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes or "" in header:
        raise IngestError(f"header has duplicate or empty column names: {dupes or ['']}", row=1)
    records: list[DeviceRecord] = []
    seen: dict[RecordKey, int] = {}
    for cells in reader:
        row = reader.line_num
        if not any(c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise IngestError(f"expected {len(header)} cells, found {len(cells)}", row=row)
        values = dict(zip(header, (c.strip() for c in cells)))
        device, soc = values["device_name"], values["soc_name"]
        if not device or not soc:
            raise IngestError("device_name and soc_name must not be blank", row=row)
        if (device, soc) in seen:
            raise IngestError(f"duplicate record ({device}, {soc}); first seen on row {seen[(device, soc)]}",
                              row=row)
        seen[(device, soc)] = row
        latencies, meta = {}, {}
        for col, cell in values.items():
            if col in RESERVED_COLUMNS:
                continue
            if col.startswith(META_PREFIX):
                if cell:
                    meta[col[len(META_PREFIX):]] = cell
            elif cell:
                latencies[col] = _parse_number(cell, col, row)
        records.append(DeviceRecord(device, soc, values.get("accelerator", ""), latencies, meta))
    if not records:
        raise IngestError("table has a header but no records")
    return records


def load_table(path: str | Path) -> list[DeviceRecord]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestError(f"cannot read table {path}: {exc}") from None
    return ingest_table(text)


def bundled_table(name: str) -> list[DeviceRecord]:
    """``"float"`` or ``"quant"``: the shipped published-table transcriptions."""
    return ingest_table(resources.files("inferbench.data").joinpath(f"{name}_table.csv").read_text())


def _ratio_geomean(record: DeviceRecord, baseline: Mapping[str, float], required: int) -> float:
    shared = sorted(set(record.per_test_latency_ms) & set(baseline))
    if not shared:
        raise IngestError(f"{record.device_name} ({record.soc_name}) shares no test with the baseline")
    if len(shared) < required:
        raise IngestError(f"{record.device_name} ({record.soc_name}) shares {len(shared)} tests with "
                          f"the baseline, at least {required} required")
    return geometric_mean([baseline[t] / record.per_test_latency_ms[t] for t in shared])


def relative_performance(records: Sequence[DeviceRecord],
                         policy: BaselinePolicy = BaselinePolicy.TOP_RECORD, *,
                         min_overlap: int = DEFAULT_MIN_OVERLAP) -> dict[RecordKey, float]:
    """Percent per record key: 100 times the geomean of baseline / record latency ratios.

    PER_TEST_BEST takes the per-test minimum over all records as baseline and
    rescales so the best record is 100. TOP_RECORD picks, among records that
    cover every test, the one best against that per-test minimum and compares
    everyone to it directly.
    """
    if not records:
        return {}
    tests = sorted({t for r in records for t in r.per_test_latency_ms})
    best = {t: min(r.per_test_latency_ms[t] for r in records if t in r.per_test_latency_ms)
            for t in tests}
    required = max(1, min(min_overlap, len(tests)))
    raw = {r.key: _ratio_geomean(r, best, required) for r in records}
    if policy is BaselinePolicy.PER_TEST_BEST:
        top = max(raw.values())
        return {k: 100.0 * v / top for k, v in raw.items()}
    full = [r for r in records if len(r.per_test_latency_ms) == len(tests)]
    if not full:
        raise IngestError("top-record policy needs a record that covers every test")
    # max() keeps the first maximum, so exact ties go to the alphabetically first record
    full.sort(key=lambda r: (r.soc_name, r.device_name))
    baseline = max(full, key=lambda r: raw[r.key])
    ref = dict(baseline.per_test_latency_ms)
    out = {}
    for r in records:
        out[r.key] = 100.0 if r is baseline else 100.0 * _ratio_geomean(r, ref, required)
    return out


def rank(records: Sequence[DeviceRecord], percents: Mapping[RecordKey, float]) -> list[RankingEntry]:
    ordered = sorted(records, key=lambda r: (-percents[r.key], r.soc_name, r.device_name))
    return [RankingEntry(r, percents[r.key], i) for i, r in enumerate(ordered, 1)]


def published_deviation(records: Sequence[DeviceRecord], percents: Mapping[RecordKey, float],
                        column: str = "published_relative_perf") -> dict[RecordKey, Optional[float]]:
    """Computed minus published percent for every record carrying ``meta_<column>``."""
    out: dict[RecordKey, Optional[float]] = {}
    for r in records:
        published = r.metadata.get(column)
        out[r.key] = None if published is None else percents[r.key] - float(published.rstrip("%"))
    return out
