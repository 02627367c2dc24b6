"""Control records, CSV ingestion and the family-grouped train/test split."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ValidationError

CSV_COLUMNS = (
    "database_id",
    "target_id",
    "comparator_id",
    "outcome_id",
    "family_id",
    "true_effect_size",
    "log_estimate",
    "se_log_estimate",
)


@dataclass(frozen=True)
class ControlRecord:
    """One control (or outcome of interest) estimate.

    ``true_effect_size`` is on the ratio scale and is ``None`` for outcomes
    of interest. ``log_estimate`` and ``se_log_estimate`` are the log of the
    estimated relative risk and its standard error.
    """

    database_id: str
    target_id: str
    comparator_id: str
    outcome_id: str
    family_id: str
    true_effect_size: float | None
    log_estimate: float
    se_log_estimate: float

    def __post_init__(self):
        problem = _record_problem(self)
        if problem is not None:
            raise ValidationError(problem)

    @property
    def is_negative(self) -> bool:
        return self.true_effect_size is not None and self.true_effect_size == 1.0

    @property
    def log_true_effect(self) -> float:
        if self.true_effect_size is None:
            raise ValidationError(
                f"outcome {self.outcome_id!r} has no true effect size"
            )
        return math.log(self.true_effect_size)

    @property
    def estimated_bias(self) -> float:
        """Log estimate minus log true effect size."""
        return self.log_estimate - self.log_true_effect

    @property
    def key(self) -> tuple:
        return (
            self.target_id,
            self.comparator_id,
            self.outcome_id,
            self.database_id,
            self.true_effect_size,
        )


def _record_problem(rec: ControlRecord) -> str | None:
    if not math.isfinite(rec.log_estimate):
        return "log_estimate must be finite"
    if not (math.isfinite(rec.se_log_estimate) and rec.se_log_estimate > 0):
        return "se_log_estimate must be finite and > 0"
    if rec.true_effect_size is not None and not (
        math.isfinite(rec.true_effect_size) and rec.true_effect_size > 0
    ):
        return "true_effect_size must be finite and > 0"
    return None


@dataclass(frozen=True)
class ControlSet:
    """An ordered, validated, immutable collection of control records."""

    records: tuple[ControlRecord, ...]
    database_id: str = ""
    analysis: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ControlRecord]:
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    @property
    def log_estimates(self) -> np.ndarray:
        return np.array([r.log_estimate for r in self.records], dtype=float)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.array([r.se_log_estimate for r in self.records], dtype=float)

    @property
    def log_true_effects(self) -> np.ndarray:
        """Log true effect sizes; raises if any record is an outcome of interest."""
        return np.array([r.log_true_effect for r in self.records], dtype=float)

    @property
    def families(self) -> list[str]:
        """Distinct family ids in first-appearance order."""
        return list(dict.fromkeys(r.family_id for r in self.records))

    def subset(self, keep: Iterable[bool]) -> "ControlSet":
        recs = [r for r, k in zip(self.records, keep) if k]
        return ControlSet(recs, self.database_id, self.analysis)

    def with_families(self, families: Iterable[str]) -> "ControlSet":
        fams = set(families)
        return self.subset(r.family_id in fams for r in self.records)

    def require_labelled(self, what: str = "fitting") -> None:
        missing = [i for i, r in enumerate(self.records) if r.true_effect_size is None]
        if missing:
            raise ValidationError(
                f"{what} requires true effect sizes; records {missing[:5]} have none"
            )


@dataclass(frozen=True)
class SplitPlan:
    train_families: frozenset[str]
    test_families: frozenset[str]
    fraction: float = 0.8
    seed: int = 0

    def train(self, controls: ControlSet) -> ControlSet:
        return controls.with_families(self.train_families)

    def test(self, controls: ControlSet) -> ControlSet:
        return controls.with_families(self.test_families)


def validate_linkage(records: Sequence[ControlRecord]) -> None:
    """Check that every positive control points at exactly one negative control."""
    negatives: dict[tuple, int] = {}
    for rec in records:
        if rec.is_negative:
            k = (rec.database_id, rec.target_id, rec.comparator_id, rec.family_id)
            negatives[k] = negatives.get(k, 0) + 1
    for i, rec in enumerate(records):
        if rec.true_effect_size is None or rec.is_negative:
            continue
        n = negatives.get(
            (rec.database_id, rec.target_id, rec.comparator_id, rec.family_id), 0
        )
        if n != 1:
            raise ValidationError(
                f"row {i + 1}: positive control family_id {rec.family_id!r} matches "
                f"{n} negative controls for target {rec.target_id!r} / comparator "
                f"{rec.comparator_id!r} (expected exactly 1)"
            )


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number"
        ) from None


def parse_controls(lines: Iterable[str], source: str = "<input>") -> ControlSet:
    """Parse control CSV text. Lines starting with ``#`` are provenance headers."""
    reader = csv.reader(line for line in lines if not line.startswith("#"))
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{source}: empty file, expected header row") from None
    header = [h.strip() for h in header]
    if tuple(header) != CSV_COLUMNS:
        raise ValidationError(
            f"{source}: header {header} does not match expected {list(CSV_COLUMNS)}"
        )

    records: list[ControlRecord] = []
    seen: dict[tuple, int] = {}
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ValidationError(
                f"row {row_no}: expected {len(CSV_COLUMNS)} columns, got {len(row)}"
            )
        vals = dict(zip(CSV_COLUMNS, (c.strip() for c in row)))
        tes = vals["true_effect_size"]
        true_effect = None if tes == "" else _parse_float(tes, row_no, "true_effect_size")
        log_est = _parse_float(vals["log_estimate"], row_no, "log_estimate")
        se = _parse_float(vals["se_log_estimate"], row_no, "se_log_estimate")
        try:
            rec = ControlRecord(
                database_id=vals["database_id"],
                target_id=vals["target_id"],
                comparator_id=vals["comparator_id"],
                outcome_id=vals["outcome_id"],
                family_id=vals["family_id"],
                true_effect_size=true_effect,
                log_estimate=log_est,
                se_log_estimate=se,
            )
        except ValidationError as exc:
            raise ValidationError(f"row {row_no}: {exc}") from None
        if rec.key in seen:
            raise ValidationError(
                f"row {row_no}: duplicate key {rec.key} (first seen at row {seen[rec.key]})"
            )
        seen[rec.key] = row_no
        records.append(rec)

    validate_linkage(records)
    dbs = {r.database_id for r in records}
    return ControlSet(records, database_id=dbs.pop() if len(dbs) == 1 else "")


def load_controls(path: str | Path, format: str = "csv") -> ControlSet:
    if format != "csv":
        raise ValidationError(f"unsupported format {format!r}; only 'csv' is supported")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"control file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return parse_controls(fh, source=str(path))


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def format_controls(controls: ControlSet, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header if header.endswith("\n") else header + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in controls:
        writer.writerow(
            [
                r.database_id,
                r.target_id,
                r.comparator_id,
                r.outcome_id,
                r.family_id,
                _fmt(r.true_effect_size),
                _fmt(r.log_estimate),
                _fmt(r.se_log_estimate),
            ]
        )
    return buf.getvalue()


def write_controls(controls: ControlSet, path: str | Path, header: str | None = None) -> None:
    Path(path).write_text(format_controls(controls, header), encoding="utf-8")


def filter_negative_only(controls: ControlSet) -> ControlSet:
    out = controls.subset(r.is_negative for r in controls)
    if len(out) == 0:
        raise ValidationError("control set contains no negative controls")
    return out


def split_by_family(controls: ControlSet, fraction: float = 0.8, seed: int = 0) -> SplitPlan:
    """Assign whole families (a negative control and its positives) to train or test.

    The train side receives ``round(fraction * n_families)`` families, clamped
    to ``[1, n_families - 1]``. Membership is a seeded permutation of the
    sorted family ids, so it does not depend on record order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    families = sorted(controls.families)
    n = len(families)
    if n < 2:
        raise ValidationError(f"need at least 2 families to split, got {n}")
    n_train = min(max(int(np.floor(fraction * n + 0.5)), 1), n - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    train = frozenset(families[i] for i in order[:n_train])
    test = frozenset(families[i] for i in order[n_train:])
    return SplitPlan(train, test, fraction, seed)


def rotate_families(controls: ControlSet, folds: int = 5, seed: int = 0) -> list[SplitPlan]:
    """Partition families into ``folds`` test groups; each plan trains on the rest.

    Every family is tested exactly once across the returned plans. With
    ``folds=5`` each plan is an 80/20 split.
    """
    families = sorted(controls.families)
    n = len(families)
    if folds < 2 or folds > n:
        raise ValidationError(f"need 2 <= folds <= family count ({n}), got {folds}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    groups = np.array_split(order, folds)
    everything = frozenset(families)
    plans = []
    for g in groups:
        test = frozenset(families[i] for i in g)
        plans.append(SplitPlan(everything - test, test, 1.0 - len(test) / n, seed))
    return plans
