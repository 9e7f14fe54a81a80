"""Record containers, study samples, and the formula-to-design builder.

Populations and samples are stored column-wise (one numpy array per variable)
for speed; per-person views are materialized on demand. In a study sample the
infection outcome of untested people is masked: the column holds NaN and the
record view refuses to reveal it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .glm import DesignMatrix

COLUMN_ORDER = ("c", "x", "u", "y1", "y_other", "w", "h", "t")

DESIGN_TAGS = (
    "all-tested-plus-controls",
    "proper-tnd",
    "proper-tnd-plus-controls",
    "tested-only",
)


class MaskedOutcomeError(Exception):
    """The infection outcome of an untested person was read."""


class UnknownVariableError(Exception):
    """A formula references a variable missing from the record schema."""


@dataclass(frozen=True)
class IndividualRecord:
    """Complete simulated variables for one person."""

    c: int
    x: int
    u: int
    y1: int
    y_other: int
    w: int
    h: int
    t: int

    def observed(self) -> "ObservedRecord":
        return ObservedRecord(
            c=self.c,
            x=self.x,
            w=self.w,
            h=self.h,
            t=self.t,
            _y1=self.y1 if self.t == 1 else None,
        )


@dataclass(frozen=True)
class ObservedRecord:
    """Masked view of one person: the test result exists only if tested."""

    c: int
    x: int
    w: int
    h: int
    t: int
    _y1: int | None = field(repr=False, default=None)

    @property
    def y1(self) -> int:
        if self.t == 0 or self._y1 is None:
            raise MaskedOutcomeError("infection outcome is unobserved for t=0")
        return self._y1


def _as_columns(columns: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    n = None
    for name in COLUMN_ORDER:
        if name not in columns:
            raise ValueError(f"missing column {name!r}")
        arr = np.asarray(columns[name])
        if n is None:
            n = arr.shape[0]
        elif arr.shape[0] != n:
            raise ValueError("columns have unequal lengths")
        out[name] = arr
    return out


@dataclass(frozen=True)
class StudySample:
    """A design-specific sample of masked records.

    ``columns['y1']`` is a float array with NaN wherever the outcome is
    masked (untested rows). ``q0_assumed`` is the testing prevalence assumed
    when the sample is used for case-control weighting.
    """

    columns: dict[str, np.ndarray]
    design_tag: str
    n_tested: int
    n_controls: int
    q0_assumed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "columns", _as_columns(self.columns))
        if self.design_tag not in DESIGN_TAGS:
            raise ValueError(f"unknown design tag {self.design_tag!r}")
        t = self.columns["t"]
        if int(np.sum(t == 1)) != self.n_tested:
            raise ValueError("n_tested does not match the t column")
        if int(np.sum(t == 0)) != self.n_controls:
            raise ValueError("n_controls does not match the t column")
        if self.n_tested + self.n_controls != len(t):
            raise ValueError("stratum counts must sum to the record count")

    def __len__(self) -> int:
        return self.columns["t"].shape[0]

    @property
    def n(self) -> int:
        return len(self)

    def record(self, i: int) -> ObservedRecord:
        cols = self.columns
        tested = int(cols["t"][i]) == 1
        y1 = cols["y1"][i]
        return ObservedRecord(
            c=int(cols["c"][i]),
            x=int(cols["x"][i]),
            w=int(cols["w"][i]),
            h=int(cols["h"][i]),
            t=int(cols["t"][i]),
            _y1=int(y1) if tested and not np.isnan(y1) else None,
        )


@dataclass(frozen=True)
class Formula:
    """Names an outcome and regressor terms.

    A term is either a variable name ("x") or the product of two variables
    written "w*x". Column order in the built design is intercept first, then
    terms in the order given.
    """

    outcome: str
    terms: tuple[str, ...]
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in formula")
        for term in self.terms:
            if len(term.split("*")) > 2:
                raise ValueError(f"term {term!r}: only pairwise products supported")

    def variables(self) -> tuple[str, ...]:
        names: list[str] = [self.outcome]
        for term in self.terms:
            names.extend(term.split("*"))
        return tuple(dict.fromkeys(names))


def _term_column(columns: Mapping[str, np.ndarray], term: str) -> np.ndarray:
    parts = term.split("*")
    for part in parts:
        if part not in columns:
            raise UnknownVariableError(f"unknown variable {part!r}")
    col = np.asarray(columns[parts[0]], dtype=float)
    for part in parts[1:]:
        col = col * np.asarray(columns[part], dtype=float)
    return col


def build_design(
    sample: StudySample, formula: Formula
) -> tuple[DesignMatrix, np.ndarray]:
    """Build (design matrix, response vector) for a formula over a sample.

    Raises MaskedOutcomeError if any included row lacks the outcome and
    UnknownVariableError for names outside the record schema.
    """
    cols = sample.columns
    if formula.outcome not in cols:
        raise UnknownVariableError(f"unknown outcome {formula.outcome!r}")
    response = np.asarray(cols[formula.outcome], dtype=float)
    if np.any(np.isnan(response)):
        raise MaskedOutcomeError(
            f"outcome {formula.outcome!r} is masked for {int(np.sum(np.isnan(response)))} rows"
        )
    parts: list[np.ndarray] = []
    labels: list[str] = []
    if formula.include_intercept:
        parts.append(np.ones(len(sample)))
        labels.append("intercept")
    for term in formula.terms:
        parts.append(_term_column(cols, term))
        labels.append(term)
    values = np.column_stack(parts)
    return DesignMatrix(values=values, column_labels=tuple(labels)), response


def subset(
    sample: StudySample,
    predicate: Callable[[Mapping[str, np.ndarray]], np.ndarray],
    design_tag: str | None = None,
) -> StudySample:
    """Rows satisfying a vectorized predicate, with stratum counts recomputed."""
    mask = np.asarray(predicate(sample.columns), dtype=bool)
    cols = {name: arr[mask] for name, arr in sample.columns.items()}
    t = cols["t"]
    return StudySample(
        columns=cols,
        design_tag=design_tag or sample.design_tag,
        n_tested=int(np.sum(t == 1)),
        n_controls=int(np.sum(t == 0)),
        q0_assumed=sample.q0_assumed,
    )


def write_records_csv(buffer, columns: Mapping[str, np.ndarray]) -> None:
    """Write records to CSV: a masked (NaN) y1 becomes an empty field."""
    cols = _as_columns(columns)
    y1 = np.asarray(cols["y1"], dtype=float)
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMN_ORDER)
    n = y1.shape[0]
    ints = {
        name: np.asarray(cols[name], dtype=np.int64)
        for name in COLUMN_ORDER
        if name != "y1"
    }
    for i in range(n):
        row = [
            str(ints[name][i]) if name != "y1" else
            ("" if np.isnan(y1[i]) else str(int(y1[i])))
            for name in COLUMN_ORDER
        ]
        writer.writerow(row)


def records_csv_text(columns: Mapping[str, np.ndarray]) -> str:
    out = io.StringIO()
    write_records_csv(out, columns)
    return out.getvalue()


def read_records_csv(buffer) -> dict[str, np.ndarray]:
    """Read a records CSV; empty y1 fields become NaN (masked)."""
    reader = csv.reader(buffer)
    header = next(reader)
    if tuple(header) != COLUMN_ORDER:
        raise ValueError(f"unexpected CSV header {header!r}")
    rows = list(reader)
    n = len(rows)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(COLUMN_ORDER):
        if name == "y1":
            col = np.full(n, np.nan)
            for i, row in enumerate(rows):
                if row[j] != "":
                    col[i] = float(row[j])
            out[name] = col
        else:
            out[name] = np.array([int(row[j]) for row in rows], dtype=np.int8)
    return out


def sample_from_records_csv(
    buffer,
    design_tag: str | None = None,
    q0_assumed: float | None = None,
) -> StudySample:
    """Rebuild a StudySample from a records CSV, inferring stratum counts."""
    cols = read_records_csv(buffer)
    t = cols["t"]
    n_tested = int(np.sum(t == 1))
    n_controls = int(np.sum(t == 0))
    if design_tag is None:
        if n_controls == 0:
            all_symptomatic = bool(np.all(cols["w"][t == 1] == 1))
            design_tag = "proper-tnd" if all_symptomatic else "tested-only"
        else:
            design_tag = "all-tested-plus-controls"
    return StudySample(
        columns=cols,
        design_tag=design_tag,
        n_tested=n_tested,
        n_controls=n_controls,
        q0_assumed=q0_assumed,
    )
