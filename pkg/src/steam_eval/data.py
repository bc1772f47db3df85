"""Cohort containers, basis expansions and CSV ingestion.

A study has three cohorts sharing one covariate schema: the labeled source
sample, the unlabeled source sample and the unlabeled target sample. Every
design matrix carries a leading column of ones.

Target-row outcomes, when a file carries them, never enter
:class:`StudyData`; they are returned separately as
:class:`ValidationLabels` so estimation code cannot see them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class StudyDataError(ValueError):
    """Malformed cohort data. Carries the offending CSV row/column if known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.row = row
        self.column = column


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StudyData:
    """Labeled source, unlabeled source and target covariates.

    Matrices are ``(rows, p + 1)`` with an all-ones first column. Arrays are
    made read-only on construction.
    """

    labeled_x: np.ndarray
    y: np.ndarray
    unlabeled_x: np.ndarray
    target_x: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        lx = _frozen(self.labeled_x)
        ux = _frozen(self.unlabeled_x)
        tx = _frozen(self.target_x)
        y = _frozen(self.y)
        object.__setattr__(self, "labeled_x", lx)
        object.__setattr__(self, "unlabeled_x", ux)
        object.__setattr__(self, "target_x", tx)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

        for name, m in (("labeled_source", lx), ("unlabeled_source", ux), ("target", tx)):
            if m.ndim != 2:
                raise StudyDataError(f"{name} covariates must be a matrix")
            if m.shape[0] < 1:
                raise StudyDataError(f"empty cohort: {name}")
            if m.shape[1] != len(self.feature_names) + 1:
                raise StudyDataError(
                    f"{name} has {m.shape[1]} columns, expected {len(self.feature_names) + 1}"
                )
            if not np.all(m[:, 0] == 1.0):
                raise StudyDataError(f"{name} first column must be the all-ones intercept")
            if not np.all(np.isfinite(m)):
                raise StudyDataError(f"non-finite covariate value in {name}")
        if y.shape != (lx.shape[0],):
            raise StudyDataError("outcome vector length must match labeled rows")
        if not np.all((y == 0) | (y == 1)):
            raise StudyDataError("outcome values must be 0 or 1")

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def n(self) -> int:
        return self.labeled_x.shape[0]

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled_x.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_x.shape[0]

    def pooled_unlabeled(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack unlabeled source over target; return (design, S)."""
        x = np.vstack([self.unlabeled_x, self.target_x])
        s = np.concatenate([np.ones(self.n_unlabeled), np.zeros(self.n_target)])
        return x, s

    def subset(self, labeled=None, unlabeled=None, target=None) -> "StudyData":
        """Row-subset each cohort by index arrays (``None`` keeps all rows)."""
        sl = slice(None)
        lab = sl if labeled is None else labeled
        return StudyData(
            labeled_x=self.labeled_x[lab],
            y=self.y[lab],
            unlabeled_x=self.unlabeled_x[sl if unlabeled is None else unlabeled],
            target_x=self.target_x[sl if target is None else target],
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class ValidationLabels:
    """Outcomes for a subset of target rows, kept apart from :class:`StudyData`."""

    index: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "index", _frozen(self.index, dtype=np.int64))
        object.__setattr__(self, "y", _frozen(self.y))
        if self.index.shape != self.y.shape:
            raise StudyDataError("validation index and labels differ in length")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise StudyDataError("validation outcomes must be 0 or 1")

    def __len__(self) -> int:
        return self.index.shape[0]


@dataclass(frozen=True)
class BasisExpansion:
    """Pairwise-interaction columns appended to a design.

    Indices address design-matrix columns, so ``1..p`` are the raw
    covariates and ``0`` (the intercept) is not allowed. ``columns`` optionally
    restricts which raw covariates are kept (``None`` keeps all of them).
    """

    interactions: tuple[tuple[int, int], ...] = ()
    columns: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "interactions", tuple((int(a), int(b)) for a, b in self.interactions)
        )
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    def validate(self, p: int) -> None:
        for a, b in self.interactions:
            if a == b:
                raise StudyDataError(f"interaction ({a}, {b}) repeats a column")
            for idx in (a, b):
                if not 1 <= idx <= p:
                    raise StudyDataError(f"interaction index {idx} out of range 1..{p}")
        for c in self.columns or ():
            if not 1 <= c <= p:
                raise StudyDataError(f"column index {c} out of range 1..{p}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        keep = [0] + (list(self.columns) if self.columns is not None else list(range(1, x.shape[1])))
        parts = [x[:, keep]]
        if self.interactions:
            parts.append(np.column_stack([x[:, a] * x[:, b] for a, b in self.interactions]))
        return np.hstack(parts)

    def names(self, feature_names: Sequence[str]) -> tuple[str, ...]:
        cols = self.columns if self.columns is not None else range(1, len(feature_names) + 1)
        out = [feature_names[c - 1] for c in cols]
        out += [f"{feature_names[a - 1]}*{feature_names[b - 1]}" for a, b in self.interactions]
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "interactions": [list(t) for t in self.interactions],
            "columns": None if self.columns is None else list(self.columns),
        }


def expand_basis(data: StudyData, expansion: BasisExpansion) -> StudyData:
    """Append interaction columns to every cohort; the intercept stays first."""
    expansion.validate(data.p)
    return StudyData(
        labeled_x=expansion.apply(data.labeled_x),
        y=data.y,
        unlabeled_x=expansion.apply(data.unlabeled_x),
        target_x=expansion.apply(data.target_x),
        feature_names=expansion.names(data.feature_names),
    )


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_study_csv`."""

    s_col: str = "s"
    label_col: str = "labeled"
    y_col: str = "y"
    features: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "s_col": self.s_col,
            "label_col": self.label_col,
            "y_col": self.y_col,
            "features": None if self.features is None else list(self.features),
        }


def _parse_flag(text: str, row: int, column: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise StudyDataError(f"non-numeric value {text!r}", row, column) from None
    if v not in (0.0, 1.0):
        raise StudyDataError(f"value {text!r} outside {{0,1}}", row, column)
    return int(v)


@dataclass
class _Cohorts:
    lx: list = field(default_factory=list)
    y: list = field(default_factory=list)
    ux: list = field(default_factory=list)
    tx: list = field(default_factory=list)
    val_index: list = field(default_factory=list)
    val_y: list = field(default_factory=list)


def _read_cohorts(path, schema: CsvSchema) -> tuple[_Cohorts, tuple[str, ...]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StudyDataError(f"{path} is empty") from None
        for col in (schema.s_col, schema.label_col):
            if col not in header:
                raise StudyDataError(f"missing required column {col!r}")
        has_y = schema.y_col in header
        roles = {schema.s_col, schema.label_col, schema.y_col}
        features = schema.features or tuple(h for h in header if h not in roles)
        if not features:
            raise StudyDataError("no covariate columns")
        for f in features:
            if f not in header:
                raise StudyDataError(f"missing covariate column {f!r}")
        pos = {h: i for i, h in enumerate(header)}
        fidx = [pos[f] for f in features]

        out = _Cohorts()
        # data rows are numbered from 2 (row 1 is the header)
        for rownum, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise StudyDataError(f"expected {len(header)} fields, got {len(rec)}", rownum)
            s = _parse_flag(rec[pos[schema.s_col]].strip(), rownum, schema.s_col)
            lab = _parse_flag(rec[pos[schema.label_col]].strip(), rownum, schema.label_col)
            xs = [1.0]
            for f, i in zip(features, fidx):
                text = rec[i].strip()
                try:
                    v = float(text)
                except ValueError:
                    raise StudyDataError(f"non-numeric covariate {text!r}", rownum, f) from None
                if not np.isfinite(v):
                    raise StudyDataError(f"non-finite covariate {text!r}", rownum, f)
                xs.append(v)
            ytext = rec[pos[schema.y_col]].strip() if has_y else ""
            if s == 1 and lab == 1:
                if not ytext:
                    raise StudyDataError("missing outcome for labeled source row", rownum, schema.y_col)
                out.lx.append(xs)
                out.y.append(_parse_flag(ytext, rownum, schema.y_col))
            elif s == 1:
                out.ux.append(xs)
            else:
                if ytext:
                    out.val_index.append(len(out.tx))
                    out.val_y.append(_parse_flag(ytext, rownum, schema.y_col))
                out.tx.append(xs)
    return out, tuple(features)


def load_study_csv(path, schema: CsvSchema | None = None) -> StudyData:
    """Partition a flat CSV into the three cohorts.

    Rows with ``s=1, labeled=1`` form the labeled source sample (outcome
    required), ``s=1, labeled=0`` the unlabeled source sample and ``s=0`` the
    target. Target outcomes are ignored here; see
    :func:`load_validation_labels`.
    """
    schema = schema or CsvSchema()
    c, features = _read_cohorts(path, schema)
    for name, rows in (("labeled source", c.lx), ("unlabeled source", c.ux), ("target", c.tx)):
        if not rows:
            raise StudyDataError(f"empty cohort: {name}")
    return StudyData(
        labeled_x=np.array(c.lx, dtype=float),
        y=np.array(c.y, dtype=float),
        unlabeled_x=np.array(c.ux, dtype=float),
        target_x=np.array(c.tx, dtype=float),
        feature_names=features,
    )


def load_validation_labels(path, schema: CsvSchema | None = None) -> ValidationLabels | None:
    """Target-row outcomes present in the file, or ``None`` if there are none."""
    c, _ = _read_cohorts(path, schema or CsvSchema())
    if not c.val_index:
        return None
    return ValidationLabels(index=np.array(c.val_index), y=np.array(c.val_y, dtype=float))


def _fmt(v: float) -> str:
    return repr(float(v))


def save_study_csv(data: StudyData, path, validation: ValidationLabels | None = None,
                   schema: CsvSchema | None = None) -> None:
    """Write a study in the layout read by :func:`load_study_csv`.

    Floats use the shortest round-trip representation, so
    load -> save -> load reproduces every matrix exactly.
    """
    schema = schema or CsvSchema()
    val = {}
    if validation is not None:
        val = {int(i): int(v) for i, v in zip(validation.index, validation.y)}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.s_col, schema.label_col, schema.y_col, *data.feature_names])
        for x, y in zip(data.labeled_x, data.y):
            w.writerow(["1", "1", str(int(y)), *map(_fmt, x[1:])])
        for x in data.unlabeled_x:
            w.writerow(["1", "0", "", *map(_fmt, x[1:])])
        for i, x in enumerate(data.target_x):
            yv = str(val[i]) if i in val else ""
            w.writerow(["0", "0", yv, *map(_fmt, x[1:])])
