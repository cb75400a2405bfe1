"""Age-by-period grid: record binning, cohort diagonals, weighted aggregation.

Bins are half-open ``[lo, hi)`` except the terminal bin of each axis, which
is closed at its upper break so that short final intervals (e.g. a 3-year
closing period) cover their top year.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class GridError(ValueError):
    """Invalid grid specification or cohort scheme."""


class RecordRangeError(ValueError):
    """A record's age or year falls outside the grid's break ranges."""

    def __init__(self, message: str, record_id=None):
        super().__init__(message)
        self.record_id = record_id


class CsvSchemaError(ValueError):
    """CSV input is missing a required column."""

    def __init__(self, message: str, column: str):
        super().__init__(message)
        self.column = column


@dataclass(frozen=True, order=True)
class CellIndex:
    """One age-by-period cell, 1-based: age group ``i``, period ``j``."""

    i: int
    j: int


@dataclass(frozen=True)
class GridSpec:
    """Age and period binning plus labels for the diagonal cohorts.

    ``age_breaks`` of length a+1 define a age groups; ``period_breaks`` of
    length p+1 define p periods. ``cohort_labels`` (optional) must have
    exactly a+p-1 entries, ordered from the oldest cohort (bottom-left
    diagonal) to the youngest (top-right).
    """

    age_breaks: tuple[int, ...]
    period_breaks: tuple[int, ...]
    cohort_labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "age_breaks", tuple(int(b) for b in self.age_breaks))
        object.__setattr__(self, "period_breaks", tuple(int(b) for b in self.period_breaks))
        for name, breaks in (("age_breaks", self.age_breaks), ("period_breaks", self.period_breaks)):
            if len(breaks) < 3:
                raise GridError(f"{name} must define at least 2 bins, got {len(breaks) - 1}")
            if any(b1 >= b2 for b1, b2 in zip(breaks, breaks[1:])):
                raise GridError(f"{name} must be strictly increasing, got {breaks}")
        labels = tuple(str(s) for s in self.cohort_labels)
        if not labels:
            labels = tuple(str(k) for k in range(1, self.n_cohorts + 1))
        elif len(labels) != self.n_cohorts:
            raise GridError(
                f"cohort_labels needs {self.n_cohorts} entries (a+p-1), got {len(labels)}"
            )
        object.__setattr__(self, "cohort_labels", labels)

    @property
    def n_age(self) -> int:
        return len(self.age_breaks) - 1

    @property
    def n_period(self) -> int:
        return len(self.period_breaks) - 1

    @property
    def n_cohorts(self) -> int:
        return self.n_age + self.n_period - 1

    @property
    def age_labels(self) -> tuple[str, ...]:
        return _bin_labels(self.age_breaks)

    @property
    def period_labels(self) -> tuple[str, ...]:
        return _bin_labels(self.period_breaks)

    def cells(self) -> Iterator[CellIndex]:
        """All cells in row-major order."""
        for i in range(1, self.n_age + 1):
            for j in range(1, self.n_period + 1):
                yield CellIndex(i, j)

    def to_dict(self) -> dict:
        return {
            "age_breaks": list(self.age_breaks),
            "period_breaks": list(self.period_breaks),
            "cohort_labels": list(self.cohort_labels),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        try:
            return cls(
                age_breaks=tuple(d["age_breaks"]),
                period_breaks=tuple(d["period_breaks"]),
                cohort_labels=tuple(d.get("cohort_labels", ())),
            )
        except KeyError as exc:
            raise GridError(f"grid config missing key {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "GridSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _bin_labels(breaks: Sequence[int]) -> tuple[str, ...]:
    labels = [f"{lo}-{hi - 1}" if hi - 1 > lo else f"{lo}" for lo, hi in zip(breaks, breaks[1:])]
    lo, hi = breaks[-2], breaks[-1]
    labels[-1] = f"{lo}-{hi}" if hi > lo else f"{lo}"
    return tuple(labels)


@dataclass(frozen=True)
class MicroRecord:
    """One observation: outcome, integer age and calendar year, weight, covariate levels."""

    outcome: float
    age_years: int
    year: int
    weight: float = 1.0
    covariates: tuple = ()

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"negative weight {self.weight}")


@dataclass(frozen=True)
class CohortScheme:
    """Assignment of cells to cohorts.

    ``diagonal`` mode uses k = a - i + j. ``custom`` mode groups cells into
    bands via ``custom_map``; each band must be a union of consecutive whole
    diagonals so bands still read as cohorts.
    """

    mode: str = "diagonal"
    custom_map: Mapping[tuple[int, int], int] | None = None

    def __post_init__(self):
        if self.mode not in ("diagonal", "custom"):
            raise GridError(f"unknown cohort scheme mode {self.mode!r}")
        if self.mode == "custom" and not self.custom_map:
            raise GridError("custom cohort scheme requires custom_map")

    def validate(self, spec: GridSpec) -> None:
        if self.mode == "diagonal":
            return
        assigned = {(c.i, c.j) for c in spec.cells()}
        missing = assigned - set(self.custom_map)
        if missing:
            raise GridError(f"custom cohort scheme leaves cells unassigned: {sorted(missing)[:5]}")
        # Bands must be unions of consecutive complete diagonals.
        a = spec.n_age
        band_diags: dict[int, set[int]] = {}
        for (i, j), band in self.custom_map.items():
            band_diags.setdefault(band, set()).add(a - i + j)
        for band, diags in band_diags.items():
            lo, hi = min(diags), max(diags)
            if diags != set(range(lo, hi + 1)):
                raise GridError(f"cohort band {band} spans non-contiguous diagonals {sorted(diags)}")
            for k in diags:
                for cell in _diagonal(k, spec):
                    if self.custom_map[(cell.i, cell.j)] != band:
                        raise GridError(
                            f"cohort band {band} splits diagonal {k} at cell ({cell.i},{cell.j})"
                        )

    def cohort_ids(self, spec: GridSpec) -> list[int]:
        if self.mode == "diagonal":
            return list(range(1, spec.n_cohorts + 1))
        return sorted(set(self.custom_map.values()))

    def label(self, k, spec: GridSpec) -> str:
        if self.mode == "diagonal":
            return spec.cohort_labels[k - 1]
        return str(k)


DIAGONAL = CohortScheme()


def _bin_scalar(breaks: Sequence[int], value: float) -> int:
    """0-based bin of value, or -1 when outside [breaks[0], breaks[-1]]."""
    if value < breaks[0] or value > breaks[-1]:
        return -1
    if value == breaks[-1]:
        return len(breaks) - 2
    return int(np.searchsorted(breaks, value, side="right")) - 1


def bin_indices(spec: GridSpec, ages: np.ndarray, years: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized binning to 1-based (i, j); entries are 0 where out of range."""
    ages = np.asarray(ages)
    years = np.asarray(years)
    i = np.searchsorted(spec.age_breaks, ages, side="right")
    i[ages == spec.age_breaks[-1]] = spec.n_age
    i[(ages < spec.age_breaks[0]) | (ages > spec.age_breaks[-1])] = 0
    j = np.searchsorted(spec.period_breaks, years, side="right")
    j[years == spec.period_breaks[-1]] = spec.n_period
    j[(years < spec.period_breaks[0]) | (years > spec.period_breaks[-1])] = 0
    return i.astype(np.int64), j.astype(np.int64)


def bin_record(rec: MicroRecord, spec: GridSpec, record_id=None) -> CellIndex:
    """Map a record to its unique (i, j) cell, or raise RecordRangeError."""
    i = _bin_scalar(spec.age_breaks, rec.age_years)
    j = _bin_scalar(spec.period_breaks, rec.year)
    if i < 0 or j < 0:
        ident = record_id if record_id is not None else rec
        raise RecordRangeError(
            f"record {ident!r}: age {rec.age_years} / year {rec.year} outside grid ranges "
            f"[{spec.age_breaks[0]}, {spec.age_breaks[-1]}] x "
            f"[{spec.period_breaks[0]}, {spec.period_breaks[-1]}]",
            record_id=record_id,
        )
    return CellIndex(i + 1, j + 1)


def cohort_index(cell: CellIndex, spec: GridSpec, scheme: CohortScheme = DIAGONAL) -> int:
    """Cohort id of a cell: k = a - i + j in diagonal mode, band id in custom mode."""
    if not (1 <= cell.i <= spec.n_age and 1 <= cell.j <= spec.n_period):
        raise GridError(f"cell ({cell.i},{cell.j}) outside {spec.n_age}x{spec.n_period} grid")
    if scheme.mode == "diagonal":
        return spec.n_age - cell.i + cell.j
    return scheme.custom_map[(cell.i, cell.j)]


def _diagonal(k: int, spec: GridSpec) -> list[CellIndex]:
    return [
        CellIndex(spec.n_age - k + j, j)
        for j in range(max(1, k - spec.n_age + 1), min(spec.n_period, k) + 1)
    ]


def diagonal_cells(k, spec: GridSpec, scheme: CohortScheme = DIAGONAL) -> list[CellIndex]:
    """Cells of cohort k ordered by increasing period (equivalently, age within cohort)."""
    if scheme.mode == "diagonal":
        if not (1 <= k <= spec.n_cohorts):
            raise GridError(f"cohort id {k} outside 1..{spec.n_cohorts}")
        return _diagonal(k, spec)
    cells = [CellIndex(i, j) for (i, j), band in scheme.custom_map.items() if band == k]
    if not cells:
        raise GridError(f"unknown cohort band {k}")
    return sorted(cells, key=lambda c: (c.i, c.j))


@dataclass
class CellTable:
    """Weighted per-cell aggregates over an a-by-p grid; mergeable across chunks."""

    weight: np.ndarray
    outcome_sum: np.ndarray
    n_records: np.ndarray
    n_dropped: int = 0

    @classmethod
    def empty(cls, spec: GridSpec) -> "CellTable":
        shape = (spec.n_age, spec.n_period)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=np.int64))

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.weight > 0, self.outcome_sum / self.weight, np.nan)

    @property
    def is_empty(self) -> np.ndarray:
        return self.weight <= 0

    def merge(self, other: "CellTable") -> "CellTable":
        return CellTable(
            self.weight + other.weight,
            self.outcome_sum + other.outcome_sum,
            self.n_records + other.n_records,
            self.n_dropped + other.n_dropped,
        )


def aggregate(records: Iterable[MicroRecord], spec: GridSpec) -> CellTable:
    """Weighted aggregation of a record stream into the grid; drops (and counts) out-of-range records."""
    table = CellTable.empty(spec)
    for rec in records:
        try:
            cell = bin_record(rec, spec)
        except RecordRangeError:
            table.n_dropped += 1
            continue
        table.n_records[cell.i - 1, cell.j - 1] += 1
        table.weight[cell.i - 1, cell.j - 1] += rec.weight
        table.outcome_sum[cell.i - 1, cell.j - 1] += rec.weight * rec.outcome
    return table


@dataclass
class Dataset:
    """Columnar observations already binned to grid cells.

    ``age_idx``/``period_idx`` are 1-based cell coordinates. Covariate columns
    hold categorical level ids as strings. ``n_dropped`` counts records
    rejected on ingestion (missing fields or out-of-range age/year).
    """

    y: np.ndarray
    weight: np.ndarray
    age_idx: np.ndarray
    period_idx: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        n = len(self.y)
        for name, arr in [("weight", self.weight), ("age_idx", self.age_idx), ("period_idx", self.period_idx)]:
            if len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != outcome length {n}")
        for name, arr in self.covariates.items():
            if len(arr) != n:
                raise ValueError(f"covariate {name!r} length {len(arr)} != outcome length {n}")
        if np.any(self.weight < 0):
            raise ValueError("negative weights")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_obs(self) -> int:
        """Observations contributing to the fit: rows with positive weight."""
        return int(np.count_nonzero(self.weight > 0))

    @property
    def weighted_n(self) -> float:
        return float(self.weight.sum())

    @classmethod
    def from_records(
        cls,
        records: Iterable[MicroRecord],
        spec: GridSpec,
        covariate_names: Sequence[str] = (),
    ) -> "Dataset":
        ys, ws, ages, years, covs = [], [], [], [], []
        dropped = 0
        for rec in records:
            ys.append(rec.outcome)
            ws.append(rec.weight)
            ages.append(rec.age_years)
            years.append(rec.year)
            covs.append(rec.covariates)
        y = np.asarray(ys, dtype=float)
        w = np.asarray(ws, dtype=float)
        i, j = bin_indices(spec, np.asarray(ages), np.asarray(years))
        keep = (i > 0) & (j > 0)
        dropped = int(np.count_nonzero(~keep))
        if covariate_names and any(len(cv) < len(covariate_names) for cv in covs):
            raise ValueError(
                f"records carry fewer covariate values than the {len(covariate_names)} named columns"
            )
        cov_cols = {}
        for c, name in enumerate(covariate_names):
            col = np.asarray([str(cv[c]) for cv in covs], dtype=object)
            cov_cols[name] = col[keep]
        return cls(y[keep], w[keep], i[keep], j[keep], cov_cols, n_dropped=dropped)

    @classmethod
    def from_csv(
        cls,
        path,
        spec: GridSpec,
        covariate_names: Sequence[str] = (),
    ) -> "Dataset":
        """Load ``outcome,age,year[,weight][,covariates...]`` CSV; header required.

        Rows with a missing or non-numeric required field are dropped and
        counted, as are rows outside the grid ranges.
        """
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in ("outcome", "age", "year", *covariate_names):
                if col not in header:
                    raise CsvSchemaError(f"{Path(path).name}: missing required column {col!r}", col)
            has_weight = "weight" in header
            ys, ws, ages, years = [], [], [], []
            cov_lists: dict[str, list] = {name: [] for name in covariate_names}
            dropped = 0
            for row in reader:
                try:
                    y = float(row["outcome"])
                    age = int(float(row["age"]))
                    year = int(float(row["year"]))
                    w = float(row["weight"]) if has_weight and row["weight"] not in ("", None) else 1.0
                    cov_vals = []
                    for name in covariate_names:
                        v = row[name]
                        if v is None or v == "":
                            raise ValueError(f"missing {name}")
                        cov_vals.append(str(v))
                except (TypeError, ValueError):
                    dropped += 1
                    continue
                if w < 0:
                    dropped += 1
                    continue
                ys.append(y)
                ws.append(w)
                ages.append(age)
                years.append(year)
                for name, v in zip(covariate_names, cov_vals):
                    cov_lists[name].append(v)
        y = np.asarray(ys, dtype=float)
        w = np.asarray(ws, dtype=float)
        i, j = bin_indices(spec, np.asarray(ages, dtype=np.int64), np.asarray(years, dtype=np.int64))
        keep = (i > 0) & (j > 0)
        dropped += int(np.count_nonzero(~keep))
        covs = {name: np.asarray(vals, dtype=object)[keep] for name, vals in cov_lists.items()}
        return cls(y[keep], w[keep], i[keep], j[keep], covs, n_dropped=dropped)

    @classmethod
    def from_cell_values(cls, values: np.ndarray, weights: np.ndarray | None = None) -> "Dataset":
        """One observation per cell (e.g. an aggregated rate table)."""
        values = np.asarray(values, dtype=float)
        a, p = values.shape
        i, j = np.meshgrid(np.arange(1, a + 1), np.arange(1, p + 1), indexing="ij")
        w = np.ones(a * p) if weights is None else np.asarray(weights, dtype=float).reshape(a * p)
        return cls(values.reshape(a * p), w, i.reshape(a * p), j.reshape(a * p))

    def cell_table(self, spec: GridSpec) -> CellTable:
        shape = (spec.n_age, spec.n_period)
        flat = (self.age_idx - 1) * spec.n_period + (self.period_idx - 1)
        weight = np.bincount(flat, weights=self.weight, minlength=shape[0] * shape[1])
        wsum = np.bincount(flat, weights=self.weight * self.y, minlength=shape[0] * shape[1])
        n = np.bincount(flat, minlength=shape[0] * shape[1])
        return CellTable(
            weight.reshape(shape), wsum.reshape(shape), n.reshape(shape), n_dropped=self.n_dropped
        )
