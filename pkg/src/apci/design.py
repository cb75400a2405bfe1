"""Coded regression designs for the interaction and accounting models.

Effect (sum-to-zero) coding drops each factor's last level and codes it -1
across that factor's columns; dummy coding drops a reference level (default:
the last). Interaction columns are elementwise products of the coded age and
period columns. Cell-level contrast vectors are built from the grid of
per-cell design rows with covariates held at their level average, which makes
every derived quantity (expanded effects, interaction cells, their standard
errors) coding-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .grid import CellIndex, Dataset, GridSpec


class DesignError(ValueError):
    """Design construction failed (bad coding, unknown level, degenerate factor)."""


@dataclass(frozen=True)
class Coding:
    """Categorical coding scheme; ``references`` maps factor name to reference level (dummy mode)."""

    kind: str = "effect"
    references: Mapping[str, object] | None = None

    def __post_init__(self):
        if self.kind not in ("effect", "dummy"):
            raise DesignError(f"unknown coding kind {self.kind!r}")

    def reference_pos(self, factor: str, levels: Sequence) -> int:
        """0-based position of the dropped/reference level for a factor."""
        if self.kind == "effect" or not self.references or factor not in self.references:
            return len(levels) - 1
        ref = self.references[factor]
        try:
            return list(levels).index(ref)
        except ValueError:
            raise DesignError(f"reference level {ref!r} not among {factor} levels {list(levels)}")


EFFECT = Coding("effect")
DUMMY = Coding("dummy")


def _coded_rows(n_levels: int, kind: str, ref_pos: int) -> np.ndarray:
    """(n_levels, n_levels-1) matrix of coded values, one row per level."""
    keep = [l for l in range(n_levels) if l != ref_pos]
    rows = np.zeros((n_levels, n_levels - 1))
    for c, l in enumerate(keep):
        rows[l, c] = 1.0
    if kind == "effect":
        rows[ref_pos, :] = -1.0
    return rows


@dataclass(frozen=True)
class TermLayout:
    """Column bookkeeping for the interaction-model design.

    Column order: intercept, age mains (a-1), period mains (p-1), covariate
    mains (levels-1 each), then the (a-1)(p-1) age-by-period interaction
    columns. ``columns`` tags each column with its term and level indices.
    """

    a: int
    p: int
    coding: Coding
    covariates: tuple[tuple[str, tuple], ...] = ()
    interaction: bool = True
    columns: tuple[tuple, ...] = field(init=False)

    def __post_init__(self):
        age_levels = list(range(1, self.a + 1))
        period_levels = list(range(1, self.p + 1))
        age_keep = [l for l in age_levels if l - 1 != self.coding.reference_pos("age", age_levels)]
        per_keep = [l for l in period_levels if l - 1 != self.coding.reference_pos("period", period_levels)]
        tags: list[tuple] = [("intercept",)]
        tags += [("age", l) for l in age_keep]
        tags += [("period", l) for l in per_keep]
        for name, levels in self.covariates:
            if len(levels) < 2:
                raise DesignError(f"covariate {name!r} has a single level; no contrast possible")
            ref = self.coding.reference_pos(name, levels)
            tags += [("cov", name, lv) for pos, lv in enumerate(levels) if pos != ref]
        if self.interaction:
            tags += [("age:period", i, j) for i in age_keep for j in per_keep]
        if len(set(tags)) != len(tags):
            raise DesignError("duplicate column tags")
        object.__setattr__(self, "columns", tuple(tags))

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def column_index(self, tag: tuple) -> int:
        return self.columns.index(tag)

    def term_slice(self, term: str) -> slice:
        idx = [c for c, tag in enumerate(self.columns) if tag[0] == term]
        if not idx:
            return slice(0, 0)
        return slice(idx[0], idx[-1] + 1)

    def to_json(self) -> list[list]:
        return [list(tag) for tag in self.columns]


@dataclass(frozen=True)
class AccountingLayout:
    """Columns for the additive age+period+cohort design: intercept, a-1, p-1, a+p-2."""

    a: int
    p: int
    coding: Coding
    columns: tuple[tuple, ...] = field(init=False)

    def __post_init__(self):
        n_cohorts = self.a + self.p - 1
        age_keep = [l for l in range(1, self.a + 1) if l - 1 != self.coding.reference_pos("age", range(1, self.a + 1))]
        per_keep = [l for l in range(1, self.p + 1) if l - 1 != self.coding.reference_pos("period", range(1, self.p + 1))]
        coh_keep = [l for l in range(1, n_cohorts + 1) if l - 1 != self.coding.reference_pos("cohort", range(1, n_cohorts + 1))]
        tags = [("intercept",)]
        tags += [("age", l) for l in age_keep]
        tags += [("period", l) for l in per_keep]
        tags += [("cohort", l) for l in coh_keep]
        object.__setattr__(self, "columns", tuple(tags))

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def term_slice(self, term: str) -> slice:
        idx = [c for c, tag in enumerate(self.columns) if tag[0] == term]
        return slice(idx[0], idx[-1] + 1) if idx else slice(0, 0)

    def to_json(self) -> list[list]:
        return [list(tag) for tag in self.columns]


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric design matrix plus its column layout."""

    X: np.ndarray
    layout: TermLayout | AccountingLayout

    def __post_init__(self):
        if not np.all(np.isfinite(self.X)):
            raise DesignError("design matrix has non-finite entries")
        if self.X.ndim != 2 or self.X.shape[1] != self.layout.n_columns:
            raise DesignError(
                f"design shape {self.X.shape} does not match layout with {self.layout.n_columns} columns"
            )


def covariate_levels(data: Dataset, names: Sequence[str]) -> tuple[tuple[str, tuple], ...]:
    """Sorted unique levels per covariate column (numeric order when possible)."""
    out = []
    for name in names:
        if name not in data.covariates:
            raise DesignError(f"dataset has no covariate column {name!r}")
        levels = sorted(set(data.covariates[name].tolist()))
        try:
            levels = sorted(levels, key=float)
        except (TypeError, ValueError):
            pass
        out.append((name, tuple(levels)))
    return tuple(out)


def apci_layout(
    spec: GridSpec,
    coding: Coding = EFFECT,
    covariates: Sequence[tuple[str, Sequence]] = (),
    interaction: bool = True,
) -> TermLayout:
    covs = tuple((name, tuple(levels)) for name, levels in covariates)
    return TermLayout(spec.n_age, spec.n_period, coding, covs, interaction)


def _factor_codes(layout: TermLayout) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    age = _coded_rows(layout.a, layout.coding.kind, layout.coding.reference_pos("age", range(1, layout.a + 1)))
    per = _coded_rows(layout.p, layout.coding.kind, layout.coding.reference_pos("period", range(1, layout.p + 1)))
    covs = {
        name: _coded_rows(len(levels), layout.coding.kind, layout.coding.reference_pos(name, levels))
        for name, levels in layout.covariates
    }
    return age, per, covs


def build_apci_design(data: Dataset, layout: TermLayout) -> DesignMatrix:
    """Row-per-observation design per the layout's column order."""
    n = len(data)
    age_codes, per_codes, cov_codes = _factor_codes(layout)
    blocks = [np.ones((n, 1))]
    A = age_codes[data.age_idx - 1]
    P = per_codes[data.period_idx - 1]
    blocks += [A, P]
    for name, levels in layout.covariates:
        pos = _level_positions(data.covariates[name], levels, name)
        blocks.append(cov_codes[name][pos])
    if layout.interaction:
        blocks.append((A[:, :, None] * P[:, None, :]).reshape(n, -1))
    return DesignMatrix(np.concatenate(blocks, axis=1), layout)


def _level_positions(column: np.ndarray, levels: tuple, name: str) -> np.ndarray:
    lookup = {lv: pos for pos, lv in enumerate(levels)}
    try:
        return np.asarray([lookup[v] for v in column.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise DesignError(f"covariate {name!r} has level {exc} not in layout levels {levels}")


def build_accounting_design(
    data: Dataset | None,
    spec: GridSpec,
    coding: Coding = EFFECT,
) -> DesignMatrix:
    """Additive age+period+cohort design; one row per grid cell when data is None."""
    layout = AccountingLayout(spec.n_age, spec.n_period, coding)
    if data is None:
        i_idx, j_idx = np.meshgrid(
            np.arange(1, spec.n_age + 1), np.arange(1, spec.n_period + 1), indexing="ij"
        )
        i_idx, j_idx = i_idx.reshape(-1), j_idx.reshape(-1)
    else:
        i_idx, j_idx = data.age_idx, data.period_idx
    k_idx = spec.n_age - i_idx + j_idx
    n_cohorts = spec.n_age + spec.n_period - 1
    age = _coded_rows(spec.n_age, coding.kind, coding.reference_pos("age", range(1, spec.n_age + 1)))
    per = _coded_rows(spec.n_period, coding.kind, coding.reference_pos("period", range(1, spec.n_period + 1)))
    coh = _coded_rows(n_cohorts, coding.kind, coding.reference_pos("cohort", range(1, n_cohorts + 1)))
    X = np.concatenate(
        [np.ones((len(i_idx), 1)), age[i_idx - 1], per[j_idx - 1], coh[k_idx - 1]], axis=1
    )
    return DesignMatrix(X, layout)


def cell_design_rows(layout: TermLayout) -> np.ndarray:
    """(a, p, n_columns) design rows for every grid cell, covariates at their level average.

    Averaging a covariate's coded rows over its levels makes the resulting
    predictor coding-independent, so contrasts built from these rows agree
    between effect and dummy coding.
    """
    age_codes, per_codes, cov_codes = _factor_codes(layout)
    a, p = layout.a, layout.p
    rows = np.zeros((a, p, layout.n_columns))
    rows[:, :, 0] = 1.0
    s = layout.term_slice("age")
    rows[:, :, s] = age_codes[:, None, :]
    s = layout.term_slice("period")
    rows[:, :, s] = per_codes[None, :, :]
    col = 1 + (a - 1) + (p - 1)
    for name, levels in layout.covariates:
        width = len(levels) - 1
        rows[:, :, col : col + width] = cov_codes[name].mean(axis=0)
        col += width
    if layout.interaction:
        inter = (age_codes[:, None, :, None] * per_codes[None, :, None, :]).reshape(a, p, -1)
        rows[:, :, col:] = inter
    return rows


def cell_contrast(cell: CellIndex, layout: TermLayout, part: str = "interaction_only") -> np.ndarray:
    """Contrast c such that c @ beta is the cell's interaction deviation or full cell predictor.

    ``interaction_only`` subtracts the cell row's grid row/column means and
    adds back the grand mean, which reproduces the sum-to-zero interaction
    value for every cell including the implied last row/column.
    """
    rows = cell_design_rows(layout)
    x = rows[cell.i - 1, cell.j - 1]
    if part == "full_mean":
        return x
    if part != "interaction_only":
        raise ValueError(f"unknown contrast part {part!r}")
    return x - rows[cell.i - 1].mean(axis=0) - rows[:, cell.j - 1].mean(axis=0) + rows.mean(axis=(0, 1))


def intercept_contrast(layout: TermLayout) -> np.ndarray:
    """Contrast for the grand mean across all cells (covariates averaged out)."""
    return cell_design_rows(layout).mean(axis=(0, 1))


def age_effect_contrast(i: int, layout: TermLayout) -> np.ndarray:
    """Contrast for the sum-to-zero age effect of level i (implied last level included)."""
    rows = cell_design_rows(layout)
    return rows[i - 1].mean(axis=0) - rows.mean(axis=(0, 1))


def period_effect_contrast(j: int, layout: TermLayout) -> np.ndarray:
    rows = cell_design_rows(layout)
    return rows[:, j - 1].mean(axis=0) - rows.mean(axis=(0, 1))


def covariate_effect_contrast(layout: TermLayout, name: str, level) -> np.ndarray:
    """Contrast for a covariate level's sum-to-zero effect."""
    for cov_name, levels in layout.covariates:
        if cov_name == name:
            break
    else:
        raise DesignError(f"layout has no covariate {name!r}")
    if level not in levels:
        raise DesignError(f"covariate {name!r} has no level {level!r}")
    codes = _coded_rows(len(levels), layout.coding.kind, layout.coding.reference_pos(name, levels))
    c = np.zeros(layout.n_columns)
    s = _covariate_slice(layout, name)
    c[s] = codes[levels.index(level)] - codes.mean(axis=0)
    return c


def _covariate_slice(layout: TermLayout, name: str) -> slice:
    col = 1 + (layout.a - 1) + (layout.p - 1)
    for cov_name, levels in layout.covariates:
        width = len(levels) - 1
        if cov_name == name:
            return slice(col, col + width)
        col += width
    raise DesignError(f"layout has no covariate {name!r}")


def rank_and_nullspace(X: np.ndarray | DesignMatrix, tol: float | None = None) -> tuple[int, np.ndarray]:
    """Numerical rank and an orthonormal null-space basis (columns) by SVD."""
    A = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if A.size == 0:
        return 0, np.zeros((A.shape[1], 0))
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    if tol is None:
        tol = max(A.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    rank = int(np.sum(s > tol))
    return rank, vt[rank:].T.copy()
