"""Age-by-period interaction model of cohort effects, with the three-step
inference procedure: a global interaction test, per-cohort deviation
magnitude tests, and averaged-deviation / life-course-trend contrasts with a
sign-based classification of within-cohort dynamics.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import design as dz
from . import glm
from .design import Coding, EFFECT, TermLayout, apci_layout, build_apci_design, cell_contrast, cell_design_rows
from .grid import CellIndex, CohortScheme, DIAGONAL, Dataset, GridSpec, diagonal_cells


class EmptyCellError(ValueError):
    """Some grid cells have no positive-weight observations."""

    def __init__(self, cells: list[tuple[str, str]]):
        self.cells = cells
        listed = "; ".join(f"(age {a}, period {p})" for a, p in cells[:10])
        more = "" if len(cells) <= 10 else f" and {len(cells) - 10} more"
        super().__init__(f"{len(cells)} empty grid cell(s): {listed}{more}")


class CrossoverWarning(UserWarning):
    """Some age groups' period trends run against the majority direction."""


class ShortCohortWarning(UserWarning):
    """Life-course trend estimated from two or fewer cells."""


CUMULATIVE_ADVANTAGE = "cumulative_advantage"
CUMULATIVE_DISADVANTAGE = "cumulative_disadvantage"
LEVELING = "leveling"
CONSTANT = "constant"
NO_CLEAR_PATTERN = "no_clear_pattern"
CLASSIFICATIONS = (CUMULATIVE_ADVANTAGE, CUMULATIVE_DISADVANTAGE, LEVELING, CONSTANT, NO_CLEAR_PATTERN)


def polynomial_contrast(o: int, order: int = 1) -> np.ndarray:
    """Unit-Euclidean-norm orthogonal polynomial contrast on o equally spaced points."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if o < order + 1:
        raise ValueError(f"need at least {order + 1} points for an order-{order} contrast, got {o}")
    x = np.arange(1.0, o + 1.0)
    basis = np.vander(x, order + 1, increasing=True)
    q, _ = np.linalg.qr(basis)
    c = q[:, order]
    c /= np.linalg.norm(c)
    # Positive leading coefficient: the last node's weight is positive.
    if c[-1] < 0:
        c = -c
    return c


def diagonal_values(
    matrix: np.ndarray, spec: GridSpec, k: int, scheme: CohortScheme = DIAGONAL
) -> np.ndarray:
    """Matrix entries along cohort k's cells, ordered by age within the cohort."""
    cells = diagonal_cells(k, spec, scheme)
    return np.asarray([matrix[c.i - 1, c.j - 1] for c in cells], dtype=float)


def diagonal_average(matrix: np.ndarray, spec: GridSpec, k: int, scheme: CohortScheme = DIAGONAL) -> float:
    return float(diagonal_values(matrix, spec, k, scheme).mean())


def diagonal_trend(
    matrix: np.ndarray, spec: GridSpec, k: int, order: int = 1, scheme: CohortScheme = DIAGONAL
) -> float:
    v = diagonal_values(matrix, spec, k, scheme)
    return float(polynomial_contrast(len(v), order) @ v)


@dataclass
class ApciFit:
    """Full interaction-model fit with effects expanded to every level and cell.

    The expanded interaction matrix covers all a*p cells (implied last
    row/column included); its rows and columns sum to zero. All expanded
    estimates and standard errors come from contrast vectors against the
    fitted coefficient covariance, so they are identical across coding
    schemes.
    """

    fit: glm.FitResult
    spec: GridSpec
    scheme: CohortScheme
    layout: TermLayout
    intercept: float
    intercept_se: float
    intercept_p: float
    age_effects: np.ndarray
    age_se: np.ndarray
    age_p: np.ndarray
    period_effects: np.ndarray
    period_se: np.ndarray
    period_p: np.ndarray
    covariate_effects: list[dict]
    interaction: np.ndarray
    interaction_se: np.ndarray
    interaction_p: np.ndarray
    crossover: bool
    metadata: dict = field(default_factory=dict)

    @property
    def family(self) -> glm.Family:
        return self.fit.family

    def cell_linear_predictors(self) -> np.ndarray:
        """(a, p) linear predictors per cell with covariates averaged out."""
        rows = cell_design_rows(self.layout)
        return rows @ self.fit.coef

    def cell_means(self) -> np.ndarray:
        """(a, p) response-scale cell means with covariates averaged out."""
        return self.family.inverse_link(self.cell_linear_predictors())

    def to_dict(self) -> dict:
        return {
            "fit": self.fit.to_dict(),
            "grid": self.spec.to_dict(),
            "intercept": {"estimate": self.intercept, "se": self.intercept_se, "p": self.intercept_p},
            "age": {
                "labels": list(self.spec.age_labels),
                "estimate": self.age_effects.tolist(),
                "se": self.age_se.tolist(),
                "p": self.age_p.tolist(),
            },
            "period": {
                "labels": list(self.spec.period_labels),
                "estimate": self.period_effects.tolist(),
                "se": self.period_se.tolist(),
                "p": self.period_p.tolist(),
            },
            "covariates": self.covariate_effects,
            "interaction_matrix": {
                "estimate": self.interaction.tolist(),
                "se": self.interaction_se.tolist(),
                "p": self.interaction_p.tolist(),
            },
            "crossover": self.crossover,
            "metadata": self.metadata,
        }


@dataclass
class _Prepared:
    """Model-ready data: possibly row-compressed, with full and mains-only designs."""

    data: Dataset
    n_obs: int
    layout_full: TermLayout
    layout_mains: TermLayout
    X_full: np.ndarray
    X_mains: np.ndarray


def _as_dataset(data, spec: GridSpec, covariates: Sequence[str]) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_records(data, spec, covariate_names=covariates)


def _compress_binary(data: Dataset, layouts_covs) -> Dataset:
    """Merge rows sharing (cell, covariate levels, outcome); weights add, likelihood unchanged."""
    cols = [data.age_idx.astype(np.int64), data.period_idx.astype(np.int64)]
    for name, levels in layouts_covs:
        cols.append(dz._level_positions(data.covariates[name], levels, name))
    cols.append(data.y.astype(np.int64))
    key = np.stack(cols, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    w = np.bincount(inv, weights=data.weight, minlength=len(uniq))
    covs = {
        name: np.asarray([levels[pos] for pos in uniq[:, 2 + c]], dtype=object)
        for c, (name, levels) in enumerate(layouts_covs)
    }
    return Dataset(
        y=uniq[:, -1].astype(float),
        weight=w,
        age_idx=uniq[:, 0],
        period_idx=uniq[:, 1],
        covariates=covs,
        n_dropped=data.n_dropped,
    )


def _prepare(
    data,
    spec: GridSpec,
    scheme: CohortScheme = DIAGONAL,
    coding: Coding = EFFECT,
    covariates: Sequence[str] = (),
    family: glm.Family = glm.LOGIT,
    n_obs: int | None = None,
) -> _Prepared:
    data = _as_dataset(data, spec, covariates)
    scheme.validate(spec)
    table = data.cell_table(spec)
    if np.any(table.is_empty):
        empties = [
            (spec.age_labels[i], spec.period_labels[j])
            for i, j in zip(*np.nonzero(table.is_empty))
        ]
        raise EmptyCellError(empties)
    cov_levels = dz.covariate_levels(data, covariates)
    if n_obs is None:
        n_obs = data.n_obs
    if family.is_logit:
        if not np.all((data.y == 0.0) | (data.y == 1.0)):
            raise ValueError("logit family requires binary 0/1 outcomes")
        data = _compress_binary(data, cov_levels)
    layout_full = apci_layout(spec, coding, cov_levels, interaction=True)
    layout_mains = apci_layout(spec, coding, cov_levels, interaction=False)
    X_full = build_apci_design(data, layout_full).X
    X_mains = X_full[:, : layout_mains.n_columns]
    return _Prepared(data, n_obs, layout_full, layout_mains, X_full, X_mains)


def _batch_tests(fit_result: glm.FitResult, C: np.ndarray):
    """Estimates, SEs, and two-sided t p-values for a stack of contrast rows."""
    est = C @ fit_result.coef
    var = np.einsum("ij,jk,ik->i", C, fit_result.cov, C)
    se = np.sqrt(np.clip(var, 0.0, None))
    t = np.zeros_like(est)
    ok = se > 0
    t[ok] = est[ok] / se[ok]
    t[~ok & (est != 0)] = np.inf
    p = 2.0 * stats.t.sf(np.abs(t), fit_result.df_resid)
    return est, se, p


def _detect_crossover(period_effects: np.ndarray, interaction: np.ndarray) -> bool:
    a, p = interaction.shape
    if p < 2:
        return False
    c = polynomial_contrast(p, 1)
    slopes = (period_effects[None, :] + interaction) @ c
    signs = np.sign(np.where(np.abs(slopes) > 1e-12, slopes, 0.0))
    nonzero = signs[signs != 0]
    if len(nonzero) == 0:
        return False
    majority = 1.0 if nonzero.sum() >= 0 else -1.0
    return bool(np.any(nonzero != majority))


def fit_apci(
    data,
    spec: GridSpec,
    *,
    scheme: CohortScheme = DIAGONAL,
    coding: Coding = EFFECT,
    covariates: Sequence[str] = (),
    family: glm.Family = glm.LOGIT,
    n_obs: int | None = None,
) -> ApciFit:
    """Fit the full interaction model and expand every effect to all levels/cells.

    Requires a positive weighted count in every grid cell. ``data`` is a
    Dataset or an iterable of MicroRecord (covariate tuple entries matched by
    position to ``covariates``). ``n_obs`` overrides the observation count
    used for degrees of freedom when rows are pre-aggregated with frequency
    weights (e.g. per-cell success/failure counts).
    """
    prep = _prepare(data, spec, scheme, coding, covariates, family, n_obs)
    fit_result = glm.fit(
        prep.X_full, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs, layout=prep.layout_full
    )
    return _expand(fit_result, spec, scheme, prep.layout_full)


def _expand(fit_result: glm.FitResult, spec: GridSpec, scheme: CohortScheme, layout: TermLayout) -> ApciFit:
    a, p = layout.a, layout.p
    rows = cell_design_rows(layout)
    grand = rows.mean(axis=(0, 1))
    age_C = rows.mean(axis=1) - grand
    per_C = rows.mean(axis=0) - grand
    inter_C = (
        rows
        - rows.mean(axis=1, keepdims=True)
        - rows.mean(axis=0, keepdims=True)
        + grand
    ).reshape(a * p, -1)

    mu_est, mu_se, mu_p = _batch_tests(fit_result, grand[None, :])
    age_est, age_se, age_p = _batch_tests(fit_result, age_C)
    per_est, per_se, per_p = _batch_tests(fit_result, per_C)
    int_est, int_se, int_p = _batch_tests(fit_result, inter_C)

    cov_effects = []
    for name, levels in layout.covariates:
        C = np.stack([dz.covariate_effect_contrast(layout, name, lv) for lv in levels])
        est, se, pv = _batch_tests(fit_result, C)
        cov_effects.append(
            {
                "name": name,
                "levels": [str(lv) for lv in levels],
                "estimate": est.tolist(),
                "se": se.tolist(),
                "p": pv.tolist(),
            }
        )

    interaction = int_est.reshape(a, p)
    crossover = _detect_crossover(per_est, interaction)
    if crossover:
        warnings.warn(
            "period trends reverse direction for some age groups (qualitative interaction); "
            "interpret age and period main effects with caution",
            CrossoverWarning,
            stacklevel=3,
        )
    return ApciFit(
        fit=fit_result,
        spec=spec,
        scheme=scheme,
        layout=layout,
        intercept=float(mu_est[0]),
        intercept_se=float(mu_se[0]),
        intercept_p=float(mu_p[0]),
        age_effects=age_est,
        age_se=age_se,
        age_p=age_p,
        period_effects=per_est,
        period_se=per_se,
        period_p=per_p,
        covariate_effects=cov_effects,
        interaction=interaction,
        interaction_se=int_se.reshape(a, p),
        interaction_p=int_p.reshape(a, p),
        crossover=crossover,
        metadata={
            "weights": "precision (pseudo-likelihood); no survey-design variance adjustment",
            "global_test": "deviance-ratio F",
            "step3_covariance": "full-model coefficient covariance",
            "life_course_contrast": "unit-norm orthogonal polynomial, equal spacing along the diagonal",
        },
    )


def step1_global_test(
    data,
    spec: GridSpec,
    *,
    scheme: CohortScheme = DIAGONAL,
    coding: Coding = EFFECT,
    covariates: Sequence[str] = (),
    family: glm.Family = glm.LOGIT,
    n_obs: int | None = None,
) -> glm.TestResult:
    """Deviance F test of the age-by-period interaction block: df1 = (a-1)(p-1)."""
    prep = _prepare(data, spec, scheme, coding, covariates, family, n_obs)
    fit_mains = glm.fit(prep.X_mains, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs)
    fit_full = glm.fit(prep.X_full, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs)
    return glm.deviance_f_test(fit_mains, fit_full)


def _cohort_indicators(prep: _Prepared, cells: list[CellIndex]) -> np.ndarray:
    cols = [
        ((prep.data.age_idx == c.i) & (prep.data.period_idx == c.j)).astype(float) for c in cells
    ]
    return np.column_stack(cols)


def _step2_from_prepared(
    prep: _Prepared, fit_mains: glm.FitResult, spec, scheme, k, family
) -> glm.TestResult:
    cells = diagonal_cells(k, spec, scheme)
    X_aug = np.hstack([prep.X_mains, _cohort_indicators(prep, cells)])
    try:
        fit_aug = glm.fit(X_aug, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs)
    except glm.RankDeficientError as exc:
        raise glm.RankDeficientError(
            f"cohort {k}: mains-plus-indicators design is rank deficient "
            f"(grid too small to identify {len(cells)} per-cell deviations); {exc}"
        ) from exc
    return glm.deviance_f_test(fit_mains, fit_aug)


def step2_cohort_test(
    data,
    spec: GridSpec,
    k: int,
    *,
    scheme: CohortScheme = DIAGONAL,
    coding: Coding = EFFECT,
    covariates: Sequence[str] = (),
    family: glm.Family = glm.LOGIT,
    n_obs: int | None = None,
) -> glm.TestResult:
    """Deviance F test of cohort k's o per-cell deviations from the main effects.

    The alternative adds one unconstrained indicator per cell on the cohort's
    diagonal to the main-effects model, so df1 = o and df2 = N - (mains + o).
    """
    prep = _prepare(data, spec, scheme, coding, covariates, family, n_obs)
    fit_mains = glm.fit(prep.X_mains, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs)
    return _step2_from_prepared(prep, fit_mains, spec, scheme, k, family)


def _average_contrast(fit: ApciFit, cells: list[CellIndex]) -> np.ndarray:
    C = np.stack([cell_contrast(c, fit.layout, "interaction_only") for c in cells])
    return C.mean(axis=0)


def _trend_contrast(fit: ApciFit, cells: list[CellIndex], order: int) -> np.ndarray:
    C = np.stack([cell_contrast(c, fit.layout, "interaction_only") for c in cells])
    return polynomial_contrast(len(cells), order) @ C


def step3_average_deviation(fit: ApciFit, k: int) -> glm.TestResult:
    """t test of the mean of cohort k's interaction terms (implied cells included)."""
    cells = diagonal_cells(k, fit.spec, fit.scheme)
    return glm.contrast_t_test(fit.fit, _average_contrast(fit, cells))


def step3_life_course_contrast(fit: ApciFit, k: int, order: str | int = "linear") -> glm.TestResult:
    """t test of the linear (or quadratic) trend along cohort k's diagonal, age-ordered."""
    order_n = {"linear": 1, "quadratic": 2}.get(order, order)
    if order_n not in (1, 2):
        raise ValueError(f"order must be 'linear' or 'quadratic', got {order!r}")
    cells = diagonal_cells(k, fit.spec, fit.scheme)
    o = len(cells)
    if o < order_n + 1:
        raise ValueError(
            f"cohort {k} has only {o} cell(s); no order-{order_n} life-course trend is estimable"
        )
    if o == 2:
        warnings.warn(
            f"cohort {k}: trend estimated from only two cells; treat as a weak indicator",
            ShortCohortWarning,
            stacklevel=2,
        )
    return glm.contrast_t_test(fit.fit, _trend_contrast(fit, cells, order_n))


def _test_sign(test: glm.TestResult | None, alpha: float) -> int:
    if test is None or test.p_value >= alpha or test.estimate == 0:
        return 0
    return 1 if test.estimate > 0 else -1


def classify_cohort(
    average: glm.TestResult | None, slope: glm.TestResult | None, alpha: float = 0.05
) -> str | None:
    """Map (average deviation, life-course slope) significance signs to a dynamics label."""
    if average is None or slope is None:
        return None
    s_avg = _test_sign(average, alpha)
    s_slope = _test_sign(slope, alpha)
    if s_avg == 0 and s_slope == 0:
        return NO_CLEAR_PATTERN
    if s_slope == 0:
        return CONSTANT
    if s_avg == 0:
        return LEVELING
    if s_avg == s_slope:
        return CUMULATIVE_ADVANTAGE if s_avg > 0 else CUMULATIVE_DISADVANTAGE
    return LEVELING


@dataclass
class CohortReport:
    """Per-cohort inference: magnitude test, average deviation, life-course trends.

    ``magnitude`` is None when the cohort's augmented design is structurally
    rank deficient (possible on very small grids); classification requires
    both the magnitude test and the contrast tests.
    """

    cohort_id: int
    label: str
    o: int
    cells: list[CellIndex]
    magnitude: glm.TestResult | None
    average: glm.TestResult
    slope: glm.TestResult | None
    quadratic: glm.TestResult | None
    classification: str | None
    short_cohort: bool
    no_slope: bool

    def to_dict(self) -> dict:
        return {
            "cohort_id": self.cohort_id,
            "label": self.label,
            "o": self.o,
            "cells": [[c.i, c.j] for c in self.cells],
            "magnitude": self.magnitude.to_dict() if self.magnitude else None,
            "average": self.average.to_dict(),
            "slope": self.slope.to_dict() if self.slope else None,
            "quadratic": self.quadratic.to_dict() if self.quadratic else None,
            "classification": self.classification,
            "short_cohort": self.short_cohort,
            "no_slope": self.no_slope,
        }


@dataclass
class ApciResult:
    """Everything the three-step procedure produces for one dataset."""

    fit: ApciFit
    global_test: glm.TestResult
    cohorts: list[CohortReport]
    alpha: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fit": self.fit.to_dict(),
            "interaction_matrix": self.fit.to_dict()["interaction_matrix"],
            "global_test": self.global_test.to_dict(),
            "cohorts": [c.to_dict() for c in self.cohorts],
            "alpha": self.alpha,
            "metadata": self.metadata,
        }


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("APCI_THREADS", "1")))
    except ValueError:
        return 1


def run_analysis(
    data,
    spec: GridSpec,
    *,
    scheme: CohortScheme = DIAGONAL,
    coding: Coding = EFFECT,
    covariates: Sequence[str] = (),
    family: glm.Family = glm.LOGIT,
    alpha: float = 0.05,
    quadratic: bool = True,
    threads: int | None = None,
    n_obs: int | None = None,
) -> ApciResult:
    """Fit the interaction model and run the full three-step procedure.

    Per-cohort magnitude refits are independent and run on up to
    ``APCI_THREADS`` worker threads (or the ``threads`` argument).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    prep = _prepare(data, spec, scheme, coding, covariates, family, n_obs)
    fit_mains = glm.fit(prep.X_mains, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs)
    fit_result = glm.fit(
        prep.X_full, prep.data.y, prep.data.weight, family, n_obs=prep.n_obs, layout=prep.layout_full
    )
    afit = _expand(fit_result, spec, scheme, prep.layout_full)
    global_test = glm.deviance_f_test(fit_mains, fit_result)

    cohort_ids = scheme.cohort_ids(spec)
    threads = _default_threads() if threads is None else max(1, threads)

    def one_magnitude(k):
        try:
            return _step2_from_prepared(prep, fit_mains, spec, scheme, k, family)
        except glm.RankDeficientError as exc:
            warnings.warn(
                f"skipping deviation magnitude test: {exc}", UserWarning, stacklevel=2
            )
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            magnitudes = list(pool.map(one_magnitude, cohort_ids))
    else:
        magnitudes = [one_magnitude(k) for k in cohort_ids]

    def safe_contrast(c, what, k):
        try:
            return glm.contrast_t_test(afit.fit, c)
        except glm.DegenerateContrastError:
            # Identically-zero contrast, e.g. the 2x2 main diagonal where the
            # sum-to-zero constraints force both cells to one parameter.
            warnings.warn(
                f"cohort {k}: {what} contrast is not estimable on this grid",
                UserWarning,
                stacklevel=3,
            )
            return None

    reports = []
    for k, magnitude in zip(cohort_ids, magnitudes):
        cells = diagonal_cells(k, spec, scheme)
        o = len(cells)
        average = glm.contrast_t_test(afit.fit, _average_contrast(afit, cells))
        slope = None
        quad = None
        if o >= 2:
            slope = safe_contrast(_trend_contrast(afit, cells, 1), "life-course trend", k)
        if quadratic and o >= 3:
            quad = safe_contrast(_trend_contrast(afit, cells, 2), "quadratic trend", k)
        classification = classify_cohort(average, slope, alpha) if magnitude is not None else None
        reports.append(
            CohortReport(
                cohort_id=k,
                label=scheme.label(k, spec),
                o=o,
                cells=cells,
                magnitude=magnitude,
                average=average,
                slope=slope,
                quadratic=quad,
                classification=classification,
                short_cohort=o <= 2,
                no_slope=o == 1,
            )
        )
    return ApciResult(
        fit=afit,
        global_test=global_test,
        cohorts=reports,
        alpha=alpha,
        metadata=dict(afit.metadata),
    )


def extract_patterns(fit: ApciFit, mode: str = "age_by_period") -> list[dict]:
    """Plot-ready rows of linear predictors and response-scale values.

    ``age_by_period``: one series per period over ages, intercept + age main
    + interaction. ``period_by_age``: one series per age over periods,
    intercept + period main + interaction. ``mains_only``: the age and period
    main-effect patterns around the intercept.
    """
    spec = fit.spec
    a, p = spec.n_age, spec.n_period
    inv = fit.family.inverse_link
    rows: list[dict] = []
    if mode == "age_by_period":
        for j in range(p):
            for i in range(a):
                eta = fit.intercept + fit.age_effects[i] + fit.interaction[i, j]
                rows.append(
                    {
                        "mode": mode,
                        "series": spec.period_labels[j],
                        "x_index": i + 1,
                        "x_label": spec.age_labels[i],
                        "linear_predictor": float(eta),
                        "value": float(inv(np.asarray(eta))),
                    }
                )
    elif mode == "period_by_age":
        for i in range(a):
            for j in range(p):
                eta = fit.intercept + fit.period_effects[j] + fit.interaction[i, j]
                rows.append(
                    {
                        "mode": mode,
                        "series": spec.age_labels[i],
                        "x_index": j + 1,
                        "x_label": spec.period_labels[j],
                        "linear_predictor": float(eta),
                        "value": float(inv(np.asarray(eta))),
                    }
                )
    elif mode == "mains_only":
        for i in range(a):
            eta = fit.intercept + fit.age_effects[i]
            rows.append(
                {
                    "mode": mode,
                    "series": "age",
                    "x_index": i + 1,
                    "x_label": spec.age_labels[i],
                    "linear_predictor": float(eta),
                    "value": float(inv(np.asarray(eta))),
                }
            )
        for j in range(p):
            eta = fit.intercept + fit.period_effects[j]
            rows.append(
                {
                    "mode": mode,
                    "series": "period",
                    "x_index": j + 1,
                    "x_label": spec.period_labels[j],
                    "linear_predictor": float(eta),
                    "value": float(inv(np.asarray(eta))),
                }
            )
    else:
        raise ValueError(f"unknown pattern mode {mode!r}")
    return rows


def tukey_additivity_test(cell_means: np.ndarray) -> glm.TestResult:
    """One-degree-of-freedom nonadditivity test for a table with one Gaussian
    observation per cell.

    Fits additive row/column effects, then tests the single product term
    r_i * c_j against the remaining residual with df (1, (a-1)(p-1) - 1).
    """
    y = np.asarray(cell_means, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] < 2:
        raise ValueError("need a 2-D table with at least 2 rows and 2 columns")
    a, p = y.shape
    df2 = (a - 1) * (p - 1) - 1
    if df2 < 1:
        raise ValueError("table too small: (a-1)(p-1) must exceed 1")
    grand = y.mean()
    r = y.mean(axis=1) - grand
    c = y.mean(axis=0) - grand
    e = y - grand - r[:, None] - c[None, :]
    ss_resid = float(np.sum(e**2))
    scale = float(np.sum((y - grand) ** 2)) + 1e-300
    denom = float(np.sum(r**2) * np.sum(c**2))
    if denom <= 0:
        warnings.warn(
            "all row or column effects are zero; nonadditivity statistic set to 0",
            UserWarning,
            stacklevel=2,
        )
        return glm.TestResult(0.0, 1.0, float(df2), 1.0, "F", estimate=0.0)
    ss_nonadd = float(np.sum(e * np.outer(r, c))) ** 2 / denom
    if ss_resid <= 1e-12 * scale:
        # Exactly additive table: no residual, no nonadditivity.
        return glm.TestResult(0.0, 1.0, float(df2), 1.0, "F", estimate=0.0)
    remainder = (ss_resid - ss_nonadd) / df2
    if remainder <= 1e-12 * scale:
        # Perfectly multiplicative table: the product term absorbs all residual.
        return glm.TestResult(np.inf, 1.0, float(df2), 0.0, "F", estimate=ss_nonadd)
    stat = ss_nonadd / remainder
    return glm.TestResult(
        float(stat), 1.0, float(df2), float(stats.f.sf(stat, 1, df2)), "F", estimate=ss_nonadd
    )
