"""Synthetic micro data with known effect structure, plus a demonstration
that the additive age+period+cohort design admits infinitely many equivalent
solutions while the interaction design does not.

All randomness comes from numpy's default PCG64 generator seeded per cell
with ``[seed, i, j]``, so generation is reproducible and partitionable by
cell.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .design import Coding, EFFECT, build_accounting_design, rank_and_nullspace
from .glm import Family, GAUSSIAN, LOGIT
from .grid import Dataset, GridSpec, MicroRecord


class EffectsError(ValueError):
    """Invalid simulation effects (zero-sum violation, bad sizes, bad family)."""


def _check_zero_sum(name: str, total: float, tol: float = 1e-9):
    if abs(total) > tol:
        raise EffectsError(f"{name} must sum to zero, got sum {total:.3g}")


@dataclass
class TrueEffects:
    """Known generating effects on the linear-predictor scale.

    ``alpha``/``beta`` sum to zero; ``interaction`` rows and columns each sum
    to zero. ``covariates`` maps a name to per-level effects (also summing to
    zero); levels are drawn uniformly and labeled "0", "1", .... ``weights``
    is ("constant", c) or ("uniform", lo, hi). ``noise_scale`` is the
    Gaussian outcome standard deviation.
    """

    spec: GridSpec
    mu: float = 0.0
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    interaction: np.ndarray | None = None
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    family: Family = LOGIT
    cell_n: int | np.ndarray = 100
    weights: tuple = ("constant", 1.0)
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        a, p = self.spec.n_age, self.spec.n_period
        self.alpha = np.zeros(a) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        self.beta = np.zeros(p) if self.beta is None else np.asarray(self.beta, dtype=float)
        self.interaction = (
            np.zeros((a, p)) if self.interaction is None else np.asarray(self.interaction, dtype=float)
        )
        if self.alpha.shape != (a,):
            raise EffectsError(f"alpha must have length {a}, got {self.alpha.shape}")
        if self.beta.shape != (p,):
            raise EffectsError(f"beta must have length {p}, got {self.beta.shape}")
        if self.interaction.shape != (a, p):
            raise EffectsError(f"interaction must be {a}x{p}, got {self.interaction.shape}")
        _check_zero_sum("alpha", float(self.alpha.sum()))
        _check_zero_sum("beta", float(self.beta.sum()))
        for i, s in enumerate(self.interaction.sum(axis=1), start=1):
            _check_zero_sum(f"interaction row {i}", float(s))
        for j, s in enumerate(self.interaction.sum(axis=0), start=1):
            _check_zero_sum(f"interaction column {j}", float(s))
        self.covariates = {name: np.asarray(eff, dtype=float) for name, eff in self.covariates.items()}
        for name, eff in self.covariates.items():
            if len(eff) < 2:
                raise EffectsError(f"covariate {name!r} needs at least 2 levels")
            _check_zero_sum(f"covariate {name!r}", float(eff.sum()))
        n = np.asarray(self.cell_n)
        if np.any(n < 1):
            raise EffectsError("per-cell sample sizes must be >= 1")
        if self.weights[0] not in ("constant", "uniform"):
            raise EffectsError(f"unknown weight distribution {self.weights[0]!r}")
        if self.noise_scale <= 0:
            raise EffectsError("noise_scale must be positive")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates)

    def cell_counts(self) -> np.ndarray:
        a, p = self.spec.n_age, self.spec.n_period
        return np.broadcast_to(np.asarray(self.cell_n, dtype=np.int64), (a, p))

    def to_dict(self) -> dict:
        return {
            "grid": self.spec.to_dict(),
            "mu": self.mu,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "interaction": self.interaction.tolist(),
            "covariates": {k: v.tolist() for k, v in self.covariates.items()},
            "family": "logit" if self.family.is_logit else "gaussian",
            "cell_n": self.cell_n if np.isscalar(self.cell_n) else np.asarray(self.cell_n).tolist(),
            "weights": list(self.weights),
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrueEffects":
        family = {"logit": LOGIT, "gaussian": GAUSSIAN}.get(d.get("family", "logit"))
        if family is None:
            raise EffectsError(f"unknown family {d.get('family')!r}")
        cell_n = d.get("cell_n", 100)
        return cls(
            spec=GridSpec.from_dict(d["grid"]),
            mu=float(d.get("mu", 0.0)),
            alpha=d.get("alpha"),
            beta=d.get("beta"),
            interaction=d.get("interaction"),
            covariates={k: np.asarray(v, dtype=float) for k, v in d.get("covariates", {}).items()},
            family=family,
            cell_n=cell_n if np.isscalar(cell_n) else np.asarray(cell_n),
            weights=tuple(d.get("weights", ("constant", 1.0))),
            noise_scale=float(d.get("noise_scale", 1.0)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path) -> "TrueEffects":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_scenario(cell_n: int = 500, seed: int = 7, family: Family = LOGIT) -> TrueEffects:
    """A 9-age by 6-period logit scenario with 14 cohorts and interaction
    magnitudes capped at 0.3, mirroring a typical repeated cross-section grid."""
    spec = GridSpec(
        age_breaks=(20, 25, 30, 35, 40, 45, 50, 55, 60, 64),
        period_breaks=(1990, 1995, 2000, 2005, 2010, 2015, 2017),
        cohort_labels=tuple(str(y) for y in range(1930, 2000, 5)),
    )
    alpha = np.array([-0.15, 0.20, 0.30, 0.35, 0.30, 0.25, 0.05, -0.40, -0.90])
    alpha -= alpha.mean()
    beta = np.array([-0.10, 0.01, 0.05, 0.03, 0.01, 0.0])
    beta -= beta.mean()
    u = np.linspace(-1.0, 1.0, spec.n_age)
    v = np.linspace(-1.0, 1.0, spec.n_period)
    u2 = u**2 - np.mean(u**2)
    v2 = v**2 - np.mean(v**2)
    raw = np.outer(u, -v) + 0.5 * np.outer(u2, v)
    inter = 0.3 * raw / np.max(np.abs(raw))
    return TrueEffects(
        spec=spec,
        mu=0.9,
        alpha=alpha,
        beta=beta,
        interaction=inter,
        family=family,
        cell_n=cell_n,
        seed=seed,
    )


def _cell_eta(effects: TrueEffects, i: int, j: int) -> float:
    return float(effects.mu + effects.alpha[i - 1] + effects.beta[j - 1] + effects.interaction[i - 1, j - 1])


def _bin_bounds(breaks: Sequence[int], idx0: int) -> tuple[int, int]:
    """Inclusive integer bounds of a bin (last bin closed at its upper break)."""
    lo, hi = breaks[idx0], breaks[idx0 + 1]
    return (lo, hi) if idx0 == len(breaks) - 2 else (lo, hi - 1)


def _cell_draws(effects: TrueEffects, i: int, j: int, rng: np.random.Generator):
    """Vector draws for one cell: outcomes, weights, ages, years, covariate levels."""
    spec = effects.spec
    n = int(effects.cell_counts()[i - 1, j - 1])
    lo, hi = _bin_bounds(spec.age_breaks, i - 1)
    ages = rng.integers(lo, hi + 1, size=n)
    lo, hi = _bin_bounds(spec.period_breaks, j - 1)
    years = rng.integers(lo, hi + 1, size=n)
    eta = np.full(n, _cell_eta(effects, i, j))
    levels = {}
    for name, eff in effects.covariates.items():
        lv = rng.integers(0, len(eff), size=n)
        levels[name] = lv
        eta = eta + eff[lv]
    if effects.family.is_logit:
        mean = 1.0 / (1.0 + np.exp(-eta))
        if np.any(mean <= 0.0) or np.any(mean >= 1.0):
            raise EffectsError(
                f"cell ({i},{j}): linear predictor too extreme for a binary outcome (mean pinned at 0/1)"
            )
        y = (rng.random(n) < mean).astype(float)
    else:
        y = eta + effects.noise_scale * rng.standard_normal(n)
    if effects.weights[0] == "constant":
        w = np.full(n, float(effects.weights[1]))
    else:
        w = rng.uniform(float(effects.weights[1]), float(effects.weights[2]), size=n)
    return y, w, ages, years, levels


def generate(effects: TrueEffects) -> Iterator[MicroRecord]:
    """Stream records cell by cell; a fixed seed reproduces the stream exactly."""
    spec = effects.spec
    for i in range(1, spec.n_age + 1):
        for j in range(1, spec.n_period + 1):
            rng = np.random.default_rng([effects.seed, i, j])
            y, w, ages, years, levels = _cell_draws(effects, i, j, rng)
            names = effects.covariate_names
            for r in range(len(y)):
                yield MicroRecord(
                    outcome=float(y[r]),
                    age_years=int(ages[r]),
                    year=int(years[r]),
                    weight=float(w[r]),
                    covariates=tuple(str(levels[name][r]) for name in names),
                )


def simulate_dataset(effects: TrueEffects) -> Dataset:
    """Columnar equivalent of ``generate`` (same per-cell streams, no record objects)."""
    spec = effects.spec
    ys, ws, iis, jjs = [], [], [], []
    covs: dict[str, list] = {name: [] for name in effects.covariate_names}
    for i in range(1, spec.n_age + 1):
        for j in range(1, spec.n_period + 1):
            rng = np.random.default_rng([effects.seed, i, j])
            y, w, _, _, levels = _cell_draws(effects, i, j, rng)
            ys.append(y)
            ws.append(w)
            iis.append(np.full(len(y), i, dtype=np.int64))
            jjs.append(np.full(len(y), j, dtype=np.int64))
            for name in covs:
                covs[name].append(levels[name])
    return Dataset(
        y=np.concatenate(ys),
        weight=np.concatenate(ws),
        age_idx=np.concatenate(iis),
        period_idx=np.concatenate(jjs),
        covariates={
            name: np.asarray([str(v) for v in np.concatenate(parts)], dtype=object)
            for name, parts in covs.items()
        },
    )


def write_records_csv(records, path, covariate_names: Sequence[str] = ()) -> int:
    """Write a record stream in the standard ``outcome,age,year,weight,...`` schema."""
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outcome", "age", "year", "weight", *covariate_names])
        for rec in records:
            writer.writerow(
                [_fmt(rec.outcome), rec.age_years, rec.year, _fmt(rec.weight), *rec.covariates]
            )
            n += 1
    return n


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass
class AccountingDemo:
    """Two distinct additive-model solutions with identical fitted cell means."""

    spec: GridSpec
    coding: Coding
    n_columns: int
    rank: int
    column_tags: tuple
    null_vector: np.ndarray
    solution_a: np.ndarray
    solution_b: np.ndarray
    lam: float
    fitted: np.ndarray
    max_fitted_diff: float
    term_support: dict[str, bool]

    @property
    def deficiency(self) -> int:
        return self.n_columns - self.rank


def accounting_demo(
    spec: "GridSpec | PolyDemoSpec", coding: Coding = EFFECT, lam: float = 1.0, seed: int = 0
) -> "AccountingDemo | PolyDemo":
    """Exhibit the additive design's rank deficiency on a complete grid.

    Fits a seeded synthetic cell-mean vector by minimum-norm least squares,
    then shifts the solution along the null direction; the two parameter
    vectors differ but produce identical fitted means. Given a PolyDemoSpec,
    runs the continuous-index polynomial version instead (see ``poly_demo``).
    """
    if isinstance(spec, PolyDemoSpec):
        return poly_demo(spec, shift=lam)
    dm = build_accounting_design(None, spec, coding)
    rank, nullspace = rank_and_nullspace(dm)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1.0, size=dm.X.shape[0])
    sol_a, *_ = np.linalg.lstsq(dm.X, y, rcond=None)
    if nullspace.shape[1] == 0:
        raise ValueError("design is full rank; nothing to demonstrate")
    v = nullspace[:, 0]
    sol_b = sol_a + lam * v
    fitted_a = dm.X @ sol_a
    fitted_b = dm.X @ sol_b
    support = {}
    for term in ("age", "period", "cohort"):
        s = dm.layout.term_slice(term)
        support[term] = bool(np.max(np.abs(v[s])) > 1e-8)
    return AccountingDemo(
        spec=spec,
        coding=coding,
        n_columns=dm.layout.n_columns,
        rank=rank,
        column_tags=dm.layout.columns,
        null_vector=v,
        solution_a=sol_a,
        solution_b=sol_b,
        lam=lam,
        fitted=fitted_a,
        max_fitted_diff=float(np.max(np.abs(fitted_a - fitted_b))),
        term_support=support,
    )


@dataclass(frozen=True)
class PolyDemoSpec:
    """Continuous-index polynomial with linear and quadratic age, period, and
    cohort terms, where cohort = period - age."""

    coef: tuple[float, float, float, float, float, float, float]
    ages: tuple[float, ...] = tuple(range(1, 6))
    periods: tuple[float, ...] = tuple(range(1, 6))

    def __post_init__(self):
        if len(self.coef) != 7:
            raise EffectsError(f"need 7 coefficients, got {len(self.coef)}")
        if not all(np.isfinite(self.coef)):
            raise EffectsError("coefficients must be finite")


@dataclass
class PolyDemo:
    """Term-by-term re-expression of cohort terms as age, period, and
    age-by-period pieces, plus a second coefficient set giving identical fits."""

    spec: PolyDemoSpec
    expanded_terms: dict[str, float]
    fitted: np.ndarray
    fitted_expanded: np.ndarray
    max_diff_expansion: float
    alt_coef: tuple[float, ...]
    shift: float
    max_diff_alt: float


def poly_demo(spec: PolyDemoSpec, shift: float = 1.0) -> PolyDemo:
    """Show that cohort = period - age folds the cohort terms into age,
    period, and an age-by-period cross term, leaving a free direction:
    shifting (linear age, linear period, linear cohort) by (t, -t, t)
    changes the coefficients but not one fitted value.
    """
    b0, b1, b2, b3, b4, b5, b6 = spec.coef
    a, p = np.meshgrid(np.asarray(spec.ages, float), np.asarray(spec.periods, float), indexing="ij")
    c = p - a
    fitted = b0 + b1 * a + b2 * a**2 + b3 * p + b4 * p**2 + b5 * c + b6 * c**2
    terms = {
        "intercept": b0,
        "age": b1 - b5,
        "age^2": b2 + b6,
        "period": b3 + b5,
        "period^2": b4 + b6,
        "age*period": -2.0 * b6,
    }
    fitted_expanded = (
        terms["intercept"]
        + terms["age"] * a
        + terms["age^2"] * a**2
        + terms["period"] * p
        + terms["period^2"] * p**2
        + terms["age*period"] * a * p
    )
    alt = (b0, b1 + shift, b2, b3 - shift, b4, b5 + shift, b6)
    fitted_alt = alt[0] + alt[1] * a + alt[2] * a**2 + alt[3] * p + alt[4] * p**2 + alt[5] * c + alt[6] * c**2
    return PolyDemo(
        spec=spec,
        expanded_terms=terms,
        fitted=fitted,
        fitted_expanded=fitted_expanded,
        max_diff_expansion=float(np.max(np.abs(fitted - fitted_expanded))),
        alt_coef=alt,
        shift=shift,
        max_diff_alt=float(np.max(np.abs(fitted - fitted_alt))),
    )
