"""Weighted GLM fitting by IRLS plus deviance-ratio F and contrast t tests.

Weights are treated as precision/frequency weights inside the working
weights (pseudo-likelihood); design-based variance estimation is out of
scope and flagged in fit metadata. The Gaussian-identity fit reproduces
weighted least squares exactly; the binomial-logit dispersion is fixed at 1,
so the deviance-ratio F reduces to the classical F in the Gaussian case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .design import DesignMatrix, TermLayout


class GlmError(RuntimeError):
    pass


class RankDeficientError(GlmError):
    """Weighted design is numerically rank deficient."""


class SeparationError(GlmError):
    """Logit coefficients diverging: some fitted probabilities are pinned at 0/1."""


class ConvergenceError(GlmError):
    """IRLS failed to converge within the iteration cap."""


class NonNestedError(ValueError):
    """Deviance test inputs are not a nested pair."""


class DegenerateContrastError(ValueError):
    """Contrast variance is zero or negative within tolerance."""


# Relative deviance-change convergence threshold; small fixed designs
# converge in well under 10 iterations.
DEVIANCE_TOL = 1e-10
MAX_ITER = 50
# |eta| beyond this means fitted probabilities pinned within ~2e-9 of 0/1;
# separated fits cross it before their deviance can stabilize numerically.
ETA_LIMIT = 20.0


@dataclass(frozen=True)
class Family:
    """Outcome family: Gaussian with identity link or binomial with logit link."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("gaussian_identity", "binomial_logit"):
            raise ValueError(f"unknown family {self.kind!r}")

    @property
    def is_logit(self) -> bool:
        return self.kind == "binomial_logit"

    def inverse_link(self, eta: np.ndarray) -> np.ndarray:
        if self.is_logit:
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    def link(self, mu: np.ndarray) -> np.ndarray:
        if self.is_logit:
            return np.log(mu / (1.0 - mu))
        return mu

    def deviance(self, y: np.ndarray, mu: np.ndarray, w: np.ndarray) -> float:
        if self.is_logit:
            # Binary outcomes: the saturated log-likelihood is zero.
            mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
            return float(-2.0 * np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))
        return float(np.sum(w * (y - mu) ** 2))


GAUSSIAN = Family("gaussian_identity")
LOGIT = Family("binomial_logit")


@dataclass
class FitResult:
    """One GLM fit: coefficients, their covariance, deviance, and df bookkeeping."""

    coef: np.ndarray
    cov: np.ndarray
    deviance: float
    df_resid: float
    n_obs: int
    weighted_n: float
    dispersion: float
    iterations: int
    converged: bool
    family: Family
    layout: TermLayout | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def to_dict(self) -> dict:
        return {
            "family": self.family.kind,
            "columns": self.layout.to_json() if self.layout is not None else None,
            "coef": self.coef.tolist(),
            "se": self.se.tolist(),
            "deviance": self.deviance,
            "df_resid": self.df_resid,
            "n_obs": self.n_obs,
            "weighted_n": self.weighted_n,
            "dispersion": self.dispersion,
            "iterations": self.iterations,
            "converged": self.converged,
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class TestResult:
    """A single hypothesis test; ``df2`` is None for t and Wald chi-square tests."""

    __test__ = False  # keep pytest from collecting this as a test class

    statistic: float
    df1: float
    df2: float | None
    p_value: float
    kind: str
    estimate: float | None = None
    se: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "df1": self.df1,
            "df2": self.df2,
            "p_value": self.p_value,
            "estimate": self.estimate,
            "se": self.se,
        }


def _qr_solve(A: np.ndarray, b: np.ndarray):
    """Least squares via column-pivoted QR; raises on numerical rank deficiency."""
    if A.shape[0] < A.shape[1]:
        raise RankDeficientError(
            f"{A.shape[0]} positive-weight observations cannot identify {A.shape[1]} columns"
        )
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or diag.min() <= tol:
        deficient = [int(piv[c]) for c in range(len(diag)) if diag[c] <= tol]
        raise RankDeficientError(
            f"design is rank deficient (pivoted-QR diagnostic; dependent columns ~ {deficient})"
        )
    coef = np.empty(A.shape[1])
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ b)
    rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    xtx_inv = np.empty_like(rinv)
    xtx_inv[np.ix_(piv, piv)] = rinv @ rinv.T
    return coef, xtx_inv


def fit(
    X: np.ndarray | DesignMatrix,
    y: np.ndarray,
    w: np.ndarray | None = None,
    family: Family = GAUSSIAN,
    *,
    n_obs: int | None = None,
    max_iter: int = MAX_ITER,
    tol: float = DEVIANCE_TOL,
    layout: TermLayout | None = None,
) -> FitResult:
    """Fit a weighted GLM by iteratively reweighted least squares.

    ``n_obs`` overrides the effective observation count used for residual
    degrees of freedom (needed when rows were pre-aggregated with frequency
    weights); it defaults to the number of positive-weight rows.
    """
    if isinstance(X, DesignMatrix):
        if layout is None and isinstance(X.layout, TermLayout):
            layout = X.layout
        X = X.X
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    active = w > 0
    if n_obs is None:
        n_obs = int(np.count_nonzero(active))
    Xa, ya, wa = X[active], y[active], w[active]
    if family.is_logit and not np.all((ya == 0.0) | (ya == 1.0)):
        raise ValueError("logit family requires binary 0/1 outcomes")

    if family.is_logit:
        mu = (ya + 0.5) / 2.0
        eta = family.link(mu)
    else:
        mu = ya.copy()
        eta = mu
    dev = np.inf
    coef = np.zeros(X.shape[1])
    xtx_inv = None
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        if family.is_logit:
            dmu = mu * (1.0 - mu)
            z = eta + (ya - mu) / dmu
            wk = wa * dmu
        else:
            z = ya
            wk = wa
        sw = np.sqrt(wk)
        coef, xtx_inv = _qr_solve(Xa * sw[:, None], z * sw)
        eta = Xa @ coef
        if family.is_logit and np.max(np.abs(eta)) > ETA_LIMIT:
            raise SeparationError(
                f"fitted log odds diverged beyond +/-{ETA_LIMIT:.0f}; data are (quasi-)separated "
                "(some cells or level combinations have all-0 or all-1 outcomes)"
            )
        mu = family.inverse_link(eta)
        new_dev = family.deviance(ya, mu, wa)
        if np.isfinite(dev) and abs(dev - new_dev) <= tol * (abs(new_dev) + 1.0):
            dev = new_dev
            converged = True
            break
        dev = new_dev
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (deviance {dev:.6g})")

    df_resid = n_obs - X.shape[1]
    if df_resid < 0:
        raise GlmError(f"negative residual df: {n_obs} observations, {X.shape[1]} columns")
    # Saturated Gaussian fits have no residual df: dispersion (and hence the
    # covariance) is undefined and reported as NaN rather than guessed.
    dispersion = 1.0 if family.is_logit else (dev / df_resid if df_resid > 0 else np.nan)
    cov = dispersion * xtx_inv
    return FitResult(
        coef=coef,
        cov=cov,
        deviance=dev,
        df_resid=df_resid,
        n_obs=n_obs,
        weighted_n=float(w.sum()),
        dispersion=float(dispersion),
        iterations=iteration,
        converged=converged,
        family=family,
        layout=layout,
        metadata={"weights": "precision", "variance": "model-based (no survey design adjustment)"},
    )


def deviance_f_test(fit_null: FitResult, fit_full: FitResult) -> TestResult:
    """Deviance-ratio F test of a null model nested in a full model.

    F = ((D0 - D1)/df1) / (D1/df2) with df1 the df drop and df2 the full
    model's residual df; for logit fits this generalizes the classical F by
    replacing residual sums of squares with deviances.
    """
    if fit_null.family.kind != fit_full.family.kind:
        raise NonNestedError("fits use different families")
    if fit_null.n_obs != fit_full.n_obs:
        raise NonNestedError(f"fits use different data ({fit_null.n_obs} vs {fit_full.n_obs} observations)")
    df1 = fit_null.df_resid - fit_full.df_resid
    ddev = fit_null.deviance - fit_full.deviance
    scale = abs(fit_full.deviance) + 1.0
    if df1 < 0:
        raise NonNestedError(f"null model has more parameters than full model (df1 = {df1})")
    if df1 == 0:
        if abs(ddev) > 1e-8 * scale:
            raise NonNestedError("models have equal df but different deviance; not a nested pair")
        return TestResult(0.0, 0.0, fit_full.df_resid, 1.0, "F")
    if ddev < -1e-8 * scale:
        raise GlmError(
            f"full model fits worse than null (deviance increase {-ddev:.6g}); fitting failure"
        )
    df2 = fit_full.df_resid
    denom = fit_full.deviance / df2 if df2 > 0 else np.nan
    if not np.isfinite(denom) or denom <= 0:
        # Saturated full model fit exactly; any improvement is infinitely significant.
        stat = np.inf if ddev > 0 else 0.0
        return TestResult(stat, float(df1), float(df2), 0.0 if ddev > 0 else 1.0, "F")
    stat = max(ddev, 0.0) / df1 / denom
    p = float(stats.f.sf(stat, df1, df2))
    return TestResult(float(stat), float(df1), float(df2), p, "F")


def contrast_t_test(fit_result: FitResult, c: np.ndarray, kind: str = "t") -> TestResult:
    """t test (or Wald chi-square with ``kind='wald_chi2'``) of c @ beta = 0."""
    c = np.asarray(c, dtype=float)
    if c.shape != fit_result.coef.shape:
        raise ValueError(f"contrast length {c.shape} does not match {fit_result.coef.shape} coefficients")
    estimate = float(c @ fit_result.coef)
    var = float(c @ fit_result.cov @ c)
    scale = float(np.max(np.abs(np.diag(fit_result.cov))) * (c @ c))
    if var <= max(scale, 1.0) * 1e-14:
        raise DegenerateContrastError(f"contrast variance {var:.3g} is zero within tolerance")
    se = np.sqrt(var)
    if kind == "wald_chi2":
        stat = (estimate / se) ** 2
        p = float(stats.chi2.sf(stat, 1))
        return TestResult(float(stat), 1.0, None, p, "wald_chi2", estimate, float(se))
    if kind != "t":
        raise ValueError(f"unknown contrast test kind {kind!r}")
    stat = estimate / se
    p = float(2.0 * stats.t.sf(abs(stat), fit_result.df_resid))
    return TestResult(float(stat), float(fit_result.df_resid), None, p, "t", estimate, float(se))


def wald_chi2_test(fit_result: FitResult, C: np.ndarray) -> TestResult:
    """Wald chi-square test of the joint hypothesis C @ beta = 0."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    est = C @ fit_result.coef
    V = C @ fit_result.cov @ C.T
    stat = float(est @ np.linalg.solve(V, est))
    df = C.shape[0]
    return TestResult(stat, float(df), None, float(stats.chi2.sf(stat, df)), "wald_chi2")


def predict(fit_result: FitResult, X_new: np.ndarray | DesignMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Linear predictors and response-scale means for new design rows."""
    if isinstance(X_new, DesignMatrix):
        if (
            fit_result.layout is not None
            and isinstance(X_new.layout, TermLayout)
            and X_new.layout.columns != fit_result.layout.columns
        ):
            raise ValueError("design layout does not match the fitted layout")
        X_new = X_new.X
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[None, :]
    if X_new.shape[1] != len(fit_result.coef):
        raise ValueError(
            f"design has {X_new.shape[1]} columns, fit has {len(fit_result.coef)} coefficients"
        )
    eta = X_new @ fit_result.coef
    return eta, fit_result.family.inverse_link(eta)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
