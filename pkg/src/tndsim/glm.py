"""Weighted logistic regression fit by Newton-Raphson / IRLS.

This is the numeric engine behind every analysis in the package. It accepts
fractional responses in [0, 1] (a quasi-binomial score), per-observation
nonnegative weights, and reports the model-based covariance at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.linalg.lapack import dpstrf

COEF_TOL = 1e-8
SCORE_TOL = 1e-8
MAX_ITERATIONS = 100
SEPARATION_GUARD = 30.0
RANK_PIVOT_RTOL = 1e-10


class GlmError(Exception):
    """Base class for logistic-fit failures."""


class RankDeficientError(GlmError):
    """The weighted design matrix is singular to working precision."""


class SeparationError(GlmError):
    """Coefficients diverged past the magnitude guard; the MLE does not exist."""


class ConvergenceError(GlmError):
    """Newton iterations exhausted without meeting the score tolerance."""


def expit(x):
    """Inverse logit 1 / (1 + exp(-x)), saturating at the floating-point extremes."""
    return special.expit(x)


def logit(p):
    """log(p / (1 - p)) for p in (0, 1)."""
    return special.logit(p)


@dataclass(frozen=True)
class DesignMatrix:
    """Dense regressor matrix with named columns (intercept first when present)."""

    values: np.ndarray
    column_labels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("design values must be a 2-d array")
        if values.shape[1] != len(self.column_labels):
            raise ValueError(
                f"{values.shape[1]} columns but {len(self.column_labels)} labels"
            )
        if values.shape[1] < 1:
            raise ValueError("design must have at least one column")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_labels", tuple(self.column_labels))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def columns(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Coefficients and diagnostics from one weighted logistic fit.

    ``covariance`` is the inverse of the weighted observed information at the
    optimum (model-based; on the caller's weight scale). ``final_score_norm``
    is the max-abs weighted score on the caller's weight scale.
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    final_score_norm: float
    column_labels: tuple[str, ...] = ()

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.column_labels.index(label)])


def _check_rank(xw: np.ndarray) -> None:
    """Pivoted-Cholesky rank check on the weighted cross-product matrix."""
    a = np.array(xw, order="F")
    scale = float(np.max(np.diag(a)))
    if scale <= 0.0:
        raise RankDeficientError("weighted design has no mass")
    _, _, rank, _ = dpstrf(a, lower=1, tol=RANK_PIVOT_RTOL * scale)
    if rank < xw.shape[0]:
        raise RankDeficientError(
            f"weighted design has rank {rank} < {xw.shape[0]} columns"
        )


def fit_weighted_logistic(
    design: DesignMatrix,
    response: np.ndarray,
    weights: np.ndarray | None = None,
) -> FitResult:
    """Solve the weighted logistic score equations by Newton-Raphson.

    The returned coefficients b satisfy sum_i w_i * d_i * (r_i - expit(d_i b)) = 0
    up to tolerance, where d_i is row i of the design and r_i the response.
    Responses may be fractional (fitted probabilities are valid responses).
    Convergence is checked on weights normalized to unit mean, so rescaling
    all weights by a positive constant does not change the fit.

    Raises RankDeficientError, SeparationError, or ConvergenceError.
    """
    x = design.values
    r = np.asarray(response, dtype=float)
    if r.shape != (design.rows,):
        raise ValueError("response length must equal design row count")
    if np.any((r < 0.0) | (r > 1.0)) or not np.all(np.isfinite(r)):
        raise ValueError("response entries must lie in [0, 1]")
    if weights is None:
        w = np.ones(design.rows)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (design.rows,):
            raise ValueError("weights length must equal design row count")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
    w_mean = float(np.mean(w))
    if w_mean <= 0.0:
        raise ValueError("at least one weight must be positive")
    if design.rows < design.columns:
        raise ValueError("fewer rows than columns; cannot fit")
    wn = w / w_mean

    active = r[w > 0]
    if np.all(active == 0.0) or np.all(active == 1.0):
        raise SeparationError(
            "response is constant 0 or 1 on the weighted rows; the MLE is at infinity"
        )

    _check_rank((x.T * wn) @ x * 0.25)

    beta = np.zeros(design.columns)
    score_norm = np.inf
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        p = expit(x @ beta)
        score = x.T @ (wn * (r - p))
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= 0.1 * SCORE_TOL:
            break
        curvature = wn * p * (1.0 - p)
        hessian = (x.T * curvature) @ x
        try:
            delta = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            raise SeparationError(
                "weighted information became singular (saturated probabilities)"
            ) from None
        beta = beta + delta
        if np.max(np.abs(beta)) > SEPARATION_GUARD:
            raise SeparationError(
                f"coefficient magnitude exceeded {SEPARATION_GUARD} on the logit scale"
            )
        if np.max(np.abs(delta)) < COEF_TOL and score_norm <= SCORE_TOL:
            p = expit(x @ beta)
            score_norm = float(np.max(np.abs(x.T @ (wn * (r - p)))))
            break

    converged = score_norm <= SCORE_TOL
    if not converged:
        raise ConvergenceError(
            f"no convergence after {iterations} iterations "
            f"(score norm {score_norm:.3e})"
        )

    p = expit(x @ beta)
    info = (x.T * (w * p * (1.0 - p))) @ x
    covariance = np.linalg.inv(info)
    covariance = 0.5 * (covariance + covariance.T)
    raw_score_norm = float(np.max(np.abs(x.T @ (w * (r - p)))))
    return FitResult(
        coefficients=beta,
        covariance=covariance,
        converged=True,
        iterations=iterations,
        final_score_norm=raw_score_norm,
        column_labels=design.column_labels,
    )


def predict(fit: FitResult, design: DesignMatrix) -> np.ndarray:
    """Fitted probabilities expit(design @ coefficients)."""
    if design.columns != fit.coefficients.shape[0]:
        raise ValueError(
            f"design has {design.columns} columns; fit has "
            f"{fit.coefficients.shape[0]} coefficients"
        )
    return expit(design.values @ fit.coefficients)


def wald_interval(
    fit: FitResult, coefficient_index: int, level: float = 0.95
) -> tuple[float, float]:
    """Symmetric normal-approximation interval for one coefficient."""
    if not fit.converged:
        raise GlmError("Wald interval requires a converged fit")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    estimate = float(fit.coefficients[coefficient_index])
    se = float(np.sqrt(fit.covariance[coefficient_index, coefficient_index]))
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return (estimate - z * se, estimate + z * se)
