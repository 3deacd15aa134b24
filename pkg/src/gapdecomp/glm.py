"""Linear and logistic model fitting from scratch.

Linear models solve the normal equations directly; logistic models use
iteratively reweighted least squares (Newton steps on the Bernoulli
deviance). Both fall back to a tiny ridge jitter when the underlying
system is singular, and record that in their diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-6
RIDGE_JITTER = 1e-8
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
# tighter internal clip keeps IRLS working weights strictly positive
_IRLS_P_CLIP = 1e-10


class EstimationError(RuntimeError):
    """Raised when a fit cannot proceed at all."""


@dataclass
class GlmFit:
    family: str                  # "linear" | "logistic"
    coef: np.ndarray
    colnames: list
    iterations: int = 0
    deviance: float = float("nan")
    converged: bool = True
    ridged: bool = False
    degenerate: bool = False
    fixed_response: float = None  # set for degenerate logistic fits

    def diagnostics(self) -> dict:
        return {
            "family": self.family,
            "iterations": self.iterations,
            "deviance": self.deviance,
            "converged": self.converged,
            "ridged": self.ridged,
            "degenerate": self.degenerate,
        }


def _solve_spd(A: np.ndarray, b: np.ndarray):
    """Solve A x = b for symmetric positive definite A via Cholesky.

    Returns (x, ridged): on a singular system the diagonal gets a
    RIDGE_JITTER bump and ridged comes back True.
    """
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(A + RIDGE_JITTER * np.eye(A.shape[0]))
        ridged = True
    else:
        ridged = False
    z = np.linalg.solve(L, b)
    x = np.linalg.solve(L.T, z)
    return x, ridged


def fit_linear(X: np.ndarray, y: np.ndarray, colnames=None) -> GlmFit:
    """Least squares through the normal equations."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise EstimationError("design/response shape mismatch")
    coef, ridged = _solve_spd(X.T @ X, X.T @ y)
    resid = y - X @ coef
    return GlmFit("linear", coef, list(colnames or []), iterations=1,
                  deviance=float(resid @ resid), ridged=ridged)


def _bernoulli_deviance(y, p):
    p = np.clip(p, _IRLS_P_CLIP, 1.0 - _IRLS_P_CLIP)
    return float(-2.0 * np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def sigmoid(eta):
    out = np.empty_like(eta, dtype=np.float64)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def fit_logistic(X: np.ndarray, y: np.ndarray, colnames=None,
                 tol=IRLS_TOL, max_iter=IRLS_MAX_ITER) -> GlmFit:
    """Logistic regression by IRLS.

    Convergence on |deviance change| < tol. A singular weighted Hessian
    gets the ridge jitter. All-0 or all-1 responses short-circuit to the
    logit of the clipped prevalence on the intercept (flagged degenerate).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise EstimationError("design/response shape mismatch")
    if not np.isin(np.unique(y), (0.0, 1.0)).all():
        raise EstimationError("logistic response must be 0/1")
    n, p = X.shape
    ybar = float(y.mean())
    if ybar in (0.0, 1.0):
        prev = min(max(ybar, PROB_FLOOR), 1.0 - PROB_FLOOR)
        coef = np.zeros(p)
        const = [j for j in range(p) if np.all(X[:, j] == X[0, j]) and X[0, j] != 0.0]
        if const:
            coef[const[0]] = math.log(prev / (1.0 - prev)) / X[0, const[0]]
        fit = GlmFit("logistic", coef, list(colnames or []), iterations=0,
                     deviance=_bernoulli_deviance(y, np.full(n, prev)),
                     degenerate=True, fixed_response=prev)
        return fit

    coef = np.zeros(p)
    eta = X @ coef
    prob = sigmoid(eta)
    dev = _bernoulli_deviance(y, prob)
    ridged = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.clip(prob * (1.0 - prob), _IRLS_P_CLIP, None)
        H = (X * w[:, None]).T @ X
        grad = X.T @ (y - prob)
        step, r = _solve_spd(H, grad)
        ridged = ridged or r
        new_coef = coef + step
        new_prob = sigmoid(X @ new_coef)
        new_dev = _bernoulli_deviance(y, new_prob)
        halves = 0
        while new_dev > dev and halves < 10:
            step = step / 2.0
            new_coef = coef + step
            new_prob = sigmoid(X @ new_coef)
            new_dev = _bernoulli_deviance(y, new_prob)
            halves += 1
        delta = dev - new_dev
        coef, prob, dev = new_coef, new_prob, new_dev
        if abs(delta) < tol:
            converged = True
            break
    return GlmFit("logistic", coef, list(colnames or []), iterations=it,
                  deviance=dev, converged=converged, ridged=ridged)


def predict_glm(fit: GlmFit, X: np.ndarray) -> np.ndarray:
    """Predictions on the response scale; probabilities are clipped."""
    X = np.asarray(X, dtype=np.float64)
    if fit.family == "linear":
        return X @ fit.coef
    if fit.degenerate and fit.fixed_response is not None:
        return np.full(X.shape[0], fit.fixed_response)
    return np.clip(sigmoid(X @ fit.coef), PROB_FLOOR, 1.0 - PROB_FLOOR)
