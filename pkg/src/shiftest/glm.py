"""Weighted linear and logistic regression with optional offset.

These are the parametric workhorses behind the nuisance fits and the two
logistic tilting submodels. Design matrices are taken as given: callers
add an intercept column when they want one, which lets the tilting steps
fit single-covariate, no-intercept models against an offset.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .solver import expit

MAX_ABS_COEF = 30.0  # beyond this a logistic fit is treated as separated


class GlmError(ValueError):
    pass


@dataclass
class GlmFit:
    coefficients: np.ndarray
    family: str
    converged: bool = True
    iterations: int = 0
    offset_used: bool = False
    residual_variance: float = None

    def linear_predictor(self, X, offset=None):
        eta = np.asarray(X, dtype=np.float64) @ self.coefficients
        if offset is not None:
            eta = eta + offset
        return eta

    def predict(self, X, offset=None):
        """Response-scale predictions; binomial output is clamped away from 0/1."""
        eta = self.linear_predictor(X, offset)
        if self.family == "binomial":
            return np.clip(expit(eta), 1e-6, 1.0 - 1e-6)
        return eta


def _check_rows(X, y, weights):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not (X.shape[0] == y.size == w.size):
        raise GlmError("X, y and weights must have matching row counts")
    if np.any(w < 0):
        raise GlmError("weights must be nonnegative")
    if float(w.sum()) <= 0.0:
        raise GlmError("weights sum to zero")
    return X, y, w


def fit_wls(X, y, weights):
    """Weighted least squares; rank-deficient designs raise with column ids.

    Returns a gaussian :class:`GlmFit` whose ``residual_variance`` is the
    weighted mean squared residual.
    """
    X, y, w = _check_rows(X, y, weights)
    keep = w > 0
    Xk, yk, wk = X[keep], y[keep], w[keep]
    sw = np.sqrt(wk)
    Xs = Xk * sw[:, None]
    ys = yk * sw
    if Xk.shape[1] > 0:
        _, R, piv = scipy.linalg.qr(Xs, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(Xs.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int((diag > tol).sum())
        if rank < Xk.shape[1]:
            bad = sorted(int(j) for j in piv[rank:])
            raise GlmError(f"rank-deficient design: collinear columns {bad}")
        coef, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
    else:
        coef = np.zeros(0)
    resid = yk - Xk @ coef
    var = float(wk @ (resid * resid)) / float(wk.sum())
    return GlmFit(
        coefficients=coef,
        family="gaussian",
        converged=True,
        iterations=0,
        residual_variance=var,
    )


def fit_logistic(X, y, weights, offset=None, max_iter=100, tol=1e-8):
    """Weighted logistic regression by IRLS with step-halving.

    ``y`` may be fractional in [0, 1]. Convergence is measured on the
    sup-norm of the weighted-mean score; weights are internally normalized
    so rescaling them leaves the fit unchanged. Separation (a coefficient
    walking past ``MAX_ABS_COEF``) is reported via ``converged=False``
    with coefficients clamped.
    """
    X, y, w = _check_rows(X, y, weights)
    if np.any((y < 0) | (y > 1)):
        raise GlmError("binomial response values must lie in [0, 1]")
    n, m = X.shape
    if offset is None:
        off = np.zeros(n)
        offset_used = False
    else:
        off = np.asarray(offset, dtype=np.float64).ravel()
        if off.size != n:
            raise GlmError("offset length mismatch")
        offset_used = True
    u = w / float(w.sum())  # scale invariance of the score criterion

    beta = np.zeros(m)

    def score_and_mu(b):
        mu = expit(off + X @ b)
        return X.T @ (u * (y - mu)), mu

    def deviance(mu):
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        return -2.0 * float(u @ (y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))

    score, mu = score_and_mu(beta)
    dev = deviance(mu)
    converged = bool(np.max(np.abs(score), initial=0.0) < tol)
    iters = 0
    separated = False
    while not converged and iters < max_iter:
        iters += 1
        q = np.clip(mu * (1.0 - mu), 1e-10, None)
        sw = np.sqrt(u * q)
        try:
            step, *_ = np.linalg.lstsq(X * sw[:, None], (y - mu) / q * sw, rcond=None)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(25):
            cand = beta + scale * step
            _, mu_c = score_and_mu(cand)
            dev_c = deviance(mu_c)
            if dev_c <= dev + 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        score, mu = score_and_mu(beta)
        dev = deviance(mu)
        if np.any(np.abs(beta) > MAX_ABS_COEF):
            separated = True
            break
        converged = bool(np.max(np.abs(score), initial=0.0) < tol)

    if separated:
        beta = np.clip(beta, -MAX_ABS_COEF, MAX_ABS_COEF)
        converged = False
        warnings.warn("separation detected in logistic fit; coefficients clamped")

    return GlmFit(
        coefficients=beta,
        family="binomial",
        converged=converged,
        iterations=iters,
        offset_used=offset_used,
    )


def add_intercept(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])
