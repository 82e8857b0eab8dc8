"""Working marginal structural model over a grid of shift estimates.

Projects ``(delta_k, psi_k)`` pairs onto a low-dimensional working model
(linear by default) by weighted least squares, and propagates the
per-observation influence values of the ``psi_k`` through the projection
for delta-method inference on the coefficients.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import DataError


def linear_basis(deltas):
    """Model matrix of the linear working model: intercept and slope."""
    d = np.asarray(deltas, dtype=np.float64)
    return np.column_stack([np.ones(d.size), d])


@dataclass
class MsmFit:
    beta: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    p_values: np.ndarray
    h_weights: np.ndarray
    deltas: np.ndarray
    psis: np.ndarray
    model_form: str = "linear"
    alpha: float = 0.05
    diagnostics: dict = field(default_factory=dict)

    def predict(self, deltas):
        return linear_basis(deltas) @ self.beta

    def to_record(self):
        return {
            "model_form": self.model_form,
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "ci_lo": self.ci_lo.tolist(),
            "ci_hi": self.ci_hi.tolist(),
            "p_values": self.p_values.tolist(),
            "h_weights": self.h_weights.tolist(),
            "deltas": self.deltas.tolist(),
            "psis": self.psis.tolist(),
            "alpha": self.alpha,
        }


def fit_msm(deltas, psis, eif_matrix, h=None, alpha=0.05, basis=linear_basis):
    """Weighted least-squares projection with delta-method inference.

    ``eif_matrix`` is (n, K): per-observation influence values for each of
    the K shift estimates, column-aligned with ``psis``. The coefficient
    influence rows are ``D_beta = D_psi @ (H M (M' H M)^-1)`` and the
    coefficient covariance is their empirical covariance divided by n.
    """
    deltas = np.asarray(deltas, dtype=np.float64).ravel()
    psis = np.asarray(psis, dtype=np.float64).ravel()
    eif_matrix = np.asarray(eif_matrix, dtype=np.float64)
    K = deltas.size
    if psis.size != K or eif_matrix.shape[1] != K:
        raise DataError("deltas, psis and influence columns must align")
    if np.unique(deltas).size != K:
        raise DataError("delta grid contains duplicates")
    if h is None:
        h = np.ones(K)
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.size != K or np.any(h < 0) or h.sum() <= 0:
        raise DataError("h must be nonnegative weights over the delta grid")

    M = basis(deltas)
    d = M.shape[1]
    if K < d:
        raise DataError(f"need at least {d} grid points for the working model")
    MtHM = M.T @ (h[:, None] * M)
    cond = np.linalg.cond(MtHM)
    if not np.isfinite(cond) or cond > 1e12:
        raise DataError("singular working-model normal equations")
    beta = np.linalg.solve(MtHM, M.T @ (h * psis))

    proj = (h[:, None] * M) @ np.linalg.inv(MtHM)   # K x d
    d_beta = eif_matrix @ proj                       # n x d
    n = d_beta.shape[0]
    centered = d_beta - d_beta.mean(axis=0, keepdims=True)
    covariance = (centered.T @ centered) / max(n - 1, 1) / n

    se = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    degenerate = bool(np.all(se == 0.0))
    if degenerate:
        warnings.warn("influence values are all zero; degenerate MSM intervals")
    z = float(ndtri(1.0 - alpha / 2.0))
    ci_lo = beta - z * se
    ci_hi = beta + z * se
    p_values = np.empty(beta.size)
    for j in range(beta.size):
        if se[j] > 0:
            p_values[j] = 2.0 * (1.0 - ndtr(abs(beta[j]) / se[j]))
        else:
            p_values[j] = 1.0 if beta[j] == 0.0 else 0.0
    return MsmFit(
        beta=beta,
        covariance=covariance,
        se=se,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        p_values=p_values,
        h_weights=h,
        deltas=deltas,
        psis=psis,
        alpha=alpha,
        diagnostics={"degenerate": degenerate, "residuals": (psis - M @ beta).tolist()},
    )


def msm_from_results(results, h=None, alpha=0.05):
    """Fit the working MSM from a grid of estimate results.

    All results must come from the same estimator variant; mixing variants
    is rejected because their influence values are not comparable.
    """
    if len(results) < 2:
        raise DataError("MSM needs at least two shift estimates")
    variants = {r.variant for r in results}
    if len(variants) != 1:
        raise DataError(f"cannot mix estimator variants in one MSM: {sorted(variants)}")
    order = np.argsort([r.delta for r in results])
    ordered = [results[int(i)] for i in order]
    deltas = np.array([r.delta for r in ordered])
    psis = np.array([r.psi for r in ordered])
    eif_matrix = np.column_stack([r.eif_values for r in ordered])
    return fit_msm(deltas, psis, eif_matrix, h=h, alpha=alpha)
