"""Conditional density estimation for the exposure given covariates.

Two estimators with sample-level weights: a parametric working model
(Gaussian with homoscedastic variance around a linear mean) and a
pooled-hazard estimator that discretizes the exposure into bins, recasts
bin membership as sequential hazards on a long-format dataset, fits one
penalized logistic HAL across all bins, and maps hazards back to a
density by bin-width rescaling.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import glm, hal
from .data import DataError


def _as_matrix(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    return W


def linear_mean_basis(W):
    """Default mean design: intercept plus the raw covariates."""
    return glm.add_intercept(_as_matrix(W))


def intercept_only_basis(W):
    """Covariate-free mean design (a deliberately coarse working model)."""
    W = _as_matrix(W)
    return np.ones((W.shape[0], 1))


@dataclass
class GaussianDensityModel:
    """Exposure density as Normal(mean(w), sigma2) with fitted linear mean."""

    mean_fit: glm.GlmFit
    sigma2: float
    basis: callable

    def mean(self, W):
        return self.mean_fit.predict(self.basis(W))

    def density(self, a, W):
        a = np.asarray(a, dtype=np.float64)
        mu = self.mean(W)
        z2 = (a - mu) ** 2 / self.sigma2
        return np.exp(-0.5 * z2) / math.sqrt(2.0 * math.pi * self.sigma2)

    def support_upper(self, W, eps):
        """Largest ``a`` with density >= eps, given w (closed form)."""
        peak = 1.0 / math.sqrt(2.0 * math.pi * self.sigma2)
        if eps >= peak:
            return self.mean(W)
        half_width = math.sqrt(-2.0 * self.sigma2 * math.log(eps / peak))
        return self.mean(W) + half_width


def fit_gaussian_density(A, W, weights=None, basis=linear_mean_basis):
    """Weighted linear-mean Gaussian working model for ``A | W``."""
    A = np.asarray(A, dtype=np.float64).ravel()
    W = _as_matrix(W)
    if weights is None:
        weights = np.ones(A.size)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    X = basis(W)
    effective = int((weights > 0).sum())
    if effective < X.shape[1] + 1:
        raise DataError(
            f"gaussian density needs at least {X.shape[1] + 1} weighted observations"
        )
    fit = glm.fit_wls(X, A, weights)
    if fit.residual_variance < 1e-12:
        raise DataError("degenerate exposure variance")
    return GaussianDensityModel(mean_fit=fit, sigma2=fit.residual_variance, basis=basis)


@dataclass
class HazardLongFormat:
    """Long-format recoding of exposures into sequential bin hazards.

    A source observation landing in bin ``t`` contributes rows for bins
    ``1..t`` with the in-bin indicator lit only on the last one; its
    sample weight is copied to every row.
    """

    bin_idx: np.ndarray      # 0-based bin index per long row
    in_bin: np.ndarray       # binary outcome per long row
    w_cov: np.ndarray        # covariates replicated per long row
    weight: np.ndarray
    source: np.ndarray       # originating observation per long row
    bin_edges: np.ndarray

    @property
    def n_bins(self):
        return self.bin_edges.size - 1


def assign_bins(a, bin_edges):
    """0-based bin of each value; the last bin is right-closed."""
    a = np.asarray(a, dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    idx = np.searchsorted(edges, a, side="right") - 1
    return np.clip(idx, 0, edges.size - 2)


def pool_hazard_format(A, W, weights, bin_edges):
    A = np.asarray(A, dtype=np.float64).ravel()
    W = _as_matrix(W)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    edges = np.asarray(bin_edges, dtype=np.float64)
    if np.any(A < edges[0]) or np.any(A > edges[-1]):
        raise DataError("exposure value outside the bin grid")
    bins = assign_bins(A, edges)
    reps = bins + 1
    source = np.repeat(np.arange(A.size), reps)
    bin_idx = np.concatenate([np.arange(r) for r in reps]) if A.size else np.empty(0, int)
    in_bin = (bin_idx == bins[source]).astype(np.float64)
    return HazardLongFormat(
        bin_idx=bin_idx.astype(np.int64),
        in_bin=in_bin,
        w_cov=W[source],
        weight=weights[source],
        source=source,
        bin_edges=edges,
    )


def hazard_design(bin_idx, W, n_bins):
    """One-hot bin indicators stacked with the covariates."""
    onehot = np.zeros((bin_idx.size, n_bins))
    onehot[np.arange(bin_idx.size), bin_idx] = 1.0
    return np.hstack([onehot, _as_matrix(W)])


def masses_from_hazards(hazards, widths=None, renormalize=True):
    """Bin masses from per-bin hazards: ``h_t * prod_{j<t}(1 - h_j)``.

    ``hazards`` has one row per evaluation point and one column per bin.
    With ``renormalize`` the row masses are rescaled to sum to one.
    """
    hz = np.atleast_2d(np.asarray(hazards, dtype=np.float64))
    surv = np.cumprod(1.0 - hz, axis=1)
    masses = hz.copy()
    masses[:, 1:] *= surv[:, :-1]
    if renormalize:
        totals = masses.sum(axis=1, keepdims=True)
        totals[totals <= 0.0] = 1.0
        masses = masses / totals
    return masses


@dataclass
class CondDensityModel:
    """Pooled-hazard conditional density with per-w renormalized bin masses."""

    bin_edges: np.ndarray
    hazard_model: hal.HalModel
    n_bins_selected: int
    n_covariates: int

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    def bin_masses(self, W):
        W = _as_matrix(W)
        T = self.n_bins_selected
        n = W.shape[0]
        long_bins = np.tile(np.arange(T), n)
        long_W = np.repeat(W, T, axis=0)
        X = hazard_design(long_bins, long_W, T)
        hz = self.hazard_model.predict(X).reshape(n, T)
        return masses_from_hazards(hz, renormalize=True)

    def density(self, a, W):
        a = np.asarray(a, dtype=np.float64).ravel()
        W = _as_matrix(W)
        if W.shape[0] != a.size:
            raise DataError("a and W row counts differ")
        out = np.zeros(a.size)
        inside = (a >= self.bin_edges[0]) & (a <= self.bin_edges[-1])
        if inside.any():
            bins = assign_bins(a[inside], self.bin_edges)
            masses = self.bin_masses(W[inside])
            out[inside] = masses[np.arange(bins.size), bins] / self.widths[bins]
        return out

    def support_upper(self, W, eps):
        masses = self.bin_masses(W)
        dens = masses / self.widths[None, :]
        ok = dens >= eps
        last_ok = ok.shape[1] - 1 - np.argmax(ok[:, ::-1], axis=1)
        return np.where(ok.any(axis=1), self.bin_edges[1:][last_ok], self.bin_edges[0])

    def to_dict(self):
        return {
            "bin_edges": self.bin_edges.tolist(),
            "n_bins_selected": self.n_bins_selected,
            "n_covariates": self.n_covariates,
            "hazard_model": self.hazard_model.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        return cls(
            bin_edges=np.asarray(doc["bin_edges"], dtype=np.float64),
            hazard_model=hal.HalModel.from_dict(doc["hazard_model"]),
            n_bins_selected=int(doc["n_bins_selected"]),
            n_covariates=int(doc["n_covariates"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _weighted_quantiles(values, weights, probs):
    """Right-continuous inverse of the weighted CDF (duplication-invariant)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w)
    if cum[-1] <= 0:
        raise DataError("all weights are zero")
    cum = cum / cum[-1]
    idx = np.clip(np.searchsorted(cum, probs, side="left"), 0, v.size - 1)
    return v[idx]


def make_bin_edges(A, weights, n_bins, bin_rule):
    """Bin edges covering [min A, max A] by the requested rule, or None
    when the rule cannot produce that many nonempty, strictly increasing
    bins."""
    A = np.asarray(A, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    lo, hi = float(A.min()), float(A.max())
    if hi <= lo:
        return None
    if bin_rule == "equal_range":
        edges = np.linspace(lo, hi, n_bins + 1)
        counts, _ = np.histogram(A, bins=edges, weights=weights)
        if np.any(counts <= 0.0):
            return None
    elif bin_rule == "equal_mass":
        probs = np.linspace(0.0, 1.0, n_bins + 1)
        edges = _weighted_quantiles(A, weights, probs)
        edges[0], edges[-1] = lo, hi
        if np.any(np.diff(edges) <= 0):
            return None
    else:
        raise DataError(f"unknown bin rule '{bin_rule}'")
    return edges


def _fit_hazard_model(long, hal_opts, seed):
    X = hazard_design(long.bin_idx, long.w_cov, long.n_bins)
    # fold assignment is grouped by source observation: the replicated
    # rows of one exposure must not straddle a cross-validation split
    return hal.fit_hal(
        X,
        long.in_bin,
        weights=long.weight,
        family="binomial",
        seed=seed,
        cv_groups=long.source,
        **hal_opts,
    )


def _density_logloss(model, A, W, weights, floor=1e-30):
    dens = np.maximum(model.density(A, W), floor)
    return float(weights @ -np.log(dens))


def fit_haldensify(
    A,
    W,
    weights=None,
    n_bins_grid=(5, 10, 20),
    bin_rule="equal_mass",
    cv_folds=5,
    seed=0,
    hal_opts=None,
):
    """Pooled-hazard conditional density with CV over the bin count.

    For each candidate bin count the exposure is discretized, recoded to
    the long hazard format, and a weighted binomial HAL fit on (bin
    indicators, W). The bin count minimizing the cross-validated negative
    log density loss wins; the returned model is refit on all data.
    """
    A = np.asarray(A, dtype=np.float64).ravel()
    W = _as_matrix(W)
    if weights is None:
        weights = np.ones(A.size)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    grid = sorted(set(int(t) for t in n_bins_grid))
    if not grid or min(grid) < 2:
        raise DataError("bin-count grid must contain integers >= 2")
    if A.size < 2 * max(grid):
        raise DataError("need at least 2 * max(n_bins_grid) observations")
    hal_opts = dict(hal_opts or {})

    candidates = []
    for T in grid:
        edges = make_bin_edges(A, weights, T, bin_rule)
        if edges is None:
            warnings.warn(f"bin count {T} skipped: empty or degenerate bins")
            continue
        candidates.append((T, edges))
    if not candidates:
        raise DataError("no usable bin count in the grid")

    if len(candidates) == 1:
        best_T, best_edges = candidates[0]
    else:
        folds = hal.fold_assignments(A.size, cv_folds, seed)
        scores = []
        for T, edges in candidates:
            score = 0.0
            for v in range(cv_folds):
                val = folds == v
                train = ~val
                if weights[train].sum() <= 0 or weights[val].sum() <= 0:
                    continue
                tr_edges = make_bin_edges(A[train], weights[train], T, bin_rule)
                if tr_edges is None:
                    score = np.inf
                    break
                long = pool_hazard_format(A[train], W[train], weights[train], tr_edges)
                model = CondDensityModel(
                    bin_edges=tr_edges,
                    hazard_model=_fit_hazard_model(long, hal_opts, seed),
                    n_bins_selected=T,
                    n_covariates=W.shape[1],
                )
                score += _density_logloss(model, A[val], W[val], weights[val])
            scores.append(score)
        best_T, best_edges = candidates[int(np.argmin(scores))]

    long = pool_hazard_format(A, W, weights, best_edges)
    return CondDensityModel(
        bin_edges=best_edges,
        hazard_model=_fit_hazard_model(long, hal_opts, seed),
        n_bins_selected=best_T,
        n_covariates=W.shape[1],
    )


def predict_density(model, a, W):
    """Density of ``a`` given rows of ``W``; zero outside the bin grid."""
    return model.density(a, W)
