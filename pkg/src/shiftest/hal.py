"""Highly adaptive lasso: indicator-basis expansion with L1-penalized fits.

The regression function is expanded over zero-order spline (indicator)
bases ``prod_{j in s} 1{w_j >= k_j}`` for interaction subsets ``s`` up to a
maximum degree, with knots placed at observed values (subsampled by rank
when a covariate has many distinct values). Fitting minimizes a weighted
empirical loss plus an L1 penalty on the basis coefficients, with the
penalty chosen by V-fold cross-validation along a warm-started grid.
"""

import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import solver


class HalError(ValueError):
    pass


def fold_assignments(n, n_folds, seed):
    """Deterministic fold labels in {0, ..., n_folds-1} from a seed."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % n_folds
    return ids


def _knots_for(values, max_knots):
    uniq = np.unique(values)
    if uniq.size < 2:
        return np.empty(0, dtype=np.float64)
    if uniq.size <= max_knots:
        return uniq.astype(np.float64)
    idx = np.unique(np.round(np.linspace(0, uniq.size - 1, max_knots)).astype(int))
    return uniq[idx].astype(np.float64)


@dataclass(frozen=True)
class BasisMap:
    """Indicator basis layout: per-covariate knots and interaction subsets.

    Columns are enumerated subset-by-subset; within a subset the knot
    tuples follow ``itertools.product`` order over the member covariates'
    knot lists.
    """

    knots: tuple
    subsets: tuple
    n_covariates: int

    @property
    def block_sizes(self):
        return [
            int(np.prod([self.knots[j].size for j in s])) if all(self.knots[j].size for j in s) else 0
            for s in self.subsets
        ]

    @property
    def n_columns(self):
        return int(sum(self.block_sizes))

    def transform(self, X):
        """Evaluate the basis at rows of ``X`` -> (n, n_columns) float64."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_covariates:
            raise HalError(
                f"design has {X.shape[1] if X.ndim == 2 else 'bad'} covariates, "
                f"basis expects {self.n_covariates}"
            )
        n = X.shape[0]
        blocks = []
        for s in self.subsets:
            if any(self.knots[j].size == 0 for j in s):
                continue
            block = np.ones((n, 1))
            for j in s:
                ind = (X[:, j:j + 1] >= self.knots[j][None, :]).astype(np.float64)
                block = (block[:, :, None] * ind[:, None, :]).reshape(n, -1)
            blocks.append(block)
        if not blocks:
            return np.zeros((n, 0))
        return np.hstack(blocks)

    def column_keys(self):
        """(subset, knot-tuple) identifier for every column, in order."""
        keys = []
        for s in self.subsets:
            if any(self.knots[j].size == 0 for j in s):
                continue
            for combo in itertools.product(*[self.knots[j] for j in s]):
                keys.append((s, combo))
        return keys


def build_basis(X, max_degree=2, max_knots_per_dim=50):
    """Construct the indicator basis map from observed covariate values.

    Constant covariates contribute no knots (and hence no columns).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise HalError("covariate matrix must be 2-dimensional")
    p = X.shape[1]
    if not 1 <= max_degree:
        raise HalError("max_degree must be at least 1")
    if max_knots_per_dim < 2:
        raise HalError("max_knots_per_dim must be at least 2")
    max_degree = min(max_degree, p) if p else 1
    knots = tuple(_knots_for(X[:, j], max_knots_per_dim) for j in range(p))
    subsets = []
    for deg in range(1, max_degree + 1):
        subsets.extend(itertools.combinations(range(p), deg))
    return BasisMap(knots=knots, subsets=tuple(subsets), n_covariates=p)


@dataclass
class HalModel:
    """Fitted HAL regression: basis, sparse coefficients, selected penalty."""

    basis: BasisMap
    intercept: float
    beta: np.ndarray
    lambda_selected: float
    family: str
    cv_curve: np.ndarray = field(default=None)  # (n_lambda, 2): lambda, CV risk
    path_nonzeros: np.ndarray = field(default=None)
    converged: bool = True

    @property
    def l1_norm(self):
        return float(np.abs(self.beta).sum())

    @property
    def n_nonzero(self):
        return int(np.count_nonzero(self.beta))

    def linear_predictor(self, X_new):
        B = self.basis.transform(X_new)
        return self.intercept + B @ self.beta

    def predict(self, X_new):
        eta = self.linear_predictor(X_new)
        if self.family == "binomial":
            return np.clip(solver.expit(eta), 1e-6, 1.0 - 1e-6)
        return eta

    def to_dict(self):
        nz = np.flatnonzero(self.beta)
        return {
            "family": self.family,
            "intercept": self.intercept,
            "lambda_selected": self.lambda_selected,
            "n_covariates": self.basis.n_covariates,
            "knots": [k.tolist() for k in self.basis.knots],
            "subsets": [list(s) for s in self.basis.subsets],
            "beta_indices": nz.tolist(),
            "beta_values": self.beta[nz].tolist(),
            "n_columns": int(self.beta.size),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        basis = BasisMap(
            knots=tuple(np.asarray(k, dtype=np.float64) for k in doc["knots"]),
            subsets=tuple(tuple(s) for s in doc["subsets"]),
            n_covariates=int(doc["n_covariates"]),
        )
        beta = np.zeros(int(doc["n_columns"]))
        idx = np.asarray(doc["beta_indices"], dtype=int)
        if idx.size:
            beta[idx] = np.asarray(doc["beta_values"], dtype=np.float64)
        return cls(
            basis=basis,
            intercept=float(doc["intercept"]),
            beta=beta,
            lambda_selected=float(doc["lambda_selected"]),
            family=doc["family"],
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def default_lambda_grid(lam_max, n_lambda=50, min_ratio=1e-4):
    if lam_max <= 0.0:
        return np.array([0.0])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def _weighted_risk(family, y, pred, w):
    if family == "gaussian":
        loss = (y - pred) ** 2
    else:
        mu = np.clip(pred, 1e-12, 1.0 - 1e-12)
        loss = -(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu))
    return float(w @ loss)


def fit_hal(
    X,
    y,
    weights=None,
    family="gaussian",
    *,
    max_degree=2,
    max_knots_per_dim=50,
    lambda_grid=None,
    n_lambda=50,
    lambda_min_ratio=1e-4,
    cv_folds=5,
    seed=0,
    basis=None,
    cv_groups=None,
):
    """Fit a HAL regression with cross-validated penalty selection.

    Parameters mirror the solver contract: ``weights`` are sample-level
    (duplicating a row is equivalent to doubling its weight), ``family``
    is ``gaussian`` or ``binomial`` (fractional responses allowed), and
    ``lambda_grid`` overrides the automatic geometric grid. Identical
    seeds give bit-identical models. ``cv_groups`` keeps rows sharing a
    group label in the same fold (needed when rows are replicates of one
    underlying observation).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    if X.shape[0] != n:
        raise HalError("X and y row counts differ")
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != n:
        raise HalError("weights length mismatch")
    if np.any(weights < 0):
        raise HalError("weights must be nonnegative")
    wsum = float(weights.sum())
    if wsum <= 0.0:
        raise HalError("all weights are zero")
    if family not in ("gaussian", "binomial"):
        raise HalError(f"unknown family '{family}'")
    if family == "binomial":
        eff = y[weights > 0]
        if np.unique(eff).size < 2:
            raise HalError("binomial fit needs at least 2 distinct outcome values")

    if basis is None:
        basis = build_basis(X, max_degree=max_degree, max_knots_per_dim=max_knots_per_dim)
    B_full = basis.transform(X)
    u = weights / wsum

    # Columns identical on the training data are interchangeable under the
    # L1 penalty; fitting one representative per group (the first original
    # occurrence) keeps coordinate descent off the induced flat directions.
    if B_full.shape[1] > 1:
        _, keep_idx = np.unique(B_full, axis=1, return_index=True)
        B = B_full[:, keep_idx]
    else:
        keep_idx = np.arange(B_full.shape[1])
        B = B_full

    if B.shape[1] == 0:
        warnings.warn("empty indicator basis; returning intercept-only model")
        mean = float(u @ y)
        if family == "binomial":
            mean = min(max(mean, 1e-12), 1.0 - 1e-12)
            intercept = float(np.log(mean / (1.0 - mean)))
        else:
            intercept = mean
        return HalModel(
            basis=basis,
            intercept=intercept,
            beta=np.zeros(0),
            lambda_selected=0.0,
            family=family,
            cv_curve=np.zeros((0, 2)),
            path_nonzeros=np.zeros(0, dtype=np.int64),
        )

    if lambda_grid is None:
        lam_max = solver.lambda_max(B, y, u, family)
        lambda_grid = default_lambda_grid(lam_max, n_lambda, lambda_min_ratio)
    else:
        lambda_grid = np.asarray(sorted(lambda_grid, reverse=True), dtype=np.float64)
        if lambda_grid.size == 0:
            raise HalError("lambda grid is empty")
        if np.any(lambda_grid < 0):
            raise HalError("lambda values must be nonnegative")

    # Full-data path; the selected grid point is polished afterwards.
    intercepts, betas = solver.solve_path(B, y, u, lambda_grid, family)
    path_nonzeros = np.count_nonzero(betas, axis=1)

    if lambda_grid.size > 1 and cv_folds >= 2:
        if cv_groups is None:
            folds = fold_assignments(n, cv_folds, seed)
        else:
            groups = np.asarray(cv_groups).ravel()
            if groups.size != n:
                raise HalError("cv_groups length mismatch")
            uniq, inverse = np.unique(groups, return_inverse=True)
            folds = fold_assignments(uniq.size, cv_folds, seed)[inverse]
        risk = np.zeros(lambda_grid.size)
        for v in range(cv_folds):
            val = folds == v
            train = ~val
            wt = weights[train]
            st = float(wt.sum())
            if st <= 0.0 or float(weights[val].sum()) <= 0.0:
                continue
            if family == "binomial" and np.unique(y[train][wt > 0]).size < 2:
                continue
            ints_v, betas_v = solver.solve_path(
                B[train], y[train], wt / st, lambda_grid, family
            )
            eta_val = ints_v[:, None] + betas_v @ B[val].T
            for k in range(lambda_grid.size):
                pred = eta_val[k]
                if family == "binomial":
                    pred = solver.expit(pred)
                risk[k] += _weighted_risk(family, y[val], pred, weights[val])
        risk /= wsum
        kbest = int(np.argmin(risk))
        cv_curve = np.column_stack([lambda_grid, risk])
    else:
        kbest = int(lambda_grid.size - 1)
        cv_curve = np.column_stack([lambda_grid, np.full(lambda_grid.size, np.nan)])

    beta_unique = betas[kbest].copy()
    intercept_final = solver.polish_solution(
        B, y, u, float(lambda_grid[kbest]), float(intercepts[kbest]), beta_unique, family
    )
    beta_final = np.zeros(B_full.shape[1])
    beta_final[keep_idx] = beta_unique
    return HalModel(
        basis=basis,
        intercept=float(intercept_final),
        beta=beta_final,
        lambda_selected=float(lambda_grid[kbest]),
        family=family,
        cv_curve=cv_curve,
        path_nonzeros=path_nonzeros,
    )


def predict_hal(model, X_new):
    """Response-scale predictions of a fitted model at new covariate rows."""
    return model.predict(X_new)
