"""Weighted L1-penalized regression solvers (coordinate descent).

The penalized objective is

    gaussian:  (1/2) * sum_i u_i * (y_i - b0 - x_i @ beta)^2 / sum(u)
                  + lam * ||beta||_1
    binomial:  sum_i u_i * nll_i(b0 + x_i @ beta) + lam * ||beta||_1

with the intercept unpenalized. For the gaussian family callers pass
weights ``u`` summing to one; the binomial outer loop feeds unnormalized
curvature weights to the same quadratic kernel.

Path solves screen columns with the sequential strong rule and verify the
KKT conditions over the full column set, so only a small working set is
swept at each penalty. Both a numba kernel and a pure-numpy fallback are
provided for the sweeps; :mod:`shiftest._accel` decides which one runs.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit

MAX_SWEEPS = 5000
PATH_KKT_TOL = 1e-5   # working accuracy along a grid
FINAL_KKT_TOL = 5e-7  # accuracy of a returned model


def _gaussian_cd_numpy(X, u, su, colsq, r, beta, intercept, lam, tol, max_sweeps):
    """Vectorized fallback: python loop over coordinates, numpy row ops."""
    n, m = X.shape
    sweeps = 0
    on_active = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        d0 = float(u @ r) / su
        if d0 != 0.0:
            intercept += d0
            r -= d0
            max_delta = max(max_delta, su * d0 * d0)
        cols = np.flatnonzero(beta) if on_active else range(m)
        for j in cols:
            cj = colsq[j]
            if cj <= 0.0:
                continue
            xj = X[:, j]
            rho = float((u * xj) @ r) + cj * beta[j]
            if rho > lam:
                bnew = (rho - lam) / cj
            elif rho < -lam:
                bnew = (rho + lam) / cj
            else:
                bnew = 0.0
            diff = bnew - beta[j]
            if diff != 0.0:
                beta[j] = bnew
                r -= diff * xj
                max_delta = max(max_delta, cj * diff * diff)
        if max_delta < tol:
            if on_active:
                on_active = False  # one last pass over every column
                continue
            break
        on_active = True
    return intercept, sweeps


@njit(cache=True)
def _gaussian_cd_numba(X, u, su, colsq, r, beta, intercept, lam, tol, max_sweeps):
    n, m = X.shape
    sweeps = 0
    on_active = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        num = 0.0
        for i in range(n):
            num += u[i] * r[i]
        d0 = num / su
        if d0 != 0.0:
            intercept += d0
            for i in range(n):
                r[i] -= d0
            if su * d0 * d0 > max_delta:
                max_delta = su * d0 * d0
        for j in range(m):
            cj = colsq[j]
            if cj <= 0.0:
                continue
            if on_active and beta[j] == 0.0:
                continue
            rho = 0.0
            for i in range(n):
                rho += u[i] * X[i, j] * r[i]
            rho += cj * beta[j]
            if rho > lam:
                bnew = (rho - lam) / cj
            elif rho < -lam:
                bnew = (rho + lam) / cj
            else:
                bnew = 0.0
            diff = bnew - beta[j]
            if diff != 0.0:
                beta[j] = bnew
                for i in range(n):
                    r[i] -= diff * X[i, j]
                if cj * diff * diff > max_delta:
                    max_delta = cj * diff * diff
        if max_delta < tol:
            if on_active:
                on_active = False
                continue
            break
        on_active = True
    return intercept, sweeps


_gaussian_cd = _gaussian_cd_numba if NUMBA_ENABLED else _gaussian_cd_numpy


def expit(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gaussian_objective(X, y, u, intercept, beta, lam):
    r = y - intercept - X @ beta
    return 0.5 * float(u @ (r * r)) / float(u.sum()) + lam * float(np.abs(beta).sum())


def binomial_objective(X, y, u, intercept, beta, lam):
    eta = intercept + X @ beta
    mu = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
    nll = -(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu))
    return float(u @ nll) + lam * float(np.abs(beta).sum())


def gradient(X, y, u, intercept, beta, family):
    """Gradient of the weighted smooth loss at the current point."""
    if family == "gaussian":
        resid = y - intercept - X @ beta
        return -(X.T @ (u * resid)) / float(u.sum())
    resid = y - expit(intercept + X @ beta)
    return -(X.T @ (u * resid))


def kkt_violation(X, y, u, intercept, beta, lam, family):
    """Largest violation of the L1 subgradient conditions.

    ``|g_j| - lam`` for inactive coordinates, ``|g_j + lam*sign(beta_j)|``
    for active ones.
    """
    grad = gradient(X, y, u, intercept, beta, family)
    active = beta != 0.0
    worst = 0.0
    if np.any(~active):
        worst = max(worst, float(np.max(np.abs(grad[~active])) - lam))
    if np.any(active):
        worst = max(
            worst, float(np.max(np.abs(grad[active] + lam * np.sign(beta[active]))))
        )
    return worst


def lambda_max(X, y, u, family):
    """Smallest penalty at which every coefficient stays at zero."""
    if X.shape[1] == 0:
        return 0.0
    if family == "gaussian":
        center = float(u @ y) / float(u.sum())
        grad = np.abs(X.T @ (u * (y - center))) / float(u.sum())
    else:
        mu0 = float(u @ y) / float(u.sum())
        grad = np.abs(X.T @ (u * (y - mu0)))
    return float(grad.max())


def _null_intercept(y, u, family):
    mean = float(u @ y) / float(u.sum())
    if family == "gaussian":
        return mean
    mean = min(max(mean, 1e-12), 1.0 - 1e-12)
    return float(np.log(mean / (1.0 - mean)))


def _default_tol(y, u, family):
    # Base sweep tolerance; the KKT verification loop tightens it when the
    # subgradient conditions are not yet met at the requested accuracy.
    if family == "gaussian":
        mean = float(u @ y) / float(u.sum())
        scale = float(u @ ((y - mean) ** 2)) / float(u.sum())
        return max(scale, 1e-8) * 1e-7
    return 1e-8


class _WorkingSet:
    """Restricted, column-major view of the design for screening."""

    def __init__(self, X):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.idx = None
        self.sub = None

    def set_candidates(self, idx):
        idx = np.asarray(sorted(idx), dtype=np.int64)
        if self.idx is None or not np.array_equal(idx, self.idx):
            self.idx = idx
            self.sub = np.asfortranarray(self.X[:, idx])
        return self.sub


def _solve_gaussian_restricted(ws, y, u, beta, intercept, lam, cand, tol,
                               sweep_budget=MAX_SWEEPS):
    sub = ws.set_candidates(cand)
    su = float(u.sum())
    colsq = (u[:, None] * sub * sub).sum(axis=0)
    beta_sub = beta[ws.idx].copy()
    r = y - intercept - ws.X @ beta
    intercept, _ = _gaussian_cd(
        sub, u, su, colsq, r, beta_sub, intercept, lam, tol, sweep_budget
    )
    beta[ws.idx] = beta_sub
    return intercept


def _solve_binomial_restricted(
    ws, y, u, beta, intercept, lam, cand, tol, obj_tol=1e-7, max_outer=60,
    sweep_budget=MAX_SWEEPS,
):
    # the candidate set must contain the support of beta
    sub = ws.set_candidates(cand)
    beta_sub = beta[ws.idx].copy()
    obj = binomial_objective(ws.X, y, u, intercept, beta, lam)
    for _ in range(max_outer):
        eta = intercept + sub @ beta_sub
        mu = np.clip(expit(eta), 1e-5, 1.0 - 1e-5)
        q = mu * (1.0 - mu)
        uq = u * q
        su = float(uq.sum())
        colsq = (uq[:, None] * sub * sub).sum(axis=0)
        z = eta + (y - mu) / q
        prev_sub = beta_sub.copy()
        prev_int = intercept
        r = z - eta
        intercept, _ = _gaussian_cd(
            sub, uq, su, colsq, r, beta_sub, intercept, lam, tol, sweep_budget
        )
        beta[ws.idx] = beta_sub
        new_obj = binomial_objective(ws.X, y, u, intercept, beta, lam)
        halvings = 0
        while new_obj > obj + 1e-14 and halvings < 12:
            beta_sub = 0.5 * (beta_sub + prev_sub)
            intercept = 0.5 * (intercept + prev_int)
            beta[ws.idx] = beta_sub
            new_obj = binomial_objective(ws.X, y, u, intercept, beta, lam)
            halvings += 1
        done = abs(obj - new_obj) < obj_tol
        obj = new_obj
        if done:
            break
    return intercept


def _solve_at(
    ws,
    y,
    u,
    beta,
    intercept,
    lam,
    family,
    cand,
    tol,
    kkt_target,
    max_rounds=25,
    tighten=True,
    sweep_budget=MAX_SWEEPS,
    obj_tol=1e-7,
    max_outer=60,
):
    """Solve at one penalty, expanding the candidate set until the KKT
    conditions hold over every column (or the round budget runs out)."""
    X = ws.X
    cand = set(int(j) for j in cand) | set(np.flatnonzero(beta).tolist())
    cur_tol = tol
    for _round in range(max_rounds):
        if cand:
            if family == "gaussian":
                intercept = _solve_gaussian_restricted(
                    ws, y, u, beta, intercept, lam, cand, cur_tol, sweep_budget
                )
            else:
                intercept = _solve_binomial_restricted(
                    ws, y, u, beta, intercept, lam, cand, cur_tol,
                    obj_tol=obj_tol, max_outer=max_outer,
                    sweep_budget=sweep_budget,
                )
        else:
            intercept = _null_intercept(y, u, family)
        grad = gradient(X, y, u, intercept, beta, family)
        inactive_viol = np.flatnonzero((np.abs(grad) - lam > kkt_target) & (beta == 0.0))
        active_bad = False
        act = beta != 0.0
        if np.any(act):
            active_bad = (
                float(np.max(np.abs(grad[act] + lam * np.sign(beta[act])))) > kkt_target
            )
        if inactive_viol.size == 0 and not active_bad:
            break
        cand |= set(inactive_viol.tolist())
        if active_bad and tighten:
            cur_tol *= 1e-2
    return intercept


def solve_path(
    X,
    y,
    u,
    lam_grid,
    family,
    kkt_tol=PATH_KKT_TOL,
    polish_indices=(),
    polish_kkt_tol=FINAL_KKT_TOL,
):
    """Warm-started solutions along a descending penalty grid.

    Grid indices in ``polish_indices`` are refined to ``polish_kkt_tol``
    (the accuracy contract for returned models); the rest of the path is
    solved to the working tolerance, which is plenty for risk curves.

    Returns ``(intercepts, betas)`` with ``betas`` of shape
    ``(len(lam_grid), n_columns)``.
    """
    ws = _WorkingSet(X)
    m = ws.X.shape[1]
    beta = np.zeros(m)
    intercept = _null_intercept(y, u, family)
    intercepts = np.empty(len(lam_grid))
    betas = np.empty((len(lam_grid), m))
    tol = _default_tol(y, u, family)
    polish = {int(k) for k in polish_indices}

    grad = gradient(ws.X, y, u, intercept, beta, family)
    lam_prev = float(lam_grid[0])
    for k, lam in enumerate(lam_grid):
        lam = float(lam)
        strong = np.flatnonzero(np.abs(grad) >= 2.0 * lam - lam_prev)
        if k in polish:
            intercept = _solve_at(
                ws, y, u, beta, intercept, lam, family, strong,
                tol * 1e-3, polish_kkt_tol,
            )
        else:
            # Working accuracy scales with the penalty and gets a bounded
            # sweep budget; interior risk curves do not need
            # subgradient-exact tails or fully converged outer loops.
            intercept = _solve_at(
                ws, y, u, beta, intercept, lam, family, strong,
                tol, max(kkt_tol, 0.01 * lam),
                max_rounds=3, tighten=False, sweep_budget=250,
                obj_tol=1e-5, max_outer=20,
            )
        grad = gradient(ws.X, y, u, intercept, beta, family)
        intercepts[k] = intercept
        betas[k] = beta
        lam_prev = lam
    return intercepts, betas


def polish_solution(X, y, u, lam, intercept, beta, family, kkt_tol=FINAL_KKT_TOL):
    """Refine a warm solution at one penalty to the final KKT tolerance."""
    ws = _WorkingSet(X)
    tol = _default_tol(y, u, family) * 1e-3
    return _solve_at(
        ws, y, u, beta, intercept, lam, family, np.flatnonzero(beta), tol, kkt_tol
    )


def solve_gaussian(X, y, u, lam, intercept=None, beta=None, kkt_tol=FINAL_KKT_TOL):
    """Single-penalty gaussian solve meeting the final KKT tolerance."""
    m = X.shape[1]
    beta = np.zeros(m) if beta is None else beta
    intercept = _null_intercept(y, u, "gaussian") if intercept is None else intercept
    intercept = polish_solution(X, y, u, lam, intercept, beta, "gaussian", kkt_tol)
    return intercept, beta


def solve_binomial(X, y, u, lam, intercept=None, beta=None, kkt_tol=FINAL_KKT_TOL):
    """Single-penalty binomial solve meeting the final KKT tolerance."""
    m = X.shape[1]
    beta = np.zeros(m) if beta is None else beta
    intercept = _null_intercept(y, u, "binomial") if intercept is None else intercept
    intercept = polish_solution(X, y, u, lam, intercept, beta, "binomial", kkt_tol)
    return intercept, beta
