"""Nuisance fits: sampling mechanism, outcome regression, exposure density,
joint-distribution weights, and the influence-function projection.

The estimation order matters: the sampling mechanism is fit on the full
sample; its inverse-probability weights then enter the second-phase fits
of the outcome regression and exposure density; pseudo-outcomes built
from those (and the plug-in estimate) feed the projection ``G`` of the
full-data influence function onto ``(Y, W)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import density as density_mod
from . import glm, hal
from .data import DataError, shift_all

DENSITY_RATIO_FLOOR = 1e-3

GLM_ALIASES = {"glm", "logistic_glm", "linear_glm"}


def _yw_design(y, W):
    return np.column_stack([np.asarray(y, dtype=np.float64), np.asarray(W, dtype=np.float64)])


def _aw_design(a, W):
    return np.column_stack([np.asarray(a, dtype=np.float64), np.asarray(W, dtype=np.float64)])


@dataclass
class SamplingFit:
    """Second-phase inclusion probability g(y, w), clamped to [zeta, 1]."""

    kind: str
    zeta: float
    model: object = None
    value: float = 1.0
    n_truncated: int = 0

    def predict(self, y, W):
        if self.kind == "constant":
            raw = np.full(np.asarray(y).size, self.value)
        elif self.kind == "glm":
            raw = self.model.predict(glm.add_intercept(_yw_design(y, W)))
        else:
            raw = self.model.predict(_yw_design(y, W))
        clamped = np.clip(raw, self.zeta, 1.0)
        self.n_truncated = int((raw < self.zeta).sum())
        return clamped


def fit_sampling_mechanism(data, method="glm", zeta=0.01, seed=0, hal_opts=None):
    """Classify second-phase inclusion on (Y, W) over the full sample."""
    if not 0.0 < zeta < 0.5:
        raise DataError("zeta must lie in (0, 0.5)")
    if method == "known":
        return SamplingFit(kind="constant", zeta=zeta, value=1.0)
    classes = np.unique(data.c)
    if classes.size < 2:
        raise DataError("sampling fit needs both C classes present")
    X = _yw_design(data.y, data.w)
    if method in GLM_ALIASES:
        fit = glm.fit_logistic(glm.add_intercept(X), data.c.astype(float), np.ones(data.n))
        return SamplingFit(kind="glm", zeta=zeta, model=fit)
    if method == "hal":
        model = hal.fit_hal(
            X, data.c.astype(float), family="binomial", seed=seed, **(hal_opts or {})
        )
        return SamplingFit(kind="hal", zeta=zeta, model=model)
    raise DataError(f"unknown sampling method '{method}'")


def joint_distribution_weights(data, g_values):
    """Stabilized inverse-probability weights over all rows (zero off-phase)."""
    ratio = np.where(data.phase2, data.c / g_values, 0.0)
    total = float(ratio.sum())
    if total <= 0.0:
        raise DataError("all joint-distribution weights are zero")
    return ratio / total


@dataclass
class OutcomeFit:
    """Conditional outcome mean over (A, W); predictions kept inside (0,1)."""

    kind: str
    model: object

    def predict(self, a, W):
        if self.kind == "glm":
            return self.model.predict(glm.add_intercept(_aw_design(a, W)))
        return self.model.predict(_aw_design(a, W))


def fit_outcome_regression(data, g_values, method="glm", seed=0, hal_opts=None):
    """Regress Y on (A, W) among second-phase rows, weighted by 1/g."""
    mask = data.phase2
    y2 = data.y_obs
    if np.unique(y2).size < 2:
        raise DataError("outcome regression needs at least 2 distinct Y values")
    weights = 1.0 / g_values[mask]
    X = _aw_design(data.a_obs, data.w_obs)
    if method in GLM_ALIASES:
        fit = glm.fit_logistic(glm.add_intercept(X), y2, weights)
        return OutcomeFit(kind="glm", model=fit)
    if method == "hal":
        model = hal.fit_hal(X, y2, weights=weights, family="binomial", seed=seed, **(hal_opts or {}))
        return OutcomeFit(kind="hal", model=model)
    raise DataError(f"unknown outcome method '{method}'")


def fit_exposure_density(
    data, g_values, method="gaussian", seed=0, hal_opts=None, haldensify_opts=None
):
    """Fit the exposure density on second-phase rows with 1/g weights.

    ``gaussian_marginal`` fits the Gaussian working model with a
    covariate-free mean, a deliberately coarse specification useful for
    robustness experiments.
    """
    mask = data.phase2
    weights = 1.0 / g_values[mask]
    if method == "gaussian":
        return density_mod.fit_gaussian_density(data.a_obs, data.w_obs, weights)
    if method == "gaussian_marginal":
        return density_mod.fit_gaussian_density(
            data.a_obs, data.w_obs, weights, basis=density_mod.intercept_only_basis
        )
    if method == "haldensify":
        opts = dict(haldensify_opts or {})
        opts.setdefault("hal_opts", hal_opts)
        return density_mod.fit_haldensify(
            data.a_obs, data.w_obs, weights, seed=seed, **opts
        )
    raise DataError(f"unknown density method '{method}'")


def auxiliary_covariate(a_eval, W, q_model, spec, bound, floor=DENSITY_RATIO_FLOOR):
    """Density-ratio covariate at exposure values ``a_eval``.

    ``1{a < u(w)} * q(a - delta | w) / max(q(a | w), floor)
       + 1{a + delta >= u(w)}``

    Returns the covariate values and the count of floored denominators.
    """
    a_eval = np.asarray(a_eval, dtype=np.float64)
    u = bound.evaluate(W)
    numer = q_model.density(a_eval - spec.delta, W)
    denom_raw = q_model.density(a_eval, W)
    floored = int((denom_raw < floor).sum())
    denom = np.maximum(denom_raw, floor)
    inside = (a_eval < u).astype(np.float64)
    at_edge = (a_eval + spec.delta >= u).astype(np.float64)
    return inside * numer / denom + at_edge, floored


def pseudo_outcomes(y2, qy_obs, qy_shift, H_obs, psi_plugin):
    """Full-data influence values on second-phase rows."""
    return H_obs * (y2 - qy_obs) + qy_shift - psi_plugin


@dataclass
class ProjectionFit:
    """Projection of the full-data influence values onto (Y, W)."""

    kind: str
    model: object

    def predict(self, y, W):
        X = _yw_design(y, W)
        if self.kind == "glm":
            return self.model.predict(glm.add_intercept(X))
        return self.model.predict(X)


def fit_eif_projection(data, df_values, method="glm", seed=0, hal_opts=None):
    """Unweighted regression of pseudo-outcomes on (Y, W) among phase 2."""
    if data.n_phase2 < 2:
        raise DataError("projection needs at least 2 second-phase rows")
    X = _yw_design(data.y_obs, data.w_obs)
    w = np.ones(data.n_phase2)
    if method in GLM_ALIASES:
        fit = glm.fit_wls(glm.add_intercept(X), df_values, w)
        return ProjectionFit(kind="glm", model=fit)
    if method == "hal":
        model = hal.fit_hal(X, df_values, family="gaussian", seed=seed, **(hal_opts or {}))
        return ProjectionFit(kind="hal", model=model)
    raise DataError(f"unknown projection method '{method}'")


@dataclass
class CoreFits:
    """Shift-independent nuisances: g, its weights, the outcome mean, q_A."""

    g_fit: SamplingFit
    g_values: np.ndarray
    weights: np.ndarray
    outcome: OutcomeFit
    q_model: object
    zeta: float


def fit_core(
    data,
    *,
    g_method="glm",
    q_method="glm",
    density_method="gaussian",
    zeta=0.01,
    seed=0,
    hal_opts=None,
    haldensify_opts=None,
    g_fit=None,
):
    """Fit every shift-independent nuisance once; reusable across deltas."""
    if g_fit is None:
        g_fit = fit_sampling_mechanism(
            data, method=g_method, zeta=zeta, seed=seed, hal_opts=hal_opts
        )
    g_values = g_fit.predict(data.y, data.w)
    weights = joint_distribution_weights(data, g_values)
    outcome = fit_outcome_regression(
        data, g_values, method=q_method, seed=seed, hal_opts=hal_opts
    )
    q_model = fit_exposure_density(
        data,
        g_values,
        method=density_method,
        seed=seed,
        hal_opts=hal_opts,
        haldensify_opts=haldensify_opts,
    )
    return CoreFits(
        g_fit=g_fit,
        g_values=g_values,
        weights=weights,
        outcome=outcome,
        q_model=q_model,
        zeta=zeta,
    )


@dataclass
class NuisanceSet:
    """Everything the estimators need for one shift value.

    Arrays indexed over second-phase rows carry the ``2`` suffix
    convention of the accessors on :class:`ObservedDataset`.
    """

    core: CoreFits
    spec: object
    bound: object
    a_shifted: np.ndarray     # policy exposures on phase-2 rows
    qy_obs: np.ndarray
    qy_shift: np.ndarray
    H_obs: np.ndarray
    H_shift: np.ndarray
    G_fit: ProjectionFit = None
    G_values: np.ndarray = None    # over all rows
    psi_plugin: float = None
    df_values: np.ndarray = None   # over phase-2 rows
    diagnostics: dict = field(default_factory=dict)


def assemble_for_delta(data, core, spec, bound, *, eif_method="glm", seed=0,
                       hal_opts=None, fit_projection=True):
    """Shift-dependent nuisances: H at observed and policy exposures, the
    plug-in value, pseudo-outcomes, and (optionally) the projection G."""
    W2 = data.w_obs
    a2 = data.a_obs
    a_shifted = shift_all(a2, W2, spec, bound)
    qy_obs = core.outcome.predict(a2, W2)
    qy_shift = core.outcome.predict(a_shifted, W2)
    H_obs, floored_obs = auxiliary_covariate(a2, W2, core.q_model, spec, bound)
    H_shift, floored_shift = auxiliary_covariate(
        a_shifted, W2, core.q_model, spec, bound
    )
    psi_plugin = float(core.weights[data.phase2] @ qy_shift)
    df_values = pseudo_outcomes(data.y_obs, qy_obs, qy_shift, H_obs, psi_plugin)
    ns = NuisanceSet(
        core=core,
        spec=spec,
        bound=bound,
        a_shifted=a_shifted,
        qy_obs=qy_obs,
        qy_shift=qy_shift,
        H_obs=H_obs,
        H_shift=H_shift,
        psi_plugin=psi_plugin,
        df_values=df_values,
        diagnostics={
            "density_floor_hits": floored_obs + floored_shift,
            "g_truncated": core.g_fit.n_truncated,
        },
    )
    if fit_projection:
        ns.G_fit = fit_eif_projection(data, df_values, method=eif_method, seed=seed,
                                      hal_opts=hal_opts)
        ns.G_values = ns.G_fit.predict(data.y, data.w)
    else:
        ns.G_values = np.zeros(data.n)
    return ns
