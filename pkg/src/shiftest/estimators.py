"""Estimators of the counterfactual mean under an additive exposure shift.

Three families share the same nuisance inputs:

* the plug-in (substitution) value,
* the one-step estimator, which adds the empirical mean of the estimated
  influence function to the plug-in, and
* the targeted estimator, which first tilts the sampling and outcome fits
  along one-dimensional logistic submodels until the corresponding score
  equations vanish, then recomputes the plug-in.

Each of the latter two comes in an augmented (full influence function),
reweighted (inverse-probability term only), and naive (complete-case,
unit sampling weights) variant.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import nuisance
from .data import DataError, ShiftSpec, estimate_support_bound
from .glm import fit_logistic
from .solver import expit

TILT_SCORE_TOL = 5e-7
TILT_MAX_ITER = 10

VARIANTS = ("augmented", "reweighted", "naive")


def _logit(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


@dataclass
class TiltDiagnostics:
    xi: float = 0.0
    epsilon: float = 0.0
    score_c: float = 0.0
    score_y: float = 0.0
    tilt_iterations: tuple = (0, 0)
    converged: bool = True


@dataclass
class EstimateResult:
    """Point estimate with influence-function based Wald inference."""

    psi: float
    variant: str
    delta: float
    se: float
    ci: tuple
    p_value: float
    eif_values: np.ndarray
    alpha: float = 0.05
    n: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_record(self):
        rec = {
            "variant": self.variant,
            "delta": self.delta,
            "psi": self.psi,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "p_value": self.p_value,
            "alpha": self.alpha,
            "n": self.n,
            "diagnostics": {
                k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                for k, v in self.diagnostics.items()
            },
        }
        return rec


def plugin(weights_phase2, qy_shift):
    """Substitution estimator: weighted mean of the outcome regression at
    the policy exposure."""
    return float(weights_phase2 @ qy_shift)


def eif_observed(c, g, df_full, G):
    """Observed-data influence values per row.

    ``df_full`` carries the full-data influence values, zero-filled on
    first-phase rows where they are undefined (their term vanishes since
    ``c = 0`` there).
    """
    ratio = c / g
    return ratio * df_full - (ratio - 1.0) * G


def _zero_fill(data, values_phase2):
    full = np.zeros(data.n)
    full[data.phase2] = values_phase2
    return full


def wald_inference(psi, eif_values, alpha=0.05):
    """Wald SE/CI/p from the empirical variance of the influence values."""
    eif_values = np.asarray(eif_values, dtype=np.float64)
    n = eif_values.size
    if n < 2:
        raise DataError("inference needs at least 2 rows")
    sigma2 = float(np.var(eif_values, ddof=1))
    if sigma2 <= 0.0:
        warnings.warn("influence values have zero variance; degenerate interval")
        return 0.0, (psi, psi), (1.0 if psi == 0.0 else 0.0)
    se = float(np.sqrt(sigma2 / n))
    z = float(ndtri(1.0 - alpha / 2.0))
    ci = (psi - z * se, psi + z * se)
    p = float(2.0 * (1.0 - ndtr(abs(psi) / se)))
    return se, ci, p


def tilt_sampling(c, g_values, G_values, zeta, tol=TILT_SCORE_TOL, max_iter=TILT_MAX_ITER):
    """First targeting step: tilt g along the ``G/g`` submodel until the
    sampling score ``sum((G/g*)(C - g*))/n`` vanishes."""
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    g_star = np.asarray(g_values, dtype=np.float64).copy()
    xi_total = 0.0
    iters = 0

    def score(gv):
        return float(((G_values / gv) * (c - gv)).sum()) / n

    sc = score(g_star)
    converged = abs(sc) < tol
    while not converged and iters < max_iter:
        iters += 1
        g_work = np.clip(g_star, zeta, 1.0 - 1e-9)
        cov = G_values / g_work
        offset = _logit(g_work)
        fit = fit_logistic(cov[:, None], c, np.ones(n), offset=offset)
        xi = float(fit.coefficients[0])
        # safeguarded step: the refit map can overshoot and oscillate, so
        # keep the damping factor that leaves the smallest score
        best = None
        for factor in (1.0, 0.66, 0.5, 0.33):
            cand = np.clip(expit(offset + factor * xi * cov), zeta, 1.0)
            s = score(cand)
            if best is None or abs(s) < abs(best[1]):
                best = (factor, s, cand)
        factor, sc, g_star = best
        xi_total += factor * xi
        converged = abs(sc) < tol
    return g_star, xi_total, sc, iters, converged


def tilt_outcome(
    y2,
    qy_obs,
    qy_shift,
    H_obs,
    H_shift,
    sampling_weights2,
    n_total,
    tol=TILT_SCORE_TOL,
    max_iter=TILT_MAX_ITER,
):
    """Second targeting step: tilt the outcome regression along ``H`` with
    inverse-probability weights, updating predictions at both the observed
    and the policy exposures."""
    q_obs = np.clip(qy_obs, 1e-6, 1.0 - 1e-6).copy()
    q_shift = np.clip(qy_shift, 1e-6, 1.0 - 1e-6).copy()
    eps_total = 0.0
    iters = 0

    def score(qo):
        return float((sampling_weights2 * H_obs * (y2 - qo)).sum()) / n_total

    sc = score(q_obs)
    converged = abs(sc) < tol
    while not converged and iters < max_iter:
        iters += 1
        fit = fit_logistic(
            H_obs[:, None], y2, sampling_weights2, offset=_logit(q_obs)
        )
        eps = float(fit.coefficients[0])
        best = None
        for factor in (1.0, 0.66, 0.5, 0.33):
            cand = np.clip(expit(_logit(q_obs) + factor * eps * H_obs), 1e-6, 1.0 - 1e-6)
            s = score(cand)
            if best is None or abs(s) < abs(best[1]):
                best = (factor, s, cand)
        factor, sc, q_obs = best
        q_shift = np.clip(
            expit(_logit(q_shift) + factor * eps * H_shift), 1e-6, 1.0 - 1e-6
        )
        eps_total += factor * eps
        converged = abs(sc) < tol
    return q_obs, q_shift, eps_total, sc, iters, converged


def _variant_tag(family, variant):
    return family if variant == "augmented" else f"{family}_{variant}"


def onestep(data, ns, variant="augmented", alpha=0.05):
    """One-step estimator: plug-in plus the mean estimated influence value.

    The reweighted variant keeps only the inverse-probability term of the
    influence function (no projection correction), reproducing its
    characteristic conservative variance under estimated sampling weights.
    """
    if variant not in VARIANTS:
        raise DataError(f"unknown variant '{variant}'")
    df_full = _zero_fill(data, ns.df_values)
    ratio_term = (data.c / ns.core.g_values) * df_full
    if variant == "augmented":
        eif = eif_observed(data.c, ns.core.g_values, df_full, ns.G_values)
    else:  # reweighted and naive share the ratio-only influence values
        eif = ratio_term
    psi = ns.psi_plugin + float(eif.mean())
    se, ci, p = wald_inference(psi, eif, alpha)
    diag = dict(ns.diagnostics)
    diag.update({"psi_plugin": ns.psi_plugin, "correction": float(eif.mean()),
                 "mean_eif": float(eif.mean())})
    return EstimateResult(
        psi=psi,
        variant=_variant_tag("onestep", variant),
        delta=ns.spec.delta,
        se=se,
        ci=ci,
        p_value=p,
        eif_values=eif,
        alpha=alpha,
        n=data.n,
        diagnostics=diag,
    )


def tmle(data, ns, variant="augmented", alpha=0.05, plugin_weights="tilted"):
    """Targeted estimator with the two tilting steps.

    ``plugin_weights`` selects whether the final substitution step rebuilds
    the joint-distribution weights from the tilted sampling fit (default;
    makes the empirical influence-function mean vanish) or keeps the
    initial ones.
    """
    if variant not in VARIANTS:
        raise DataError(f"unknown variant '{variant}'")
    if plugin_weights not in ("tilted", "initial"):
        raise DataError("plugin_weights must be 'tilted' or 'initial'")
    mask = data.phase2
    y2 = data.y_obs
    g = ns.core.g_values

    if variant == "augmented":
        g_star, xi, score_c, it_c, conv_c = tilt_sampling(
            data.c, g, ns.G_values, ns.core.zeta
        )
    else:
        g_star, xi, score_c, it_c, conv_c = g.copy(), 0.0, 0.0, 0, True

    w2 = data.c[mask] / g_star[mask]
    q_obs, q_shift, eps, score_y, it_y, conv_y = tilt_outcome(
        y2, ns.qy_obs, ns.qy_shift, ns.H_obs, ns.H_shift, w2, data.n
    )
    if not (conv_c and conv_y):
        warnings.warn("targeting did not meet the score tolerance; proceeding")

    if plugin_weights == "tilted":
        weights = nuisance.joint_distribution_weights(data, g_star)
    else:
        weights = ns.core.weights
    psi = plugin(weights[mask], q_shift)

    df_star = nuisance.pseudo_outcomes(y2, q_obs, q_shift, ns.H_obs, psi)
    df_full = _zero_fill(data, df_star)
    if variant == "augmented":
        eif = eif_observed(data.c, g_star, df_full, ns.G_values)
    else:
        eif = (data.c / g_star) * df_full

    se, ci, p = wald_inference(psi, eif, alpha)
    diag = dict(ns.diagnostics)
    diag.update(
        {
            "psi_plugin": ns.psi_plugin,
            "xi": xi,
            "epsilon": eps,
            "score_c": score_c,
            "score_y": score_y,
            "tilt_iterations": (it_c, it_y),
            "targeting_converged": bool(conv_c and conv_y),
            "mean_eif": float(eif.mean()),
        }
    )
    return EstimateResult(
        psi=psi,
        variant=_variant_tag("tmle", variant),
        delta=ns.spec.delta,
        se=se,
        ci=ci,
        p_value=p,
        eif_values=eif,
        alpha=alpha,
        n=data.n,
        diagnostics=diag,
    )


def estimate_grid(
    data,
    deltas,
    *,
    estimator="tmle",
    variant="augmented",
    g_method="glm",
    q_method="glm",
    density_method="gaussian",
    eif_method="glm",
    support_mode="empirical_max",
    density_eps=0.01,
    zeta=0.01,
    alpha=0.05,
    seed=0,
    hal_opts=None,
    haldensify_opts=None,
    plugin_weights="tilted",
):
    """Estimate the counterfactual mean over a grid of shifts.

    Shift-independent nuisances are fit once and shared across the grid.
    The naive variant restricts to complete cases and uses unit sampling
    probabilities throughout (so its nuisance fits are unweighted).
    """
    if estimator not in ("tmle", "onestep"):
        raise DataError(f"unknown estimator '{estimator}'")
    deltas = [float(d) for d in np.atleast_1d(deltas)]
    if not deltas:
        raise DataError("empty delta grid")

    if variant == "naive":
        data_eff = data.phase2_subset()
        core = nuisance.fit_core(
            data_eff,
            g_method="known",
            q_method=q_method,
            density_method=density_method,
            zeta=zeta,
            seed=seed,
            hal_opts=hal_opts,
            haldensify_opts=haldensify_opts,
        )
    else:
        data_eff = data
        core = nuisance.fit_core(
            data,
            g_method=g_method,
            q_method=q_method,
            density_method=density_method,
            zeta=zeta,
            seed=seed,
            hal_opts=hal_opts,
            haldensify_opts=haldensify_opts,
        )

    need_projection = variant == "augmented"
    results = []
    for delta in deltas:
        spec = ShiftSpec(delta=delta, support_mode=support_mode, density_eps=density_eps)
        bound = estimate_support_bound(data_eff, spec, density=core.q_model)
        ns = nuisance.assemble_for_delta(
            data_eff,
            core,
            spec,
            bound,
            eif_method=eif_method,
            seed=seed,
            hal_opts=hal_opts,
            fit_projection=need_projection,
        )
        if estimator == "onestep":
            res = onestep(data_eff, ns, variant=variant, alpha=alpha)
        else:
            res = tmle(
                data_eff, ns, variant=variant, alpha=alpha, plugin_weights=plugin_weights
            )
        results.append(res)
    return results


def estimate_shift(data, delta, **kwargs):
    """Single-shift convenience wrapper around :func:`estimate_grid`."""
    return estimate_grid(data, [delta], **kwargs)[0]
