"""Synthetic data-generating processes and the replication study driver.

``dgp1`` is a simple three-covariate design with a common outcome and a
sampling mechanism that depends on the outcome; ``dgp2`` is calibrated to
a rare-outcome trial with case-cohort style sampling (every case enters
the second phase); ``dgp2_null`` removes the exposure effect. Ground
truths are Monte Carlo oracles over the exposure-shifted outcome mean.
"""

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import estimators
from .data import DataError, ObservedDataset
from .solver import expit

DGP_NAMES = ("dgp1", "dgp2", "dgp2_null")


@dataclass(frozen=True)
class DgpSpec:
    name: str
    n: int
    seed: int = 0
    w1_scale_as_variance: bool = False  # read Normal(26.6, 5.7) as variance

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise DataError(f"unknown dgp '{self.name}'")
        if self.n < 10:
            raise DataError("dgp sample size must be at least 10")


def _dgp1_outcome_mean(a, w):
    return expit((w[:, 0] + w[:, 1] + w[:, 2]) / 3.0 - a)


def _dgp2_outcome_mean(a, w):
    return expit(
        -2.9 - 0.0013 * w[:, 0] - 0.0016 * w[:, 1] + 0.0678 * w[:, 2]
        + 0.039 * w[:, 3] - 0.033 * a
    )


def _dgp2_null_outcome_mean(a, w):
    return expit(
        -2.8 - 0.0013 * w[:, 0] - 0.0016 * w[:, 1] + 0.0678 * w[:, 2] + 0.039 * w[:, 3]
    )


def _dgp1_draw_w(rng, n, spec=None):
    return np.column_stack(
        [
            rng.normal(3.0, 1.0, n),
            rng.binomial(1, 0.6, n).astype(float),
            rng.binomial(1, 0.3, n).astype(float),
        ]
    )


def _dgp2_draw_w(rng, n, spec=None):
    sd1 = np.sqrt(5.7) if (spec is not None and spec.w1_scale_as_variance) else 5.7
    return np.column_stack(
        [
            rng.normal(26.6, sd1, n),
            rng.poisson(40, n).astype(float),
            rng.binomial(1, 0.4, n).astype(float),
            rng.binomial(1, 0.3, n).astype(float),
        ]
    )


def _dgp1_draw_a(rng, w):
    return rng.normal(2.0 * (w[:, 1] + w[:, 2]), 1.0)


def _dgp2_draw_a(rng, w):
    mean = -1.37 + 0.004 * w[:, 0] + 0.015 * w[:, 1] + 0.05 * w[:, 2] + 0.25 * w[:, 3]
    return rng.normal(mean, 0.2)


def _dgp1_sampling_prob(y, w):
    return expit((w[:, 0] + w[:, 1] + w[:, 2]) / 3.0 - y)


def _dgp2_sampling_prob(y, w):
    p = expit(-2.45 - 0.027 * w[:, 0] + 0.012 * w[:, 1] + 0.39 * w[:, 2] + 0.166 * w[:, 3])
    return np.where(y == 1, 1.0, p)  # every case enters the second phase


_DGPS = {
    "dgp1": (_dgp1_draw_w, _dgp1_draw_a, _dgp1_outcome_mean, _dgp1_sampling_prob),
    "dgp2": (_dgp2_draw_w, _dgp2_draw_a, _dgp2_outcome_mean, _dgp2_sampling_prob),
    "dgp2_null": (_dgp2_draw_w, _dgp2_draw_a, _dgp2_null_outcome_mean, _dgp2_sampling_prob),
}


def generate(spec):
    """Draw one observed sample; also returns the hidden full data.

    The second element holds the pre-censoring exposure vector and the
    outcome probabilities, for oracle use only.
    """
    draw_w, draw_a, outcome_mean, sampling_prob = _DGPS[spec.name]
    rng = np.random.default_rng(spec.seed)
    w = draw_w(rng, spec.n, spec)
    a = draw_a(rng, w)
    py = outcome_mean(a, w)
    y = (rng.random(spec.n) < py).astype(float)
    pc = sampling_prob(y, w)
    c = (rng.random(spec.n) < pc).astype(np.int8)
    if not c.any():  # degenerate tiny-sample draw; force one phase-2 row
        c[0] = 1
    a_obs = np.where(c == 1, a, np.nan)
    data = ObservedDataset(w=w, a=a_obs, y=y, c=c, ids=np.arange(spec.n))
    hidden = {"a_full": a, "p_y": py, "p_c": pc}
    return data, hidden


@dataclass(frozen=True)
class TruthResult:
    value: float
    mc_se: float
    draws: int


def true_psi(name, delta, draws=10**6, seed=1234567):
    """Monte Carlo oracle for the counterfactual mean at shift ``delta``.

    Averages the outcome mean at the uniformly shifted exposure under the
    full-data law (no censoring, no support truncation).
    """
    if draws < 10**5:
        raise DataError("truth oracle needs at least 1e5 draws")
    draw_w, draw_a, outcome_mean, _ = _DGPS[name]
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 250_000
    while done < draws:
        m = min(chunk, draws - done)
        w = draw_w(rng, m)
        a = draw_a(rng, w)
        vals = outcome_mean(a + delta, w)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += m
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0)
    return TruthResult(value=mean, mc_se=float(np.sqrt(var / draws)), draws=draws)


@dataclass
class StudyConfig:
    """Declarative description of a replication study."""

    dgp: str
    sample_sizes: list
    deltas: list
    reps: int
    estimators: list          # dicts: family, variant, nuisance methods
    master_seed: int = 1
    zeta: float = 0.01
    alpha: float = 0.05
    truth_draws: int = 10**6
    support_mode: str = "empirical_max"
    hal_opts: dict = field(default_factory=dict)
    haldensify_opts: dict = field(default_factory=dict)
    w1_scale_as_variance: bool = False

    def __post_init__(self):
        if self.dgp not in DGP_NAMES:
            raise DataError(f"unknown dgp '{self.dgp}'")
        if self.reps < 1:
            raise DataError("reps must be positive")
        if not self.estimators:
            raise DataError("no estimator entries configured")
        for entry in self.estimators:
            if entry.get("family") not in ("onestep", "tmle"):
                raise DataError("estimator family must be 'onestep' or 'tmle'")
            if entry.get("variant", "augmented") not in estimators.VARIANTS:
                raise DataError(f"unknown variant in {entry}")

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise DataError(f"unknown study config keys: {sorted(extra)}")
        missing = {"dgp", "sample_sizes", "deltas", "reps", "estimators"} - set(doc)
        if missing:
            raise DataError(f"study config missing keys: {sorted(missing)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "dgp": self.dgp,
            "sample_sizes": list(self.sample_sizes),
            "deltas": [float(d) for d in self.deltas],
            "reps": self.reps,
            "estimators": self.estimators,
            "master_seed": self.master_seed,
            "zeta": self.zeta,
            "alpha": self.alpha,
            "truth_draws": self.truth_draws,
            "support_mode": self.support_mode,
            "hal_opts": self.hal_opts,
            "haldensify_opts": self.haldensify_opts,
            "w1_scale_as_variance": self.w1_scale_as_variance,
        }


def _entry_label(entry):
    fam = entry["family"]
    var = entry.get("variant", "augmented")
    return fam if var == "augmented" else f"{fam}_{var}"


def _rep_seed(master_seed, n_index, rep):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(n_index, rep))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def _run_rep(args):
    """One replication: generate data, fit shared nuisances, estimate all
    configured entries at every shift. Returns raw result rows."""
    from . import nuisance
    from .data import ShiftSpec, estimate_support_bound

    config_doc, n_index, n, rep = args
    config = StudyConfig.from_dict(config_doc)
    seed = _rep_seed(config.master_seed, n_index, rep)
    spec = DgpSpec(
        name=config.dgp, n=n, seed=seed,
        w1_scale_as_variance=config.w1_scale_as_variance,
    )
    data, _ = generate(spec)
    rows = []
    # Entries sharing nuisance configurations reuse one set of fits.
    groups = {}
    for entry in config.estimators:
        key = (
            entry.get("variant", "augmented") == "naive",
            entry.get("g_method", "glm"),
            entry.get("q_method", "glm"),
            entry.get("density_method", "gaussian"),
            entry.get("eif_method", "glm"),
        )
        groups.setdefault(key, []).append(entry)

    hal_opts = config.hal_opts or None
    haldensify_opts = config.haldensify_opts or None
    for (is_naive, g_method, q_method, density_method, eif_method), entries in groups.items():
        if is_naive:
            data_eff = data.phase2_subset()
            core = nuisance.fit_core(
                data_eff,
                g_method="known",
                q_method=q_method,
                density_method=density_method,
                zeta=config.zeta,
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
                zeta=config.zeta,
                seed=seed,
                hal_opts=hal_opts,
                haldensify_opts=haldensify_opts,
            )
        need_projection = any(
            e.get("variant", "augmented") == "augmented" for e in entries
        )
        for delta in config.deltas:
            sspec = ShiftSpec(delta=float(delta), support_mode=config.support_mode)
            bound = estimate_support_bound(data_eff, sspec, density=core.q_model)
            ns = nuisance.assemble_for_delta(
                data_eff,
                core,
                sspec,
                bound,
                eif_method=eif_method,
                seed=seed,
                hal_opts=hal_opts,
                fit_projection=need_projection,
            )
            for entry in entries:
                variant = entry.get("variant", "augmented")
                if entry["family"] == "onestep":
                    res = estimators.onestep(data_eff, ns, variant=variant, alpha=config.alpha)
                else:
                    res = estimators.tmle(data_eff, ns, variant=variant, alpha=config.alpha)
                rows.append(
                    {
                        "variant": res.variant,
                        "n": n,
                        "delta": res.delta,
                        "rep": rep,
                        "psi_hat": res.psi,
                        "se": res.se,
                        "ci_lo": res.ci[0],
                        "ci_hi": res.ci[1],
                    }
                )
    return rows


def run_study(config, workers=1, progress=None):
    """Run the configured replications and aggregate the usual metrics.

    Returns ``(raw, aggregate)`` DataFrames. Raw rows carry one record per
    (variant, n, delta, rep); the aggregate reports root-n-scaled bias,
    n-scaled MSE, CI coverage, and mean CI width against the Monte Carlo
    truth. Fixed master seed implies identical output for any worker
    count; individual replication failures are dropped (with a study-level
    error if more than 5% fail).
    """
    truths = {
        float(d): true_psi(
            config.dgp,
            float(d),
            draws=config.truth_draws,
            seed=_rep_seed(config.master_seed, 9999, k),
        ).value
        for k, d in enumerate(config.deltas)
    }

    tasks = [
        (config.to_dict(), n_index, int(n), rep)
        for n_index, n in enumerate(config.sample_sizes)
        for rep in range(config.reps)
    ]
    rows = []
    failures = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = pool.map(_run_rep_safe, tasks, chunksize=1)
            for task, (ok, payload) in zip(tasks, outcomes):
                if ok:
                    rows.extend(payload)
                else:
                    failures.append((task[1:], payload))
    else:
        for task in tasks:
            ok, payload = _run_rep_safe(task)
            if ok:
                rows.extend(payload)
            else:
                failures.append((task[1:], payload))

    total = len(tasks)
    if failures:
        for key, msg in failures[:10]:
            warnings.warn(f"replication {key} failed: {msg}")
        if len(failures) > 0.05 * total:
            raise RuntimeError(
                f"{len(failures)} of {total} replications failed (>5%)"
            )
    if progress is not None:
        progress(f"completed {total - len(failures)}/{total} replications")
    if not rows:
        raise RuntimeError("no replication produced results")

    raw = pd.DataFrame(rows)
    raw["truth"] = raw["delta"].map(lambda d: truths[float(d)])
    raw["covered"] = ((raw["ci_lo"] <= raw["truth"]) & (raw["truth"] <= raw["ci_hi"])).astype(int)
    raw = raw.sort_values(["variant", "n", "delta", "rep"], kind="stable").reset_index(drop=True)

    groups = []
    for (variant, n, delta), grp in raw.groupby(["variant", "n", "delta"], sort=True):
        truth = truths[float(delta)]
        err = grp["psi_hat"] - truth
        groups.append(
            {
                "variant": variant,
                "n": int(n),
                "delta": float(delta),
                "sqrt_n_bias": float(np.sqrt(n) * err.mean()),
                "n_mse": float(n * (err**2).mean()),
                "coverage_95": float(grp["covered"].mean()),
                "mean_ci_width": float((grp["ci_hi"] - grp["ci_lo"]).mean()),
                "reps_used": int(len(grp)),
                "truth": truth,
            }
        )
    aggregate = pd.DataFrame(groups)
    return raw, aggregate


def _run_rep_safe(args):
    try:
        return True, _run_rep(args)
    except Exception as exc:  # replication-level isolation
        return False, f"{type(exc).__name__}: {exc}"
