"""Command-line surface: estimation on CSV data, replication studies, and
conditional-density fit/predict round trips.

Exit codes: 0 success, 1 data or model error, 2 usage or config error.
Every command writes a run manifest next to its outputs so an identical
invocation can be reproduced exactly.
"""

import argparse
import re
import datetime
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, density, estimators, msm, simulate
from .data import DataError, read_csv

BUNDLED_CONFIGS = ("sim1_small", "sim1_paper", "sim2_paper", "sim2_null")


def _config_digest(doc):
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(out_dir, command, config_doc, seed, outputs, started):
    manifest = {
        "command": command,
        "config": config_doc,
        "config_digest": _config_digest(config_doc),
        "master_seed": seed,
        "tool_version": __version__,
        "started_utc": started,
        "finished_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _utcnow():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _parse_delta_list(text):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad delta list '{text}'") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty delta list")
    return values


def _parse_int_list(text):
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list '{text}'") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty integer list")
    return values


def cmd_estimate(args):
    started = _utcnow()
    data = read_csv(args.data, scale_y=args.scale_y)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = estimators.estimate_grid(
        data,
        args.delta,
        estimator=args.estimator,
        variant=args.variant,
        g_method=args.g_method,
        q_method=args.q_method,
        density_method=args.density_method,
        eif_method=args.eif_method,
        support_mode=args.support_mode,
        density_eps=args.density_eps,
        zeta=args.zeta,
        alpha=args.alpha,
        seed=args.seed,
    )
    records = [r.to_record() for r in results]
    if data.y_scale != (0.0, 1.0):
        lo, hi = data.y_scale
        for rec in records:
            rec["original_scale"] = {
                "psi": lo + rec["psi"] * (hi - lo),
                "se": rec["se"] * (hi - lo),
                "ci_lo": lo + rec["ci_lo"] * (hi - lo),
                "ci_hi": lo + rec["ci_hi"] * (hi - lo),
            }

    outputs = []
    json_path = out_dir / "results.json"
    json_path.write_text(json.dumps(records, indent=2, sort_keys=True))
    outputs.append(json_path)

    csv_path = out_dir / "results.csv"
    flat = pd.DataFrame(
        [{k: v for k, v in rec.items() if k not in ("diagnostics", "original_scale")}
         for rec in records]
    )
    flat.to_csv(csv_path, index=False, float_format="%.17g")
    outputs.append(csv_path)

    if args.msm:
        fit = msm.msm_from_results(results, alpha=args.alpha)
        msm_path = out_dir / "msm.json"
        msm_path.write_text(json.dumps(fit.to_record(), indent=2, sort_keys=True))
        outputs.append(msm_path)
        curve_path = out_dir / "msm_curve.csv"
        pd.DataFrame(
            {
                "delta": fit.deltas,
                "psi": fit.psis,
                "ci_lo": [r.ci[0] for r in sorted(results, key=lambda r: r.delta)],
                "ci_hi": [r.ci[1] for r in sorted(results, key=lambda r: r.delta)],
            }
        ).to_csv(curve_path, index=False)
        outputs.append(curve_path)

    config_doc = {
        "data": str(args.data),
        "delta": args.delta,
        "estimator": args.estimator,
        "variant": args.variant,
        "g_method": args.g_method,
        "q_method": args.q_method,
        "density_method": args.density_method,
        "eif_method": args.eif_method,
        "support_mode": args.support_mode,
        "density_eps": args.density_eps,
        "zeta": args.zeta,
        "alpha": args.alpha,
        "seed": args.seed,
        "msm": bool(args.msm),
        "scale_y": bool(args.scale_y),
    }
    _write_manifest(out_dir, "estimate", config_doc, args.seed, outputs, started)
    return 0


def _resolve_config_path(name_or_path):
    p = Path(name_or_path)
    if p.exists():
        return p, json.loads(p.read_text())
    if name_or_path in BUNDLED_CONFIGS:
        text = resources.files("shiftest").joinpath(f"configs/{name_or_path}.json").read_text()
        return Path(f"bundled:{name_or_path}"), json.loads(text)
    raise DataError(f"config '{name_or_path}' not found (bundled: {BUNDLED_CONFIGS})")


def cmd_simulate(args):
    started = _utcnow()
    _, doc = _resolve_config_path(args.config)
    try:
        config = simulate.StudyConfig.from_dict(doc)
    except (TypeError, DataError) as exc:
        print(f"invalid study config: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(message):
        print(message, file=sys.stderr)

    raw, aggregate = simulate.run_study(config, workers=args.workers, progress=progress)
    outputs = []
    raw_path = out_dir / "raw.csv"
    raw.to_csv(raw_path, index=False)
    outputs.append(raw_path)
    agg_path = out_dir / "aggregate.csv"
    aggregate.to_csv(agg_path, index=False)
    outputs.append(agg_path)
    _write_manifest(out_dir, "simulate", config.to_dict(), config.master_seed, outputs, started)
    return 0


def cmd_density_fit(args):
    started = _utcnow()
    data = read_csv(args.data)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    weights = np.ones(data.n_phase2)
    hal_opts = {
        "max_degree": args.max_degree,
        "max_knots_per_dim": args.max_knots,
        "n_lambda": args.n_lambda,
        "cv_folds": args.cv_folds,
    }
    model = density.fit_haldensify(
        data.a_obs,
        data.w_obs,
        weights,
        n_bins_grid=args.bins,
        bin_rule=args.bin_rule,
        cv_folds=args.cv_folds,
        seed=args.seed,
        hal_opts=hal_opts,
    )
    out_path.write_text(model.to_json())
    config_doc = {
        "data": str(args.data),
        "bins": args.bins,
        "bin_rule": args.bin_rule,
        "seed": args.seed,
        "hal_opts": hal_opts,
    }
    _write_manifest(out_path.parent, "density fit", config_doc, args.seed, [out_path], started)
    return 0


def cmd_density_predict(args):
    started = _utcnow()
    model = density.CondDensityModel.from_json(Path(args.model).read_text())
    frame = pd.read_csv(args.data, float_precision="round_trip")
    lower = {str(c).strip().lower(): c for c in frame.columns}
    wnames = sorted(
        (c for c in lower if c.startswith("w") and c[1:].isdigit()),
        key=lambda s: int(s[1:]),
    )
    if "a" not in lower or not wnames:
        raise DataError("prediction data needs columns w1..wp and a")
    W = frame[[lower[c] for c in wnames]].to_numpy(dtype=np.float64)
    if W.shape[1] != model.n_covariates:
        raise DataError(
            f"model expects {model.n_covariates} covariates, data has {W.shape[1]}"
        )
    a = pd.to_numeric(frame[lower["a"]], errors="coerce").to_numpy(dtype=np.float64)
    if not np.isfinite(a).all():
        raise DataError("prediction data has missing exposure values")
    dens = model.density(a, W)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out = pd.DataFrame({"a": a})
    for j, name in enumerate(wnames):
        out[name] = W[:, j]
    out["density"] = dens
    out.to_csv(out_path, index=False, float_format="%.17g")
    config_doc = {"model": str(args.model), "data": str(args.data)}
    _write_manifest(out_path.parent, "density predict", config_doc, 0, [out_path], started)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shiftest",
        description="Counterfactual means under additive exposure shifts "
        "with two-phase sampling",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate shift effects on a CSV dataset")
    # let comma lists starting with a negative number through (e.g. -0.5,0,0.5)
    est._negative_number_matcher = re.compile(r"^-\d+[\d.,eE+-]*$|^-\.\d+.*$")
    est.add_argument("--data", required=True)
    est.add_argument("--delta", required=True, type=_parse_delta_list,
                     help="comma-separated shift values")
    est.add_argument("--estimator", choices=("tmle", "onestep"), default="tmle")
    est.add_argument("--variant", choices=estimators.VARIANTS, default="augmented")
    est.add_argument("--g-method", dest="g_method", choices=("glm", "hal"), default="glm")
    est.add_argument("--q-method", dest="q_method", choices=("glm", "hal"), default="glm")
    est.add_argument(
        "--density-method",
        dest="density_method",
        choices=("gaussian", "haldensify", "gaussian_marginal"),
        default="gaussian",
    )
    est.add_argument("--eif-method", dest="eif_method", choices=("glm", "hal"), default="glm")
    est.add_argument(
        "--support-mode",
        dest="support_mode",
        choices=("empirical_max", "density_threshold", "unbounded"),
        default="empirical_max",
    )
    est.add_argument("--density-eps", dest="density_eps", type=float, default=0.01)
    est.add_argument("--zeta", type=float, default=0.01)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", required=True)
    est.add_argument("--msm", action="store_true")
    est.add_argument("--scale-y", dest="scale_y", action="store_true")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a replication study from a config")
    sim.add_argument("--config", required=True,
                     help=f"path to a JSON study config or one of {BUNDLED_CONFIGS}")
    sim.add_argument("--out", required=True)
    sim.add_argument("--workers", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    den = sub.add_parser("density", help="conditional density fit/predict")
    densub = den.add_subparsers(dest="density_command", required=True)
    fit = densub.add_parser("fit")
    fit.add_argument("--data", required=True)
    fit.add_argument("--bins", required=True, type=_parse_int_list)
    fit.add_argument("--bin-rule", dest="bin_rule",
                     choices=("equal_range", "equal_mass"), default="equal_mass")
    fit.add_argument("--seed", type=int, default=0)
    # command-line defaults are leaner than the library's: bin-count
    # selection cross-validates whole hazard fits
    fit.add_argument("--max-degree", dest="max_degree", type=int, default=2)
    fit.add_argument("--max-knots", dest="max_knots", type=int, default=10)
    fit.add_argument("--n-lambda", dest="n_lambda", type=int, default=20)
    fit.add_argument("--cv-folds", dest="cv_folds", type=int, default=3)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_density_fit)
    pred = densub.add_parser("predict")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_density_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
