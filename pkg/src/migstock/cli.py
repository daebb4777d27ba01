"""Command-line entry point: ``migstock {simulate,fit,validate,export-plots}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 convergence
warning (outputs are still written).
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .biasadjust import BiasCoefficients, adjust_wave, anchor_pairs, fit_bias_model
from .estimator import MigrantStockNowcaster
from .exceptions import MigStockError, NotConverged
from .ingest import AgeGroup, align, parse_panel
from .model import ModelConfig, write_samples
from .simulate import SimulationDims, draw_truth, generate, write_simulation
from .validate import run_validation

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3
MANIFEST = "manifest.json"
FLOAT = "%.17g"
TRUTH_KEYS = ("sigma_beta1", "sigma_beta", "sigma_phi", "sigma_eps", "sigma_ns", "sigma_fb", "rho_range",
              "alpha0", "alpha1", "effect_sd")
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
RUN_KEYS = {
    "simulate": ("seed",) + tuple(f.name for f in fields(SimulationDims)) + TRUTH_KEYS,
    "fit": MODEL_KEYS + ("anchor_year", "horizon"),
    "validate": MODEL_KEYS + ("holdout_year", "window"),
}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Parse a ``key = value`` file (``#`` comments allowed) into a dict of strings."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    return dict(parser["run"])


def _settings(args, command) -> dict:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(values) - set(RUN_KEYS[command]))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    for key in RUN_KEYS[command]:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _model_config(values) -> ModelConfig:
    try:
        return ModelConfig.from_dict({k: v for k, v in values.items() if k in MODEL_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _optional_int(values, key, default=None):
    v = values.get(key)
    return default if v in (None, "") else int(v)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _digests(paths, root=None) -> dict:
    out = {}
    for p in sorted(Path(x) for x in paths):
        key = p.relative_to(root).as_posix() if root is not None else p.name
        out[key] = sha256(p)
    return out


def write_manifest(out_dir, command, settings, inputs, outputs, extra=None) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "version": __version__,
        "settings": {k: (v if isinstance(v, (int, float, bool)) or v is None else str(v))
                     for k, v in sorted(settings.items())},
        "inputs": _digests(inputs),
        "outputs": _digests(outputs, out_dir),
        **(extra or {}),
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _to_csv(frame, path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT, lineterminator="\n")
    return Path(path)


def cmd_simulate(args) -> int:
    values = _settings(args, "simulate")
    seed = int(values.pop("seed", 0))
    dim_keys = {f.name for f in fields(SimulationDims)}
    try:
        dims = SimulationDims.from_dict({k: v for k, v in values.items() if k in dim_keys})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    truth_kw = {}
    for key in TRUTH_KEYS:
        if key in values:
            v = values[key]
            truth_kw[key] = tuple(float(x) for x in str(v).split(",")) if key == "rho_range" else float(v)
    truth = draw_truth(dims, seed, **truth_kw)
    survey, social, record = generate(truth, dims, seed)
    out = Path(args.out_dir)
    paths = write_simulation(out, survey, social, record)
    write_manifest(out, "simulate", {"seed": seed, **values}, [], paths.values(),
                   {"n_survey": len(survey), "n_social": len(social)})
    print(f"wrote {len(survey)} survey and {len(social)} social rows to {out}")
    return EXIT_OK


def _load_panels(args):
    survey = parse_panel(args.survey, "survey")
    social = parse_panel(args.social, "social", origin=survey.origin) if args.social else None
    if social is not None:
        align(survey, social)
    return survey, social


def cmd_fit(args) -> int:
    values = _settings(args, "fit")
    config = _model_config(values)
    anchor = _optional_int(values, "anchor_year")
    horizon = _optional_int(values, "horizon", 0)
    if horizon < 0:
        raise UsageError("--horizon must be >= 0")
    survey, social = _load_panels(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConverged)
        est = MigrantStockNowcaster(config, anchor_year=anchor, use_social=social is not None).fit(survey, social)
    not_converged = any(issubclass(w.category, NotConverged) for w in caught)

    outputs = []
    if est.bias_ is not None:
        outputs.append(out / "bias.json")
        est.bias_.to_json(outputs[-1])
        pairs = anchor_pairs(survey, social, est.bias_.anchor_year)
        pairs["fitted"] = est.bias_.predict_log(pairs["age_group"], pairs["region"], pairs["log_social"])
        pairs["residual"] = pairs["log_survey"] - pairs["fitted"]
        outputs.append(_to_csv(pairs, out / "bias_pairs.csv"))
        outputs.append(_to_csv(est.adjusted_, out / "adjusted_social.csv"))
    outputs.append(out / "components.json")
    est.components_.to_json(outputs[-1])
    samples_dir = out / "samples"
    write_samples(est.samples_, samples_dir)
    outputs += sorted(samples_dir.iterdir())
    table = est.forecast(horizon, include_estimates=True) if horizon > 0 else est.summary().assign(kind="estimate")
    outputs.append(_to_csv(table, out / "summary.csv"))
    rhat = est.rhat_
    if rhat is not None:
        outputs.append(_to_csv(rhat.rename_axis("parameter").reset_index(), out / "rhat.csv"))
    observed = survey.frame[["age_group", "year", "region", "proportion", "source"]]
    if est.adjusted_ is not None:
        adj = est.adjusted_.assign(proportion=np.exp(est.adjusted_["log_adjusted"]), source="social_adjusted")
        observed = pd.concat([observed, adj[observed.columns]], ignore_index=True)
    outputs.append(_to_csv(observed, out / "observed.csv"))

    max_rhat = None if rhat is None or rhat.empty else float(rhat.max())
    inputs = [args.survey] + ([args.social] if args.social else []) + ([args.config] if args.config else [])
    write_manifest(out, "fit", {**config.to_dict(), "anchor_year": anchor, "horizon": horizon}, inputs, outputs,
                   {"max_rhat": max_rhat, "converged": not not_converged,
                    "rhat_threshold": config.rhat_threshold})
    if not_converged:
        print(f"warning: R-hat {max_rhat:.3f} exceeds {config.rhat_threshold}; see {out / 'rhat.csv'}",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(f"fit written to {out} (max R-hat {max_rhat if max_rhat is None else round(max_rhat, 3)})")
    return EXIT_OK


def cmd_validate(args) -> int:
    values = _settings(args, "validate")
    config = _model_config(values)
    survey, social = _load_panels(args)
    if social is None:
        raise UsageError("validate needs --social")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConverged)
        report = run_validation(survey, social, config, _optional_int(values, "holdout_year"),
                                _optional_int(values, "window", 3))
    not_converged = any(issubclass(w.category, NotConverged) for w in caught)
    out = Path(args.out_dir)
    paths = report.write(out)
    inputs = [args.survey, args.social] + ([args.config] if args.config else [])
    write_manifest(out, "validate", {**config.to_dict(), **{k: values[k] for k in ("holdout_year", "window")
                                                           if k in values}},
                   inputs, paths.values(), {"overall_rmse": report.overall_rmse, "converged": not not_converged})
    for name, value in report.overall_rmse.items():
        print(f"{name:>15s}  {value:.6g}")
    return EXIT_NOT_CONVERGED if not_converged else EXIT_OK


def _age_order(labels):
    return [a.label for a in sorted({AgeGroup.from_label(x) for x in labels})]


def export_timeseries(run_dir: Path) -> pd.DataFrame:
    summary = pd.read_csv(run_dir / "summary.csv")
    observed = pd.read_csv(run_dir / "observed.csv")
    obs = (observed.groupby(["age_group", "year", "region", "source"])["proportion"].mean()
           .unstack("source").reset_index())
    obs.columns.name = None
    return summary.merge(obs, on=["age_group", "year", "region"], how="left")


def export_age_dist(run_dir: Path) -> pd.DataFrame:
    s = pd.read_csv(run_dir / "summary.csv")
    s["share"] = s["median"] / s.groupby(["year", "region"])["median"].transform("sum")
    order = {a: i for i, a in enumerate(_age_order(s["age_group"]))}
    s = s.sort_values(["region", "year", "age_group"], key=lambda c: c.map(order) if c.name == "age_group" else c)
    return s[["region", "year", "kind", "age_group", "median", "lower95", "upper95", "share"]]


def export_bias_fit(run_dir: Path) -> pd.DataFrame:
    path = run_dir / "bias_pairs.csv"
    if not path.exists():
        raise MigStockError(f"{run_dir} has no bias fit (was the run fitted without social data?)")
    pairs = pd.read_csv(path)
    coefs = BiasCoefficients.from_json(run_dir / "bias.json")
    pairs["anchor_year"] = coefs.anchor_year
    return pairs


def export_rmse(run_dir: Path) -> pd.DataFrame:
    parts = []
    overall = run_dir / "rmse_overall.csv"
    if not overall.exists():
        raise MigStockError(f"{run_dir} is not a validation run")
    o = pd.read_csv(overall).assign(stratum_type="overall", stratum="all")
    parts.append(o)
    for kind, col in (("by_age", "age_group"), ("by_region", "region")):
        f = pd.read_csv(run_dir / f"rmse_{kind}.csv").rename(columns={col: "stratum"})
        parts.append(f.assign(stratum_type=col))
    return pd.concat(parts, ignore_index=True)[["stratum_type", "stratum", "model", "rmse", "n_cells"]]


EXPORTS = {"timeseries": export_timeseries, "age-dist": export_age_dist, "bias-fit": export_bias_fit,
           "rmse": export_rmse}


def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise MigStockError(f"run directory {run_dir} does not exist")
    table = EXPORTS[args.kind](run_dir)
    out = Path(args.out) if args.out else run_dir / "plots" / f"{args.kind}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    _to_csv(table, out)
    print(f"wrote {len(table)} rows to {out}")
    return EXIT_OK


def _sampler_flags(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", dest="n_chains", type=int)
    g.add_argument("--iter", dest="n_iter", type=int)
    g.add_argument("--warmup", dest="n_warmup", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="migstock", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic survey and social panels")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model and write posterior summaries")
    p.add_argument("--survey", required=True)
    p.add_argument("--social")
    p.add_argument("--anchor-year", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    _sampler_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="hold out the last survey year and compare four models")
    p.add_argument("--survey", required=True)
    p.add_argument("--social", required=True)
    p.add_argument("--holdout-year", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    _sampler_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export-plots", help="write plot-ready CSVs from a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--kind", required=True, choices=sorted(EXPORTS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"migstock {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MigStockError, OSError, ValueError, KeyError) as exc:
        print(f"migstock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
