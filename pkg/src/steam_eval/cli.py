"""Command-line entry point: ``evaluate``, ``simulate`` and ``roc-plot``.

Every artifact embeds the resolved run configuration and seed. Outputs carry
no timestamps or host details, so a rerun with the same inputs and seed
writes identical bytes. Failures print one JSON object to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accuracy import DEFAULT_U0, AccuracyReport
from .data import BasisExpansion, CsvSchema, load_study_csv, load_validation_labels, \
    save_study_csv
from .pipeline import ALL_METHODS, SteamConfig, estimate
from .sim import (DEFAULT_LABEL_GRID, MEASURES, MISSPECS, SHIFTS, TRUTHS, ExperimentSpec,
                  SimScenario, equivalent_label_table, generate_dataset, resolve_workers,
                  run_experiment, scenario_bases, scenario_dict)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """A user-facing failure with a short machine-readable kind."""

    def __init__(self, kind: str, message: str, **details):
        super().__init__(message)
        self.kind = kind
        self.details = details


# ---------------------------------------------------------------------------
# serialization


def _num(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "null"
    if v == int(v) and abs(v) < 1e16:
        return repr(float(v))
    return format(v, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float at 17 significant digits and nan/inf as null."""
    def enc(o, depth):
        pad, inner = " " * (indent * depth), " " * (indent * (depth + 1))
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{inner}{json.dumps(str(k))}: {enc(v, depth + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            seq = list(o)
            if not seq:
                return "[]"
            if all(isinstance(x, (int, float, np.number)) and not isinstance(x, bool)
                   for x in seq):
                return "[" + ", ".join(enc(x, depth + 1) for x in seq) + "]"
            return "[\n" + ",\n".join(inner + enc(x, depth + 1) for x in seq) + "\n" + pad + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _num(o)
        if o is None:
            return "null"
        return json.dumps(str(o))
    return enc(obj, 0) + "\n"


def _fmt_csv(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows, comments=()) -> None:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        values = [r[h] for h in header] if isinstance(r, dict) else r
        w.writerow([_fmt_csv(v) for v in values])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _config_comment(run: dict) -> str:
    return "config " + json.dumps(run, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# argument parsing helpers


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _name_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _interactions(text: str) -> BasisExpansion:
    """``"1:2,2:3"`` -> product terms of design columns 1*2 and 2*3."""
    pairs = []
    for tok in _name_list(text):
        try:
            a, b = (int(v) for v in tok.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"interaction {tok!r} is not of the form i:j")
        pairs.append((a, b))
    return BasisExpansion(tuple(pairs))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: $STEAM_EVAL_THREADS or 1)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _add_tuning(p: argparse.ArgumentParser) -> None:
    p.add_argument("--u0", type=_float_list, default=DEFAULT_U0,
                   help="FPR targets for the cutoff, comma-separated (default 0.05)")
    p.add_argument("--folds", type=int, default=5, help="CV folds; 0 or 1 disables (default 5)")
    p.add_argument("--h1-mult", type=float, default=1.0,
                   help="multiplier on the calibration bandwidths (default 1)")
    p.add_argument("--h2-mult", type=float, default=1.0,
                   help="multiplier on the risk-curve bandwidth (default 1)")
    p.add_argument("--pi-min", type=float, default=0.01,
                   help="clip calibrated probabilities to [pi_min, 1 - pi_min] (default 0.01)")
    p.add_argument("--gamma", type=float, default=1.0, help="adaptive LASSO power (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steam-eval",
        description="Transfer ROC accuracy measures from a labeled source sample "
                    "to an unlabeled target population under covariate shift.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evaluate", help="estimate accuracy measures from a study CSV")
    ev.add_argument("--input", type=Path, required=True, help="study CSV")
    ev.add_argument("--s-col", default="s", help="source indicator column (default s)")
    ev.add_argument("--label-col", default="labeled",
                    help="labeled indicator column (default labeled)")
    ev.add_argument("--y-col", default="y", help="outcome column (default y)")
    ev.add_argument("--features", type=_name_list, default=None,
                    help="covariate columns, comma-separated (default: all others)")
    ev.add_argument("--mu-interactions", type=_interactions, default=BasisExpansion(),
                    help="outcome-model product terms as i:j pairs of covariate positions")
    ev.add_argument("--pi-interactions", type=_interactions, default=BasisExpansion(),
                    help="selection-model product terms as i:j pairs")
    ev.add_argument("--methods", type=_name_list, default=ALL_METHODS,
                    help=f"comma-separated subset of {','.join(ALL_METHODS)}")
    ev.add_argument("--perturb", choices=("exact", "approx", "none"), default="approx",
                    help="perturbation-resampling variant for SEs and CIs (default approx)")
    ev.add_argument("--draws", type=int, default=1000, help="resampling draws B (default 1000)")
    ev.add_argument("--level", type=float, default=0.95, help="CI level (default 0.95)")
    ev.add_argument("--no-plot", action="store_true", help="skip roc.svg")
    _add_tuning(ev)
    _add_common(ev)

    sm = sub.add_parser("simulate", help="run the Monte-Carlo scenarios")
    sm.add_argument("--shift", "--scenario", dest="shift", choices=(*SHIFTS, "all"),
                    default="moderate", help="covariate-shift strength (default moderate)")
    sm.add_argument("--misspec", choices=(*MISSPECS, "all"), default="both_correct",
                    help="which working model is misspecified (default both_correct)")
    sm.add_argument("--n", type=int, default=200, help="labeled source size (default 200)")
    sm.add_argument("--N", type=int, default=10000,
                    help="pooled rows are 2N, split by source membership (default 10000)")
    sm.add_argument("--n-target-labeled", type=int, default=100,
                    help="validation labels in the target (default 100)")
    sm.add_argument("--rho", type=float, default=0.2, help="covariate correlation (default 0.2)")
    sm.add_argument("--replicates", type=int, default=200, help="replicates (default 200)")
    sm.add_argument("--oracle-draws", type=int, default=10**6,
                    help="Monte-Carlo draws for the truth (default 1e6)")
    sm.add_argument("--methods", type=_name_list, default=ALL_METHODS)
    sm.add_argument("--perturb", type=_name_list, default=(),
                    help="resampling variants to score, e.g. exact,approx (default none)")
    sm.add_argument("--draws", type=int, default=500, help="resampling draws B (default 500)")
    sm.add_argument("--label-grid", type=_int_list, default=None,
                    help="target label counts for equivalent labels, comma-separated")
    sm.add_argument("--equivalent-labels", action="store_true",
                    help="compute equivalent labels on the default label grid")
    sm.add_argument("--truth", choices=TRUTHS, default="fitted",
                    help="score against the fitted classifier's accuracy (default) or "
                         "the limiting classifier's")
    sm.add_argument("--export-data", type=Path, default=None,
                    help="also write one simulated study CSV per scenario to this directory")
    _add_tuning(sm)
    _add_common(sm)

    rp = sub.add_parser("roc-plot", help="draw ROC curves from report.json files")
    rp.add_argument("reports", nargs="+", type=Path)
    rp.add_argument("--methods", type=_name_list, default=None,
                    help="methods to draw (default all in each report)")
    rp.add_argument("--out", type=Path, required=True, help="SVG file to write")
    rp.add_argument("--title", default=None)
    return parser


def _config_from(args, **over) -> SteamConfig:
    try:
        return SteamConfig(gamma=args.gamma, h1_mult=args.h1_mult, h2_mult=args.h2_mult,
                           pi_min=args.pi_min, folds=args.folds, seed=args.seed,
                           u0s=tuple(args.u0), methods=tuple(args.methods), **over)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None


# ---------------------------------------------------------------------------
# evaluate


def _coef_block(coef, names) -> dict:
    return {
        "terms": list(names),
        "coefficients": [float(v) for v in coef.values],
        "lambda": coef.lam,
        "support": [int(i) for i in coef.support],
        "ridge_fallback": bool(coef.ridge_fallback),
    }


def _method_block(rep: AccuracyReport) -> dict:
    return {
        "auc": rep.auc,
        "prevalence": rep.prevalence,
        "operating_points": [
            {"u0": op.u0, "cutoff": op.cutoff, "tpr": op.tpr, "fpr": op.fpr,
             "ppv": op.ppv, "npv": op.npv}
            for op in rep.at_fpr.values()
        ],
        "diagnostics": rep.diagnostics,
    }


def _run_config(args, config: SteamConfig, extra: dict) -> dict:
    return {"version": __version__, "seed": args.seed, "steam": config.to_dict(), **extra}


def cmd_evaluate(args) -> int:
    from .accuracy import roc_at
    from .inference import BAND_FPR, perturb, roc_band, summarize_draws
    from .plotting import plot_roc

    schema = CsvSchema(args.s_col, args.label_col, args.y_col,
                       tuple(args.features) if args.features else None)
    data = load_study_csv(args.input, schema)
    validation = load_validation_labels(args.input, schema)
    config = _config_from(args, mu_basis=args.mu_interactions, pi_basis=args.pi_interactions)
    for b in (config.mu_basis, config.pi_basis):
        b.validate(data.p)
    if args.perturb != "none" and args.draws < 100:
        raise CliError("config", "--draws must be at least 100 for confidence intervals")
    workers = resolve_workers(args.threads)
    est = estimate(data, config, validation, strict=False)
    if not est.reports:
        raise CliError("estimation", "every requested method failed", failures=est.failures)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _run_config(args, config, {
        "input": args.input.name, "schema": schema.to_dict(),
        "perturb": args.perturb, "draws": args.draws, "level": args.level,
    })
    fit = est.fit
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": run,
        "seed": args.seed,
        "sizes": {"labeled": data.n, "unlabeled_source": data.n_unlabeled,
                  "target": data.n_target,
                  "validation": 0 if validation is None else len(validation)},
        "models": {
            "outcome": _coef_block(fit.beta, ("(intercept)",) + fit.outcome_data.feature_names),
            "selection": _coef_block(fit.alpha, ("(intercept)",) + fit.selection_data.feature_names),
        },
        "bandwidths": {"h1": list(fit.scored.calibrator.bandwidths), "h2": fit.h2,
                       "h2_cv": None if est.cv is None else est.cv.h2},
        "methods": {name: _method_block(rep) for name, rep in est.reports.items()},
        "failures": est.failures,
    }
    band = None
    if args.perturb != "none" and "steam" in est.reports:
        d = perturb(fit, args.perturb, args.draws, seed=args.seed, workers=workers)
        plain = summarize_draws(d, args.level)
        moved = summarize_draws(d, args.level, center=est.reports["steam"].scalars())
        report["inference"] = {
            "variant": d.variant, "draws": d.B, "successful": d.successful,
            "failed": len(d.failed), "level": args.level,
            "se": {k: v.se for k, v in plain.items()},
            "ci": {k: [v.lower, v.upper] for k, v in moved.items()},
            "ci_uncentered": {k: [v.lower, v.upper] for k, v in plain.items()},
        }
        band = roc_band(d, args.level, center=roc_at(est.reports["steam"].roc, BAND_FPR))

    files = {"report": "report.json", "roc": "roc.csv"}
    comment = _config_comment(run)
    rows = []
    for name, rep in est.reports.items():
        for c, t, f in zip(rep.roc.cutoffs, rep.roc.tpr, rep.roc.fpr):
            rows.append((name, "inf" if math.isinf(c) else float(c), float(t), float(f)))
    write_csv(out / "roc.csv", ("method", "cutoff", "tpr", "fpr"), rows, [comment])
    if band is not None:
        files["roc_band"] = "roc_band.csv"
        write_csv(out / "roc_band.csv", ("fpr", "tpr_lower", "tpr_upper"),
                  list(zip(*(map(float, a) for a in band))), [comment])
        report["roc_band"] = {"file": "roc_band.csv", "level": args.level}
    if not args.no_plot:
        files["figure"] = "roc.svg"
        plot_roc(_curves_from_report_objects(est.reports, band), out / "roc.svg",
                 description=comment)
    report["files"] = files
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    return EXIT_OK


def _curves_from_report_objects(reports, band) -> list[dict]:
    curves = []
    for name, rep in reports.items():
        c = {"label": name, "fpr": rep.roc.fpr, "tpr": rep.roc.tpr}
        if name == "steam" and band is not None:
            c["band"] = band
        curves.append(c)
    return curves


# ---------------------------------------------------------------------------
# roc-plot


def _read_roc_csv(path: Path) -> dict:
    curves: dict = {}
    with path.open(encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for r in reader:
            c = curves.setdefault(r["method"], {"fpr": [], "tpr": []})
            c["fpr"].append(float(r["fpr"]))
            c["tpr"].append(float(r["tpr"]))
    return curves


def _read_band(path: Path):
    with path.open(encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    return tuple(np.array([float(r[k]) for r in rows])
                 for k in ("fpr", "tpr_lower", "tpr_upper"))


def cmd_roc_plot(args) -> int:
    from .plotting import plot_roc

    curves, configs = [], []
    many = len(args.reports) > 1
    for path in args.reports:
        try:
            rep = json.loads(Path(path).read_text(encoding="utf-8"))
            base = Path(path).parent
            roc = _read_roc_csv(base / rep["files"]["roc"])
            band_file = rep.get("files", {}).get("roc_band")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError("malformed_report", f"{path}: {exc}") from None
        if not roc:
            raise CliError("malformed_report", f"{path}: empty ROC grid")
        configs.append(rep.get("config"))
        for name, c in roc.items():
            if args.methods and name not in args.methods:
                continue
            label = f"{Path(path).parent.name}:{name}" if many else name
            entry = {"label": label, **c}
            if name == "steam" and band_file:
                entry["band"] = _read_band(base / band_file)
            curves.append(entry)
    if not curves:
        raise CliError("malformed_report", "no matching ROC curves in the given reports")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    desc = "configs " + json.dumps(configs, sort_keys=True, separators=(",", ":"))
    plot_roc(curves, args.out, args.title, description=desc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _scenarios(args) -> list[SimScenario]:
    shifts = SHIFTS if args.shift == "all" else (args.shift,)
    misspecs = MISSPECS if args.misspec == "all" else (args.misspec,)
    try:
        return [SimScenario(shift=s, misspec=m, n=args.n, N=args.N,
                            n_target_labeled=args.n_target_labeled, rho=args.rho,
                            seed=args.seed)
                for s in shifts for m in misspecs]
    except ValueError as exc:
        raise CliError("config", str(exc)) from None


def _text_table(rows) -> str:
    lines = [f"{'scenario':<28}{'measure':<9}{'method':<16}{'bias':>9}{'se':>9}"
             f"{'rmse':>9}{'n_fail':>8}"]
    for r in rows:
        lines.append(f"{r['scenario']:<28}{r['measure']:<9}{r['method']:<16}"
                     f"{r['bias']:>9.3f}{r['se']:>9.3f}{r['rmse']:>9.3f}{r['n_fail']:>8d}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    from .plotting import plot_equivalent_labels

    if args.replicates < 2:
        raise CliError("config", "--replicates must be at least 2")
    bad = set(args.perturb) - {"exact", "approx"}
    if bad:
        raise CliError("config", f"unknown resampling variants: {sorted(bad)}")
    if args.perturb and args.draws < 100:
        raise CliError("config", "--draws must be at least 100 for confidence intervals")
    label_grid = args.label_grid or (DEFAULT_LABEL_GRID if args.equivalent_labels else ())
    label_grid = tuple(sorted(set(label_grid)))
    config = _config_from(args)
    spec = ExperimentSpec(config=config, methods=config.methods, label_grid=label_grid,
                          perturb=tuple(args.perturb), draws=args.draws)
    scenarios = _scenarios(args)
    workers = resolve_workers(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _run_config(args, config, {
        "scenarios": [_scenario_echo(s) for s in scenarios], "replicates": args.replicates,
        "oracle_draws": args.oracle_draws, "perturb": list(args.perturb), "draws": args.draws,
        "label_grid": list(label_grid), "truth": args.truth,
    })
    comment = _config_comment(run)

    table, cover, eq_rows = [], [], []
    for sc in scenarios:
        if args.export_data is not None:
            _export(sc, Path(args.export_data))
        res = run_experiment(sc, spec, args.replicates, args.oracle_draws, workers)
        for r in res.table(MEASURES, truth=args.truth):
            table.append({"scenario": sc.label, "measure": r["measure"], "method": r["method"],
                          **{k: 100.0 * r[k] for k in ("bias", "se", "rmse")},
                          "n_fail": r["n_fail"]})
        for variant in spec.perturb:
            for interval in ("ci", "ci_plain"):
                for r in res.coverage(variant, truth=args.truth, interval=interval):
                    cover.append({"scenario": sc.label, **r})
        if label_grid:
            for r in equivalent_label_table(res, ("auc", "tpr", "cutoff"), truth=args.truth):
                eq_rows.append({"scenario": sc.label, **r})

    write_csv(out / "table.csv", ("scenario", "measure", "method", "bias", "se", "rmse",
                                  "n_fail"), table, [comment, "bias, se and rmse are x100"])
    (out / "table.txt").write_text("# " + comment + "\n# bias, se and rmse are x100\n"
                                   + _text_table(table), encoding="utf-8")
    if cover:
        write_csv(out / "coverage.csv", ("scenario", "measure", "variant", "interval",
                                         "estimate", "truth", "empirical_se",
                                         "mean_resampling_se", "coverage", "n_used",
                                         "mean_seconds"), cover, [comment])
    if eq_rows:
        write_csv(out / "equivalent_labels.csv", ("scenario", "measure", "method", "rmse",
                                                  "equivalent_labels", "interpolated", "clipped"),
                  eq_rows, [comment])
        plot_equivalent_labels(eq_rows, out / "equivalent_labels.svg", "auc",
                               description=comment)
    return EXIT_OK


def _scenario_echo(sc: SimScenario) -> dict:
    mu_b, pi_b = scenario_bases(sc.misspec)
    return {**scenario_dict(sc), "mu_basis": mu_b.to_dict(), "pi_basis": pi_b.to_dict()}


def _export(sc: SimScenario, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(sc, np.random.default_rng(sc.seed))
    stem = f"{sc.shift}_{sc.misspec}_n{sc.n}_seed{sc.seed}"
    save_study_csv(ds.data, directory / f"{stem}.csv", ds.validation)
    (directory / f"{stem}.json").write_text(dumps({"scenario": scenario_dict(sc)}),
                                            encoding="utf-8")


# ---------------------------------------------------------------------------


def _fail(kind: str, message: str, **details) -> int:
    payload = {"error": kind, "message": message}
    payload.update({k: v for k, v in details.items() if v is not None})
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return EXIT_ERROR


COMMANDS = {"evaluate": cmd_evaluate, "simulate": cmd_simulate, "roc-plot": cmd_roc_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _fail("config", "--threads must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), **exc.details)
    except FileNotFoundError as exc:
        return _fail("file_not_found", str(exc), path=exc.filename)
    except Exception as exc:  # every module error becomes one structured line
        return _fail(type(exc).__name__, str(exc), row=getattr(exc, "row", None),
                     column=getattr(exc, "column", None))


if __name__ == "__main__":
    sys.exit(main())
