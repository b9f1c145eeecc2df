"""Command-line interface: ``bmdl {fit,score,simulate,study,plotdata}``.

Exit codes: 0 success; 1 data or numerical error (the message names the
error class); 2 usage error; 3 a fit finished but some chains aborted.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .errors import BMDLError
from .io import ingest, time_index, write_series
from .model import PRESETS, Hyperparams, config_from_times
from .search import FitResult, Scorer, SearchOptions, default_workers, fit
from .simulate import DetectionTable, load_scenario, run_study, simulate_series

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_ERROR, EXIT_USAGE, EXIT_ABORTED = 1, 2, 3
HP_KEYS = ("a", "b_undoc", "b_doc", "nu", "alpha_undoc", "alpha_doc")


# ------------------------------------------------------------------ helpers


def _add_data_args(p):
    p.add_argument("series", help="CSV with header year,month,<value>[,<value>]")
    p.add_argument("--metadata", help="CSV with header year,month of documented changes")
    p.add_argument("--ar-order", "-p", type=int, required=True, help="AR order p")
    p.add_argument("--period", type=int, default=12)
    p.add_argument("--mode", choices=("uni", "bi"),
                   help="default: bi for two value columns unless --component is given")
    p.add_argument("--component", default=None,
                   help="value column (index or name) analysed in uni mode (default 0)")


def _add_hp_args(p):
    g = p.add_argument_group("hyperparameters (flags override --hyperparams)")
    g.add_argument("--hyperparams", help="TOML or JSON file with keys " + ", ".join(HP_KEYS))
    g.add_argument("--preset", choices=sorted(PRESETS), default=None)
    g.add_argument("--a", type=float)
    g.add_argument("--b-undoc", type=float)
    g.add_argument("--b-doc", type=float)
    g.add_argument("--nu", type=float)
    p.add_argument("--objective", choices=("bmdl", "obmdl", "mdl", "bic"), default="bmdl")


def _load_mapping(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        return json.loads(raw)
    return tomllib.loads(raw.decode("utf-8"))


def _hyperparams(args) -> Hyperparams:
    values = {}
    preset = args.preset
    if args.hyperparams:
        cfg = _load_mapping(args.hyperparams)
        preset = preset or cfg.pop("preset", None)
        values.update({k: cfg[k] for k in HP_KEYS if k in cfg})
    for k in ("a", "b_undoc", "b_doc", "nu"):
        v = getattr(args, k)
        if v is not None:
            values[k] = v
    base = PRESETS[preset]() if preset else Hyperparams()
    for k in ("alpha_undoc", "alpha_doc"):
        if k in values:
            values[k] = tuple(values[k])
    return replace(base, **values)


def _data(args):
    data, meta = ingest(args.series, args.metadata, args.ar_order, args.period)
    mode = args.mode or ("bi" if data.components == 2 and args.component is None else "uni")
    if mode == "bi":
        if data.components != 2:
            raise BMDLError("--mode bi needs two value columns")
        return data, meta, mode
    comp = "0" if args.component is None else args.component
    if comp in data.names:
        idx = data.names.index(comp)
    else:
        try:
            idx = int(comp)
        except ValueError:
            raise BMDLError(f"unknown component {comp!r}; columns are {list(data.names)}") from None
    if not 0 <= idx < data.components:
        raise BMDLError(f"component {idx} out of range")
    return (data.component(idx) if data.components == 2 else data), meta, mode


def _parse_time(token, data):
    token = token.strip()
    if "-" in token:
        y, m = token.split("-", 1)
        return time_index(int(y), int(m), data.start)
    return int(token)


def _parse_times(text, data, components):
    text = (text or "").strip()
    if not text:
        return [[] for _ in range(components)] if components == 2 else []
    parts = text.split(";") if components == 2 else [text]
    if len(parts) != components:
        raise BMDLError(f"expected {components} ';'-separated time lists")
    out = [[_parse_time(tok, data) for tok in part.split(",") if tok.strip()] for part in parts]
    return out if components == 2 else out[0]


def _label(data, t):
    lab = data.label(t)
    return f"{t}" if lab is None else f"{lab[0]}-{lab[1]:02d} (t={t})"


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ------------------------------------------------------------------ commands


def cmd_fit(args):
    data, meta, _ = _data(args)
    hp = _hyperparams(args)
    opts = SearchOptions(
        iterations=args.iterations, chains=args.chains, seed=args.seed,
        flip_probability=args.flip_probability, max_changepoints=args.max_changepoints,
        min_spacing=args.min_spacing, objective=args.objective, init=args.init,
        trace_thin=args.trace_thin, workers=args.workers or default_workers(),
    )
    res = fit(data, meta, hp, opts)
    text = res.to_json() + "\n"
    summary = sys.stderr if args.output in (None, "-") else sys.stdout
    _write(args.output, text)
    print(f"objective {opts.objective}: total {res.best_score.total:.6f} nats", file=summary)
    for name, comp in zip(data.names, res.best_config.times):
        labels = ", ".join(_label(data, t) for t in comp) or "none"
        print(f"  {name}: {len(comp)} changepoint(s): {labels}", file=summary)
    if res.aborted:
        for i in res.aborted:
            print(f"chain {i} aborted: {res.chains[i].message}", file=sys.stderr)
        return EXIT_ABORTED
    return 0


def cmd_score(args):
    data, meta, _ = _data(args)
    hp = _hyperparams(args)
    times = _parse_times(args.times, data, data.components)
    config = config_from_times(times, data.n, data.ar_order, data.components)
    b = Scorer(data, meta, hp, args.objective).breakdown(config.times)
    if args.json:
        print(json.dumps({"times": [list(c) for c in config.times], **b.to_dict()},
                         indent=1, sort_keys=True))
    else:
        print(f"objective       {b.objective}")
        print(f"fit_term        {b.fit_term:.10g}")
        print(f"mu_penalty      {b.mu_penalty:.10g}")
        print(f"config_penalty  {b.config_penalty:.10g}")
        print(f"total           {b.total:.10g}")
        if b.flagged:
            print("note: noise covariance from positive-definite fallback")
    return 0


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    data = simulate_series(sc, args.seed)
    _write(args.output, write_series(data, start=tuple(args.start)))
    if args.metadata_output:
        start = tuple(args.start)
        rows = ["year,month"]
        for t in sorted(sc.metadata):
            k = start[1] - 1 + t - 1
            rows.append(f"{start[0] + k // 12},{k % 12 + 1}")
        _write(args.metadata_output, "\n".join(rows) + "\n")
    return 0


def cmd_study(args):
    sc = load_scenario(args.scenario)
    workers = args.workers or default_workers()

    def progress(i, n):
        if args.progress:
            print(f"\rreplication {i}/{n}", end="" if i < n else "\n", file=sys.stderr)

    table = run_study(sc, args.seed, workers, args.replications, args.iterations, progress)
    _write(args.csv, table.to_csv())
    if args.json:
        _write(args.json, table.to_json() + "\n")
    return 0


def _plot_fit(d, w, series):
    res = FitResult.from_dict(d)
    w.writerow(["kind", "chain", "component", "iteration", "time", "label", "value", "extra"])
    for i, ch in enumerate(res.chains):
        for it, sc, m, best in zip(ch.trace_iteration, ch.trace_score, ch.trace_m, ch.best_trace):
            w.writerow(["trace", i, "", int(it), "", "", repr(float(sc)), int(m)])
            w.writerow(["best", i, "", int(it), "", "", repr(float(best)), ""])
    for k, comp in enumerate(res.labelled_times()):
        for t, lab in comp:
            w.writerow(["changepoint", "", k, "", t, lab or "", "", ""])
    if series is None or res.best_params is None:
        return
    vals = np.atleast_2d(np.asarray(series.values))
    s = np.atleast_2d(res.best_params.seasonal_means)
    for k, comp in enumerate(res.best_config.times):
        col = series.names.index(res.names[k]) if res.names[k] in series.names else k
        mu = np.concatenate([[0.0], res.best_params.regime_means[k]])
        reg = np.searchsorted(np.asarray(comp) - 1, np.arange(res.best_config.n), side="right")
        fitted = s[k][np.arange(res.best_config.n) % res.period] + mu[reg]
        for t in range(res.best_config.n):
            lab = series.label(t + 1)
            w.writerow(["series", "", k, "", t + 1,
                        "" if lab is None else f"{lab[0]:04d}-{lab[1]:02d}",
                        repr(float(vals[t, col])), repr(float(fitted[t]))])


def _plot_table(d, w):
    table = DetectionTable.from_dict(d)
    w.writerow(["detector", "component", "time", "flag_frequency", "is_true"])
    for r in table.rows:
        for off, v in enumerate(r.flag_frequency):
            t = r.ar_order + 1 + off
            w.writerow([r.detector, r.component, t, f"{v:.4f}", int(t in r.true_times)])


def cmd_plotdata(args):
    with open(args.input, encoding="utf-8") as fh:
        d = json.load(fh)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output not in (None, "-") \
        else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        schema = d.get("schema", "")
        if schema.startswith("bmdl.fitresult"):
            series = None
            if args.series:
                series, _ = ingest(args.series, None, d["p"], d["period"])
            _plot_fit(d, w, series)
        elif schema.startswith("bmdl.detectiontable"):
            _plot_table(d, w)
        else:
            raise BMDLError(f"unrecognised input schema {schema!r}")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmdl",
        description="Mean-shift changepoint detection for seasonal autocorrelated series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="search for the best changepoint configuration")
    _add_data_args(p)
    _add_hp_args(p)
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-probability", type=float, default=0.5)
    p.add_argument("--max-changepoints", type=int, default=None,
                   help="per component; default (N - p) // 20")
    p.add_argument("--min-spacing", type=int, default=1, help="minimum regime length")
    p.add_argument("--init", choices=("empty", "random"), default="empty")
    p.add_argument("--trace-thin", type=int, default=10)
    p.add_argument("--workers", type=int, default=None, help="default: $BMDL_WORKERS or 1")
    p.add_argument("--output", "-o", help="FitResult JSON path (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score one explicit configuration")
    _add_data_args(p)
    _add_hp_args(p)
    p.add_argument("--times", default="",
                   help="comma-separated times (t or YYYY-MM); ';' separates components")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="write one synthetic record from a scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, nargs=2, default=(1, 1), metavar=("YEAR", "MONTH"))
    p.add_argument("--output", "-o")
    p.add_argument("--metadata-output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="replication study producing a detection table")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=None, help="default: $BMDL_WORKERS or 1")
    p.add_argument("--replications", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--csv", help="CSV path (default stdout)")
    p.add_argument("--json", help="also write JSON here")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("plotdata", help="tidy CSV from a FitResult or DetectionTable JSON")
    p.add_argument("input")
    p.add_argument("--series", help="original series CSV, adds observed and fitted means")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BMDLError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
