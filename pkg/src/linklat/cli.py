"""Command-line front end: ``linklat <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when the input data
or a model is unusable.  Output files are written to a temporary name and
moved into place only once complete, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DatasetError, drop_zero_labels, load, load_model, save, save_model, split)
from .estimators import KINDS, fit_spec, parse_model_spec
from .evaluation import benchmark, link_features, plot_data, predict_link_delays, predict_path_delays
from .features import BASE_FEATURES, build_candidate_features, forward_stepwise
from .generate import GridSpec, generate_dataset
from .sim import ServiceDistribution, SimConfig, simulate_queue

log = logging.getLogger("linklat")

DEFAULT_SEED = 20240607


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _atomic_file(path):
    """Yield a temporary path that replaces ``path`` on clean exit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


@contextlib.contextmanager
def _atomic_dir(path):
    """Yield a scratch directory whose files are moved into ``path`` on clean exit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
        path.mkdir(exist_ok=True)
        for f in sorted(tmp.iterdir()):
            os.replace(f, path / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _write_json(path, obj):
    with _atomic_file(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _csv_list(kind):
    def conv(text):
        try:
            return tuple(kind(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}") from None
    return conv


def _load_labelled(path, drop_zero: bool):
    ds = load(path)
    if drop_zero:
        ds, n = drop_zero_labels(ds)
        if n:
            log.warning("dropped %d link(s) with zero occupancy label", n)
    return ds


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = GridSpec.from_dict(json.load(fh))
    else:
        grid = GridSpec(
            topologies=args.topologies, sizes=args.sizes,
            loads=args.loads if args.load_range is None else (None,) * len(args.loads),
            load_range=args.load_range, mus=args.mus, Ks=args.Ks, services=args.services,
            service_cv=args.service_cv, avg_packet_size=args.avg_packet_size,
            replicates=args.replicates, measured_events=args.measured_events,
        )
    ds = generate_dataset(grid, seed=args.seed, threads=args.threads)
    with _atomic_dir(args.out) as tmp:
        save(ds, tmp)
    print(f"wrote {len(ds.links)} link samples and {len(ds.paths)} flows to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    ds = load(args.data)
    base = link_features(ds.links)
    if args.candidates:
        fm = build_candidate_features(base, list(BASE_FEATURES))
        names, values = fm.names, fm.values
    else:
        names = list(BASE_FEATURES)
        values = np.column_stack([base.as_dict()[n] for n in names])
    with _atomic_file(args.out) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", *names, "observed_occupancy"])
            for l, row in zip(ds.links, values):
                w.writerow([l.link_id, *(repr(float(v)) for v in row),
                            repr(float(l.observed_occupancy))])
    print(f"wrote {len(names)} features for {len(ds.links)} links to {args.out}")
    return 0


def cmd_select(args) -> int:
    ds = _load_labelled(args.data, args.drop_zero_labels)
    base = link_features(ds.links)
    names = list(args.base) if args.base else list(BASE_FEATURES)
    fm = build_candidate_features(base, names)
    y = np.array([l.observed_occupancy for l in ds.links])
    res = forward_stepwise(fm, y, args.max_features, args.validation_fraction, args.seed)
    print(f"baseline (intercept only): {res.baseline:.4f}% MAPE")
    for i, (name, score) in enumerate(zip(res.selected, res.scores), 1):
        print(f"{i}. {name}  {score:.4f}% MAPE")
    if args.out:
        _write_json(args.out, {"selected": res.selected, "scores": res.scores,
                               "baseline": res.baseline, "dropped": fm.dropped,
                               "seed": args.seed})
    return 0


def _spec_from_args(args):
    opts = []
    if args.kind == "linear" and args.features:
        opts.append(f"features={args.features}")
    if args.kind == "exp-poly" and args.degree is not None:
        opts.append(f"degree={args.degree}")
    if args.kind in ("mm1k", "bernstein") and args.K is not None:
        opts.append(f"K={args.K}")
    if args.kind == "implicit":
        for key in ("N", "alpha", "max_iter", "loss", "max_samples"):
            val = getattr(args, key)
            if val is not None:
                opts.append(f"{key}={val}")
    given = {"degree": "exp-poly", "K": "mm1k/bernstein", "N": "implicit", "alpha": "implicit",
             "features": "linear"}
    for key, owner in given.items():
        if getattr(args, key) is not None and args.kind not in owner.split("/"):
            raise UsageError(f"--{key} does not apply to --kind {args.kind}")
    return parse_model_spec(args.kind + (":" + ",".join(opts) if opts else ""))


def cmd_fit(args) -> int:
    spec = _spec_from_args(args)
    ds = _load_labelled(args.data, args.drop_zero_labels)
    if not ds.links:
        raise DatasetError("dataset has no labelled links")
    y = np.array([l.observed_occupancy for l in ds.links])
    rep = fit_spec(spec, link_features(ds.links), y, seed=args.seed)
    training = {"model": spec.name, "n_samples": rep.n_samples, "seed": args.seed,
                "train_mse": rep.train_mse, "train_mape": rep.train_mape,
                "dataset_meta": ds.meta}
    with _atomic_file(args.out) as tmp:
        save_model(rep.model, tmp, training)
    if args.report:
        _write_json(args.report, {**training, "fit_seconds": rep.fit_seconds,
                                  "iterations": rep.iterations,
                                  "parameter_count": rep.model.parameter_count})
    print(f"{spec.name}: {rep.model.parameter_count} parameters, train MAPE "
          f"{rep.train_mape:.4f}%, MSE {rep.train_mse:.4e}, fit {rep.fit_seconds:.3f}s")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = load(args.data)
    occ = np.atleast_1d(model.predict(link_features(ds.links)))
    has_delay = all(l.capacity is not None and l.avg_packet_size is not None for l in ds.links)
    delay = predict_link_delays(model, ds.links) if has_delay and ds.links else None
    with _atomic_file(args.out) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "predicted_occupancy", "predicted_delay"])
            for i, l in enumerate(ds.links):
                w.writerow([l.link_id, repr(float(occ[i])),
                            "" if delay is None else repr(float(delay[i]))])
    if args.paths_out:
        d = predict_path_delays(model, ds)
        with _atomic_file(args.paths_out) as tmp:
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["flow_id", "predicted_end_to_end_delay"])
                for p, v in zip(ds.paths, d):
                    w.writerow([p.flow_id, repr(float(v))])
    print(f"wrote predictions for {len(ds.links)} links to {args.out}")
    return 0


def cmd_eval(args) -> int:
    if not args.model:
        raise UsageError("eval needs at least one --model")
    specs = [parse_model_spec(m) for m in args.model]
    if args.train or args.test:
        if not (args.train and args.test):
            raise UsageError("--train and --test go together")
        train = _load_labelled(args.train, args.drop_zero_labels)
        test = _load_labelled(args.test, args.drop_zero_labels)
    else:
        if not args.data:
            raise UsageError("eval needs --data or --train/--test")
        ds = _load_labelled(args.data, args.drop_zero_labels)
        train, test = split(ds, args.fractions, seed=args.seed, mode=args.split_mode)
    report = benchmark(specs, train, test, seed=args.seed, threads=args.threads)
    table = report.format_table()
    print(table, end="")
    out = Path(args.out)
    with _atomic_dir(out) as tmp:
        report.write_csv(tmp / "report.csv")
        (tmp / "report.txt").write_text(table, encoding="utf-8")
        if args.plot_data:
            y = np.array([l.observed_occupancy for l in train.links])
            for spec in specs:
                try:
                    model = fit_spec(spec, link_features(train.links), y, seed=args.seed).model
                except Exception:  # already reported as a failure row
                    continue
                safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in spec.name)
                plot_data(model, test, tmp / f"plot_{safe}.csv")
    return 0


def cmd_simulate(args) -> int:
    if args.service == "exponential":
        svc = ServiceDistribution.exponential(args.mu)
    elif args.service == "deterministic":
        svc = ServiceDistribution.deterministic(1.0 / args.mu)
    else:
        svc = ServiceDistribution.truncnormal(1.0 / args.mu, args.cv / args.mu)
    cfg = SimConfig(args.lam, svc, args.K, args.events, args.warmup, args.seed)
    res = simulate_queue(cfg)
    doc = {"config": {"lambda": args.lam, "service": svc.to_dict(), "K": args.K,
                      "measured_events": cfg.measured_events,
                      "warmup_events": cfg.warmup_events, "seed": args.seed},
           "result": asdict(res)}
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _write_json(args.out, doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"seed for all randomness (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="linklat", description="Queue-feature link latency estimation pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", parents=[common], help="simulate a grid into a dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--grid", help="JSON grid file (overrides the grid flags)")
    g.add_argument("--topologies", type=_csv_list(str), default=("single",))
    g.add_argument("--sizes", type=_csv_list(int), default=(1,))
    g.add_argument("--loads", type=_csv_list(float), default=(0.5,))
    g.add_argument("--load-range", type=_csv_list(float), default=None,
                   help="LO,HI: draw each link's load uniformly instead")
    g.add_argument("--mus", type=_csv_list(float), default=(1000.0,))
    g.add_argument("--Ks", type=_csv_list(int), default=(32,))
    g.add_argument("--services", type=_csv_list(str), default=("exponential",))
    g.add_argument("--service-cv", type=float, default=0.3)
    g.add_argument("--avg-packet-size", type=float, default=1000.0, help="bits")
    g.add_argument("--replicates", type=int, default=1)
    g.add_argument("--measured-events", type=int, default=10_000)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("featurize", parents=[common], help="write the queue features of a dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True, help="output CSV")
    f.add_argument("--candidates", action="store_true",
                   help="also write transformed and product candidates")
    f.set_defaults(func=cmd_featurize)

    s = sub.add_parser("select", parents=[common], help="forward stepwise feature selection")
    s.add_argument("--data", required=True)
    s.add_argument("--base", type=_csv_list(str), default=None,
                   help="base features to expand (default: all)")
    s.add_argument("--max-features", type=int, default=4)
    s.add_argument("--validation-fraction", type=float, default=0.2)
    s.add_argument("--drop-zero-labels", action="store_true")
    s.add_argument("--out", help="optional JSON with the picks")
    s.set_defaults(func=cmd_select)

    fit = sub.add_parser("fit", parents=[common], help="fit one model")
    fit.add_argument("--data", required=True)
    fit.add_argument("--kind", required=True, choices=KINDS)
    fit.add_argument("--degree", type=int, help="exp-poly degree (default 8)")
    fit.add_argument("--K", type=int, help="basis order for mm1k/bernstein (default 32)")
    fit.add_argument("--N", type=int, help="implicit-fit knot count (default 12)")
    fit.add_argument("--alpha", type=float, help="implicit-fit turn penalty (default 1e-5)")
    fit.add_argument("--max-iter", type=int, help="implicit-fit iteration cap (default 1000)")
    fit.add_argument("--loss", choices=("mse", "mape"), help="implicit-fit objective")
    fit.add_argument("--max-samples", type=int, help="implicit-fit subsample size")
    fit.add_argument("--features", help="comma-separated linear-model inputs")
    fit.add_argument("--drop-zero-labels", action="store_true")
    fit.add_argument("--out", required=True, help="model JSON")
    fit.add_argument("--report", help="optional FitReport JSON (includes timing)")
    fit.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", parents=[common], help="predict occupancy and delay")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True, help="per-link predictions CSV")
    pr.add_argument("--paths-out", help="optional per-flow delay predictions CSV")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", parents=[common], help="benchmark models on a split")
    ev.add_argument("--model", "-m", action="append", default=[],
                    help="model spec such as bernstein:K=32 (repeatable)")
    ev.add_argument("--data", help="dataset to split")
    ev.add_argument("--train")
    ev.add_argument("--test")
    ev.add_argument("--fractions", type=_csv_list(float), default=(0.8, 0.2))
    ev.add_argument("--split-mode", choices=("iid", "by-size", "by-topology"), default="iid")
    ev.add_argument("--drop-zero-labels", action="store_true")
    ev.add_argument("--plot-data", action="store_true", help="write rho_e, y, y_hat per model")
    ev.add_argument("--out", required=True, help="report directory")
    ev.set_defaults(func=cmd_eval)

    sm = sub.add_parser("simulate", parents=[common], help="simulate one finite queue")
    sm.add_argument("--lam", type=float, required=True)
    sm.add_argument("--mu", type=float, required=True)
    sm.add_argument("--K", type=int, required=True)
    sm.add_argument("--service", choices=("exponential", "deterministic", "truncnormal"),
                    default="exponential")
    sm.add_argument("--cv", type=float, default=0.3, help="truncnormal std times mu")
    sm.add_argument("--events", type=int, default=1_000_000)
    sm.add_argument("--warmup", type=int, default=None)
    sm.add_argument("--out", help="optional JSON copy of the result")
    sm.set_defaults(func=cmd_simulate)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"linklat: error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        print(f"linklat: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
