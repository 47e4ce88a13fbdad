"""Command-line entry point: ``riccikge <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .checkpoint import load_checkpoint
from .curvature import SOLVER_LABELS, curvature_field
from .diagnostics import (CurveLog, beta_bounds, contraction_report, estimate_spectral_gap, export_curves,
                          read_trace_csv, simulate_scalar_flow, write_trace_csv)
from .errors import RicciKGEError
from .kg import load_dataset
from .metrics import evaluate
from .models import batch_terms
from .plotting import plot_contraction, plot_normalized_curves
from .trainer import CURVE_COLUMNS, TrainConfig, train, write_curve_log

log = logging.getLogger("riccikge")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


DATA_HELP = "dataset directory (default: the 'data' entry of the run's effective_config.toml)"


def _flow_interval(text):
    return math.inf if text.lower() in ("inf", "infinity", "never") else int(text)


CHOICES = {"model": ("transe", "distmult", "rotate"), "optimizer": ("sgd", "adam"),
           "solver": ("auto", "exact", "sinkhorn"), "flow_loss": ("margin", "quadratic")}


def _add_train_flags(p):
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "flow_interval":
            p.add_argument(flag, dest=f.name, type=_flow_interval, default=None,
                           help="epochs between flow passes ('inf' disables the flow)")
        else:
            p.add_argument(flag, dest=f.name, type=type(f.default), default=None,
                           choices=CHOICES.get(f.name))


def _add_curvature_flags(p):
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--solver", choices=("auto", "exact", "sinkhorn"), default="auto")
    p.add_argument("--sinkhorn-epsilon", type=float, default=1e-3)
    p.add_argument("--kappa-max", type=float, default=10.0)


def build_parser():
    parser = Parser(prog="riccikge", description="Knowledge-graph embeddings with gradient-coupled Ricci flow.")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=lambda **kw: Parser(parents=[common], **kw))

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", help="directory with train.txt / valid.txt / test.txt")
    p.add_argument("--config", help="flat TOML file with TrainConfig keys; flags override it")
    p.add_argument("--out-dir")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="filtered MRR / Hits@K of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=DATA_HELP)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--raw-score", action="store_true", help="rank DistMult by raw score")
    p.add_argument("--out-dir")

    p = sub.add_parser("curvature", help="per-triple curvature CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=DATA_HELP)
    p.add_argument("--out", help="CSV path (default: <out-dir>/curvature.csv)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir")
    _add_curvature_flags(p)

    p = sub.add_parser("diagnose", help="theory diagnostics")
    dsub = p.add_subparsers(dest="diagnostic", parser_class=lambda **kw: Parser(parents=[common], **kw))
    for name in ("bounds", "gap"):
        q = dsub.add_parser(name)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--data", help=DATA_HELP)
        q.add_argument("--out-dir")
        if name == "bounds":
            q.add_argument("--beta", type=float, default=0.1)
            q.add_argument("--mu", type=float, default=1.0)
            q.add_argument("--f-w", type=float, default=1.0)
            _add_curvature_flags(q)
    q = dsub.add_parser("contraction")
    q.add_argument("--trace", help="CSV with columns k,d,eta,kappa")
    q.add_argument("--simulate", action="store_true",
                   help="generate a synthetic single-edge trace instead of reading one")
    q.add_argument("--mu", type=float, default=1.0)
    q.add_argument("--target", type=float, default=1.0)
    q.add_argument("--beta", type=float, default=0.04)
    q.add_argument("--d0", type=float, default=3.0)
    q.add_argument("--kappa0", type=float, default=0.5)
    q.add_argument("--decay", type=float, default=0.9)
    q.add_argument("--steps", type=int, default=200)
    q.add_argument("--out-dir")

    p = sub.add_parser("export-curves", help="re-export a training curve log and render its figure")
    p.add_argument("--log", required=True, help="curves.csv written by train")
    p.add_argument("--out", help="output CSV (default: <out-dir>/curves_export.csv)")
    p.add_argument("--figure", help="output PNG (default: next to the CSV)")
    p.add_argument("--out-dir")
    return parser


# --- helpers -----------------------------------------------------------------

def _default_out_dir(seed=0):
    return os.path.join("runs", f"{time.strftime('%Y%m%d-%H%M%S')}-{seed}")


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, int):
        return str(v)
    return json.dumps(str(v))


def write_effective_config(values, path):
    with open(path, "w") as fh:
        for key, val in values.items():
            if val is not None:
                fh.write(f"{key} = {_toml_value(val)}\n")


def read_config(path):
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in data.items()}


def print_table(rows, out=None):
    out = out or sys.stdout
    width = max(len(str(k)) for k, _ in rows)
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.6g}"
        out.write(f"{str(k):<{width}}  {v}\n")


def _emit(rows, payload, out_dir=None, name=None):
    print_table(rows)
    text = json.dumps(payload, sort_keys=True)
    print(text)
    if out_dir and name:
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text + "\n")


def _prepare_out_dir(args, record):
    out_dir = args.out_dir or _default_out_dir(record.get("seed", 0))
    os.makedirs(out_dir, exist_ok=True)
    write_effective_config(record, os.path.join(out_dir, "effective_config.toml"))
    log.info("effective config: %s", json.dumps(record, default=str, sort_keys=True))
    return out_dir


def _args_record(args, skip=("out_dir", "func")):
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def _data_dir(args):
    if args.data:
        return args.data
    record = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "effective_config.toml")
    if os.path.exists(record):
        data = read_config(record).get("data")
        if data:
            return data
    raise UsageError("--data is required (no 'data' entry found next to the checkpoint)")


def _load(args):
    args.data = _data_dir(args)
    graph = load_dataset(args.data)
    kind, state = load_checkpoint(args.checkpoint)
    if state.entity.shape[0] != graph.n_entities or state.relation.shape[0] != graph.n_relations:
        raise RicciKGEError("checkpoint table sizes do not match the dataset vocabulary")
    return graph, kind, state


def _curvature_config(args):
    from .curvature import CurvatureConfig
    return CurvatureConfig(alpha=args.alpha, solver=args.solver,
                           sinkhorn_epsilon=args.sinkhorn_epsilon, kappa_max=args.kappa_max)


def _thread_cap(n):
    env = os.environ.get("RKGE_THREADS")
    return min(n, max(1, int(env))) if env else n


def _snapshot(graph, kind, state):
    arr = graph.array
    d = batch_terms(kind, state, arr[:, 0], arr[:, 1], arr[:, 2], need_grad=False).d
    return d, np.exp(-d)


# --- commands -------------------------------------------------------------------

def cmd_train(args):
    values = read_config(args.config) if args.config else {}
    data = args.data or values.pop("data", None)
    values.pop("data", None)
    if data is None:
        raise UsageError("--data is required (flag or 'data' key in --config)")
    for f in dataclasses.fields(TrainConfig):
        val = getattr(args, f.name)
        if val is not None:
            values[f.name] = val
    cfg = TrainConfig.from_dict(values)
    cfg = dataclasses.replace(cfg, threads=_thread_cap(cfg.threads))
    record = {"data": data, **cfg.to_dict()}
    out_dir = _prepare_out_dir(argparse.Namespace(out_dir=args.out_dir), record)
    graph = load_dataset(data)
    result = train(graph, cfg, out_dir=out_dir)
    _emit([("epochs", result.epochs), ("best valid MRR", result.best_mrr),
           ("flow passes", len(result.flow_reports)), ("out dir", out_dir)],
          {"epochs": result.epochs, "best_mrr": result.best_mrr if math.isfinite(result.best_mrr) else None,
           "flow_passes": len(result.flow_reports), "out_dir": out_dir}, out_dir, "summary.json")


def cmd_eval(args):
    args.data = _data_dir(args)
    graph, kind, state = _load(args)
    out_dir = _prepare_out_dir(args, _args_record(args))
    rep = evaluate(state, kind, graph, args.split, raw_score=args.raw_score)
    write_curve_log([{c: "" for c in CURVE_COLUMNS} | {"epoch": state.step, "split": args.split,
                     "mrr": rep.mrr, "hits1": rep.hits[1], "hits3": rep.hits[3], "hits10": rep.hits[10]}],
                    os.path.join(out_dir, "curves.csv"))
    rows = [("split", args.split), ("MRR", rep.mrr)] + [(f"Hits@{k}", v) for k, v in rep.hits.items()]
    rows.append(("queries", rep.n_queries))
    _emit(rows, rep.as_dict(), out_dir, "eval.json")


def cmd_curvature(args):
    args.data = _data_dir(args)
    graph, kind, state = _load(args)
    out_dir = _prepare_out_dir(args, _args_record(args))
    d, w = _snapshot(graph, kind, state)
    field = curvature_field(graph, w, d, state.entity, _curvature_config(args), _thread_cap(args.threads))
    out = args.out or os.path.join(out_dir, "curvature.csv")
    names = graph.vocab
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["triple_id", "head", "relation", "tail", "d", "w", "kappa", "solver_used"])
        for i, (h, r, t) in enumerate(graph.array):
            kap = "" if not np.isfinite(field.kappa[i]) else f"{field.kappa[i]:.17g}"
            writer.writerow([i, names.entity_names[h], names.relation_names[r], names.entity_names[t],
                             f"{d[i]:.17g}", f"{w[i]:.17g}", kap, SOLVER_LABELS[int(field.solver[i])]])
    kd = field.kappa[np.isfinite(field.kappa)]
    stats = {"edges": len(d), "defined": int(len(kd)),
             "kappa_mean": float(kd.mean()) if len(kd) else None,
             "kappa_max_abs": float(np.abs(kd).max()) if len(kd) else None,
             "kappa_var": float(kd.var()) if len(kd) else None, "csv": out}
    write_curve_log([{c: "" for c in CURVE_COLUMNS} | {"epoch": state.step, "split": "curvature",
                     "kappa_var": stats["kappa_var"] or 0.0, "kappa_max": stats["kappa_max_abs"] or 0.0}],
                    os.path.join(out_dir, "curves.csv"))
    _emit(list(stats.items()), stats)


def cmd_diagnose(args):
    if args.diagnostic is None:
        raise UsageError("diagnose needs one of: bounds, gap, contraction")
    if args.diagnostic == "contraction":
        _diagnose_contraction(args)
        return
    args.data = _data_dir(args)
    graph, kind, state = _load(args)
    out_dir = _prepare_out_dir(args, _args_record(args))
    d, w = _snapshot(graph, kind, state)
    if args.diagnostic == "gap":
        gap = estimate_spectral_gap(graph, w)
        payload = {"lambda1": gap.value, "converged": gap.converged, "iterations": gap.iterations,
                   "connected": gap.connected, "per_component": gap.per_component}
        _emit([(k, v) for k, v in payload.items() if k != "per_component"], payload, out_dir, "gap.json")
        return
    field = curvature_field(graph, w, d, state.entity, _curvature_config(args))
    rep = beta_bounds(graph, w, field.kappa, args.beta, kind.d_max, args.mu, args.f_w)
    payload = rep.as_dict()
    _emit(list(payload.items()), payload, out_dir, "bounds.json")


def _diagnose_contraction(args):
    if not (args.simulate or args.trace):
        raise UsageError("diagnose contraction needs --trace or --simulate")
    trace = None if args.simulate else read_trace_csv(args.trace)
    out_dir = _prepare_out_dir(args, _args_record(args))
    if trace is None:
        kappas = args.kappa0 * args.decay ** np.arange(args.steps)
        trace = simulate_scalar_flow(args.d0, kappas, args.beta, args.mu, args.target)
        write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    rep = contraction_report(trace, args.mu, args.target)
    plot_contraction(rep, os.path.join(out_dir, "contraction.png"))
    payload = rep.as_dict()
    _emit(list(payload.items()), payload, out_dir, "contraction.json")


def curves_from_train_log(path) -> CurveLog:
    """Collapse a training curve CSV into per-epoch series."""
    out = CurveLog()
    keep = ("loss", "kappa_var", "kappa_max", "mrr", "hits1", "hits3", "hits10")
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: float(row[k]) for k in keep if row.get(k) not in (None, "")}
            if vals:
                out.add(int(row["epoch"]), **vals)
    return out


def cmd_export_curves(args):
    out_dir = _prepare_out_dir(args, _args_record(args))
    curves = curves_from_train_log(args.log)
    out = args.out or os.path.join(out_dir, "curves_export.csv")
    export_curves(curves, out)
    fig = args.figure or os.path.splitext(out)[0] + ".png"
    plot_normalized_curves(curves, fig)
    _emit([("rows", len(curves)), ("columns", ",".join(curves.columns)), ("csv", out), ("figure", fig)],
          {"rows": len(curves), "columns": curves.columns, "csv": out, "figure": fig})


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "curvature": cmd_curvature,
            "diagnose": cmd_diagnose, "export-curves": cmd_export_curves}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"riccikge: error: {exc}", file=sys.stderr)
        return 1
    except (RicciKGEError, OSError, ValueError) as exc:
        print(f"riccikge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
