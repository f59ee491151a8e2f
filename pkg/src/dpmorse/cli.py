"""Command line front end.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure, 4 acceptance criteria failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataset import DataError, Dataset
from .fit import DegenerateFitError
from .landscape import Landscape
from .merge import build_graph, merge_with_relays, reduce_to_leading, full_dendrogram
from .metrics import adjusted_rand_index
from .model import MixtureModel, ModelError
from .pipeline import (METHODS, PRIVATE_METHODS, REPORT_SCHEMA_VERSION, ConfigError, RunConfig, dumps_report,
                       expand_grid, fit_model, load_data, read_config_file, run_pipeline, sweep,
                       sweep_table_csv)
from .privacy import PrivacyError, PrivacyParams, calibrate_sigma, privacy_record
from .tev import SaddleGraph, TransitionRecord, search_saddle_graph

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4

log = logging.getLogger("dpmorse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="flat 'key = value' file")
    g.add_argument("--data", help="CSV file")
    g.add_argument("--generator", choices=["two_moons", "three_arcs", "blobs"])
    g.add_argument("--n", type=int, help="rows for a generator")
    g.add_argument("--noise", type=float, help="generator noise std-dev")
    g.add_argument("--data-seed", type=int)
    g.add_argument("--has-header", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--label-column")
    g.add_argument("--bounds", help="public bounds lo:hi,lo:hi,... for CSV data")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--morse", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--k0", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--tau1", type=int)
    g.add_argument("--tau2", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--perturb", type=float)
    g.add_argument("--repeats", type=int)
    g.add_argument("--seed", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _run_options()
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", help="output file (default: stdout)")
    out.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dpmorse", description="Private mixture sub-clusters merged through density saddles.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fit", parents=[common, out], help="fit K0 sub-clusters, write the model JSON")

    p = sub.add_parser("tev", parents=[common, out], help="find saddles between the sub-clusters of a model")
    p.add_argument("--model", required=True, help="model JSON from 'fit'")

    p = sub.add_parser("merge", parents=[common, out], help="merge sub-clusters to K through the saddle graph")
    p.add_argument("--tevs", required=True, help="saddle JSON from 'tev'")
    p.add_argument("--render", action="store_true", help="print the dendrogram as text to stderr")

    sub.add_parser("run", parents=[common, out], help="full pipeline with repeats, write the run report")

    p = sub.add_parser("sweep", parents=[common, out], help="grid of runs; JSON to --out, CSV next to it")
    p.add_argument("--epsilons", help="comma list, e.g. 10,5,2,1")
    p.add_argument("--k0s", help="comma list of K0 values")
    p.add_argument("--methods", help="comma list of methods")
    p.add_argument("--morse-grid", help="comma list of on/off")
    p.add_argument("--csv", help="CSV table path (default: --out with .csv suffix)")

    p = sub.add_parser("score", parents=[common, out], help="ARI of predicted labels against ground truth")
    p.add_argument("--pred", required=True, help="labels: JSON list, report JSON, or one label per line")
    p.add_argument("--truth", help="same formats; default: labels of --data/--generator")
    p.add_argument("--repeat", type=int, default=0, help="repeat index when --pred is a run report")

    p = sub.add_parser("acceptance", parents=[out], help="run the acceptance checks on synthetic data")
    p.add_argument("--only", help="comma list of criterion numbers")
    return parser


def config_from_args(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    skip = {"config", "command", "out", "verbose", "model", "tevs", "render", "epsilons", "k0s", "methods",
            "morse_grid", "csv", "pred", "truth", "repeat", "only"}
    for key, val in vars(args).items():
        if key not in skip and val is not None:
            values[key] = val
    if "data" in values and "generator" not in values:
        values["generator"] = None
    return RunConfig.from_mapping(values).validate()


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _load_model(path) -> MixtureModel:
    obj = _read_json(path)
    try:
        return MixtureModel.from_dict(obj.get("model", obj))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path} is not a model: {exc}") from None


def _load_labels(path, repeat: int = 0) -> np.ndarray:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = [line.strip() for line in text.splitlines() if line.strip()]
    if isinstance(obj, dict):
        if "repeats" in obj:
            try:
                obj = obj["repeats"][repeat]
            except IndexError:
                raise DataError(f"{path} has no repeat {repeat}") from None
        if "labels" not in obj:
            raise DataError(f"{path} has no 'labels' field")
        obj = obj["labels"]
    if not isinstance(obj, list) or not obj:
        raise DataError(f"{path} holds no labels")
    return np.asarray([str(v) for v in obj])


def cmd_fit(args) -> int:
    cfg = config_from_args(args)
    data = load_data(cfg)
    model, trace = fit_model(data, cfg, cfg.seed)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "config": asdict(cfg), "dataset": data.summary(),
           "model": model.to_dict(), "fit_trace": trace.to_dict(), "privacy": None}
    if cfg.method in PRIVATE_METHODS:
        params = PrivacyParams(cfg.epsilon, cfg.delta, cfg.tau1, PRIVATE_METHODS[cfg.method])
        doc["privacy"] = privacy_record(params, calibrate_sigma(params, data.d))
    _emit(dumps_report(doc), args.out)
    return EXIT_OK


def cmd_tev(args) -> int:
    cfg = config_from_args(args)
    model = _load_model(args.model)
    if model.K < 2:
        raise ConfigError("the model needs at least two components")
    sg = search_saddle_graph(Landscape(model), m=cfg.m, tau2=cfg.tau2, eps_perturb=cfg.perturb)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, **sg.to_dict()}
    _emit(dumps_report(doc), args.out)
    return EXIT_OK


def cmd_merge(args) -> int:
    cfg = config_from_args(args)
    obj = _read_json(args.tevs)
    try:
        records = [TransitionRecord.from_dict(r) for r in (obj["records"] if isinstance(obj, dict) else obj)]
        if isinstance(obj, dict):
            sg = SaddleGraph(int(obj["n_centers"]), np.asarray(obj["nodes"], dtype=float), records)
            n_nodes, n_centers = sg.nodes.shape[0], sg.n_centers
        else:
            n_nodes = n_centers = 1 + max(max(r.a, r.b) for r in records) if records else 0
        full = build_graph(n_nodes, records)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.tevs} is not a saddle list: {exc}") from None
    if not 1 <= cfg.k <= n_centers:
        raise ConfigError(f"k must lie in [1, {n_centers}]")
    merged, node_labels = merge_with_relays(full, range(n_centers), cfg.k)
    dendro = full_dendrogram(reduce_to_leading(full, n_centers))
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "k": cfg.k, "achieved_k": merged.n_clusters,
           "disconnected": merged.disconnected, "labels": node_labels[:n_centers].tolist(),
           "relay_labels": node_labels[n_centers:].tolist(), "dendrogram": dendro.to_dict()}
    if args.render:
        sys.stderr.write(dendro.render() + "\n")
    _emit(dumps_report(doc), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    _emit(dumps_report(run_pipeline(cfg)), args.out)
    return EXIT_OK


def _split(text, kind):
    if not text:
        return None
    try:
        return [kind(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad list {text!r}") from None


def _on_off(v: str) -> bool:
    if v.lower() in ("on", "true", "1", "yes"):
        return True
    if v.lower() in ("off", "false", "0", "no"):
        return False
    raise ValueError(v)


def cmd_sweep(args) -> int:
    base = config_from_args(args)
    grid = expand_grid(base, epsilon=_split(args.epsilons, float), k0=_split(args.k0s, int),
                       method=_split(args.methods, str), morse=_split(args.morse_grid, _on_off))
    for cfg in grid:
        cfg.validate()
    result = sweep(grid)
    _emit(dumps_report(result), args.out)
    table = sweep_table_csv(result)
    csv_path = args.csv or (str(Path(args.out).with_suffix(".csv")) if args.out else None)
    if csv_path:
        Path(csv_path).write_text(table, encoding="utf-8")
    else:
        sys.stderr.write(table)
    return EXIT_OK


def cmd_score(args) -> int:
    pred = _load_labels(args.pred, args.repeat)
    if args.truth:
        truth = _load_labels(args.truth)
    else:
        cfg = config_from_args(args)
        data: Dataset = load_data(cfg)
        if data.labels is None:
            raise DataError("the dataset has no ground-truth labels; pass --truth")
        truth = np.asarray(data.labels).astype(str)
    if pred.shape != truth.shape:
        raise DataError(f"{pred.size} predicted labels for {truth.size} true labels")
    ari, degenerate = adjusted_rand_index(truth, pred, return_flag=True)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "n": int(pred.size), "ari": ari, "degenerate": degenerate}
    _emit(dumps_report(doc), args.out)
    return EXIT_OK


def cmd_acceptance(args) -> int:
    from .acceptance import run_all

    only = _split(args.only, int)
    results = run_all(only)
    lines = [r.line() for r in results]
    _emit("\n".join(lines) + "\n", args.out)
    if args.out:
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {"fit": cmd_fit, "tev": cmd_tev, "merge": cmd_merge, "run": cmd_run, "sweep": cmd_sweep,
            "score": cmd_score, "acceptance": cmd_acceptance}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PrivacyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateFitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
