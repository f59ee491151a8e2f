"""End-to-end runs: fit sub-clusters, find saddles, merge, label and score."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .dataset import GENERATORS, DataError, Dataset, load_csv, rescale_unit_box
from .fit import fit_dplloyd_mog, fit_dpmog_hard, fit_em
from .landscape import Landscape
from .merge import build_graph, full_dendrogram, label_dataset, merge_with_relays, reduce_to_leading
from .model import WEIGHT_FLOOR
from .metrics import adjusted_rand_index
from .privacy import PrivacyParams, calibrate_sigma, privacy_record, spawn_streams
from .tev import search_saddle_graph

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
METHODS = ("dpmog_hard", "dplloyd_mog", "em_soft", "em_hard")
DEAD_COUNT_SIGMAS = 3.0
PRIVATE_METHODS = {"dpmog_hard": "gaussian_mog_hard", "dplloyd_mog": "lloyd_mixed"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    generator: str | None = "two_moons"
    n: int = 400
    noise: float = 0.05
    data_seed: int | None = None
    has_header: bool = False
    label_column: str | None = None
    bounds: str | None = None  # "lo:hi,lo:hi,..." public bounds for CSV data
    method: str = "dpmog_hard"
    morse: bool = True
    k0: int = 6
    k: int = 2
    epsilon: float = 1.0
    delta: float = 1e-5
    tau1: int = 10
    tau2: int = 5
    m: int = 20
    perturb: float = 0.05
    repeats: int = 5
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if (self.data is None) == (self.generator is None):
            raise ConfigError("give exactly one of data path or generator")
        if self.generator is not None and self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; choose from {sorted(GENERATORS)}")
        if not 1 <= self.k <= self.k0:
            raise ConfigError(f"need 1 <= k <= k0, got k={self.k}, k0={self.k0}")
        if self.repeats < 1 or self.tau1 < 1 or self.tau2 < 0 or self.m < 1:
            raise ConfigError("repeats, tau1 and m must be >= 1 and tau2 >= 0")
        if self.perturb <= 0:
            raise ConfigError("perturb must be positive")
        if self.method in PRIVATE_METHODS:
            try:
                PrivacyParams(self.epsilon, self.delta, self.tau1, PRIVATE_METHODS[self.method])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string-valued key/value pairs (config files, CLI overrides)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(cls.__dataclass_fields__[key].default, key, raw)
        return cls(**kwargs)


def _coerce(default, key, raw):
    if not isinstance(raw, str):
        return raw
    if raw.lower() in ("none", "null", ""):
        return None
    kind = {"morse": bool, "has_header": bool, "n": int, "data_seed": int, "k0": int, "k": int,
            "tau1": int, "tau2": int, "m": int, "repeats": int, "seed": int,
            "noise": float, "epsilon": float, "delta": float, "perturb": float}.get(key, str)
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key] = value
    return out


def parse_bounds(text: str, d: int):
    try:
        pairs = [tuple(float(v) for v in item.split(":")) for item in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad bounds {text!r}; expected lo:hi,lo:hi,...") from None
    if len(pairs) == 1 and d > 1:
        pairs = pairs * d
    if len(pairs) != d or any(len(p) != 2 for p in pairs):
        raise ConfigError(f"bounds must give one lo:hi pair per feature (D={d})")
    return pairs


def load_data(cfg: RunConfig) -> Dataset:
    if cfg.generator is not None:
        seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
        return GENERATORS[cfg.generator](cfg.n, cfg.noise, seed)
    raw = load_csv(cfg.data, cfg.has_header, cfg.label_column)
    if raw.in_unit_box() and cfg.bounds is None:
        meta = dict(raw.meta, bounds_source="none (already in unit box)")
        return Dataset(raw.rows, raw.labels, raw.feature_names, meta)
    bounds = parse_bounds(cfg.bounds, raw.d) if cfg.bounds else None
    return rescale_unit_box(raw, bounds)


def fit_model(data: Dataset, cfg: RunConfig, seed: int):
    """Fit ``k0`` sub-clusters with the configured method using streams forked from ``seed``."""
    streams = spawn_streams(seed, ["init", "noise"])
    if cfg.method == "dpmog_hard":
        params = PrivacyParams(cfg.epsilon, cfg.delta, cfg.tau1, "gaussian_mog_hard")
        init = int(streams["init"].integers(2**63 - 1))
        return fit_dpmog_hard(data, cfg.k0, params, init=init, rng=streams["noise"])
    if cfg.method == "dplloyd_mog":
        params = PrivacyParams(cfg.epsilon, cfg.delta, cfg.tau1, "lloyd_mixed")
        init = streams["init"].uniform(-1.0, 1.0, size=(cfg.k0, data.d))
        return fit_dplloyd_mog(data, cfg.k0, params, rng=streams["noise"], init_means=init)
    init_seed = int(streams["init"].integers(2**63 - 1))
    return fit_em(data, cfg.k0, cfg.tau1, hard=cfg.method == "em_hard", seed=init_seed)


def live_components(model, n: int, sigma: float) -> list[int]:
    """Components whose released count n * weight exceeds DEAD_COUNT_SIGMAS * sigma.

    A count within a few noise standard deviations of zero cannot be told
    apart from an empty cluster, so such a component does not count toward
    K; it only relays. Uses released quantities alone (post-processing).
    """
    counts = np.asarray(model.weights) * n
    return [k for k in range(model.K) if counts[k] > DEAD_COUNT_SIGMAS * sigma + WEIGHT_FLOOR * n]


def run_once(data: Dataset, cfg: RunConfig, seed: int) -> dict:
    model, trace = fit_model(data, cfg, seed)
    sub_labels = model.hard_assign(data.rows)
    entry = {"seed": seed, "model": model.to_dict(), "fit_trace": trace.to_dict()}
    if cfg.morse and model.K >= 2:
        L = Landscape(model)
        sg = search_saddle_graph(L, m=cfg.m, tau2=cfg.tau2, eps_perturb=cfg.perturb)
        live = live_components(model, data.n, trace.privacy.get("sigma", 0.0) if trace.privacy else 0.0)
        if len(live) < cfg.k:
            live = list(range(model.K))
        full = build_graph(len(sg.nodes), sg.records)
        merged, node_labels = merge_with_relays(full, live, cfg.k)
        labels, flags = label_dataset(L, node_labels, data, centers=sg.nodes, centers_are_modes=True)
        entry.update(
            tevs=[t.to_dict() for t in sg.records],
            tev_count=len(sg.saddles()),
            relay_modes=sg.nodes[model.K:].tolist(),
            live_components=live,
            dendrogram=full_dendrogram(reduce_to_leading(full, model.K)).to_dict(),
            merge_labels=node_labels[:model.K].tolist(),
            achieved_k=merged.n_clusters,
            disconnected=merged.disconnected,
            label_flags=flags,
        )
    else:
        labels = sub_labels
        entry.update(tevs=[], tev_count=0, dendrogram=None, achieved_k=model.K)
    if data.labels is not None:
        entry["ari_subclusters"] = adjusted_rand_index(data.labels, sub_labels)
        entry["ari_merged"] = adjusted_rand_index(data.labels, labels)
    entry["labels"] = labels.tolist()
    return entry


def _aggregate(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "min": float(arr.min()),
            "max": float(arr.max())}


def run_pipeline(cfg: RunConfig, data: Dataset | None = None) -> dict:
    """Run ``cfg.repeats`` seeded repetitions and assemble the report document.

    Repeat ``i`` uses seed ``cfg.seed + i``; fitting initialization and noise
    draw from separate streams forked from it.
    """
    cfg.validate()
    data = load_data(cfg) if data is None else data
    repeats = [run_once(data, cfg, cfg.seed + i) for i in range(cfg.repeats)]
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": asdict(cfg),
        "dataset": data.summary(),
        "repeats": repeats,
        "aggregate": {
            "ari_subclusters": _aggregate(r.get("ari_subclusters") for r in repeats),
            "ari_merged": _aggregate(r.get("ari_merged") for r in repeats),
            "tev_count": _aggregate(r["tev_count"] for r in repeats),
        },
    }
    if cfg.method in PRIVATE_METHODS:
        params = PrivacyParams(cfg.epsilon, cfg.delta, cfg.tau1, PRIVATE_METHODS[cfg.method])
        report["privacy"] = privacy_record(params, calibrate_sigma(params, data.d))
        report["privacy"]["guarantee_asserted"] = data.meta.get("bounds_source") != "data"
    else:
        report["privacy"] = None
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


SWEEP_KEYS = ("epsilon", "k0", "method", "morse")


def sweep(configs) -> dict:
    """Run every config; a failing cell is recorded and the sweep moves on."""
    configs = list(configs)
    if not configs:
        raise ConfigError("sweep needs at least one configuration")
    cells = []
    for cfg in configs:
        key = {k: getattr(cfg, k) for k in SWEEP_KEYS}
        try:
            report = run_pipeline(cfg)
            agg = report["aggregate"]["ari_merged"] or {}
            cells.append({**key, "status": "ok", "ari_mean": agg.get("mean"), "ari_std": agg.get("std"),
                          "report": report})
        except (ConfigError, DataError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("sweep cell %s failed: %s", key, exc)
            cells.append({**key, "status": f"error: {exc}", "ari_mean": None, "ari_std": None,
                          "report": None})
    cells.sort(key=lambda c: (c["epsilon"], c["k0"], c["method"], c["morse"]))
    return {"schema_version": REPORT_SCHEMA_VERSION, "cells": cells}


def sweep_table_csv(result: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(SWEEP_KEYS) + ["status", "ari_mean", "ari_std"])
    for c in result["cells"]:
        w.writerow([c[k] for k in SWEEP_KEYS] + [c["status"], c["ari_mean"], c["ari_std"]])
    return buf.getvalue()


def expand_grid(base: RunConfig, **axes) -> list[RunConfig]:
    grid = [base]
    for name, values in axes.items():
        if values:
            grid = [replace(cfg, **{name: v}) for cfg in grid for v in values]
    return grid
