"""Acceptance checks on synthetic data, shared by the test suite and ``dpmorse acceptance``.

Every check compares the package against an independent oracle written
here: finite differences, pair counting, a Prim spanning tree, closed-form
privacy accounting. Each returns a ``CheckResult``; none raises on failure.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, make_two_moons
from .fit import fit_dplloyd_mog, fit_dpmog_hard, fit_em, fit_lloyd, init_kmeanspp
from .landscape import Landscape, classify, flow_ascend, flow_ascend_batch, refine_critical
from .merge import AdjacencyGraph, full_dendrogram, merge_to_k
from .metrics import adjusted_rand_index
from .model import MixtureModel
from .pipeline import RunConfig, dumps_report, run_pipeline
from .privacy import PrivacyParams, audit_sensitivity, calibrate_sigma
from .tev import find_all_tevs, search_saddle_graph, validate_tev


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


# Criterion 2 setup: dataset size, noise and K0 per dataset.
UPLIFT_N = 100_000
UPLIFT_NOISE = 0.05
UPLIFT_CASES = (("two_moons", 6, 2), ("three_arcs", 9, 3))
UPLIFT_EPSILONS = (10.0, 1.0)


def _timed(number, name, fn, limit=None) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - t0
    if limit is not None and elapsed >= limit:
        passed, detail = False, f"{detail}; over the {limit:g}s limit"
    return CheckResult(number, name, bool(passed), detail, elapsed)


# 1 -------------------------------------------------------------------------

def two_moons_reproduction(seed: int = 0):
    t0 = time.perf_counter()
    base = RunConfig(generator="two_moons", n=400, noise=0.05, k0=6, k=2, repeats=5, seed=seed, morse=True)
    plain = run_pipeline(replace(base, method="em_hard"))
    private = run_pipeline(replace(base, method="dpmog_hard", epsilon=1.0, delta=1e-5))
    elapsed = time.perf_counter() - t0
    plain_ari = [r["ari_merged"] for r in plain["repeats"]]
    dp_ari = [r["ari_merged"] for r in private["repeats"]]
    n_plain = sum(a >= 1.0 - 1e-12 for a in plain_ari)
    n_dp = sum(a >= 0.9 for a in dp_ari)
    ok = n_plain >= 4 and n_dp >= 3 and elapsed < 30.0
    detail = (f"hard-EM ARI=1 in {n_plain}/5 {_fmt(plain_ari)}; DP eps=1 ARI>=0.9 in {n_dp}/5 {_fmt(dp_ari)}; "
              f"{elapsed:.1f}s")
    return ok, detail


def _fmt(values):
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


# 2 -------------------------------------------------------------------------

def morse_uplift(n: int = UPLIFT_N, noise: float = UPLIFT_NOISE, cases=UPLIFT_CASES,
                 epsilons=UPLIFT_EPSILONS, repeats: int = 5):
    ok, parts = True, []
    for gen, k0, k in cases:
        for eps in epsilons:
            cfg = RunConfig(generator=gen, n=n, noise=noise, k0=k0, k=k, method="dpmog_hard", epsilon=eps,
                            repeats=repeats, seed=0)
            on = run_pipeline(replace(cfg, morse=True))["aggregate"]["ari_merged"]["mean"]
            off = run_pipeline(replace(cfg, morse=False))["aggregate"]["ari_merged"]["mean"]
            ok &= on > off
            parts.append(f"{gen} eps={eps:g}: on {on:.3f} vs off {off:.3f}")
    return ok, "; ".join(parts)


# 3 -------------------------------------------------------------------------

def calibration_identity():
    worst = 0.0
    grid = itertools.product((0.1, 1.0, 5.0, 10.0), (1e-8, 1e-6, 1e-5, 1e-3), (1, 5, 10, 20), (1, 2, 5, 10))
    count = 0
    for eps, delta, tau, D in grid:
        for mech in ("gaussian_mog_hard", "lloyd_mixed"):
            sigma = calibrate_sigma(PrivacyParams(eps, delta, tau, mech), D).sigma
            if mech == "gaussian_mog_hard":
                weight = (1 + 3 * D + 2 * D * D) * tau
            else:
                weight = (2 * D + 1) ** 2 * tau ** 2 + D * (2 * D - 1)
            rho = weight / (2.0 * sigma ** 2)
            achieved = rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))
            worst = max(worst, abs(achieved - eps) / eps)
            count += 1
    return worst <= 1e-9, f"{count} grid points, worst relative error {worst:.2e}"


# 4 -------------------------------------------------------------------------

def sensitivity_audit(pairs: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = {"count": 0.0, "sum": 0.0, "moment_diag": 0.0, "moment_offdiag": 0.0}
    for _ in range(pairs):
        n, D, K = int(rng.integers(2, 40)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        x = rng.uniform(-1.0, 1.0, size=(n, D))
        y = x.copy()
        i = int(rng.integers(n))
        # corners push the statistics to their extremes
        y[i] = rng.choice([-1.0, 1.0], size=D) if rng.random() < 0.5 else rng.uniform(-1.0, 1.0, size=D)
        if np.array_equal(x[i], y[i]):
            y[i, 0] = -x[i, 0] if x[i, 0] != 0 else 1.0
        centers = rng.uniform(-1.0, 1.0, size=(K, D))

        def assign(rows, c=centers):
            return np.argmin(((rows[:, None, :] - c[None]) ** 2).sum(axis=2), axis=1)

        rep = audit_sensitivity(Dataset(x), Dataset(y), assign, strict=False)
        for key in worst:
            worst[key] = max(worst[key], getattr(rep, key))
    ok = (worst["count"] <= 1 and worst["sum"] <= 2 and worst["moment_diag"] <= 1
          and worst["moment_offdiag"] <= 2)
    return ok, f"{pairs} pairs, worst " + ", ".join(f"{k}={v:.3f}" for k, v in worst.items())


# 5 -------------------------------------------------------------------------

def _model_gap(a: MixtureModel, b: MixtureModel) -> float:
    return max(np.abs(a.weights - b.weights).max(), np.abs(a.means - b.means).max(),
               np.abs(a.covariances - b.covariances).max())


def zero_noise_reduction(seeds=range(5)):
    worst_em, worst_lloyd = 0.0, 0.0
    for seed in seeds:
        data = make_two_moons(400, 0.05, seed)
        rng = np.random.default_rng(seed)
        start = init_kmeanspp(data.rows, 6, rng)
        params = PrivacyParams(1.0, 1e-5, 10, "gaussian_mog_hard")
        dp, _ = fit_dpmog_hard(data, 6, params, init=start, rng=np.random.default_rng(seed), sigma=0.0)
        ref, _ = fit_em(data, 6, 10, hard=True, init=start)
        worst_em = max(worst_em, _model_gap(dp, ref))
        # data points as starting centers keep every cluster non-empty
        centers = data.rows[rng.choice(data.n, 6, replace=False)]
        params = PrivacyParams(1.0, 1e-5, 10, "lloyd_mixed")
        dpl, _ = fit_dplloyd_mog(data, 6, params, rng=np.random.default_rng(seed), sigma=0.0, init_means=centers)
        refl, _ = fit_lloyd(data, 6, 10, init_means=centers)
        worst_lloyd = max(worst_lloyd, _model_gap(dpl, refl))
    ok = worst_em <= 1e-12 and worst_lloyd <= 1e-12
    return ok, f"max gap DPMoG-hard vs hard-EM {worst_em:.1e}, DPLloyd vs Lloyd {worst_lloyd:.1e}"


# 6 -------------------------------------------------------------------------

def random_model(rng, K=None, D=None) -> MixtureModel:
    K = int(rng.integers(1, 5)) if K is None else K
    D = int(rng.integers(1, 4)) if D is None else D
    w = rng.uniform(0.2, 1.0, size=K)
    means = rng.uniform(-1.0, 1.0, size=(K, D))
    covs = []
    for _ in range(K):
        q, _ = np.linalg.qr(rng.normal(size=(D, D)))
        covs.append(q @ np.diag(rng.uniform(0.05, 0.5, size=D)) @ q.T)
    return MixtureModel(w / w.sum(), means, np.array(covs))


def _rel(a, b) -> float:
    return float(np.abs(a - b).max() / max(1.0, np.abs(b).max()))


def dynamics_correctness(cases: int = 200, seed: int = 0, h: float = 1e-5):
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    for _ in range(cases):
        model = random_model(rng)
        L = Landscape(model)
        k = int(rng.integers(model.K))
        x = rng.multivariate_normal(model.means[k], model.covariances[k])
        eye = np.eye(model.D)
        fd_g = np.array([(L.log_density(x + h * e) - L.log_density(x - h * e)) / (2 * h) for e in eye])
        fd_h = np.array([(L.grad(x + h * e) - L.grad(x - h * e)) / (2 * h) for e in eye])
        worst_g = max(worst_g, _rel(L.grad(x), fd_g))
        worst_h = max(worst_h, _rel(L.hessian(x), 0.5 * (fd_h + fd_h.T)))
    drops = 0
    for _ in range(20):
        model = random_model(rng, D=2)
        L = Landscape(model)
        x0 = rng.uniform(-1.5, 1.5, size=2)
        *_, path_lp = flow_ascend(L, x0, record_path=True)
        resolution = 1e-10 * (1.0 + np.abs(path_lp[:-1]))
        drops += int(np.sum(np.diff(path_lp) < -resolution))
    ok = worst_g <= 1e-6 and worst_h <= 1e-5 and drops == 0
    return ok, (f"{cases} cases, worst relative gradient error {worst_g:.1e}, Hessian {worst_h:.1e}; "
                f"{drops} decreasing flow steps")


# 7 -------------------------------------------------------------------------

def symmetric_model() -> MixtureModel:
    return MixtureModel(np.array([0.5, 0.5]), np.array([[-0.5, 0.0], [0.5, 0.0]]),
                        np.array([np.eye(2) * 0.04, np.eye(2) * 0.04]))


def ring_model() -> MixtureModel:
    """A ring with a single mode around an index-2 point, plus two outer blobs.

    The ring's low point is index one, but both of its ascent branches run
    round the ring to the same mode, so it joins no two basins.
    """
    th = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    ring = 0.5 * np.column_stack([np.cos(th), np.sin(th)])
    w = np.r_[1.0 + 0.6 * np.sin(th + 0.3), 3.0, 2.5]
    means = np.vstack([ring, [[1.6, 0.1], [-1.6, -0.1]]])
    covs = np.array([np.eye(2) * 0.12 ** 2] * 16 + [np.eye(2) * 0.01] * 2)
    return MixtureModel(w / w.sum(), means, covs)


def modes_by_flow(L: Landscape, lo=-2.0, hi=2.0, steps=41, tol=1e-3) -> np.ndarray:
    """Distinct maxima reached from a grid; points that stall on saddles are dropped."""
    xs = np.linspace(lo, hi, steps) + 1e-3 * np.pi  # off any symmetry axis
    grid = np.array(list(itertools.product(xs, repeat=L.D)))
    grid = grid[L.log_density(grid) > np.max(L.log_density(grid)) - 12.0]
    found: list = []
    for e in flow_ascend_batch(L, grid).endpoints:
        cp = classify(L, e)
        if cp.index == 0 and all(np.linalg.norm(e - q) > tol for q in found):
            found.append(e)
    return np.array(found)


def _record_ok(L: Landscape, rec, nodes, eps=0.05) -> bool:
    cp = classify(L, rec.t)
    if cp.index != 1 or cp.gradient_norm > 1e-6:
        return False
    e = cp.eigenvectors[:, 0]
    ends = flow_ascend_batch(L, np.array([rec.t + eps * e, rec.t - eps * e])).endpoints
    idx = [int(np.argmin(np.linalg.norm(nodes - x, axis=1))) for x in ends]
    return idx[0] != idx[1] and sorted(idx) == sorted((rec.a, rec.b))


def tev_validity():
    parts, ok = [], True
    L = Landscape(symmetric_model())
    recs = find_all_tevs(L)
    gap = min((float(np.linalg.norm(r.t)) for r in recs), default=np.inf)
    ok &= len(recs) == 1 and gap <= 1e-6
    parts.append(f"symmetric: {len(recs)} TEV at distance {gap:.1e} from midpoint")

    checked = bad = 0
    for model in (ring_model(), fit_em(make_two_moons(400, 0.05, 0), 6, 10, hard=True, seed=0)[0]):
        L = Landscape(model)
        for rec in find_all_tevs(L):
            checked += 1
            bad += not _record_ok(L, rec, model.means)
        sg = search_saddle_graph(L)
        for rec in sg.saddles():
            checked += 1
            bad += not _record_ok(L, rec, sg.nodes)
    ok &= bad == 0
    parts.append(f"{checked} emitted records, {bad} fail index-1 + two-basin checks")

    L = Landscape(ring_model())
    modes = modes_by_flow(L)
    cp = refine_critical(L, np.array([0.0, -0.5]))
    low = np.array([-0.5 * math.sin(0.3), -0.5 * math.cos(0.3)])
    if cp.index != 1:
        cp = refine_critical(L, low)
    rejected = cp.index == 1 and validate_tev(L, cp, centers=modes) is None
    listed = any(np.linalg.norm(r.t - cp.location) < 1e-3 for r in find_all_tevs(L, centers=modes))
    ok &= len(modes) == 3 and rejected and not listed
    parts.append(f"ring model: {len(modes)} modes, index-{cp.index} ring point rejected={rejected}, "
                 f"listed={listed}")
    return ok, "; ".join(parts)


# 8 -------------------------------------------------------------------------

def random_connected_graph(rng, n: int) -> AdjacencyGraph:
    g = AdjacencyGraph(n)
    order = rng.permutation(n)
    for i in range(1, n):  # random spanning tree first
        a, b = int(order[i]), int(order[rng.integers(i)])
        g.edges[(min(a, b), max(a, b))] = 0.0
    for a, b in itertools.combinations(range(n), 2):
        if (a, b) not in g.edges and rng.random() < 0.4:
            g.edges[(a, b)] = 0.0
    weights = rng.permutation(len(g.edges)) + rng.uniform(0.0, 0.5)
    for key, w in zip(sorted(g.edges), weights):
        g.edges[key] = float(w)
    return g


def prim_mst(g: AdjacencyGraph) -> list:
    inside, tree = {0}, []
    while len(inside) < g.n:
        w, a, b = min((w, a, b) for (a, b), w in g.edges.items() if (a in inside) != (b in inside))
        tree.append((w, a, b))
        inside |= {a, b}
    return tree


def mst_cut_partition(g: AdjacencyGraph, K: int) -> set:
    tree = sorted(prim_mst(g))[: g.n - K]
    comp = {i: {i} for i in range(g.n)}
    for _, a, b in tree:
        merged = comp[a] | comp[b]
        for v in merged:
            comp[v] = merged
    return {frozenset(s) for s in comp.values()}


def _partition(labels) -> set:
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(s) for s in groups.values()}


def merge_correctness(graphs: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    oracle_bad = cut_bad = order_bad = 0
    for _ in range(graphs):
        g = random_connected_graph(rng, int(rng.integers(2, 9)))
        dendro = full_dendrogram(g)
        heights = [m.weight for m in dendro.merges]
        if heights != sorted(heights) or heights != sorted(w for w, _, _ in prim_mst(g)):
            order_bad += 1
        for K in range(1, g.n + 1):
            direct = merge_to_k(g, K)
            oracle_bad += _partition(direct.labels) != mst_cut_partition(g, K)
            cut_bad += _partition(dendro.cut(K)) != _partition(direct.labels)
    ok = oracle_bad == cut_bad == order_bad == 0
    return ok, (f"{graphs} graphs: {oracle_bad} MST-cut mismatches, {cut_bad} inconsistent cuts, "
                f"{order_bad} ordering violations")


# 9 -------------------------------------------------------------------------

def pair_count_ari(a, b) -> float | None:
    """Adjusted Rand index from the four pair counts; None when undefined."""
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        same_a, same_b = a[i] == a[j], b[i] == b[j]
        n11 += same_a and same_b
        n10 += same_a and not same_b
        n01 += same_b and not same_a
        n00 += not same_a and not same_b
    den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11)
    return None if den == 0 else 2.0 * (n00 * n11 - n01 * n10) / den


def ari_oracle(cases: int = 500, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst, undefined_bad = 0.0, 0
    for _ in range(cases):
        n = int(rng.integers(2, 11))
        a = rng.integers(0, int(rng.integers(1, n + 1)), size=n)
        b = rng.integers(0, int(rng.integers(1, n + 1)), size=n)
        ref = pair_count_ari(list(a), list(b))
        got, flag = adjusted_rand_index(a, b, return_flag=True)
        if ref is None:
            undefined_bad += not (flag and got == 0.0)
        else:
            worst = max(worst, abs(got - ref))
    exact = adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1])
    ok = worst <= 1e-12 and undefined_bad == 0 and exact == -0.5
    return ok, f"{cases} cases, worst gap {worst:.1e}, ARI([0,0,1,1],[0,1,0,1]) = {exact}"


# 10 ------------------------------------------------------------------------

def determinism():
    cfg = RunConfig(generator="two_moons", n=400, method="dpmog_hard", epsilon=1.0, k0=6, k=2, repeats=2, seed=7)
    first, second = dumps_report(run_pipeline(cfg)), dumps_report(run_pipeline(cfg))
    return first == second, f"{len(first)} bytes, identical={first == second}"


CHECKS = {
    1: ("two-moons reproduction", two_moons_reproduction),
    2: ("morse uplift under DP", morse_uplift),
    3: ("calibration identity", calibration_identity, 1.0),
    4: ("sensitivity audit", sensitivity_audit, 5.0),
    5: ("zero-noise reduction", zero_noise_reduction),
    6: ("dynamics correctness", dynamics_correctness),
    7: ("TEV validity", tev_validity),
    8: ("merge correctness", merge_correctness),
    9: ("ARI oracle", ari_oracle),
    10: ("determinism", determinism),
}


def run_check(number: int) -> CheckResult:
    name, fn, *limit = CHECKS[number]
    return _timed(number, name, fn, *limit)


def run_all(only=None) -> list[CheckResult]:
    return [run_check(k) for k in sorted(CHECKS) if only is None or k in only]
