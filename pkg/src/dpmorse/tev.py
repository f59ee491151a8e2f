"""Transition equilibrium vectors (index-1 saddles joining two basins).

For each pair of centers a quadratic string through both centers is relaxed
toward the saddle. Each round evaluates the string at m interior points,
takes the least dense one and moves it one ascent step. The result is then
Newton-refined and kept only if it is an index-1 point whose two unstable
branches flow to two different centers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .landscape import (FLOW_STEP, GRAD_TOL, CriticalPoint, Landscape, _match, flow_ascend,
                        flow_ascend_batch, gentlest_ascent, refine_critical)

log = logging.getLogger(__name__)

DEFAULT_M = 20
DEFAULT_TAU2 = 5
DEFAULT_PERTURB = 0.05
DEDUPE_TOL = 1e-4


@dataclass
class TransitionRecord:
    t: np.ndarray
    a: int
    b: int
    f_value: float
    p_value: float
    gradient_norm: float = 0.0
    kind: str = "saddle"  # or "shared_mode" for two centers that flow to one mode

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "t": np.asarray(self.t).tolist(),
                "f_value": self.f_value, "p_value": self.p_value, "kind": self.kind}

    @classmethod
    def from_dict(cls, obj: dict) -> "TransitionRecord":
        return cls(np.asarray(obj["t"], dtype=float), int(obj["a"]), int(obj["b"]),
                   float(obj["f_value"]), float(obj.get("p_value", np.exp(-obj["f_value"]))),
                   kind=obj.get("kind", "saddle"))


def quadratic_string_point(mu_k, mu_l, v, s):
    """Point at parameter ``s`` on the parabola through mu_k (s=0), mu_k + v (s=1/2), mu_l (s=1).

    ``s`` may be an array, in which case one row is returned per value.
    """
    mu_k = np.asarray(mu_k, dtype=float)
    u = np.asarray(mu_l, dtype=float) - mu_k
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    bend = 4.0 * v - 2.0 * u
    return mu_k + s[..., None] * u + (s - s * s)[..., None] * bend


def _ascent_step(L: Landscape, x, step):
    # One Euler step whose displacement is at most ``step`` box units.
    gnorm = np.linalg.norm(L.grad(x))
    h = step / max(gnorm, 1.0)
    return flow_ascend(L, x, step=h, max_iter=1, max_disp=step)[0]


def find_tev_for_pair(L: Landscape, k: int, l: int, m: int = DEFAULT_M, tau2: int = DEFAULT_TAU2,
                      step: float = FLOW_STEP, centers=None, grad_tol: float = GRAD_TOL) -> CriticalPoint | None:
    """Saddle candidate between centers ``k`` and ``l``; ``None`` when there is none.

    The starting point is the least dense of the m interior samples on the
    straight segment; ``tau2`` string rounds follow, then Newton refinement.
    If Newton stalls, gentlest ascent moves the point toward an index-1 saddle
    and Newton is retried once. A candidate whose refinement still did not
    converge is reported as ``None``.
    """
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    if k == l:
        raise ValueError("need two distinct centers")
    if m < 1:
        raise ValueError("m must be >= 1")
    mu_k, mu_l = centers[k], centers[l]
    u = mu_l - mu_k
    if np.linalg.norm(u) < 1e-12:
        log.debug("centers %d and %d coincide; no saddle search", k, l)
        return None
    s = np.arange(1, m + 1) / (m + 1)
    line = mu_k + s[:, None] * u
    point = line[np.argmin(L.log_density(line))]
    point = _ascent_step(L, point, step)
    for _ in range(tau2):
        pts = quadratic_string_point(mu_k, mu_l, point - mu_k, s)
        point = pts[np.argmin(L.log_density(pts))]
        point = _ascent_step(L, point, step)
    cp = refine_critical(L, point, grad_tol=grad_tol)
    if not cp.converged:
        cp = refine_critical(L, gentlest_ascent(L, point), grad_tol=grad_tol)
    if not cp.converged:
        log.debug("pair (%d, %d): refinement did not converge (|g|=%.3g)", k, l, cp.gradient_norm)
        return None
    return cp


def validate_tev(L: Landscape, cp: CriticalPoint, centers=None, eps_perturb: float = DEFAULT_PERTURB,
                 match_tol: float = np.inf, **flow_kw) -> TransitionRecord | None:
    """Keep ``cp`` only if it is a hyperbolic index-1 point joining two different centers."""
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    if not cp.converged or not cp.hyperbolic or cp.index != 1:
        return None
    e = cp.eigenvectors[:, 0]
    starts = np.vstack([cp.location + eps_perturb * e, cp.location - eps_perturb * e])
    res = flow_ascend_batch(L, starts, **flow_kw)
    if not res.converged.all():
        log.debug("flow from saddle candidate %s did not converge", cp.location)
        return None
    idx, _, _ = _match(res.endpoints, centers, match_tol)
    a, b = int(idx[0]), int(idx[1])
    if a == b:
        return None
    a, b = min(a, b), max(a, b)
    return TransitionRecord(cp.location.copy(), a, b, cp.f_value, cp.p_value, cp.gradient_norm)


def find_all_tevs(L: Landscape, m: int = DEFAULT_M, tau2: int = DEFAULT_TAU2,
                  eps_perturb: float = DEFAULT_PERTURB, dedupe_tol: float = DEDUPE_TOL,
                  step: float = FLOW_STEP, centers=None) -> list[TransitionRecord]:
    """Search every center pair, validate the candidates and return one record per edge.

    Candidates closer than ``dedupe_tol`` collapse to the one with the
    smaller gradient norm. When several saddles join the same pair of
    centers the one with the lowest f is kept. Output is sorted by (a, b).
    """
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    K = centers.shape[0]
    if K < 2:
        raise ValueError("need at least two centers to look for saddles")
    candidates: list[CriticalPoint] = []
    for k in range(K):
        for l in range(k + 1, K):
            cp = find_tev_for_pair(L, k, l, m, tau2, step, centers)
            if cp is not None:
                candidates.append(cp)

    unique: list[CriticalPoint] = []
    for cp in sorted(candidates, key=lambda c: c.gradient_norm):
        if all(np.linalg.norm(cp.location - u.location) > dedupe_tol for u in unique):
            unique.append(cp)

    best: dict[tuple[int, int], TransitionRecord] = {}
    for cp in unique:
        rec = validate_tev(L, cp, centers, eps_perturb)
        if rec is None:
            continue
        key = (rec.a, rec.b)
        if key not in best or rec.f_value < best[key].f_value:
            best[key] = rec
    return [best[key] for key in sorted(best)]


@dataclass
class SaddleGraph:
    """Saddles between the modes reached from the centers and any extra modes met on the way.

    Nodes ``0..n_centers-1`` are the centers, located at the modes their
    ascent flows reach; higher nodes are relay modes that belong to no
    center. Record endpoints ``a`` and ``b`` index these nodes. Centers whose
    flows end at the same mode are joined by a record located at that mode.
    """

    n_centers: int
    nodes: np.ndarray
    records: list

    @property
    def n_relays(self) -> int:
        return self.nodes.shape[0] - self.n_centers

    def saddles(self) -> list:
        return [r for r in self.records if r.kind == "saddle"]

    def to_dict(self) -> dict:
        return {"n_centers": self.n_centers, "nodes": self.nodes.tolist(),
                "records": [r.to_dict() for r in self.records]}


def saddles_near_modes(L: Landscape, modes, offset: float = 0.01, grad_tol: float = GRAD_TOL) -> list[CriticalPoint]:
    """Index-1 points reached by gentlest ascent from each mode nudged along each Hessian eigenvector.

    Starting just off a mode in direction +e or -e, gentlest ascent climbs
    to the saddle adjacent to the mode on that side, however close it is.
    """
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    if modes.shape[0] == 0:
        return []
    _, vecs = np.linalg.eigh(-L.hessians(modes))
    starts = [mode + sign * offset * e for mode, V in zip(modes, vecs) for e in V.T for sign in (1.0, -1.0)]
    out: list[CriticalPoint] = []
    for x in gentlest_ascent(L, np.asarray(starts)):
        cp = refine_critical(L, x, grad_tol=grad_tol)
        if cp.converged and cp.hyperbolic and cp.index == 1:
            if all(np.linalg.norm(cp.location - c.location) > DEDUPE_TOL for c in out):
                out.append(cp)
    return out


def search_saddle_graph(L: Landscape, m: int = DEFAULT_M, tau2: int = DEFAULT_TAU2,
                        eps_perturb: float = DEFAULT_PERTURB, step: float = FLOW_STEP, centers=None,
                        node_tol: float = 1e-3, max_relays: int | None = None) -> SaddleGraph:
    """Saddle graph over the centers' modes plus any extra modes met on the way.

    A mixture can have more modes than components, and overlapping
    components leave shallow bumps whose saddle sits right next to them. The
    pairwise string search runs first. Every node is then also searched from
    its own mode (``saddles_near_modes``). A string that settles on a new
    mode, or a saddle branch that flows into one, adds that mode as a relay
    node, which is searched the same way. At most ``max_relays`` (default:
    number of centers) relays are added.
    """
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    K = centers.shape[0]
    if K < 2:
        raise ValueError("need at least two centers to look for saddles")
    max_relays = K if max_relays is None else max_relays
    modes = [e.copy() for e in flow_ascend_batch(L, centers).endpoints]
    best: dict[tuple[int, int], TransitionRecord] = {}

    def keep(rec):
        key = (rec.a, rec.b)
        if key not in best or rec.f_value < best[key].f_value:
            best[key] = rec

    def locate(x):
        d = np.linalg.norm(np.asarray(modes) - x, axis=1)
        j = int(np.argmin(d))
        if d[j] <= node_tol:
            return j
        if len(modes) - K >= max_relays:
            return None
        modes.append(np.array(x, dtype=float))
        log.debug("relay mode %d at %s", len(modes) - 1, x)
        return len(modes) - 1

    for a in range(K):
        for b in range(a + 1, K):
            if np.linalg.norm(modes[a] - modes[b]) <= node_tol:
                f = float(-L.log_density(modes[a]))
                keep(TransitionRecord(modes[a].copy(), a, b, f, float(np.exp(-f)), kind="shared_mode"))

    pending, bumps = [], []
    for k in range(K):
        for l in range(k + 1, K):
            cp = find_tev_for_pair(L, k, l, m, tau2, step, centers)
            if cp is None or not cp.hyperbolic:
                continue
            if cp.index == 0:
                bumps.append(cp)
            elif cp.index == 1:
                pending.append(cp)
    if bumps:
        for x in flow_ascend_batch(L, np.array([c.location for c in bumps])).endpoints:
            locate(x)

    # The first K nodes may repeat a mode; search each distinct mode once.
    searched = [j for j in range(K) if any(np.linalg.norm(modes[j] - modes[i]) <= node_tol for i in range(j))]
    while True:
        fresh = [j for j in range(len(modes)) if j not in searched]
        searched += fresh
        pending += saddles_near_modes(L, np.array([modes[j] for j in fresh])) if fresh else []
        if not pending:
            break
        e = np.array([c.eigenvectors[:, 0] for c in pending])
        t = np.array([c.location for c in pending])
        res = flow_ascend_batch(L, np.vstack([t + eps_perturb * e, t - eps_perturb * e]))
        n = len(pending)
        for i, cp in enumerate(pending):
            if not (res.converged[i] and res.converged[n + i]):
                continue
            ends = [locate(res.endpoints[i]), locate(res.endpoints[n + i])]
            if None in ends or ends[0] == ends[1]:
                continue
            keep(TransitionRecord(cp.location.copy(), min(ends), max(ends), cp.f_value, cp.p_value,
                                  cp.gradient_norm))
        pending = []
        if all(j in searched for j in range(len(modes))):
            break
    return SaddleGraph(K, np.asarray(modes), [best[key] for key in sorted(best)])


def shared_mode_links(L: Landscape, centers=None, tol: float = 1e-3, **flow_kw) -> list[TransitionRecord]:
    """Join centers whose ascent flows end at the same mode.

    A center with no mode of its own sits inside a neighbor's basin, so no
    saddle can separate the two. Each such pair is linked at f of the shared
    mode, the lowest level at which both are already one component. These
    links are not saddles and are kept apart from the TEV list.
    """
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    res = flow_ascend_batch(L, centers, **flow_kw)
    ends = res.endpoints
    f_end = -L.log_density(ends)
    links = []
    K = len(centers)
    for a in range(K):
        for b in range(a + 1, K):
            if np.linalg.norm(ends[a] - ends[b]) <= tol:
                f = float(max(f_end[a], f_end[b]))
                links.append(TransitionRecord(0.5 * (ends[a] + ends[b]), a, b, f, float(np.exp(-f)),
                                              kind="shared_mode"))
    return links
