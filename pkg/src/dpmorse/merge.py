"""Single-linkage merging of sub-clusters over the saddle graph.

Vertices are sub-cluster centers; an edge joins two centers that share a
validated saddle and weighs f(t) = -ln p(t) at that saddle. Merging the
lightest edge first means dense saddles join first, which is the same order
in which superlevel sets of the density connect as the level drops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .landscape import Landscape, assign_basins


@dataclass
class AdjacencyGraph:
    n: int
    edges: dict = field(default_factory=dict)  # (a, b) with a < b -> weight

    def weight(self, a: int, b: int) -> float:
        if a == b:
            return np.inf
        return self.edges.get((min(a, b), max(a, b)), np.inf)

    def matrix(self) -> np.ndarray:
        w = np.full((self.n, self.n), np.inf)
        for (a, b), v in self.edges.items():
            w[a, b] = w[b, a] = v
        return w


def build_graph(n: int, tevs) -> AdjacencyGraph:
    """Edge per saddle record; parallel records keep the smallest weight."""
    g = AdjacencyGraph(n)
    for rec in tevs:
        a, b, w = int(rec.a), int(rec.b), float(rec.f_value)
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"edge ({a}, {b}) out of range for {n} vertices")
        if a == b:
            raise ValueError(f"self-loop on vertex {a}")
        key = (min(a, b), max(a, b))
        g.edges[key] = min(w, g.edges.get(key, np.inf))
    return g


def minimax_weights(g: AdjacencyGraph) -> np.ndarray:
    """Smallest possible largest edge weight over paths between each vertex pair; inf if unreachable."""
    w = g.matrix()
    np.fill_diagonal(w, -np.inf)
    for k in range(g.n):
        w = np.minimum(w, np.maximum(w[:, k:k + 1], w[k:k + 1, :]))
    return w


def reduce_to_leading(g: AdjacencyGraph, n_keep: int) -> AdjacencyGraph:
    """Graph on the first ``n_keep`` vertices weighted by minimax path weight in ``g``.

    The other vertices act only as relays. Single-linkage merging of the
    result groups the kept vertices exactly as merging ``g`` itself would.
    """
    w = minimax_weights(g)
    out = AdjacencyGraph(n_keep)
    for a in range(n_keep):
        for b in range(a + 1, n_keep):
            if np.isfinite(w[a, b]):
                out.edges[(a, b)] = float(w[a, b])
    return out


def relay_labels(g: AdjacencyGraph, n_keep: int, labels) -> np.ndarray:
    """Extend leading-vertex labels to relays: each joins the vertex it reaches at the lowest level.

    Relays that reach no leading vertex get -1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    w = minimax_weights(g)[n_keep:, :n_keep]
    out = np.full(g.n - n_keep, -1, dtype=np.int64)
    for i, row in enumerate(w):
        if np.isfinite(row).any():
            out[i] = labels[int(np.argmin(row))]
    return np.concatenate([labels, out])


def merge_with_relays(full: AdjacencyGraph, leading, K: int):
    """Merge the ``leading`` vertices of ``full`` to ``K`` clusters, all other vertices acting as relays.

    Returns the merge over the leading vertices (in the given order) and a
    label for every vertex of ``full`` (-1 for relays that reach no leading
    vertex).
    """
    leading = [int(i) for i in leading]
    order = leading + [i for i in range(full.n) if i not in set(leading)]
    pos = {v: i for i, v in enumerate(order)}
    perm = AdjacencyGraph(full.n, {(min(pos[a], pos[b]), max(pos[a], pos[b])): w
                                   for (a, b), w in full.edges.items()})
    merged = merge_to_k(reduce_to_leading(perm, len(leading)), K)
    labels_perm = relay_labels(perm, len(leading), merged.labels)
    labels = np.empty(full.n, dtype=np.int64)
    labels[order] = labels_perm
    return merged, labels


@dataclass(frozen=True)
class Merge:
    step: int
    a: int
    b: int
    weight: float


@dataclass
class Dendrogram:
    """Merge events; cluster ``n_leaves + step`` is created by merge ``step``."""

    n_leaves: int
    merges: list = field(default_factory=list)

    def cut(self, K: int) -> np.ndarray:
        """Vertex labels after the first ``n_leaves - K`` merges (fewer if not available)."""
        if not 1 <= K <= self.n_leaves:
            raise ValueError(f"K must lie in [1, {self.n_leaves}]")
        parent = list(range(self.n_leaves))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        members = {i: i for i in range(self.n_leaves)}  # cluster id -> some leaf
        for mg in self.merges[: self.n_leaves - K]:
            ra, rb = find(members[mg.a]), find(members[mg.b])
            parent[max(ra, rb)] = min(ra, rb)
            members[self.n_leaves + mg.step] = min(ra, rb)
        return _normalize([find(i) for i in range(self.n_leaves)])

    def to_dict(self) -> dict:
        return {"n_leaves": self.n_leaves,
                "merges": [{"step": m.step, "a": m.a, "b": m.b, "weight": m.weight} for m in self.merges]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Dendrogram":
        return cls(int(obj["n_leaves"]), [Merge(int(m["step"]), int(m["a"]), int(m["b"]), float(m["weight"]))
                                          for m in obj["merges"]])

    def render(self) -> str:
        """Indented text tree, one root per remaining cluster."""
        children = {self.n_leaves + m.step: m for m in self.merges}
        merged = {c for m in self.merges for c in (m.a, m.b)}
        roots = [c for c in list(range(self.n_leaves)) + sorted(children) if c not in merged]
        lines: list[str] = []

        def walk(node, depth):
            pad = "  " * depth
            if node in children:
                m = children[node]
                lines.append(f"{pad}[{node}] f={m.weight:.6g}")
                walk(m.a, depth + 1)
                walk(m.b, depth + 1)
            else:
                lines.append(f"{pad}leaf {node}")

        for r in roots:
            walk(r, 0)
        return "\n".join(lines)


def _normalize(labels) -> np.ndarray:
    seen: dict = {}
    return np.array([seen.setdefault(v, len(seen)) for v in labels], dtype=np.int64)


@dataclass
class MergeResult:
    labels: np.ndarray
    dendrogram: Dendrogram
    n_clusters: int
    disconnected: bool


def _agglomerate(g: AdjacencyGraph, K: int) -> MergeResult:
    n = g.n
    dist = {}
    for (a, b), w in g.edges.items():
        dist[(a, b)] = w
    members = {i: [i] for i in range(n)}
    dendro = Dendrogram(n)
    disconnected = False
    for step in range(n - K):
        finite = [(w, a, b) for (a, b), w in dist.items() if np.isfinite(w)]
        if not finite:
            disconnected = True
            break
        w, a, b = min(finite)
        new = n + step
        dendro.merges.append(Merge(step, a, b, float(w)))
        members[new] = members.pop(a) + members.pop(b)
        updated = {}
        for (p, q), v in dist.items():
            if {p, q} & {a, b}:
                other = q if p in (a, b) else p
                if other in (a, b):
                    continue
                updated[(other, new)] = min(v, updated.get((other, new), np.inf))
            else:
                updated[(p, q)] = v
        dist = updated
    labels = np.empty(n, dtype=object)
    for cid, verts in members.items():
        labels[verts] = cid
    labels = _normalize(list(labels))
    return MergeResult(labels, dendro, len(members), disconnected)


def merge_to_k(g: AdjacencyGraph, K: int) -> MergeResult:
    """Merge the closest pair of clusters (min-linkage) until ``K`` remain.

    Ties go to the lexicographically smallest cluster-id pair. If only
    infinite distances remain the loop stops early and ``disconnected`` is set.
    """
    if not 1 <= K <= g.n:
        raise ValueError(f"K must lie in [1, {g.n}], got {K}")
    return _agglomerate(g, K)


def full_dendrogram(g: AdjacencyGraph) -> Dendrogram:
    return _agglomerate(g, 1).dendrogram if g.n else Dendrogram(0)


def label_dataset(L: Landscape, labels_map, data: Dataset, centers=None, match_tol: float = 0.1,
                  centers_are_modes: bool = False, **flow_kw) -> tuple[np.ndarray, dict]:
    """Label rows by flowing each to a basin and mapping its node through ``labels_map``.

    ``centers`` are the node locations (default: the component means). A
    node labeled -1 belongs to no cluster; rows reaching it take the label of
    the nearest labeled node. Returns the labels and counts of flagged rows
    (non-converged flows, endpoints far from every node, exact ties,
    unlinked nodes). When ``centers_are_modes`` flows stop as soon as they
    come close to a center.
    """
    centers = L.model.means if centers is None else np.asarray(centers, dtype=float)
    labels_map = np.asarray(labels_map)
    if labels_map.shape[0] != centers.shape[0]:
        raise ValueError("labels_map must cover every node")
    if not (labels_map >= 0).any():
        raise ValueError("labels_map has no labeled node")
    if centers_are_modes:
        flow_kw.setdefault("capture", centers)
    basins = assign_basins(L, data.rows, centers, match_tol, **flow_kw)
    raw = np.array([b.index for b in basins], dtype=np.int64)
    out = labels_map[raw]
    orphan = np.flatnonzero(out < 0)
    if orphan.size:
        ok = np.flatnonzero(labels_map >= 0)
        ends = np.array([basins[i].endpoint for i in orphan])
        near = np.argmin(np.linalg.norm(ends[:, None, :] - centers[ok][None, :, :], axis=2), axis=1)
        out[orphan] = labels_map[ok[near]]
    # a tie only matters between nodes with different labels (shared modes coincide)
    tied = [i for i, b in enumerate(basins) if b.boundary]
    boundary = 0
    if tied:
        ends = np.array([basins[i].endpoint for i in tied])
        d = np.linalg.norm(ends[:, None, :] - centers[None, :, :], axis=2)
        close = d <= d.min(axis=1, keepdims=True) + 1e-9
        boundary = sum(len(set(labels_map[row].tolist())) > 1 for row in close)
    flags = {
        "not_converged": int(sum(not b.converged for b in basins)),
        "low_confidence": int(sum(b.low_confidence for b in basins)),
        "boundary": int(boundary),
        "unlinked": int(orphan.size),
    }
    return out, flags
