"""Voxelized navigation graph, frontier bookkeeping, stairs and regions."""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

DXY = 0.2
DZ = 0.5
VERTICAL_EDGE = 0.3
MIN_STAIR_EDGES = 2
MERGE_EDGES = 3
LEVEL_TOL = 0.05


class GridKey(NamedTuple):
    ix: int
    iy: int
    iz: int


class UnknownNodeError(KeyError):
    pass


def voxel_key(p, dxy: float = DXY, dz: float = DZ) -> GridKey:
    if dxy <= 0 or dz <= 0:
        raise ValueError("voxel sizes must be positive")
    return GridKey(math.floor(p[0] / dxy), math.floor(p[1] / dxy), math.floor(p[2] / dz))


def _edge(a, b) -> tuple:
    return (a, b) if a <= b else (b, a)


@dataclass
class NavNode:
    key: GridKey
    position: tuple
    visited: bool = False


@dataclass
class NavGraph:
    dxy: float = DXY
    dz: float = DZ
    nodes: dict = field(default_factory=dict)
    adj: dict = field(default_factory=dict)
    region_label: dict | None = None
    stair_edges: set = field(default_factory=set)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, key):
        return key in self.nodes

    def key_of(self, p) -> GridKey:
        return voxel_key(p, self.dxy, self.dz)

    def position(self, key) -> np.ndarray:
        return np.asarray(self.nodes[key].position, dtype=float)

    @property
    def edges(self) -> list:
        out = set()
        for a, nbrs in self.adj.items():
            for b in nbrs:
                out.add(_edge(a, b))
        return sorted(out)

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adj.values()) // 2

    def upsert(self, p, visited: bool = False) -> GridKey:
        key = self.key_of(p)
        node = self.nodes.get(key)
        if node is None:
            self.nodes[key] = NavNode(key, tuple(float(v) for v in p), bool(visited))
            self.adj[key] = set()
        elif visited:
            node.visited = True
        return key

    def link(self, a, b) -> None:
        if a not in self.nodes or b not in self.nodes:
            raise UnknownNodeError(f"unknown node in link({a}, {b})")
        if a == b:
            return
        self.adj[a].add(b)
        self.adj[b].add(a)

    def remove(self, key) -> None:
        for b in self.adj.pop(key, ()):
            self.adj[b].discard(key)
        self.nodes.pop(key, None)
        if self.region_label:
            self.region_label.pop(key, None)

    def mark_visited(self, key) -> None:
        self.nodes[key].visited = True

    def frontiers(self) -> set:
        return {k for k, n in self.nodes.items() if not n.visited}

    def edge_length(self, a, b) -> float:
        return float(np.linalg.norm(self.position(a) - self.position(b)))

    def bfs_path(self, src, dst, allowed: Callable | None = None) -> list | None:
        """Fewest-hop path src -> dst, optionally restricted to ``allowed`` nodes."""
        if src == dst:
            return [src]
        prev = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in sorted(self.adj[u]):
                if v in prev or (allowed is not None and not allowed(v)):
                    continue
                prev[v] = u
                if v == dst:
                    path = [v]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return path[::-1]
                queue.append(v)
        return None

    def csgraph(self):
        """(sorted keys, key->index, sparse Euclidean-weighted adjacency)."""
        keys = sorted(self.nodes)
        index = {k: i for i, k in enumerate(keys)}
        rows, cols, vals = [], [], []
        for a, b in self.edges:
            w = max(self.edge_length(a, b), 1e-9)
            rows += [index[a], index[b]]
            cols += [index[b], index[a]]
            vals += [w, w]
        n = len(keys)
        return keys, index, csr_matrix((vals, (rows, cols)), shape=(n, n))

    def shortest_paths(self, sources):
        """Dijkstra distances and predecessors from each source key."""
        keys, index, mat = self.csgraph()
        dist, pred = dijkstra(mat, directed=False, indices=[index[s] for s in sources],
                              return_predecessors=True)
        return keys, index, dist, pred

    def shortest_path(self, a, b) -> tuple[float, list]:
        keys, index, dist, pred = self.shortest_paths([a])
        j = index[b]
        if not np.isfinite(dist[0, j]):
            return math.inf, []
        path = [j]
        while path[-1] != index[a]:
            path.append(pred[0, path[-1]])
        return float(dist[0, j]), [keys[i] for i in path[::-1]]

    def regions(self) -> dict:
        """region id -> sorted list of keys."""
        if self.region_label is None:
            raise ValueError("graph has not been partitioned")
        out = defaultdict(list)
        for k in sorted(self.nodes):
            out[self.region_label[k]].append(k)
        return dict(out)

    # serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        labels = self.region_label or {}
        return {
            "dxy": self.dxy,
            "dz": self.dz,
            "nodes": [{"key": list(k), "pos": list(self.nodes[k].position),
                       "visited": self.nodes[k].visited, "region": labels.get(k)}
                      for k in sorted(self.nodes)],
            "edges": [[list(a), list(b)] for a, b in self.edges],
            "stairs": [[list(a), list(b)] for a, b in sorted(self.stair_edges)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NavGraph":
        g = cls(dxy=d["dxy"], dz=d["dz"])
        labels = {}
        for n in d["nodes"]:
            key = GridKey(*n["key"])
            g.nodes[key] = NavNode(key, tuple(n["pos"]), n["visited"])
            g.adj[key] = set()
            if n.get("region") is not None:
                labels[key] = n["region"]
        for a, b in d["edges"]:
            g.link(GridKey(*a), GridKey(*b))
        g.stair_edges = {_edge(GridKey(*a), GridKey(*b)) for a, b in d["stairs"]}
        g.region_label = labels if labels else None
        return g

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NavGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Louvain


def modularity(n: int, edges, weights, labels) -> float:
    """Newman modularity of ``labels`` on an undirected weighted graph with
    ``n`` nodes; self-loops count twice towards degree."""
    m = float(sum(weights))
    if m == 0:
        return 0.0
    deg = np.zeros(n)
    inside = defaultdict(float)
    for (a, b), w in zip(edges, weights):
        deg[a] += w
        deg[b] += w
        if labels[a] == labels[b]:
            inside[labels[a]] += w
    tot = defaultdict(float)
    for i in range(n):
        tot[labels[i]] += deg[i]
    return sum(inside[c] / m - (tot[c] / (2 * m)) ** 2 for c in tot)


def _one_level(n, nbrs, loops, deg, m):
    """Local moving phase; returns community labels (dense, first-seen order)
    and whether any node moved."""
    comm = list(range(n))
    tot = list(deg)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n):
            ci = comm[i]
            links = defaultdict(float)
            for j, w in nbrs[i]:
                links[comm[j]] += w
            tot[ci] -= deg[i]
            best_c = ci
            best_gain = links.get(ci, 0.0) - tot[ci] * deg[i] / (2.0 * m)
            for c in sorted(links):
                gain = links[c] - tot[c] * deg[i] / (2.0 * m)
                if gain > best_gain + 1e-12:
                    best_gain, best_c = gain, c
            tot[best_c] += deg[i]
            if best_c != ci:
                comm[i] = best_c
                improved = True
                moved_any = True
    remap = {}
    dense = [remap.setdefault(c, len(remap)) for c in comm]
    return dense, moved_any


def louvain_indices(n: int, edges, weights) -> list:
    """Two-phase Louvain over nodes ``0..n-1``; deterministic in node order."""
    if n == 0:
        raise ValueError("louvain on an empty graph")
    m = float(sum(weights))
    labels = list(range(n))
    if m == 0:
        return labels
    # current (aggregated) graph
    cur_n = n
    cur_edges = defaultdict(float)
    for (a, b), w in zip(edges, weights):
        cur_edges[_edge(a, b)] += w
    while True:
        nbrs = [[] for _ in range(cur_n)]
        loops = [0.0] * cur_n
        deg = [0.0] * cur_n
        for (a, b), w in sorted(cur_edges.items()):
            if a == b:
                loops[a] += w
                deg[a] += 2 * w
            else:
                nbrs[a].append((b, w))
                nbrs[b].append((a, w))
                deg[a] += w
                deg[b] += w
        comm, moved = _one_level(cur_n, nbrs, loops, deg, m)
        if not moved:
            break
        labels = [comm[c] for c in labels]
        agg = defaultdict(float)
        for (a, b), w in cur_edges.items():
            agg[_edge(comm[a], comm[b])] += w
        cur_edges = agg
        cur_n = max(comm) + 1
    remap = {}
    return [remap.setdefault(c, len(remap)) for c in labels]


def louvain(graph: NavGraph, edge_weight: Callable | None = None) -> dict:
    """Community id per key; nodes are visited in ascending key order."""
    if not graph.nodes:
        raise ValueError("louvain on an empty graph")
    keys = sorted(graph.nodes)
    index = {k: i for i, k in enumerate(keys)}
    edges = graph.edges
    if edge_weight is None:
        weights = [1.0] * len(edges)
    else:
        weights = [float(edge_weight(a, b)) for a, b in edges]
    if any(w < 0 for w in weights):
        raise ValueError("edge weights must be non-negative")
    labels = louvain_indices(len(keys), [(index[a], index[b]) for a, b in edges], weights)
    return {k: labels[i] for i, k in enumerate(keys)}


# --------------------------------------------------------------------------
# stairs and regions


def _dz(graph, a, b) -> float:
    return abs(graph.nodes[a].position[2] - graph.nodes[b].position[2])


def detect_stairs_and_partition(graph: NavGraph) -> tuple[dict, set]:
    """Label regions and find stair chains; stores both on the graph."""
    if not graph.nodes:
        raise ValueError("graph is empty")
    edges = graph.edges
    vertical = [e for e in edges if _dz(graph, *e) >= VERTICAL_EDGE]

    # stair chains: connected groups of >= 2 vertical edges sharing endpoints
    vadj = defaultdict(list)
    for a, b in vertical:
        vadj[a].append((a, b))
        vadj[b].append((a, b))
    seen = set()
    chains = []
    for e in vertical:
        if e in seen:
            continue
        group, stack = [], [e]
        seen.add(e)
        while stack:
            cur = stack.pop()
            group.append(cur)
            for node in cur:
                for nxt in vadj[node]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
        if len(group) >= MIN_STAIR_EDGES:
            chains.append(sorted(group))
    stair_edges = {e for chain in chains for e in chain}

    comm = louvain(graph, lambda a, b: 1.0 / (1.0 + 5.0 * _dz(graph, a, b)))

    # Communities are first cut into level pieces joined by flat edges, so a
    # community holding a whole ramp cannot bridge the floors at its two ends.
    # Pieces then merge when >= MERGE_EDGES flat non-stair edges connect them.
    flat = [(a, b) for a, b in edges if (a, b) not in stair_edges and _dz(graph, a, b) < LEVEL_TOL]
    parent = {k: k for k in graph.nodes}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for a, b in flat:
        if comm[a] == comm[b]:
            union(a, b)
    piece = {k: find(k) for k in graph.nodes}
    between = defaultdict(int)
    for a, b in flat:
        if piece[a] != piece[b]:
            between[_edge(piece[a], piece[b])] += 1
    for (pa, pb), count in sorted(between.items()):
        if count >= MERGE_EDGES:
            union(pa, pb)
    region = {k: find(k) for k in graph.nodes}

    for chain in chains:
        nodes = sorted({n for e in chain for n in e})
        low = min(nodes, key=lambda k: (graph.nodes[k].position[2], k))
        for k in nodes:
            region[k] = region[low]

    # stray regions on a slope (every node touches a sloped edge) join the
    # region of their lowest outside neighbour, lowest pieces first
    nbrs = defaultdict(list)
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    sloped = {n for a, b in edges if _dz(graph, a, b) >= LEVEL_TOL for n in (a, b)}
    members = defaultdict(list)
    for k in sorted(graph.nodes):
        members[region[k]].append(k)
    strays = [ks for ks in members.values()
              if all(k in sloped for k in ks) and len(members) > 1]
    strays.sort(key=lambda ks: min((graph.nodes[k].position[2], k) for k in ks))
    for ks in strays:
        inside = set(ks)
        outside = [n for k in ks for n in nbrs[k] if n not in inside]
        if outside:
            low = min(outside, key=lambda n: (graph.nodes[n].position[2], n))
            for k in ks:
                region[k] = region[low]

    remap = {}
    labels = {k: remap.setdefault(region[k], len(remap)) for k in sorted(graph.nodes)}
    graph.region_label = labels
    graph.stair_edges = stair_edges
    return labels, stair_edges


def audit_edges(graph: NavGraph, scene, clearance: float) -> list:
    """Edges whose straight segment fails the traversability check."""
    from .world import segment_traversable

    return [(a, b) for a, b in graph.edges
            if not segment_traversable(scene, graph.position(a), graph.position(b), clearance)]
