"""Graphs, synthetic benchmark generators, features and dataset splits.

Graphs are undirected, unweighted and simple, stored as a sorted (m, 2)
edge array with u < v per row. Shortest paths come from level-synchronous
BFS; the all-pairs matrix is cached on the instance because the pair
supervision, stress evaluation and hyperbolicity code all reuse it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError


def _canonical_edges(n: int, edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64)
    if e.ndim != 2 or e.shape[1] != 2:
        raise DataError(f"edge array must be (m, 2), got {e.shape}")
    if e.size and (e.min() < 0 or e.max() >= n):
        raise DataError("edge endpoint out of range")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    if np.any(lo == hi):
        raise DataError("self loops are not allowed")
    e = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return e


@dataclass
class Graph:
    n: int
    edges: np.ndarray
    _csr: tuple | None = field(default=None, repr=False, compare=False)
    _apsp: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.edges = _canonical_edges(self.n, self.edges)

    @property
    def m(self) -> int:
        return self.edges.shape[0]

    def csr(self):
        """Adjacency as (indptr, indices) with both edge directions."""
        if self._csr is None:
            both = np.concatenate([self.edges, self.edges[:, ::-1]], axis=0)
            order = np.argsort(both[:, 0], kind="stable")
            both = both[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, both[:, 0] + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._csr = (indptr, both[:, 1].copy())
        return self._csr

    def degrees(self) -> np.ndarray:
        indptr, _ = self.csr()
        return np.diff(indptr)

    def bfs(self, src: int) -> np.ndarray:
        """Hop distances from ``src``; unreachable nodes get -1."""
        indptr, indices = self.csr()
        dist = np.full(self.n, -1, dtype=np.int32)
        dist[src] = 0
        frontier = np.array([src], dtype=np.int64)
        d = 0
        while frontier.size:
            d += 1
            starts = indptr[frontier]
            counts = indptr[frontier + 1] - starts
            total = int(counts.sum())
            if total == 0:
                break
            offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
            take = np.arange(total) - np.repeat(offsets, counts) + np.repeat(starts, counts)
            neigh = indices[take]
            fresh = neigh[dist[neigh] < 0]
            if fresh.size == 0:
                break
            dist[fresh] = d
            frontier = np.unique(fresh)
        return dist

    def apsp(self) -> np.ndarray:
        """All-pairs shortest-path hop counts, cached; -1 marks unreachable."""
        if self._apsp is None:
            out = np.empty((self.n, self.n), dtype=np.int32)
            for s in range(self.n):
                out[s] = self.bfs(s)
            self._apsp = out
        return self._apsp

    def is_connected(self) -> bool:
        return bool(np.all(self.bfs(0) >= 0))


# ---------------------------------------------------------------------------
# generators
#
# Trees are emitted in breadth-first order with the root at index 0, so a
# node's level is its index bracket and its graph distance to the root.

def balanced_tree(branching: int, levels: int) -> Graph:
    """Rooted tree where every internal node has ``branching`` children,
    down to depth ``levels``. Node count is (b^(l+1) - 1) / (b - 1)."""
    if branching < 1 or levels < 0:
        raise DataError("branching must be >= 1 and levels >= 0")
    edges = []
    prev = [0]
    nxt = 1
    for _ in range(levels):
        cur = []
        for p in prev:
            for _ in range(branching):
                edges.append((p, nxt))
                cur.append(nxt)
                nxt += 1
        prev = cur
    return Graph(nxt, np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def multi_branch_tree(widths: tuple[int, ...]) -> Graph:
    """Tree whose level k+1 has widths[k] children per level-k node.

    widths = (100, 2, 2, 2) gives levels of 100, 200, 400 and 800 nodes
    under a single root, 1501 nodes in total.
    """
    edges = []
    prev = [0]
    nxt = 1
    for w in widths:
        if w < 1:
            raise DataError("level widths must be >= 1")
        cur = []
        for p in prev:
            for _ in range(w):
                edges.append((p, nxt))
                cur.append(nxt)
                nxt += 1
        prev = cur
    return Graph(nxt, np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def grid_graph(rows: int, cols: int) -> Graph:
    """4-neighbor lattice; node (r, c) is index r * cols + c."""
    if rows < 1 or cols < 1:
        raise DataError("grid sides must be >= 1")
    ids = np.arange(rows * cols).reshape(rows, cols)
    right = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    down = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    return Graph(rows * cols, np.concatenate([right, down], axis=0))


def random_tree(n: int, rng: np.random.Generator) -> Graph:
    """Uniform-attachment random tree on ``n`` nodes."""
    if n < 1:
        raise DataError("need at least one node")
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    return Graph(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def random_connected_graph(n: int, extra_edge_prob: float, rng: np.random.Generator) -> Graph:
    """Random tree plus Bernoulli extra edges, so the result stays connected."""
    base = random_tree(n, rng).edges
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.shape[0]) < extra_edge_prob
    extra = np.stack([iu[mask], ju[mask]], axis=1)
    return Graph(n, np.concatenate([base, extra], axis=0))


def tree_parents(graph: Graph, root: int = 0) -> np.ndarray:
    """Parent index per node of a tree (root gets -1)."""
    if graph.m != graph.n - 1:
        raise DataError("not a tree: edge count must be n - 1")
    indptr, indices = graph.csr()
    parent = np.full(graph.n, -1, dtype=np.int64)
    seen = np.zeros(graph.n, dtype=bool)
    seen[root] = True
    stack = [root]
    while stack:
        u = stack.pop()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                stack.append(int(v))
    if not seen.all():
        raise DataError("not a tree: disconnected")
    return parent


# ---------------------------------------------------------------------------
# node features

def sparse_gaussian_features(n: int, dim: int, rng: np.random.Generator,
                             density: float = 0.1) -> np.ndarray:
    """Standard normal entries kept with probability ``density``, rest zero."""
    if not 0.0 < density <= 1.0:
        raise DataError(f"density must be in (0, 1], got {density}")
    X = rng.standard_normal((n, dim))
    X *= rng.random((n, dim)) < density
    return X


def diffused_tree_features(graph: Graph, dim: int, gamma: float,
                           rng: np.random.Generator, root: int = 0,
                           noise_scale: float = 1.0) -> np.ndarray:
    """Features that follow the tree: child = gamma * parent + scaled noise.

    gamma = 0 makes every node's feature an independent normal draw, so the
    features carry no structural signal at all; noise_scale = 0 with
    gamma = 1 collapses every node onto the root feature.
    """
    parent = tree_parents(graph, root)
    order = np.argsort(graph.bfs(root), kind="stable")
    X = np.empty((graph.n, dim))
    noise = noise_scale * rng.standard_normal((graph.n, dim))
    for u in order:
        p = parent[u]
        X[u] = noise[u] if p < 0 else gamma * X[p] + noise[u]
    return X


def add_gaussian_noise(X: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Entrywise X + sigma * N(0, 1); sigma 0 returns a copy."""
    X = np.asarray(X, dtype=np.float64)
    if sigma < 0:
        raise DataError(f"noise level must be >= 0, got {sigma}")
    if sigma == 0:
        return X.copy()
    rng = np.random.default_rng(seed)
    return X + sigma * rng.standard_normal(X.shape)


# ---------------------------------------------------------------------------
# splits

@dataclass
class SplitManifest:
    """Named index sets plus enough metadata to regenerate or audit them."""

    kind: str
    seed: int
    arrays: dict[str, np.ndarray]
    meta: dict

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "seed": self.seed,
            "meta": self.meta,
            "arrays": {k: np.asarray(v).tolist() for k, v in self.arrays.items()},
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        try:
            payload = json.loads(text)
            arrays = {k: np.asarray(v, dtype=np.int64) for k, v in payload["arrays"].items()}
            return cls(payload["kind"], int(payload["seed"]), arrays, payload["meta"])
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"malformed split manifest: {e}") from e


def all_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical enumeration of unordered node pairs i < j."""
    return np.triu_indices(n, k=1)


def split_pairs(n: int, seed: int, ratios=(0.70, 0.15, 0.15)) -> SplitManifest:
    """Shuffle all n*(n-1)/2 pairs and cut them train/val/test by ``ratios``."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DataError("ratios must be three numbers summing to 1")
    ii, _ = all_pairs(n)
    total = ii.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    n_tr = int(round(ratios[0] * total))
    n_va = int(round(ratios[1] * total))
    arrays = {
        "train": np.sort(perm[:n_tr]),
        "val": np.sort(perm[n_tr:n_tr + n_va]),
        "test": np.sort(perm[n_tr + n_va:]),
    }
    return SplitManifest("pairs", seed, arrays, {"n": n, "ratios": list(ratios)})


def split_edges(graph: Graph, seed: int, ratios=(0.85, 0.05, 0.10)) -> SplitManifest:
    """Positive-edge split plus per-split uniform negative samples.

    Negatives are node pairs that are not edges; the three negative sets are
    mutually disjoint and each matches its positive set in size. Message
    passing during training must use the train edges only, which is why the
    manifest stores edge indices rather than a flattened pair list.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DataError("ratios must be three numbers summing to 1")
    m = graph.m
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    n_tr = int(round(ratios[0] * m))
    n_va = int(round(ratios[1] * m))
    pos = {
        "train_pos": np.sort(perm[:n_tr]),
        "val_pos": np.sort(perm[n_tr:n_tr + n_va]),
        "test_pos": np.sort(perm[n_tr + n_va:]),
    }
    edge_key = set((int(u) * graph.n + int(v)) for u, v in graph.edges)
    taken = set()
    neg = {}
    for name in ("train", "val", "test"):
        want = pos[f"{name}_pos"].shape[0]
        out = np.empty((want, 2), dtype=np.int64)
        got = 0
        while got < want:
            u = rng.integers(0, graph.n, size=4 * (want - got))
            v = rng.integers(0, graph.n, size=4 * (want - got))
            lo, hi = np.minimum(u, v), np.maximum(u, v)
            for a, b in zip(lo, hi):
                if a == b or got >= want:
                    continue
                key = int(a) * graph.n + int(b)
                if key in edge_key or key in taken:
                    continue
                taken.add(key)
                out[got] = (a, b)
                got += 1
        neg[f"{name}_neg_u"] = out[:, 0]
        neg[f"{name}_neg_v"] = out[:, 1]
    arrays = dict(pos)
    arrays.update(neg)
    return SplitManifest("edges", seed, arrays, {"n": graph.n, "m": m, "ratios": list(ratios)})


def split_nodes_fixed(labels: np.ndarray, seed: int, per_class: int = 20,
                      val_total: int = 500, exclude: np.ndarray | None = None) -> SplitManifest:
    """Fixed-count node split: per_class train nodes per label, val_total for
    validation, everything else test. ``exclude`` drops nodes entirely."""
    labels = np.asarray(labels)
    pool = np.arange(labels.shape[0])
    if exclude is not None:
        pool = np.setdiff1d(pool, np.asarray(exclude, dtype=np.int64))
    rng = np.random.default_rng(seed)
    train = []
    for cls in np.unique(labels[pool]):
        members = pool[labels[pool] == cls]
        if members.shape[0] < per_class:
            raise DataError(f"class {cls} has only {members.shape[0]} nodes, need {per_class}")
        train.append(rng.choice(members, size=per_class, replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(pool, train)
    if rest.shape[0] <= val_total:
        raise DataError("not enough nodes left for validation and test")
    rest = rng.permutation(rest)
    arrays = {"train": train, "val": np.sort(rest[:val_total]), "test": np.sort(rest[val_total:])}
    return SplitManifest("nodes", seed, arrays,
                         {"per_class": per_class, "val_total": val_total})


def split_nodes_ratio(labels: np.ndarray, seed: int,
                      ratios=(0.70, 0.15, 0.15),
                      exclude: np.ndarray | None = None) -> SplitManifest:
    """Class-stratified ratio split; every class keeps at least one train node."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DataError("ratios must be three numbers summing to 1")
    labels = np.asarray(labels)
    pool = np.arange(labels.shape[0])
    if exclude is not None:
        pool = np.setdiff1d(pool, np.asarray(exclude, dtype=np.int64))
    rng = np.random.default_rng(seed)
    parts = {"train": [], "val": [], "test": []}
    for cls in np.unique(labels[pool]):
        members = rng.permutation(pool[labels[pool] == cls])
        k = members.shape[0]
        n_tr = max(1, int(round(ratios[0] * k)))
        n_va = int(round(ratios[1] * k))
        n_va = min(n_va, k - n_tr)
        parts["train"].append(members[:n_tr])
        parts["val"].append(members[n_tr:n_tr + n_va])
        parts["test"].append(members[n_tr + n_va:])
    arrays = {k: np.sort(np.concatenate(v)) if v else np.empty(0, np.int64)
              for k, v in parts.items()}
    return SplitManifest("nodes", seed, arrays, {"ratios": list(ratios)})


def permute_targets(y: np.ndarray, seed: int) -> np.ndarray:
    """Uniformly permuted copy of a target vector, for control runs."""
    rng = np.random.default_rng(seed)
    return np.asarray(y)[rng.permutation(len(y))]


# ---------------------------------------------------------------------------
# persistence

def save_edge_list(path: str, graph: Graph):
    with open(path, "w") as fh:
        fh.write(f"# nodes {graph.n}\n")
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")


def load_edge_list(path: str) -> Graph:
    """Whitespace-separated 'u v' rows; '# nodes N' pins the node count."""
    n_declared = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    n_declared = int(parts[1])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected two endpoints, got {line!r}")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
    if not rows:
        raise DataError(f"{path}: no edges found")
    e = np.asarray(rows, dtype=np.int64)
    n = n_declared if n_declared is not None else int(e.max()) + 1
    return Graph(n, e)


def load_features_csv(path: str) -> np.ndarray:
    """Comma-separated numeric matrix, one node per row."""
    try:
        X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if X.size == 0:
        raise DataError(f"{path}: empty feature matrix")
    return X
