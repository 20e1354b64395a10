"""Graph data model, file I/O, random generators, and brute-force label oracles.

Graphs are dense: adjacency is an N x N boolean matrix, edge weights an
N x N float matrix (0 where no edge), and all features are float64 arrays.
A feature dimension of 0 means "absent". Undirected graphs are stored with
both triangles populated so downstream code never needs a symmetry
convention.

Edge-list file format (0-based indices, '#' starts a comment):

    N [d_n d_e d_g]
    g1 .. g_dg                # one line of graph features, only if d_g > 0
    v f1 .. f_dn              # exactly N node-feature lines, only if d_n > 0
    u v w [f1 .. f_de]        # edge lines

Dense format: a line "N" followed by N rows of N weights; "inf" marks an
absent edge, the diagonal is ignored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class GraphFormatError(ValueError):
    """Raised on malformed graph files; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapabilityError(RuntimeError):
    """Raised when an exact oracle is asked to run beyond its feasible size."""


@dataclass
class Graph:
    n: int
    node_feats: np.ndarray  # (n, d_n)
    adjacency: np.ndarray  # (n, n) bool
    weights: np.ndarray  # (n, n) float, 0 where no edge
    edge_feats: np.ndarray | None = None  # (n, n, d_e)
    graph_feats: np.ndarray | None = None  # (d_g,)
    directed: bool = False

    def __post_init__(self):
        self.node_feats = np.asarray(self.node_feats, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=bool)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.edge_feats is not None:
            self.edge_feats = np.asarray(self.edge_feats, dtype=np.float64)
        if self.graph_feats is not None:
            self.graph_feats = np.asarray(self.graph_feats, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.n < 1:
            raise ValueError(f"need at least one node, got n={self.n}")
        if self.node_feats.shape[0] != self.n or self.node_feats.ndim != 2:
            raise ValueError(f"node_feats must be ({self.n}, d_n), got {self.node_feats.shape}")
        if self.adjacency.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be ({self.n}, {self.n}), got {self.adjacency.shape}")
        if self.weights.shape != (self.n, self.n):
            raise ValueError(f"weights must be ({self.n}, {self.n}), got {self.weights.shape}")
        if self.edge_feats is not None and self.edge_feats.shape[:2] != (self.n, self.n):
            raise ValueError(f"edge_feats must be ({self.n}, {self.n}, d_e), got {self.edge_feats.shape}")
        if self.graph_feats is not None and self.graph_feats.ndim != 1:
            raise ValueError(f"graph_feats must be 1-D, got shape {self.graph_feats.shape}")
        if np.any(np.diag(self.adjacency)):
            raise ValueError("self-loops are not allowed")
        if not self.directed:
            if not np.array_equal(self.adjacency, self.adjacency.T):
                raise ValueError("undirected graph has asymmetric adjacency")
            if not np.array_equal(self.weights, self.weights.T):
                raise ValueError("undirected graph has asymmetric weights")
            if self.edge_feats is not None and not np.array_equal(
                self.edge_feats, np.swapaxes(self.edge_feats, 0, 1)
            ):
                raise ValueError("undirected graph has asymmetric edge features")

    @property
    def node_dim(self):
        return self.node_feats.shape[1]

    @property
    def edge_dim(self):
        return 0 if self.edge_feats is None else self.edge_feats.shape[2]

    @property
    def graph_dim(self):
        return 0 if self.graph_feats is None else self.graph_feats.shape[0]

    def num_edges(self):
        m = int(np.count_nonzero(self.adjacency))
        return m if self.directed else m // 2

    def copy(self):
        return Graph(
            n=self.n,
            node_feats=self.node_feats.copy(),
            adjacency=self.adjacency.copy(),
            weights=self.weights.copy(),
            edge_feats=None if self.edge_feats is None else self.edge_feats.copy(),
            graph_feats=None if self.graph_feats is None else self.graph_feats.copy(),
            directed=self.directed,
        )

    def equal(self, other):
        return (
            self.n == other.n
            and self.directed == other.directed
            and np.array_equal(self.node_feats, other.node_feats)
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.weights, other.weights)
            and _opt_equal(self.edge_feats, other.edge_feats)
            and _opt_equal(self.graph_feats, other.graph_feats)
        )


def _opt_equal(a, b):
    if a is None or b is None:
        return (a is None) == (b is None)
    return np.array_equal(a, b)


@dataclass
class NodePermutation:
    perm: np.ndarray  # perm[i] = source index of output node i

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        if self.perm.ndim != 1 or not np.array_equal(np.sort(self.perm), np.arange(self.perm.size)):
            raise ValueError("permutation must be a bijection on 0..N-1")

    @property
    def size(self):
        return self.perm.size

    def inverse(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return NodePermutation(inv)


def identity_permutation(n):
    return NodePermutation(np.arange(n))


def random_permutation(n, seed):
    rng = np.random.default_rng(seed)
    return NodePermutation(rng.permutation(n))


def apply_permutation(g: Graph, pi: NodePermutation) -> Graph:
    """Relabel nodes so that output node i carries input node pi(i)'s data."""
    if pi.size != g.n:
        raise ValueError(f"permutation size {pi.size} != node count {g.n}")
    p = pi.perm
    return Graph(
        n=g.n,
        node_feats=g.node_feats[p],
        adjacency=g.adjacency[np.ix_(p, p)],
        weights=g.weights[np.ix_(p, p)],
        edge_feats=None if g.edge_feats is None else g.edge_feats[np.ix_(p, p)],
        graph_feats=None if g.graph_feats is None else g.graph_feats.copy(),
        directed=g.directed,
    )


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def from_edges(n, edges, weights=None, directed=False, node_feats=None):
    """Build a graph from an edge list [(u, v), ...] with optional weights."""
    adj = np.zeros((n, n), dtype=bool)
    w = np.zeros((n, n), dtype=np.float64)
    if weights is None:
        weights = [1.0] * len(edges)
    for (u, v), wt in zip(edges, weights):
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
        if u == v:
            raise ValueError(f"self-loop ({u}, {v}) not allowed")
        adj[u, v] = True
        w[u, v] = wt
        if not directed:
            adj[v, u] = True
            w[v, u] = wt
    if node_feats is None:
        node_feats = np.zeros((n, 0))
    return Graph(n=n, node_feats=node_feats, adjacency=adj, weights=w, directed=directed)


def cycle_graph(n):
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    return from_edges(leaves + 1, [(0, i + 1) for i in range(leaves)])


def complete_graph(n):
    return from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def complete_bipartite_graph(a, b):
    return from_edges(a + b, [(i, a + j) for i in range(a) for j in range(b)])


def circulant_graph(n, skips):
    """Circulant graph on Z_n with connection set {±s : s in skips}."""
    edges = set()
    for i in range(n):
        for s in skips:
            j = (i + s) % n
            if i != j:
                edges.add((min(i, j), max(i, j)))
    return from_edges(n, sorted(edges))


def disjoint_union(a: Graph, b: Graph) -> Graph:
    if a.directed != b.directed:
        raise ValueError("cannot union directed with undirected graph")
    if a.node_dim != b.node_dim:
        raise ValueError("node feature dims differ")
    n = a.n + b.n
    adj = np.zeros((n, n), dtype=bool)
    w = np.zeros((n, n), dtype=np.float64)
    adj[: a.n, : a.n] = a.adjacency
    adj[a.n :, a.n :] = b.adjacency
    w[: a.n, : a.n] = a.weights
    w[a.n :, a.n :] = b.weights
    feats = np.concatenate([a.node_feats, b.node_feats], axis=0)
    return Graph(n=n, node_feats=feats, adjacency=adj, weights=w, directed=a.directed)


def complement(g: Graph) -> Graph:
    adj = ~g.adjacency
    np.fill_diagonal(adj, False)
    w = np.where(adj, 1.0, 0.0)
    return Graph(n=g.n, node_feats=g.node_feats.copy(), adjacency=adj, weights=w, directed=g.directed)


def gen_random_graph(n, p, weight_range=(1, 10), seed=0):
    """Erdos-Renyi graph with uniform integer weights, deterministic per seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    lo, hi = weight_range
    if lo > hi:
        raise ValueError(f"weight range must satisfy lo <= hi, got {weight_range}")
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = upper | upper.T
    wvals = rng.integers(int(lo), int(hi) + 1, size=(n, n)).astype(np.float64)
    wvals = np.triu(wvals, k=1)
    wvals = wvals + wvals.T
    w = np.where(adj, wvals, 0.0)
    return Graph(n=n, node_feats=np.zeros((n, 0)), adjacency=adj, weights=w)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_graph(path, format="edge-list") -> Graph:
    if format == "edge-list":
        return _load_edge_list(path)
    if format == "dense-matrix":
        return _load_dense(path)
    raise ValueError(f"unknown graph format {format!r}")


def _content_lines(path):
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                out.append((lineno, text))
    return out


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise GraphFormatError(f"expected a number, got {exc}", lineno) from None


def _load_edge_list(path):
    lines = _content_lines(path)
    if not lines:
        raise GraphFormatError("empty file", 1)
    lineno, header = lines[0]
    toks = header.split()
    if len(toks) not in (1, 4):
        raise GraphFormatError("header must be 'N' or 'N d_n d_e d_g'", lineno)
    try:
        n = int(toks[0])
        d_n, d_e, d_g = (int(t) for t in toks[1:]) if len(toks) == 4 else (0, 0, 0)
    except ValueError:
        raise GraphFormatError("header fields must be integers", lineno) from None
    if n < 1 or min(d_n, d_e, d_g) < 0:
        raise GraphFormatError("need N >= 1 and nonnegative feature dims", lineno)

    body = lines[1:]
    pos = 0
    graph_feats = None
    if d_g > 0:
        if pos >= len(body):
            raise GraphFormatError("missing graph-feature line", lineno)
        gl, gtext = body[pos]
        vals = _floats(gtext.split(), gl)
        if len(vals) != d_g:
            raise GraphFormatError(f"expected {d_g} graph features, got {len(vals)}", gl)
        graph_feats = np.array(vals)
        pos += 1

    node_feats = np.zeros((n, d_n))
    if d_n > 0:
        seen = np.zeros(n, dtype=bool)
        for _ in range(n):
            if pos >= len(body):
                raise GraphFormatError(f"expected {n} node-feature lines", lineno)
            nl, ntext = body[pos]
            toks = ntext.split()
            if len(toks) != 1 + d_n:
                raise GraphFormatError(f"node line needs 'v' plus {d_n} features", nl)
            v = _int_index(toks[0], n, nl)
            if seen[v]:
                raise GraphFormatError(f"duplicate node-feature line for node {v}", nl)
            seen[v] = True
            node_feats[v] = _floats(toks[1:], nl)
            pos += 1

    adj = np.zeros((n, n), dtype=bool)
    w = np.zeros((n, n))
    edge_feats = np.zeros((n, n, d_e)) if d_e > 0 else None
    for el, etext in body[pos:]:
        toks = etext.split()
        if len(toks) != 3 + d_e:
            raise GraphFormatError(f"edge line needs 'u v w' plus {d_e} features", el)
        u = _int_index(toks[0], n, el)
        v = _int_index(toks[1], n, el)
        if u == v:
            raise GraphFormatError(f"self-loop ({u}, {v}) not allowed", el)
        (wt,) = _floats(toks[2:3], el)
        feats = _floats(toks[3:], el)
        for a, b in ((u, v), (v, u)):
            adj[a, b] = True
            w[a, b] = wt
            if edge_feats is not None:
                edge_feats[a, b] = feats
    return Graph(
        n=n,
        node_feats=node_feats,
        adjacency=adj,
        weights=w,
        edge_feats=edge_feats,
        graph_feats=graph_feats,
    )


def _int_index(token, n, lineno):
    try:
        v = int(token)
    except ValueError:
        raise GraphFormatError(f"expected a node index, got {token!r}", lineno) from None
    if not 0 <= v < n:
        raise GraphFormatError(f"node index {v} out of range for n={n}", lineno)
    return v


def _load_dense(path):
    lines = _content_lines(path)
    if not lines:
        raise GraphFormatError("empty file", 1)
    lineno, header = lines[0]
    try:
        n = int(header)
    except ValueError:
        raise GraphFormatError("dense header must be a single integer N", lineno) from None
    if n < 1:
        raise GraphFormatError("need N >= 1", lineno)
    if len(lines) - 1 != n:
        raise GraphFormatError(f"expected {n} weight rows, got {len(lines) - 1}", lineno)
    w = np.zeros((n, n))
    for i, (rl, rtext) in enumerate(lines[1:]):
        vals = _floats(rtext.split(), rl)
        if len(vals) != n:
            raise GraphFormatError(f"expected {n} weights, got {len(vals)}", rl)
        w[i] = vals
    adj = np.isfinite(w)
    np.fill_diagonal(adj, False)
    w = np.where(adj, w, 0.0)
    if not (np.array_equal(adj, adj.T) and np.array_equal(w, w.T)):
        raise GraphFormatError("dense matrix must be symmetric for undirected graphs", lineno)
    return Graph(n=n, node_feats=np.zeros((n, 0)), adjacency=adj, weights=w)


def save_graph(g: Graph, path, format="edge-list"):
    if format == "dense-matrix":
        with open(path, "w") as fh:
            fh.write(f"{g.n}\n")
            for i in range(g.n):
                row = [
                    repr(float(g.weights[i, j])) if g.adjacency[i, j] else "inf" for j in range(g.n)
                ]
                fh.write(" ".join(row) + "\n")
        return
    if format != "edge-list":
        raise ValueError(f"unknown graph format {format!r}")
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.node_dim} {g.edge_dim} {g.graph_dim}\n")
        if g.graph_dim > 0:
            fh.write(" ".join(repr(float(x)) for x in g.graph_feats) + "\n")
        if g.node_dim > 0:
            for v in range(g.n):
                fh.write(f"{v} " + " ".join(repr(float(x)) for x in g.node_feats[v]) + "\n")
        for u in range(g.n):
            vs = range(g.n) if g.directed else range(u + 1, g.n)
            for v in vs:
                if g.adjacency[u, v]:
                    line = f"{u} {v} {float(g.weights[u, v])!r}"
                    if g.edge_dim > 0:
                        line += " " + " ".join(repr(float(x)) for x in g.edge_feats[u, v])
                    fh.write(line + "\n")


# ---------------------------------------------------------------------------
# Label oracles
# ---------------------------------------------------------------------------


def floyd_warshall_oracle(g: Graph) -> np.ndarray:
    """Exact all-pairs shortest paths; unreachable pairs are +inf."""
    if np.any(g.weights[g.adjacency] < 0):
        raise ValueError("negative edge weights are not supported")
    d = np.full((g.n, g.n), np.inf)
    d[g.adjacency] = g.weights[g.adjacency]
    np.fill_diagonal(d, 0.0)
    for k in range(g.n):
        np.minimum(d, d[:, k, None] + d[None, k, :], out=d)
    return d


def cycle_count_oracle(g: Graph, cycle_len, level="graph"):
    """Exact simple-cycle counts by exhaustive enumeration (n <= 16).

    Edge-level counts come back as a symmetric N x N matrix; summing the
    upper triangle gives cycle_len times the graph-level count.
    """
    if g.directed:
        raise ValueError("cycle counting expects an undirected graph")
    if cycle_len not in (3, 4, 5, 6):
        raise ValueError(f"cycle length must be in 3..6, got {cycle_len}")
    if level not in ("graph", "node", "edge"):
        raise ValueError(f"unknown level {level!r}")
    if g.n > 16:
        raise CapabilityError(f"exhaustive cycle enumeration capped at n=16, got n={g.n}")

    adj = g.adjacency
    total = 0
    node_counts = np.zeros(g.n, dtype=np.int64)
    edge_counts = np.zeros((g.n, g.n), dtype=np.int64)
    for subset in itertools.combinations(range(g.n), cycle_len):
        first = subset[0]
        rest = subset[1:]
        # each cycle on the subset counted once: fix the start, break the
        # reflection by ordering the two neighbors of the start
        for perm in itertools.permutations(rest):
            if perm[0] > perm[-1]:
                continue
            order = (first,) + perm
            if all(adj[order[i], order[(i + 1) % cycle_len]] for i in range(cycle_len)):
                total += 1
                for i in range(cycle_len):
                    a, b = order[i], order[(i + 1) % cycle_len]
                    node_counts[a] += 1
                    edge_counts[a, b] += 1
                    edge_counts[b, a] += 1
    if level == "graph":
        return total
    if level == "node":
        return node_counts
    return edge_counts
