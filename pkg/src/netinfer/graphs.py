"""Graphs, small-world generation, node partitioning, and missing-node alignment."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Dense symmetric 0/1 adjacency with zero diagonal."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"adjacency: expected square matrix, got shape {m.shape}")
        if not np.array_equal(m, m.T):
            raise ValueError("adjacency: matrix is not symmetric")
        if np.trace(m) != 0:
            raise ValueError("adjacency: diagonal must be zero")
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError("adjacency: entries must be 0 or 1")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.matrix.sum()) // 2

    def degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.matrix, 1))
        return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class Graph:
    """Undirected graph as an edge set over nodes 0..n-1."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"graph: n must be positive, got {self.n}")
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"graph: bad edge ({i},{j}) for n={self.n}")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def to_adjacency(self) -> AdjacencyMatrix:
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return AdjacencyMatrix(adj)

    @classmethod
    def from_adjacency(cls, adj: AdjacencyMatrix) -> "Graph":
        return cls(adj.n, frozenset(adj.edges()))


def ring_lattice(n: int, k: int) -> np.ndarray:
    if k % 2 != 0 or not 0 < k < n:
        raise ValueError(f"ring lattice: k must be even with 0 < k < n, got k={k}, n={n}")
    adj = np.zeros((n, n))
    for offset in range(1, k // 2 + 1):
        idx = np.arange(n)
        adj[idx, (idx + offset) % n] = 1.0
        adj[(idx + offset) % n, idx] = 1.0
    return adj


def watts_strogatz(n: int, k: int, p: float, rng: np.random.Generator) -> AdjacencyMatrix:
    """Ring lattice of degree k with each clockwise edge rewired with probability p.

    Rewiring moves the far endpoint to a uniformly random node, avoiding
    self-loops and duplicate edges, so the edge count stays exactly n*k/2.
    """
    adj = ring_lattice(n, k)
    for offset in range(1, k // 2 + 1):
        for i in range(n):
            if rng.random() >= p:
                continue
            old = (i + offset) % n
            blocked = adj[i].astype(bool)
            blocked[i] = True
            candidates = np.nonzero(~blocked)[0]
            if candidates.size == 0:
                continue
            new = int(rng.choice(candidates))
            adj[i, old] = adj[old, i] = 0.0
            adj[i, new] = adj[new, i] = 1.0
    return AdjacencyMatrix(adj)


def generate_ws(n: int, k: int, p: float, seed: int) -> Graph:
    return Graph.from_adjacency(watts_strogatz(n, k, p, np.random.default_rng(seed)))


def permute_adjacency(adj: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Relabel nodes: result[a, b] = adj[perm[a], perm[b]]."""
    perm = np.asarray(perm, dtype=np.intp)
    return adj[np.ix_(perm, perm)]


# ---------------------------------------------------------------------------
# edges.csv: "# n=<N>" header, one "i,j" line per edge with i < j
# ---------------------------------------------------------------------------

def save_edges(path: str | Path, adj: AdjacencyMatrix) -> None:
    lines = [f"# n={adj.n}"]
    lines += [f"{i},{j}" for i, j in adj.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_edges(path: str | Path) -> AdjacencyMatrix:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("# n="):
        raise ValueError(f"edges file {path}: missing '# n=<N>' header")
    try:
        n = int(text[0][4:])
    except ValueError as exc:
        raise ValueError(f"edges file {path}: bad header {text[0]!r}") from exc
    adj = np.zeros((n, n))
    for line in text[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"edges file {path}: bad line {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i < j < n):
            raise ValueError(f"edges file {path}: edge ({i},{j}) out of range for n={n}")
        if adj[i, j]:
            raise ValueError(f"edges file {path}: duplicate edge ({i},{j})")
        adj[i, j] = adj[j, i] = 1.0
    return AdjacencyMatrix(adj)


# ---------------------------------------------------------------------------
# Observed/missing partition with canonical reindexing (observed first)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionedGraph:
    """Graph split into observed and missing nodes.

    Canonical reindexing places observed nodes at [0, n-M) and missing nodes
    at [n-M, n), in ascending original order within each block.
    """

    full: Graph
    observed: tuple[int, ...]
    missing: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if sorted(self.observed + self.missing) != list(range(self.full.n)):
            raise ValueError("partition: observed and missing must cover all nodes exactly once")

    @property
    def n(self) -> int:
        return self.full.n

    @property
    def missing_count(self) -> int:
        return len(self.missing)

    @property
    def observed_count(self) -> int:
        return len(self.observed)

    def canonical_order(self) -> np.ndarray:
        """Permutation (canonical index -> original index)."""
        return np.asarray(self.observed + self.missing, dtype=np.intp)

    def canonical_adjacency(self) -> np.ndarray:
        """Full ground-truth adjacency in canonical node order."""
        return permute_adjacency(self.full.to_adjacency().matrix, self.canonical_order())

    def observed_adjacency(self) -> np.ndarray:
        """The observed-only block A_o, shape (n-M, n-M)."""
        return self.canonical_adjacency()[:self.observed_count, :self.observed_count]


def partition(g: Graph, m: int, seed: int) -> PartitionedGraph:
    """Remove m uniformly chosen nodes; deterministic per seed."""
    if not 0 <= m < g.n:
        raise ValueError(f"partition: need 0 <= m < n, got m={m}, n={g.n}")
    rng = np.random.default_rng(seed)
    missing = np.sort(rng.choice(g.n, size=m, replace=False))
    observed = np.setdiff1d(np.arange(g.n), missing)
    return PartitionedGraph(g, tuple(observed.tolist()), tuple(missing.tolist()), seed)


def save_partition(path: str | Path, pg: PartitionedGraph) -> None:
    payload = {
        "observed": list(pg.observed),
        "missing_count": pg.missing_count,
        "seed": pg.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_partition(path: str | Path, g: Graph) -> PartitionedGraph:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"partition file {path}: invalid JSON: {exc}") from exc
    for key in ("observed", "missing_count", "seed"):
        if key not in payload:
            raise ValueError(f"partition file {path}: missing key {key!r}")
    observed = sorted(int(i) for i in payload["observed"])
    if len(set(observed)) != len(observed):
        raise ValueError(f"partition file {path}: duplicate observed nodes")
    if observed and not (0 <= observed[0] and observed[-1] < g.n):
        raise ValueError(f"partition file {path}: observed nodes out of range for n={g.n}")
    missing = sorted(set(range(g.n)) - set(observed))
    if len(missing) != int(payload["missing_count"]):
        raise ValueError(
            f"partition file {path}: missing_count {payload['missing_count']} "
            f"inconsistent with {len(missing)} absent nodes for n={g.n}")
    return PartitionedGraph(g, tuple(observed), tuple(missing), int(payload["seed"]))


# ---------------------------------------------------------------------------
# Greedy alignment of estimated missing nodes to ground-truth missing nodes
# ---------------------------------------------------------------------------

def row_hamming(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"row_hamming: length mismatch {a.shape} vs {b.shape}")
    return int((a != b).sum())


@dataclass(frozen=True)
class NodeAlignment:
    """mapping[e] = ground-truth missing slot matched to estimate missing slot e."""

    mapping: tuple[int, ...]
    total_hamming: int


def align_missing(est: np.ndarray, truth: np.ndarray,
                  observed_count: int) -> NodeAlignment:
    """Greedily match estimated missing rows to ground-truth missing rows.

    Estimate rows are visited in ascending index; each is matched to the
    unmatched truth row with minimal Hamming distance over observed columns
    plus already-matched missing columns, ties to the lowest truth index.
    total_hamming is recomputed over full rows under the final mapping.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape or est.ndim != 2 or est.shape[0] != est.shape[1]:
        raise ValueError(f"align: shape mismatch {est.shape} vs {truth.shape}")
    n = est.shape[0]
    m = n - observed_count
    if m < 0:
        raise ValueError(f"align: observed_count {observed_count} exceeds n={n}")

    unmatched = list(range(m))
    matched: list[tuple[int, int]] = []
    mapping = [-1] * m
    for e in range(m):
        est_row = est[observed_count + e]
        best_t = -1
        best_d = np.inf
        for t in unmatched:
            truth_row = truth[observed_count + t]
            d = float(np.abs(est_row[:observed_count] - truth_row[:observed_count]).sum())
            for e2, t2 in matched:
                d += abs(est_row[observed_count + e2] - truth_row[observed_count + t2])
            if d < best_d:
                best_d = d
                best_t = t
        mapping[e] = best_t
        unmatched.remove(best_t)
        matched.append((e, best_t))

    alignment = NodeAlignment(tuple(mapping), 0)
    aligned = apply_alignment(est, alignment)
    total = sum(row_hamming(aligned[observed_count + t], truth[observed_count + t])
                for t in range(m))
    return NodeAlignment(tuple(mapping), int(total))


def alignment_permutation(alignment: NodeAlignment, n: int) -> np.ndarray:
    """Canonical-index permutation realizing the alignment (new -> old)."""
    m = len(alignment.mapping)
    observed_count = n - m
    perm = np.arange(n, dtype=np.intp)
    for e, t in enumerate(alignment.mapping):
        perm[observed_count + t] = observed_count + e
    return perm


def apply_alignment(est: np.ndarray, alignment: NodeAlignment) -> np.ndarray:
    """Permute the missing block of est so slot e lands at truth slot mapping[e]."""
    est = np.asarray(est, dtype=np.float64)
    return permute_adjacency(est, alignment_permutation(alignment, est.shape[0]))
