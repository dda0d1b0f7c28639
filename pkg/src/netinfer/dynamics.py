"""Voter and coupled-map-lattice simulators plus dataset generation and I/O.

A dataset is an array of records shaped [sample, time, node, dim] in float32
with a shuffled 70/15/15 split over record indices. Voter records are single
transitions (two frames, one-hot over two opinions); coupled-map records are
longer windows of scalar states cut from one trajectory without overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import AdjacencyMatrix, load_edges, save_edges


def logistic(x: np.ndarray, lam: float) -> np.ndarray:
    return lam * x * (1.0 - x)


def voter_step(adj: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Synchronous voter update on a batch of binary state rows [B, N].

    Each node adopts opinion 1 with probability equal to the fraction of its
    neighbors holding 1. Isolated nodes keep their state.
    """
    deg = adj.sum(axis=1)
    ones = x @ adj
    prob = np.divide(ones, deg, out=np.zeros_like(ones), where=deg > 0)
    nxt = (rng.random(x.shape) < prob).astype(np.float64)
    isolated = deg == 0
    if isolated.any():
        nxt[:, isolated] = x[:, isolated]
    return nxt


def cml_step(adj: np.ndarray, x: np.ndarray, lam: float, eps: float,
             form: str = "paper_literal") -> np.ndarray:
    """Coupled logistic-map update on a batch of state rows [B, N].

    form "paper_literal" keeps the receiving state inside the coupling term:
        x_i' = (1-eps) f(x_i) + (eps/k_i) x_i * sum_j A_ij f(x_j)
    form "standard" drops that factor. Isolated nodes get no coupling term.
    """
    if form not in ("paper_literal", "standard"):
        raise ValueError(f"cml: unknown form {form!r}")
    deg = adj.sum(axis=1)
    fx = logistic(x, lam)
    pooled = np.divide(fx @ adj, deg, out=np.zeros_like(fx), where=deg > 0)
    coupling = x * pooled if form == "paper_literal" else pooled
    nxt = (1.0 - eps) * fx + eps * coupling
    isolated = deg == 0
    if isolated.any():
        nxt[:, isolated] = (1.0 - eps) * fx[:, isolated]
    return nxt


def simulate_voter(adj: AdjacencyMatrix, steps: int, rng: np.random.Generator,
                   init: np.ndarray | None = None) -> np.ndarray:
    """Run one voter trajectory; returns [steps+1, N] of 0/1 states."""
    traj = simulate_voter_batch(adj, 1, steps, rng,
                                None if init is None else init[None, :])
    return traj[0]


def simulate_voter_batch(adj: AdjacencyMatrix, num_sims: int, steps: int,
                         rng: np.random.Generator,
                         init: np.ndarray | None = None) -> np.ndarray:
    a = adj.matrix
    x = rng.integers(0, 2, size=(num_sims, adj.n)).astype(np.float64) \
        if init is None else np.asarray(init, dtype=np.float64)
    traj = np.empty((num_sims, steps + 1, adj.n))
    traj[:, 0] = x
    for t in range(steps):
        x = voter_step(a, x, rng)
        traj[:, t + 1] = x
    return traj


def simulate_cml(adj: AdjacencyMatrix, steps: int, rng: np.random.Generator,
                 lam: float = 3.5, eps: float = 0.2, form: str = "paper_literal",
                 init: np.ndarray | None = None) -> np.ndarray:
    """Run one coupled-map trajectory; returns [steps, N] including the start."""
    traj = simulate_cml_batch(adj, 1, steps, rng, lam, eps, form,
                              None if init is None else init[None, :])
    return traj[0]


def simulate_cml_batch(adj: AdjacencyMatrix, num_sims: int, steps: int,
                       rng: np.random.Generator, lam: float = 3.5, eps: float = 0.2,
                       form: str = "paper_literal",
                       init: np.ndarray | None = None) -> np.ndarray:
    if steps < 1:
        raise ValueError("cml: steps must be positive")
    a = adj.matrix
    x = rng.random((num_sims, adj.n)) if init is None else np.asarray(init, dtype=np.float64)
    traj = np.empty((num_sims, steps, adj.n))
    traj[:, 0] = x
    for t in range(1, steps):
        x = cml_step(a, x, lam, eps, form)
        traj[:, t] = x
    return traj


def one_hot_pair(x: np.ndarray) -> np.ndarray:
    """Map 0/1 states [..., N] to one-hot [..., N, 2] with channel = opinion."""
    out = np.zeros(x.shape + (2,))
    out[..., 0] = 1.0 - x
    out[..., 1] = x
    return out


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_split(samples: int, rng: np.random.Generator) -> Split:
    """Shuffled 70/15/15 split; val and test round down, train keeps the rest."""
    n_val = int(samples * 0.15)
    n_test = int(samples * 0.15)
    n_train = samples - n_val - n_test
    order = rng.permutation(samples)
    return Split(np.sort(order[:n_train]),
                 np.sort(order[n_train:n_train + n_val]),
                 np.sort(order[n_train + n_val:]))


@dataclass
class Dataset:
    """Records [sample, time, node, dim] float32 with graph and split."""

    states: np.ndarray
    adjacency: AdjacencyMatrix
    dynamics: str
    seed: int
    split: Split
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float32)
        if self.states.ndim != 4:
            raise ValueError(f"dataset: states must be 4-d, got shape {self.states.shape}")
        if self.states.shape[2] != self.adjacency.n:
            raise ValueError(
                f"dataset: states node axis {self.states.shape[2]} "
                f"does not match adjacency n={self.adjacency.n}")
        counts = len(self.split.train) + len(self.split.val) + len(self.split.test)
        if counts != self.states.shape[0]:
            raise ValueError(f"dataset: split covers {counts} of {self.states.shape[0]} records")

    @property
    def samples(self) -> int:
        return self.states.shape[0]

    @property
    def record_length(self) -> int:
        return self.states.shape[1]

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @property
    def dim(self) -> int:
        return self.states.shape[3]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1


def generate_voter_dataset(adj: AdjacencyMatrix, num_sims: int, steps: int,
                           seed: int) -> Dataset:
    """One record per transition: num_sims * steps records of two frames."""
    rng = np.random.default_rng(seed)
    traj = simulate_voter_batch(adj, num_sims, steps, rng)
    hot = one_hot_pair(traj)
    pairs = np.stack([hot[:, :-1], hot[:, 1:]], axis=2)
    records = pairs.reshape(num_sims * steps, 2, adj.n, 2)
    return Dataset(records, adj, "voter", seed, make_split(len(records), rng),
                   {"num_sims": num_sims, "steps": steps})


def generate_cml_dataset(adj: AdjacencyMatrix, num_sims: int, steps: int,
                         record_length: int, seed: int, lam: float = 3.5,
                         eps: float = 0.2, form: str = "paper_literal") -> Dataset:
    """Cut each trajectory of `steps` frames into steps//record_length windows."""
    if steps % record_length != 0:
        raise ValueError(f"cml dataset: steps {steps} not divisible by "
                         f"record_length {record_length}")
    rng = np.random.default_rng(seed)
    traj = simulate_cml_batch(adj, num_sims, steps, rng, lam, eps, form)
    per_sim = steps // record_length
    records = traj.reshape(num_sims * per_sim, record_length, adj.n, 1)
    return Dataset(records, adj, "cml", seed, make_split(len(records), rng),
                   {"num_sims": num_sims, "steps": steps, "lam": lam,
                    "eps": eps, "form": form})


# ---------------------------------------------------------------------------
# Dataset directory: meta.json + states.f32 + edges.csv
# ---------------------------------------------------------------------------

def save_dataset(directory: str | Path, ds: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "dynamics": ds.dynamics,
        "n": ds.n,
        "samples": ds.samples,
        "record_length": ds.record_length,
        "dim": ds.dim,
        "dtype": "<f4",
        "seed": ds.seed,
        "graph": "edges.csv",
        "params": ds.params,
        "split": {
            "train": ds.split.train.tolist(),
            "val": ds.split.val.tolist(),
            "test": ds.split.test.tolist(),
        },
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    (directory / "states.f32").write_bytes(
        np.ascontiguousarray(ds.states, dtype="<f4").tobytes())
    save_edges(directory / "edges.csv", ds.adjacency)


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise ValueError(f"dataset {directory}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"dataset {directory}: invalid meta.json: {exc}") from exc
    for key in ("dynamics", "n", "samples", "record_length", "dim", "seed", "split"):
        if key not in meta:
            raise ValueError(f"dataset {directory}: meta.json missing key {key!r}")
    shape = (meta["samples"], meta["record_length"], meta["n"], meta["dim"])
    payload = np.frombuffer((directory / "states.f32").read_bytes(), dtype="<f4")
    if payload.size != int(np.prod(shape)):
        raise ValueError(
            f"dataset {directory}: states.f32 holds {payload.size} floats, "
            f"meta.json expects {int(np.prod(shape))}")
    adj = load_edges(directory / meta.get("graph", "edges.csv"))
    if adj.n != meta["n"]:
        raise ValueError(f"dataset {directory}: edges.csv n={adj.n} "
                         f"disagrees with meta.json n={meta['n']}")
    split = Split(np.asarray(meta["split"]["train"], dtype=np.intp),
                  np.asarray(meta["split"]["val"], dtype=np.intp),
                  np.asarray(meta["split"]["test"], dtype=np.intp))
    return Dataset(payload.reshape(shape).copy(), adj, meta["dynamics"],
                   int(meta["seed"]), split, dict(meta.get("params", {})))
