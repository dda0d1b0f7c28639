"""Message-passing dynamics learner and the learnable initial-state table.

One dynamics step computes a message per ordered node pair from the sender
and receiver states, aggregates messages weighted by the adjacency entry,
and maps each node's state plus aggregate through a node MLP.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import autodiff as ad


class Mlp:
    """Dense layers with ReLU between hidden layers and a linear output."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError(f"mlp: need at least two sizes, got {sizes}")
        self.sizes = tuple(sizes)
        self.weights: list[ad.Tensor] = []
        self.biases: list[ad.Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            # He scaling on ReLU layers, unit-variance-preserving on the output.
            scale = np.sqrt(2.0 / fan_in) if i < len(sizes) - 2 else np.sqrt(1.0 / fan_in)
            self.weights.append(ad.Tensor(rng.normal(0.0, scale, (fan_in, fan_out)),
                                          requires_grad=True))
            self.biases.append(ad.Tensor(np.zeros(fan_out), requires_grad=True))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.add(ad.matmul(x, w), b)
            if i < last:
                x = ad.relu(x)
        return x

    def parameters(self) -> list[ad.Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]


class DynamicsLearner:
    """Edge-message MLP plus node-update MLP with a task-specific output head."""

    def __init__(self, dim: int, head: str, rng: np.random.Generator,
                 msg_sizes: tuple[int, ...] = (64, 32, 16, 8), node_hidden: int = 32):
        if head not in ("softmax", "identity"):
            raise ValueError(f"dynamics learner: unknown head {head!r}")
        self.dim = dim
        self.head = head
        self.msg_dim = msg_sizes[-1]
        self.edge_mlp = Mlp((2 * dim, *msg_sizes), rng)
        self.node_mlp = Mlp((dim + self.msg_dim, node_hidden, dim), rng)
        # Zero output layer keeps untrained autoregressive rollouts bounded.
        self.node_mlp.weights[-1].value[:] = 0.0

    def parameters(self) -> list[ad.Tensor]:
        return self.edge_mlp.parameters() + self.node_mlp.parameters()

    def named_parameters(self) -> dict[str, ad.Tensor]:
        named = {}
        for tag, mlp in (("edge_mlp", self.edge_mlp), ("node_mlp", self.node_mlp)):
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                named[f"dyn.{tag}.w{i}"] = w
                named[f"dyn.{tag}.b{i}"] = b
        return named


def _as_batched(states: ad.Tensor | np.ndarray) -> tuple[ad.Tensor, bool]:
    t = states if isinstance(states, ad.Tensor) else ad.Tensor(states)
    if t.value.ndim == 2:
        return ad.reshape(t, (1, *t.value.shape)), True
    if t.value.ndim == 3:
        return t, False
    raise ValueError(f"dynamics_step: states must be [N,d] or [B,N,d], "
                     f"got shape {t.value.shape}")


def dynamics_step(adj: ad.Tensor | np.ndarray, states: ad.Tensor | np.ndarray,
                  learner: DynamicsLearner) -> ad.Tensor:
    """One predicted step: messages j->i weighted by adj[j, i], summed over j."""
    a = adj if isinstance(adj, ad.Tensor) else ad.Tensor(adj)
    x, squeeze = _as_batched(states)
    b, n, d = x.value.shape
    if a.value.shape != (n, n):
        raise ValueError(f"dynamics_step: adjacency {a.value.shape} "
                         f"does not match {n} nodes")
    if d != learner.dim:
        raise ValueError(f"dynamics_step: state dim {d} does not match "
                         f"learner dim {learner.dim}")

    senders = ad.broadcast_to(ad.reshape(x, (b, n, 1, d)), (b, n, n, d))
    receivers = ad.broadcast_to(ad.reshape(x, (b, 1, n, d)), (b, n, n, d))
    pairs = ad.reshape(ad.concat([senders, receivers], axis=3), (b * n * n, 2 * d))
    messages = ad.reshape(learner.edge_mlp(pairs), (b, n, n, learner.msg_dim))
    weighted = ad.mul(messages, ad.reshape(a, (1, n, n, 1)))
    aggregated = ad.tensor_sum(weighted, axis=1)

    node_in = ad.reshape(ad.concat([x, aggregated], axis=2),
                         (b * n, d + learner.msg_dim))
    out = learner.node_mlp(node_in)
    if learner.head == "softmax":
        out = ad.softmax(out, axis=1)
    out = ad.reshape(out, (b, n, d))
    return ad.reshape(out, (n, d)) if squeeze else out


def rollout(adj: ad.Tensor | np.ndarray, x0: ad.Tensor | np.ndarray, p: int,
            learner: DynamicsLearner) -> list[ad.Tensor]:
    """Autoregressive predictions: p states, each fed from the previous one."""
    if p < 0:
        raise ValueError(f"rollout: horizon must be non-negative, got {p}")
    preds: list[ad.Tensor] = []
    x = x0 if isinstance(x0, ad.Tensor) else ad.Tensor(x0)
    for _ in range(p):
        x = dynamics_step(adj, x, learner)
        preds.append(x)
    return preds


def stack_predictions(preds: list[ad.Tensor]) -> ad.Tensor:
    """Stack step predictions [B,N,d] into [B,P,N,d]."""
    if not preds:
        raise ValueError("stack_predictions: empty prediction list")
    b, n, d = preds[0].value.shape
    return ad.concat([ad.reshape(t, (b, 1, n, d)) for t in preds], axis=1)


class InitialStateLearner:
    """Trainable initial states for missing nodes, one block per record."""

    def __init__(self, samples: int, missing: int, dim: int, rho_kind: str,
                 rng: np.random.Generator):
        if rho_kind not in ("sigmoid_onehot", "identity"):
            raise ValueError(f"initial-state learner: unknown rho {rho_kind!r}")
        self.samples = samples
        self.missing = missing
        self.dim = dim
        self.rho_kind = rho_kind
        if rho_kind == "identity":
            init = rng.random((samples, missing, dim))
        else:
            init = rng.normal(0.0, 1.0, (samples, missing, dim))
        self.gamma = ad.Tensor(init, requires_grad=True)

    def parameters(self) -> list[ad.Tensor]:
        return [self.gamma]

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {"init.gamma": self.gamma}

    def render(self, sample_indices: np.ndarray) -> ad.Tensor:
        """Rendered initial states [B, M, d] for the given record indices."""
        idx = np.asarray(sample_indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.samples):
            raise IndexError(f"render: sample index out of range 0..{self.samples - 1}")
        raw = ad.take_rows(self.gamma, idx)
        if self.rho_kind == "identity":
            return raw
        squashed = ad.sigmoid(raw)
        total = ad.tensor_sum(squashed, axis=2, keepdims=True)
        return ad.div(squashed, total)

    def render_initial(self, sample_idx: int) -> ad.Tensor:
        """Single-record view [M, d]."""
        rendered = self.render(np.asarray([sample_idx]))
        return ad.reshape(rendered, (self.missing, self.dim))


def concat_states(x_o: ad.Tensor | np.ndarray,
                  x_m: ad.Tensor | np.ndarray | None) -> ad.Tensor:
    """Join observed-block and missing-block states along the node axis."""
    a = x_o if isinstance(x_o, ad.Tensor) else ad.Tensor(x_o)
    if x_m is None:
        return a
    b = x_m if isinstance(x_m, ad.Tensor) else ad.Tensor(x_m)
    if a.value.ndim != b.value.ndim:
        raise ValueError(f"concat_states: rank mismatch {a.value.shape} vs {b.value.shape}")
    if b.value.shape[-2] == 0:
        return a
    return ad.concat([a, b], axis=a.value.ndim - 2)


@contextmanager
def frozen(params: list[ad.Tensor]):
    """Temporarily stop gradient tracking on the given parameters."""
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag
