"""Learnable adjacency generator using the binary Gumbel-softmax relaxation.

Each candidate edge slot carries two logits (edge, no-edge). A soft sample
perturbs both with independent Gumbel noise and applies a temperature, which
reduces to a sigmoid of the perturbed logit gap; hard samples round at 0.5.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

LAYOUTS = ("full_matrix", "upper_triangle_symmetric", "completion_blocks")


def gumbel_noise(rng: np.random.Generator, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Standard Gumbel draws -log(-log(u)), u clamped away from {0,1} by 1e-12."""
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def anneal(tau_start: float, tau_end: float, epoch: int, total: int) -> float:
    """Exponential interpolation from tau_start (epoch 0) to tau_end (epoch total)."""
    if not tau_start >= tau_end > 0:
        raise ValueError(f"anneal: need tau_start >= tau_end > 0, got {tau_start}, {tau_end}")
    if not 0 <= epoch <= max(total, 0):
        raise ValueError(f"anneal: epoch {epoch} outside [0, {total}]")
    if total <= 0:
        return tau_start
    return tau_start * (tau_end / tau_start) ** (epoch / total)


class GumbelGenerator:
    """Edge logits over candidate slots with a chosen symmetry layout.

    upper_triangle_symmetric shares one logit pair per unordered node pair;
    full_matrix keeps independent ordered pairs; completion_blocks holds
    parameters only for slots touching missing nodes (canonical order,
    observed first) and renders the observed-observed block as the fixed
    constant supplied at construction.
    """

    def __init__(self, n: int, layout: str = "upper_triangle_symmetric",
                 rng: np.random.Generator | None = None, tau: float = 1.0,
                 observed_count: int | None = None,
                 observed_block: np.ndarray | None = None):
        if layout not in LAYOUTS:
            raise ValueError(f"generator: unknown layout {layout!r}")
        if tau <= 0:
            raise ValueError(f"generator: tau must be positive, got {tau}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n = n
        self.layout = layout
        self.tau = tau

        if layout == "full_matrix":
            slots = [(i, j) for i in range(n) for j in range(n) if i != j]
            mirrored = False
        elif layout == "upper_triangle_symmetric":
            slots = [(i, j) for i in range(n) for j in range(i + 1, n)]
            mirrored = True
        else:
            if observed_count is None or observed_block is None:
                raise ValueError("generator: completion_blocks needs observed_count "
                                 "and observed_block")
            observed_block = np.asarray(observed_block, dtype=np.float64)
            if observed_block.shape != (observed_count, observed_count):
                raise ValueError(
                    f"generator: observed_block shape {observed_block.shape} "
                    f"does not match observed_count {observed_count}")
            slots = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if j >= observed_count]
            mirrored = True
        self.slots = slots
        self.observed_count = observed_count

        flat = np.zeros((n * n, len(slots)))
        for p, (i, j) in enumerate(slots):
            flat[i * n + j, p] = 1.0
            if mirrored:
                flat[j * n + i, p] = 1.0
        self._placement = flat

        base = np.zeros((n, n))
        if layout == "completion_blocks":
            base[:observed_count, :observed_count] = observed_block
        self._base = base

        self.logits = ad.Tensor(rng.normal(0.0, 1.0, (len(slots), 2)),
                                requires_grad=True)

    def parameters(self) -> list[ad.Tensor]:
        return [self.logits]

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {"gumbel.logits": self.logits}

    def sample_soft(self, rng: np.random.Generator | None = None,
                    tau: float | None = None,
                    noise: np.ndarray | None = None) -> ad.Tensor:
        """Differentiable soft adjacency sample, shape [n, n], zero diagonal."""
        tau = self.tau if tau is None else tau
        if tau <= 0:
            raise ValueError(f"sample_soft: tau must be positive, got {tau}")
        if noise is None:
            if rng is None:
                raise ValueError("sample_soft: need an rng or explicit noise")
            noise = gumbel_noise(rng, self.logits.shape)
        perturbed = ad.mul(ad.add(self.logits, ad.Tensor(noise)),
                           ad.Tensor(1.0 / tau))
        gap = ad.sub(ad.narrow(perturbed, 1, 0, 1), ad.narrow(perturbed, 1, 1, 2))
        soft = ad.sigmoid(gap)
        flat = ad.matmul(ad.Tensor(self._placement), soft)
        mat = ad.reshape(flat, (self.n, self.n))
        if self._base.any():
            mat = ad.add(mat, ad.Tensor(self._base))
        return mat

    def sample_hard(self, rng: np.random.Generator) -> np.ndarray:
        """Binary adjacency: a soft sample rounded at 0.5 (temperature-free)."""
        soft = self.sample_soft(rng, tau=1.0)
        return (soft.value > 0.5).astype(np.float64)

    def edge_probabilities(self) -> np.ndarray:
        """Deterministic sigmoid of the logit gap per slot; diagonal 0."""
        gap = self.logits.value[:, 0] - self.logits.value[:, 1]
        probs = 1.0 / (1.0 + np.exp(-gap))
        mat = (self._placement @ probs).reshape(self.n, self.n)
        return mat + self._base
