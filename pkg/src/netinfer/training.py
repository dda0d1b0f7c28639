"""Training procedures: full reconstruction, completion, and test-state fitting.

Reconstruction alternates per epoch between rounds that update the dynamics
learner under fresh soft adjacency samples and rounds that update the
generator logits. Completion runs three phases per epoch: dynamics on the
observed subgraph, initial-state fitting through the assembled graph, and
generator fitting under a hard (straight-through) adjacency. Each phase
steps its own Adam instance; gradients are zeroed across all parameters
before every backward pass so no phase leaks into another.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dynamics import Dataset
from .graphs import PartitionedGraph, align_missing, apply_alignment
from .gumbel import GumbelGenerator, anneal
from .model import (DynamicsLearner, InitialStateLearner, concat_states, frozen,
                    rollout, stack_predictions)

LOSS_KINDS = ("nll_discrete", "mse_continuous")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    horizon: int | None = None
    rounds_dyn: int = 30
    rounds_state: int = 10
    rounds_net: int = 10
    lr_dyn: float = 0.001
    lr_state: float = 0.1
    lr_net: float = 0.1
    tau_start: float = 5.0
    tau_end: float = 0.5
    loss_kind: str = "nll_discrete"
    seed: int = 0
    patience: int = 10
    min_delta: float = 1e-5
    skip_state_phase: bool = False
    msg_sizes: tuple[int, ...] = (64, 32, 16, 8)
    node_hidden: int = 32
    test_state_rounds: int = 300
    test_state_batch: int = 512

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"config: epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"config: batch_size must be >= 1, got {self.batch_size}")
        if min(self.rounds_dyn, self.rounds_state, self.rounds_net) < 0:
            raise ValueError("config: round counts must be >= 0")
        if min(self.lr_dyn, self.lr_state, self.lr_net) <= 0:
            raise ValueError("config: learning rates must be positive")
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError(f"config: need tau_start >= tau_end > 0, "
                             f"got {self.tau_start}, {self.tau_end}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"config: unknown loss_kind {self.loss_kind!r}")
        if self.patience < 1 or self.min_delta < 0:
            raise ValueError("config: patience must be >= 1 and min_delta >= 0")


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    auc: list[float | None] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float,
               auc: float | None) -> None:
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.auc.append(auc)


def write_history(path: str | Path, history: TrainHistory) -> None:
    lines = ["epoch,train_loss,val_loss,auc_if_monitored"]
    for e, tr, vl, au in zip(history.epoch, history.train_loss,
                             history.val_loss, history.auc):
        tail = "" if au is None else f"{au:.17g}"
        lines.append(f"{e},{tr:.17g},{vl:.17g},{tail}")
    Path(path).write_text("\n".join(lines) + "\n")


def head_for(loss_kind: str) -> str:
    return "softmax" if loss_kind == "nll_discrete" else "identity"


def compute_loss(pred: ad.Tensor, truth: np.ndarray, kind: str) -> ad.Tensor:
    """Mean squared error, or mean negative log-likelihood of the true class."""
    truth = np.asarray(truth, dtype=np.float64)
    if pred.value.shape != truth.shape:
        raise ValueError(f"loss: prediction shape {pred.value.shape} "
                         f"does not match truth {truth.shape}")
    if kind == "mse_continuous":
        diff = ad.sub(pred, ad.Tensor(truth))
        return ad.mean(ad.mul(diff, diff))
    if kind == "nll_discrete":
        picked = ad.tensor_sum(ad.mul(ad.Tensor(truth),
                                      ad.log(ad.clamp_min(pred, 1e-12))),
                               axis=-1)
        return ad.neg(ad.mean(picked))
    raise ValueError(f"loss: unknown kind {kind!r}")


def rollout_loss(adj, records: np.ndarray, horizon: int,
                 learner: DynamicsLearner, kind: str) -> ad.Tensor:
    """Autoregressive loss of a record batch [B, R, N, d] from its first frame."""
    preds = stack_predictions(rollout(adj, records[:, 0], horizon, learner))
    return compute_loss(preds, records[:, 1:horizon + 1], kind)


def completion_loss(adj, obs_records: np.ndarray, init_missing: ad.Tensor,
                    horizon: int, learner: DynamicsLearner, kind: str,
                    observed_count: int) -> ad.Tensor:
    """Full-graph rollout scored on observed nodes only.

    obs_records holds observed columns [B, R, N-M, d]; the initial state is
    their first frame joined with the rendered missing-node block.
    """
    x0 = concat_states(obs_records[:, 0], init_missing)
    preds = stack_predictions(rollout(adj, x0, horizon, learner))
    obs_preds = ad.narrow(preds, 2, 0, observed_count)
    return compute_loss(obs_preds, obs_records[:, 1:horizon + 1], kind)


def observed_states(ds: Dataset, part: PartitionedGraph) -> np.ndarray:
    """Observed-node columns in canonical order; the only state view training sees."""
    cols = np.asarray(part.observed, dtype=np.intp)
    return ds.states[:, :, cols, :].astype(np.float64)


def _batch(rng: np.random.Generator, indices: np.ndarray, size: int) -> np.ndarray:
    return rng.choice(indices, size=min(size, len(indices)), replace=False)


def _round_step(loss_fn, optimizer: ad.Adam, all_params: list[ad.Tensor]) -> float:
    ad.zero_grads(all_params)
    loss = loss_fn()
    ad.backward(loss)
    optimizer.step()
    return float(loss.value)


class _EarlyStopper:
    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, value: float, epoch: int) -> bool:
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def exhausted(self) -> bool:
        return self.bad >= self.patience


def _snapshot(params: list[ad.Tensor]) -> list[np.ndarray]:
    return [p.value.copy() for p in params]


def _restore(params: list[ad.Tensor], snapshot: list[np.ndarray]) -> None:
    for p, v in zip(params, snapshot):
        p.value = v.copy()


def _mean_split_loss(loss_fn, indices: np.ndarray, records: np.ndarray,
                     chunk: int = 512) -> float:
    """Record-weighted mean of a per-chunk mean loss over a whole split."""
    if len(indices) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(indices), chunk):
        idx = indices[start:start + chunk]
        total += float(loss_fn(records[idx], idx).value) * len(idx)
    return total / len(indices)


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def train_reconstruction(ds: Dataset, cfg: TrainConfig,
                         truth_adj=None) -> tuple[GumbelGenerator, DynamicsLearner,
                                                  TrainHistory]:
    cfg.validate()
    if len(ds.split.train) == 0:
        raise ValueError("train: empty training split")
    horizon = cfg.horizon if cfg.horizon is not None else ds.record_length - 1
    if not 1 <= horizon <= ds.record_length - 1:
        raise ValueError(f"train: horizon {horizon} invalid for records "
                         f"of length {ds.record_length}")

    rng = np.random.default_rng(cfg.seed)
    dyn = DynamicsLearner(ds.dim, head_for(cfg.loss_kind), rng,
                          cfg.msg_sizes, cfg.node_hidden)
    gen = GumbelGenerator(ds.n, "upper_triangle_symmetric", rng)
    history = TrainHistory()
    if cfg.epochs == 0:
        return gen, dyn, history

    all_params = dyn.parameters() + gen.parameters()
    opt_dyn = ad.Adam(dyn.parameters(), cfg.lr_dyn)
    opt_net = ad.Adam(gen.parameters(), cfg.lr_net)
    records = ds.states.astype(np.float64)
    stopper = _EarlyStopper(cfg.patience, cfg.min_delta)
    best = _snapshot(all_params)

    def val_loss_fn(recs, _idx):
        return rollout_loss(gen.edge_probabilities(), recs, horizon, dyn,
                            cfg.loss_kind)

    for epoch in range(cfg.epochs):
        tau = anneal(cfg.tau_start, cfg.tau_end, epoch, cfg.epochs - 1)
        losses = []
        for _ in range(cfg.rounds_dyn):
            idx = _batch(rng, ds.split.train, cfg.batch_size)
            adj = gen.sample_soft(rng, tau)
            losses.append(_round_step(
                lambda: rollout_loss(adj, records[idx], horizon, dyn, cfg.loss_kind),
                opt_dyn, all_params))
        for _ in range(cfg.rounds_net):
            idx = _batch(rng, ds.split.train, cfg.batch_size)
            adj = gen.sample_soft(rng, tau)
            losses.append(_round_step(
                lambda: rollout_loss(adj, records[idx], horizon, dyn, cfg.loss_kind),
                opt_net, all_params))

        with frozen(all_params):
            val = _mean_split_loss(val_loss_fn, ds.split.val, records)
        train_mean = float(np.mean(losses)) if losses else float("nan")
        monitored = None
        if truth_adj is not None:
            from .metrics import auc, upper_offdiag_mask, UndefinedMetricError
            truth_mat = truth_adj.matrix if hasattr(truth_adj, "matrix") else truth_adj
            try:
                monitored = auc(gen.edge_probabilities(), truth_mat,
                                upper_offdiag_mask(ds.n))
            except UndefinedMetricError:
                monitored = None
        history.append(epoch, train_mean, val, monitored)

        gate = val if np.isfinite(val) else train_mean
        if stopper.update(gate, epoch):
            best = _snapshot(all_params)
        if stopper.exhausted:
            break

    _restore(all_params, best)
    return gen, dyn, history


# ---------------------------------------------------------------------------
# Completion (three-phase procedure)
# ---------------------------------------------------------------------------

class CompletionTrainer:
    """Holds completion artifacts and exposes one round of each phase."""

    def __init__(self, ds: Dataset, part: PartitionedGraph, cfg: TrainConfig,
                 monitor: bool = True):
        cfg.validate()
        if len(ds.split.train) == 0:
            raise ValueError("train: empty training split")
        self.ds = ds
        self.part = part
        self.cfg = cfg
        self.monitor = monitor
        self.horizon = cfg.horizon if cfg.horizon is not None else ds.record_length - 1
        if not 1 <= self.horizon <= ds.record_length - 1:
            raise ValueError(f"train: horizon {self.horizon} invalid for records "
                             f"of length {ds.record_length}")
        self.rng = np.random.default_rng(cfg.seed)
        self.obs = observed_states(ds, part)
        self.a_obs = part.observed_adjacency()
        self.dyn = DynamicsLearner(ds.dim, head_for(cfg.loss_kind), self.rng,
                                   cfg.msg_sizes, cfg.node_hidden)
        self.gen = GumbelGenerator(part.n, "completion_blocks", self.rng,
                                   observed_count=part.observed_count,
                                   observed_block=self.a_obs)
        rho = "sigmoid_onehot" if cfg.loss_kind == "nll_discrete" else "identity"
        self.init_learner = InitialStateLearner(ds.samples, part.missing_count,
                                                ds.dim, rho, self.rng)
        self.all_params = (self.dyn.parameters() + self.gen.parameters()
                           + self.init_learner.parameters())
        self.opt_dyn = ad.Adam(self.dyn.parameters(), cfg.lr_dyn)
        self.opt_state = ad.Adam(self.init_learner.parameters(), cfg.lr_state)
        self.opt_net = ad.Adam(self.gen.parameters(), cfg.lr_net)

    def dynamics_round(self, idx: np.ndarray) -> float:
        return _round_step(
            lambda: rollout_loss(self.a_obs, self.obs[idx], self.horizon,
                                 self.dyn, self.cfg.loss_kind),
            self.opt_dyn, self.all_params)

    def state_round(self, idx: np.ndarray, tau: float) -> float:
        adj = self.gen.sample_soft(self.rng, tau)
        return _round_step(
            lambda: completion_loss(adj, self.obs[idx],
                                    self.init_learner.render(idx), self.horizon,
                                    self.dyn, self.cfg.loss_kind,
                                    self.part.observed_count),
            self.opt_state, self.all_params)

    def net_round(self, idx: np.ndarray, tau: float) -> float:
        adj = ad.straight_through_round(self.gen.sample_soft(self.rng, tau))
        return _round_step(
            lambda: completion_loss(adj, self.obs[idx],
                                    self.init_learner.render(idx), self.horizon,
                                    self.dyn, self.cfg.loss_kind,
                                    self.part.observed_count),
            self.opt_net, self.all_params)

    def val_loss(self) -> float:
        def fn(recs, _idx):
            return rollout_loss(self.a_obs, recs, self.horizon, self.dyn,
                                self.cfg.loss_kind)

        with frozen(self.all_params):
            return _mean_split_loss(fn, self.ds.split.val, self.obs)

    def monitored_auc(self) -> float | None:
        from .metrics import auc, missing_pair_mask, UndefinedMetricError
        truth = self.part.canonical_adjacency()
        hard = self.gen.sample_hard(np.random.default_rng(0))
        alignment = align_missing(hard, truth, self.part.observed_count)
        probs = apply_alignment(self.gen.edge_probabilities(), alignment)
        try:
            return auc(probs, truth,
                       missing_pair_mask(self.part.n, self.part.observed_count))
        except UndefinedMetricError:
            return None

    def train(self) -> tuple[DynamicsLearner, GumbelGenerator,
                             InitialStateLearner, TrainHistory]:
        cfg = self.cfg
        history = TrainHistory()
        if cfg.epochs == 0:
            return self.dyn, self.gen, self.init_learner, history
        stopper = _EarlyStopper(cfg.patience, cfg.min_delta)
        best = _snapshot(self.all_params)
        for epoch in range(cfg.epochs):
            tau = anneal(cfg.tau_start, cfg.tau_end, epoch, cfg.epochs - 1)
            losses = []
            for _ in range(cfg.rounds_dyn):
                losses.append(self.dynamics_round(
                    _batch(self.rng, self.ds.split.train, cfg.batch_size)))
            if not cfg.skip_state_phase:
                for _ in range(cfg.rounds_state):
                    losses.append(self.state_round(
                        _batch(self.rng, self.ds.split.train, cfg.batch_size), tau))
            for _ in range(cfg.rounds_net):
                losses.append(self.net_round(
                    _batch(self.rng, self.ds.split.train, cfg.batch_size), tau))

            val = self.val_loss()
            train_mean = float(np.mean(losses)) if losses else float("nan")
            monitored = self.monitored_auc() if self.monitor else None
            history.append(epoch, train_mean, val, monitored)

            gate = val if np.isfinite(val) else train_mean
            if stopper.update(gate, epoch):
                best = _snapshot(self.all_params)
            if stopper.exhausted:
                break
        _restore(self.all_params, best)
        return self.dyn, self.gen, self.init_learner, history


def train_completion(ds: Dataset, part: PartitionedGraph, cfg: TrainConfig,
                     monitor: bool = True) -> tuple[DynamicsLearner, GumbelGenerator,
                                                    InitialStateLearner, TrainHistory]:
    if part.missing_count == 0:
        warnings.warn("completion with no missing nodes: falling back to "
                      "dynamics-only training on the fixed observed graph")
        trainer = CompletionTrainer(ds, part, cfg, monitor=False)
        cfg_copy = cfg
        history = TrainHistory()
        if cfg_copy.epochs == 0:
            return trainer.dyn, trainer.gen, trainer.init_learner, history
        stopper = _EarlyStopper(cfg.patience, cfg.min_delta)
        best = _snapshot(trainer.all_params)
        for epoch in range(cfg.epochs):
            losses = [trainer.dynamics_round(
                _batch(trainer.rng, ds.split.train, cfg.batch_size))
                for _ in range(cfg.rounds_dyn)]
            val = trainer.val_loss()
            train_mean = float(np.mean(losses)) if losses else float("nan")
            history.append(epoch, train_mean, val, None)
            gate = val if np.isfinite(val) else train_mean
            if stopper.update(gate, epoch):
                best = _snapshot(trainer.all_params)
            if stopper.exhausted:
                break
        _restore(trainer.all_params, best)
        return trainer.dyn, trainer.gen, trainer.init_learner, history
    return CompletionTrainer(ds, part, cfg, monitor=monitor).train()


# ---------------------------------------------------------------------------
# Test-phase state optimization
# ---------------------------------------------------------------------------

def optimize_test_states(dyn: DynamicsLearner, adj: np.ndarray, ds: Dataset,
                         part: PartitionedGraph, cfg: TrainConfig,
                         rng: np.random.Generator | None = None
                         ) -> tuple[InitialStateLearner, float]:
    """Fit a fresh initial-state table on the test split; dyn and adj stay fixed."""
    cfg.validate()
    adj = np.asarray(adj, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 17])
    rho = "sigmoid_onehot" if cfg.loss_kind == "nll_discrete" else "identity"
    learner = InitialStateLearner(ds.samples, part.missing_count, ds.dim, rho, rng)
    horizon = cfg.horizon if cfg.horizon is not None else ds.record_length - 1
    test_idx = ds.split.test
    if horizon == 0 or len(test_idx) == 0 or part.missing_count == 0:
        return learner, 0.0

    obs = observed_states(ds, part)
    oc = part.observed_count
    opt = ad.Adam(learner.parameters(), cfg.lr_state)

    def loss_at(idx):
        return completion_loss(adj, obs[idx], learner.render(idx), horizon,
                               dyn, cfg.loss_kind, oc)

    with frozen(dyn.parameters()):
        for _ in range(cfg.test_state_rounds):
            idx = _batch(rng, test_idx, cfg.test_state_batch)
            ad.zero_grads(learner.parameters())
            loss = loss_at(idx)
            ad.backward(loss)
            opt.step()
        final = _mean_split_loss(lambda recs, idx: loss_at(idx), test_idx, obs)
    return learner, final


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(directory: str | Path, gen: GumbelGenerator,
                    dyn: DynamicsLearner,
                    init_learner: InitialStateLearner | None = None,
                    test_states: InitialStateLearner | None = None) -> None:
    named: dict[str, ad.Tensor] = {}
    named.update(dyn.named_parameters())
    named.update(gen.named_parameters())
    if init_learner is not None:
        named.update(init_learner.named_parameters())
    if test_states is not None:
        named["init.gamma_test"] = test_states.gamma
    ad.save_params(directory, named)
