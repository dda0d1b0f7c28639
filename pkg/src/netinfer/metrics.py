"""Edge and state metrics plus the end-to-end evaluation pipelines.

All edge metrics score unordered node pairs once (upper triangle, diagonal
excluded). Completion runs greedy node alignment before scoring and reports
the missing-block metrics separately from the full-matrix ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dynamics import Dataset
from .graphs import (PartitionedGraph, align_missing, alignment_permutation,
                     apply_alignment)
from .gumbel import GumbelGenerator
from .model import DynamicsLearner, InitialStateLearner, frozen, rollout, stack_predictions


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value under the given mask."""


def upper_offdiag_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), 1)


def missing_pair_mask(n: int, observed_count: int) -> np.ndarray:
    """Unordered pairs touching at least one missing node, counted once."""
    mask = upper_offdiag_mask(n)
    cols = np.arange(n)
    mask &= cols[None, :] >= observed_count
    return mask


def auc(probs: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Mann-Whitney AUC over masked entries, ties counted half."""
    scores = np.asarray(probs, dtype=np.float64)[mask]
    labels = np.asarray(truth)[mask].astype(bool)
    pos = int(labels.sum())
    neg = int((~labels).sum())
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("auc: single-class truth under mask")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    rank = 1
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (rank + rank + (j - i))
        rank += j - i + 1
        i = j + 1
    u = ranks[labels].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


def acc_net(sampled: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        raise UndefinedMetricError("acc_net: empty mask")
    return float((np.asarray(sampled)[mask] == np.asarray(truth)[mask]).mean())


def tpr_fpr(sampled: np.ndarray, truth: np.ndarray,
            mask: np.ndarray) -> tuple[float, float]:
    s = np.asarray(sampled)[mask].astype(bool)
    t = np.asarray(truth)[mask].astype(bool)
    tp = int((s & t).sum())
    fn = int((~s & t).sum())
    fp = int((s & ~t).sum())
    tn = int((~s & ~t).sum())
    if tp + fn == 0:
        raise UndefinedMetricError("tpr: no positives under mask")
    if fp + tn == 0:
        raise UndefinedMetricError("fpr: no negatives under mask")
    return tp / (tp + fn), fp / (fp + tn)


def acc_states(pred: np.ndarray, truth: np.ndarray, kind: str,
               stochastic: bool = False,
               rng: np.random.Generator | None = None) -> float:
    """Discrete: 1 - MAE of class indicators (argmax, or sampled); continuous: MSE."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"acc_states: shape mismatch {pred.shape} vs {truth.shape}")
    if kind == "continuous":
        return float(((pred - truth) ** 2).mean())
    if kind != "discrete":
        raise ValueError(f"acc_states: unknown kind {kind!r}")
    if stochastic:
        if rng is None:
            raise ValueError("acc_states: stochastic sampling needs an rng")
        flat = pred.reshape(-1, pred.shape[-1])
        rows = flat / flat.sum(axis=1, keepdims=True)
        draws = rng.random(len(rows))
        classes = (rows.cumsum(axis=1) < draws[:, None]).sum(axis=1)
        classes = classes.reshape(pred.shape[:-1])
    else:
        classes = pred.argmax(axis=-1)
    truth_classes = truth.argmax(axis=-1)
    return float(1.0 - (classes != truth_classes).mean())


@dataclass
class MetricsReport:
    task: str
    auc: float | None = None
    acc_net: float | None = None
    tpr: float | None = None
    fpr: float | None = None
    acc_states: float | None = None
    acc_states_kind: str = "discrete"
    missing_auc: float | None = None
    missing_acc_net: float | None = None
    missing_tpr: float | None = None
    missing_fpr: float | None = None
    missing_acc_states: float | None = None
    observed_acc_states: float | None = None
    alignment: list[int] | None = None
    alignment_hamming: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def write_metrics(path: str | Path, report: MetricsReport,
                  config: dict | None = None, run_id: str | None = None) -> None:
    payload = report.to_dict()
    payload["config"] = config
    payload["run_id"] = run_id
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def _try(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def predict_rollouts(dyn: DynamicsLearner, adj: np.ndarray, records: np.ndarray,
                     horizon: int, chunk: int = 256) -> np.ndarray:
    """Autoregressive predictions [S, P, N, d] without gradient tracking."""
    out = np.empty((len(records), horizon) + records.shape[2:])
    with frozen(dyn.parameters()):
        for start in range(0, len(records), chunk):
            recs = records[start:start + chunk]
            preds = stack_predictions(rollout(adj, recs[:, 0], horizon, dyn))
            out[start:start + chunk] = preds.value
    return out


def state_kind(dynamics: str) -> str:
    return "discrete" if dynamics == "voter" else "continuous"


def evaluate_reconstruction(gen: GumbelGenerator, dyn: DynamicsLearner,
                            ds: Dataset, truth_adj, eval_seed: int = 0,
                            stochastic_states: bool = False) -> MetricsReport:
    """Score edge recovery and test-split state prediction for a trained pair."""
    truth = truth_adj.matrix if hasattr(truth_adj, "matrix") else np.asarray(truth_adj)
    mask = upper_offdiag_mask(ds.n)
    probs = gen.edge_probabilities()
    hard = gen.sample_hard(np.random.default_rng(eval_seed))

    report = MetricsReport(task="reconstruct",
                           acc_states_kind=state_kind(ds.dynamics))
    report.auc = _try(auc, probs, truth, mask)
    report.acc_net = _try(acc_net, hard, truth, mask)
    rates = _try(tpr_fpr, hard, truth, mask)
    if rates is not None:
        report.tpr, report.fpr = rates

    horizon = ds.record_length - 1
    records = ds.states[ds.split.test].astype(np.float64)
    if len(records) and horizon >= 1:
        preds = predict_rollouts(dyn, hard, records, horizon)
        report.acc_states = acc_states(
            preds, records[:, 1:horizon + 1], report.acc_states_kind,
            stochastic=stochastic_states,
            rng=np.random.default_rng([eval_seed, 1]))
    return report


def canonical_states(ds: Dataset, part: PartitionedGraph) -> np.ndarray:
    """Full ground-truth states reordered to canonical (observed-first) indexing."""
    return ds.states[:, :, part.canonical_order(), :].astype(np.float64)


def evaluate_completion(gen: GumbelGenerator, dyn: DynamicsLearner,
                        test_states: InitialStateLearner, part: PartitionedGraph,
                        ds: Dataset, eval_seed: int = 0,
                        stochastic_states: bool = False) -> MetricsReport:
    """Align the estimated graph to truth, then score missing-block recovery
    and observed/missing state prediction on the test split."""
    truth = part.canonical_adjacency()
    n, oc = part.n, part.observed_count
    est_hard = gen.sample_hard(np.random.default_rng(eval_seed))
    alignment = align_missing(est_hard, truth, oc)
    aligned_hard = apply_alignment(est_hard, alignment)
    aligned_probs = apply_alignment(gen.edge_probabilities(), alignment)

    full_mask = upper_offdiag_mask(n)
    mmask = missing_pair_mask(n, oc)
    kind = state_kind(ds.dynamics)
    report = MetricsReport(task="complete", acc_states_kind=kind,
                           alignment=list(alignment.mapping),
                           alignment_hamming=alignment.total_hamming)
    report.auc = _try(auc, aligned_probs, truth, full_mask)
    report.acc_net = _try(acc_net, aligned_hard, truth, full_mask)
    rates = _try(tpr_fpr, aligned_hard, truth, full_mask)
    if rates is not None:
        report.tpr, report.fpr = rates
    report.missing_auc = _try(auc, aligned_probs, truth, mmask)
    report.missing_acc_net = _try(acc_net, aligned_hard, truth, mmask)
    mrates = _try(tpr_fpr, aligned_hard, truth, mmask)
    if mrates is not None:
        report.missing_tpr, report.missing_fpr = mrates

    horizon = ds.record_length - 1
    test_idx = ds.split.test
    if len(test_idx) and horizon >= 1 and part.missing_count > 0:
        canon = canonical_states(ds, part)[test_idx]
        with frozen(dyn.parameters() + test_states.parameters()):
            x_m0 = test_states.render(test_idx).value
        x0_full = np.concatenate([canon[:, 0, :oc], x_m0], axis=1)
        records = np.concatenate([x0_full[:, None], canon[:, 1:horizon + 1]], axis=1)
        preds = predict_rollouts(dyn, est_hard, records, horizon)
        perm = alignment_permutation(alignment, n)
        preds = preds[:, :, perm, :]
        truth_frames = canon[:, 1:horizon + 1]
        srng = np.random.default_rng([eval_seed, 1])
        report.observed_acc_states = acc_states(
            preds[:, :, :oc], truth_frames[:, :, :oc], kind,
            stochastic=stochastic_states, rng=srng)
        report.missing_acc_states = acc_states(
            preds[:, :, oc:], truth_frames[:, :, oc:], kind,
            stochastic=stochastic_states, rng=srng)
        report.acc_states = acc_states(preds, truth_frames, kind,
                                       stochastic=stochastic_states, rng=srng)
    return report
