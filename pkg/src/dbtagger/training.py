"""Optimizers and the two-phase training schedule: Adadelta for the first
phase, a fresh Nadam for the rest.  Runs are fully determined by
(seed, config, dataset)."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, split_folds
from .numerics import Tensor, backward
from .tagger import MaskStream, TaskWeights


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    dropout: float = 0.5
    hidden: int = 100
    weights: tuple[float, float, float] = (0.1, 0.2, 0.7)
    switch_epoch: int = 50     # last Adadelta epoch
    epochs: int = 150
    seed: int = 13
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    nadam_alpha: float = 0.002
    nadam_beta1: float = 0.9
    nadam_beta2: float = 0.999
    nadam_eps: float = 1e-8
    patience: int | None = None
    stop_at_accuracy: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0 < self.switch_epoch <= self.epochs:
            raise ValueError(
                f"switch epoch {self.switch_epoch} must lie in 1..{self.epochs}"
            )
        TaskWeights(*self.weights)  # validates non-negativity and the sum

    def task_weights(self) -> TaskWeights:
        return TaskWeights(*self.weights)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: str
    mean_loss: float
    val_accuracy: float


def history_lines(history: list[EpochRecord]) -> str:
    out = ["epoch,phase,mean_loss,val_accuracy"]
    for rec in history:
        out.append(f"{rec.epoch},{rec.phase},{rec.mean_loss!r},{rec.val_accuracy!r}")
    return "\n".join(out) + "\n"


class AdadeltaState:
    """Per-parameter accumulators of squared gradients and squared updates."""

    def __init__(self, params: list[Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.acc_grad = [np.zeros(p.shape) for p in params]
        self.acc_update = [np.zeros(p.shape) for p in params]


def adadelta_step(state: AdadeltaState, params: list[Tensor], grads: list[np.ndarray]) -> None:
    """One in-place Adadelta update."""
    rho, eps = state.rho, state.eps
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        state.acc_grad[i] = rho * state.acc_grad[i] + (1.0 - rho) * g * g
        delta = -(np.sqrt(state.acc_update[i] + eps) / np.sqrt(state.acc_grad[i] + eps)) * g
        state.acc_update[i] = rho * state.acc_update[i] + (1.0 - rho) * delta * delta
        p.data = p.data + delta


class NadamState:
    """Adam moments with a Nesterov-corrected update direction."""

    def __init__(
        self,
        params: list[Tensor],
        alpha: float = 0.002,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]


def nadam_step(state: NadamState, params: list[Tensor], grads: list[np.ndarray]) -> None:
    """One in-place Nadam update."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1 ** (t + 1))
        v_hat = state.v[i] / (1.0 - b2**t)
        direction = b1 * m_hat + (1.0 - b1) * g / (1.0 - b1**t)
        p.data = p.data - state.alpha * direction / (np.sqrt(v_hat) + state.eps)


def token_accuracy(trainable, dataset: Dataset) -> float:
    """Fraction of tokens tagged correctly at the trainable's own level."""
    correct = total = 0
    for query in dataset.queries:
        predicted = trainable.predict_tags(query.words)
        gold = trainable.gold_tags(query)
        correct += sum(1 for p, g in zip(predicted, gold) if p == g)
        total += len(gold)
    return correct / total if total else 1.0


def train(
    trainable,
    dataset: Dataset,
    config: TrainConfig,
    val: Dataset | None = None,
) -> list[EpochRecord]:
    """Fit in place and return the per-epoch history.

    Epochs 1..switch use Adadelta, the rest Nadam (fresh state at the
    switch).  Each epoch shuffles queries with the seeded stream, batches
    them, sums per-query losses over a batch and applies one optimizer
    step per batch.  ``val_accuracy`` is measured on ``val`` when given,
    else on the training set.
    """
    params = [t for _, t in trainable.parameters()]
    shuffle_rng = random.Random(config.seed)
    mask_stream = MaskStream(config.dropout, np.random.default_rng([config.seed, 0xD0]))
    adadelta = AdadeltaState(params, rho=config.adadelta_rho, eps=config.adadelta_eps)
    nadam: NadamState | None = None
    eval_set = val if val is not None else dataset
    history: list[EpochRecord] = []
    best_acc = -1.0
    stale = 0

    for epoch in range(1, config.epochs + 1):
        if epoch <= config.switch_epoch:
            phase = "adadelta"
        else:
            phase = "nadam"
            if nadam is None:
                nadam = NadamState(
                    params,
                    alpha=config.nadam_alpha,
                    beta1=config.nadam_beta1,
                    beta2=config.nadam_beta2,
                    eps=config.nadam_eps,
                )
        order = list(dataset.queries)
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            for p in params:
                p.zero_grad()
            for query in batch:
                loss, tape = trainable.query_loss(query, mask_stream)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss {value} at epoch {epoch} on query "
                        f"{' '.join(query.words)!r}"
                    )
                epoch_loss += value
                backward(tape, loss)
            grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
            if phase == "adadelta":
                adadelta_step(adadelta, params, grads)
            else:
                nadam_step(nadam, params, grads)
        mean_loss = epoch_loss / len(order)
        val_acc = token_accuracy(trainable, eval_set)
        history.append(EpochRecord(epoch=epoch, phase=phase, mean_loss=mean_loss, val_accuracy=val_acc))
        if config.stop_at_accuracy is not None and val_acc >= config.stop_at_accuracy:
            break
        if config.patience is not None:
            if val_acc > best_acc:
                best_acc = val_acc
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break
    return history


def thread_count() -> int:
    raw = os.environ.get("DBTAG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def cross_validate(
    dataset: Dataset,
    schema,
    embeddings,
    config: TrainConfig,
    k: int = 6,
    variant: str = "DBTagger",
):
    """Train on k-1 folds and score the held-out fold, k times.

    Returns (per-fold MetricsReport list, averaged MetricsReport).  Folds
    share nothing mutable, so they may run in parallel (DBTAG_THREADS).
    """
    from .evaluation import average_reports, score
    from .variants import fit_variant

    folds = split_folds(dataset, k, config.seed)
    jobs = [
        (variant, train_ds, test_ds, dataset, schema, embeddings, config, fold_idx)
        for fold_idx, (train_ds, test_ds) in enumerate(folds)
    ]
    workers = min(thread_count(), k)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_fold, jobs))
    else:
        reports = [_run_fold(job) for job in jobs]
    return reports, average_reports(reports)


def _run_fold(job):
    from .evaluation import score
    from .variants import fit_variant

    variant, train_ds, test_ds, full_ds, schema, embeddings, config, _fold_idx = job
    predictor = fit_variant(variant, train_ds, full_ds, schema, embeddings, config)
    predictions = [predictor.predict_tags(q.words) for q in test_ds.queries]
    return score(predictions, test_ds)
