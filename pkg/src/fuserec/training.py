"""Objective, optimizer, and training loop.

Loss semantics: negative log-likelihood summed over the targets inside a
sequence, averaged over the sequences of a mini-batch, with the Y and
merged heads weighted by lambda1/lambda2. ``backward_step`` itself returns
SUM-reduced gradients (doubling a batch doubles them); ``fit`` rescales by
the batch size before the optimizer step so lambda semantics stay stable
across batch sizes.

L2 regularization is decoupled weight decay: parameters shrink by
(1 - lr * l2) before each Adam update. The reference path is
single-threaded and bit-deterministic given the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import EmbeddingTable, ItemCatalog
from .errors import NumericalError
from .model import VIEWS, CrossDomainModel, HeadLosses
from .rng import substream
from .scoring import ProbDist

PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference experimental setup."""

    id_dim: int = 256
    img_dim: int = 512
    alpha: float = 0.7
    lambda1: float = 0.1
    lambda2: float = 0.4
    batch_size: int = 256
    dropout: float = 0.3
    l2: float = 1e-4
    lr: float = 1e-3
    epochs: int = 100
    max_len: int = 50
    seed: int = 0
    temperature: float = 1.0
    clip_norm: float = 5.0
    learn_scale: bool = False
    target_domain: str = "X"
    views: tuple[str, ...] = VIEWS
    use_image: bool = True
    log_timing: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be non-negative")
        for name in ("id_dim", "img_dim", "batch_size", "epochs", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr <= 0 or self.temperature <= 0:
            raise ValueError("lr and temperature must be positive")
        if self.target_domain not in ("X", "Y"):
            raise ValueError("target_domain must be 'X' or 'Y'")


@dataclass
class LossReport:
    epoch: int
    step: int
    loss_x: float
    loss_y: float
    loss_xy: float
    total: float
    valid_mrr: float | None
    wall_ms: int

    def log_line(self) -> str:
        mrr = "na" if self.valid_mrr is None else f"{self.valid_mrr:.12g}"
        return (f"epoch={self.epoch} step={self.step} "
                f"loss_x={self.loss_x:.12g} loss_y={self.loss_y:.12g} "
                f"loss_xy={self.loss_xy:.12g} total={self.total:.12g} "
                f"valid_mrr={mrr} wall_ms={self.wall_ms}")


@dataclass
class ClampCounter:
    events: int = 0


def nll_head_loss(dists: list[ProbDist], targets: list[int],
                  clamp: ClampCounter | None = None) -> float:
    """Sum of -log P(target) over the head's prediction cases.

    Zero probabilities are clamped at 1e-12 (and counted) so the loss stays
    finite; a target outside the distribution's candidate set is an error.
    """
    total = 0.0
    for dist, target in zip(dists, targets):
        pos = np.flatnonzero(dist.candidates.ids == target)
        if len(pos) == 0:
            raise ValueError(f"target item {target} outside candidate set "
                             f"{dist.candidates.label}")
        p = float(dist.probs[pos[0]])
        if p < PROB_CLAMP:
            p = PROB_CLAMP
            if clamp is not None:
                clamp.events += 1
        total += -np.log(p)
    return float(total)


def total_loss(loss_x: float, loss_y: float, loss_xy: float,
               lambda1: float, lambda2: float) -> float:
    """Weighted sum of the three head losses."""
    vals = (loss_x, loss_y, loss_xy, lambda1, lambda2)
    if not all(np.isfinite(v) for v in vals):
        raise ValueError("total_loss requires finite inputs")
    return float(loss_x + lambda1 * loss_y + lambda2 * loss_xy)


def backward_step(model: CrossDomainModel, batch,
                  training: bool = False,
                  dropout_rng: np.random.Generator | None = None,
                  ) -> tuple[HeadLosses, dict[str, np.ndarray]]:
    """Forward plus analytic backward over a batch; SUM reduction.

    Returns per-head losses and a gradient for every trainable tensor. Any
    non-finite gradient aborts with a diagnostic naming the tensor.
    """
    report, grads = model.head_losses_and_grads(batch, training=training,
                                                dropout_rng=dropout_rng)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
    return report, grads


def compute_loss(model: CrossDomainModel, batch) -> float:
    """SUM-reduced weighted objective, forward only (used by gradient checks)."""
    report, _ = model.head_losses_and_grads(batch, compute_grads=False)
    return report.objective()


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={n: np.zeros_like(p) for n, p in params.items()},
                   v={n: np.zeros_like(p) for n, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, l2: float = 0.0) -> None:
    """One bias-corrected Adam update, in place, with decoupled L2 decay."""
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter "
                             f"{name!r} of shape {p.shape}")
        if l2 > 0.0:
            p *= 1.0 - lr * l2
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most clip_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if clip_norm > 0.0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class FitResult:
    model: CrossDomainModel
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray]
    history: list[LossReport]
    best_valid_mrr: float | None
    clamp_events: int


def fit(config: TrainConfig, split, catalog: ItemCatalog,
        img_table: EmbeddingTable | None,
        log_lines: list[str] | None = None) -> FitResult:
    """Train on the split's train set, tracking the best validation MRR.

    Keeps a snapshot of the parameters with the best validation MRR in the
    target domain (the final epoch when there is no validation data). The
    run is deterministic given config.seed.
    """
    from .evaluation import evaluate  # local import: evaluation depends on the model

    if not split.train:
        raise ValueError("training split is empty")
    model = CrossDomainModel.build(
        catalog, config.id_dim, img_table,
        config.max_len, config.seed, alpha=config.alpha,
        lambda1=config.lambda1, lambda2=config.lambda2,
        temperature=config.temperature, dropout=config.dropout,
        views=config.views, use_image=config.use_image,
        learn_scale=config.learn_scale)
    params = model.trainable_tensors()
    state = AdamState.for_params(params)
    dropout_rng = substream(config.seed, "dropout")
    shuffle_rng = substream(config.seed, "batches")

    history: list[LossReport] = []
    best_state = model.snapshot()
    best_mrr: float | None = None
    clamp_events = 0
    step = 0
    n = len(split.train)
    for epoch in range(1, config.epochs + 1):
        t0 = time.monotonic()
        order = shuffle_rng.permutation(n)
        sums = {v: 0.0 for v in VIEWS}
        for start in range(0, n, config.batch_size):
            batch = [split.train[int(i)] for i in order[start:start + config.batch_size]]
            report, grads = backward_step(model, batch, training=True,
                                          dropout_rng=dropout_rng)
            clamp_events += report.clamp_events
            inv_b = 1.0 / len(batch)
            for g in grads.values():
                g *= inv_b
            clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, state, lr=config.lr, l2=config.l2)
            step += 1
            for v in VIEWS:
                sums[v] += report.by_view.get(v, 0.0)
        loss_x, loss_y, loss_xy = (sums["X"] / n, sums["Y"] / n, sums["XY"] / n)
        weights = model.head_weights
        total = sum(weights.get(v, 0.0) * {"X": loss_x, "Y": loss_y, "XY": loss_xy}[v]
                    for v in VIEWS)
        if not np.isfinite(total):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")

        valid_mrr: float | None = None
        if split.valid:
            valid_report = evaluate(model, split.valid, config.target_domain)
            valid_mrr = valid_report.mrr
            if best_mrr is None or valid_mrr > best_mrr:
                best_mrr = valid_mrr
                best_state = model.snapshot()
        wall_ms = int((time.monotonic() - t0) * 1000) if config.log_timing else 0
        report_row = LossReport(epoch=epoch, step=step, loss_x=loss_x, loss_y=loss_y,
                                loss_xy=loss_xy, total=total, valid_mrr=valid_mrr,
                                wall_ms=wall_ms)
        history.append(report_row)
        if log_lines is not None:
            log_lines.append(report_row.log_line())
    if best_mrr is None:
        best_state = model.snapshot()
    return FitResult(model=model, best_state=best_state, final_state=model.snapshot(),
                     history=history, best_valid_mrr=best_mrr,
                     clamp_events=clamp_events)
