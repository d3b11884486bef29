"""Losses, AdamW, the warm-restart cosine schedule, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_EPS, Tensor
from .checkpoint import load_state_dict, state_dict
from .data import PAD, FeatureBundle
from .model import Batch, Scout

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state


# --------------------------------------------------------------------- losses

@dataclass
class LossBreakdown:
    nll: float
    gate_entropy: float
    total: float
    lambda_g: float


def nll_loss(logits: Tensor, targets: np.ndarray, pad_id: int = PAD) -> Tensor:
    """Mean negative log-likelihood over non-PAD target positions.

    Raises:
        ValueError: if every target is PAD.
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ad.ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    keep = np.nonzero(targets != pad_id)
    if keep[0].size == 0:
        raise ValueError("all targets are PAD; the mean NLL is undefined")
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.getitem(logp, keep + (targets[keep],))
    return -ad.mean(picked)


def gate_entropy_loss(gates, mask: np.ndarray | None = None, eps: float = LOG_EPS) -> Tensor:
    """Mean over layers, tokens and heads of the gate entropy ``-sum w log(w + eps)``.

    Args:
        gates: one ``(..., T, H, 3)`` tensor/array or a list of them (one per layer).
        mask: optional boolean ``(..., T)`` selecting the positions that count.
    """
    if isinstance(gates, (Tensor, np.ndarray)) or hasattr(gates, "weights"):
        gates = [gates]
    per_layer = []
    for g in gates:
        g = getattr(g, "weights", g)
        g = ad.as_tensor(g)
        ent = ad.entropy(g, axis=-1, eps=eps)          # (..., T, H)
        if mask is not None:
            idx = np.nonzero(mask)
            ent = ad.getitem(ent, idx)
        per_layer.append(ad.mean(ent))
    total = per_layer[0]
    for term in per_layer[1:]:
        total = total + term
    return total * (1.0 / len(per_layer))


def total_loss(logits: Tensor, targets: np.ndarray, gates: Sequence, lambda_g: float,
               pad_id: int = PAD) -> tuple[Tensor, LossBreakdown]:
    nll = nll_loss(logits, targets, pad_id)
    if gates:
        gate = gate_entropy_loss(list(gates), np.asarray(targets) != pad_id)
    else:
        gate = Tensor(0.0)
    total = nll + lambda_g * gate
    return total, LossBreakdown(nll.item(), gate.item(), total.item(), lambda_g)


# ------------------------------------------------------------------ optimiser

class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, no_decay: set[str] | frozenset = frozenset()):
        self.params = dict(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.no_decay = set(no_decay)
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step_count = 0

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise DivergenceError(f"non-finite gradient in {len(bad)} tensors, e.g. {bad[:3]}")
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay and name not in self.no_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v.copy() for k, v in self.m.items()}
        out.update({f"v.{k}": v.copy() for k, v in self.v.items()})
        out["step"] = np.array(float(self.step_count))
        return out

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k][...] = state[f"m.{k}"]
            self.v[k][...] = state[f"v.{k}"]
        self.step_count = int(state["step"])


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamW,
               lr: float | None = None) -> None:
    state.step(grads, lr)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# ------------------------------------------------------------------- schedule

@dataclass(frozen=True)
class LrSchedule:
    lr_max: float = 3e-3
    lr_min: float = 1e-5
    t0: float = 50
    t_mult: float = 2

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ValueError("need 0 <= lr_min <= lr_max")
        if self.t0 <= 0 or self.t_mult < 1:
            raise ValueError("need t0 > 0 and t_mult >= 1")


def cosine_lr(step: float, schedule: LrSchedule) -> float:
    """Cosine annealing with warm restarts.

    Cycle ``i`` covers ``(start_i, start_i + T_i]`` (the first also includes 0),
    so the last point of a cycle reaches ``lr_min`` and the restart happens
    immediately after it.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    t_cur, t_i = float(step), float(schedule.t0)
    while t_cur > t_i:
        t_cur -= t_i
        t_i *= schedule.t_mult
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + span * (1.0 + math.cos(math.pi * t_cur / t_i)) / 2.0


# --------------------------------------------------------------------- loop

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr_max: float = 3e-3
    lr_min: float = 1e-5
    t0: float = 50
    t_mult: float = 2
    weight_decay: float = 0.01
    lambda_g: float = 0.01
    grad_clip: float | None = 1.0
    seed: int = 0

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_max, self.lr_min, self.t0, self.t_mult)


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    train_gate: float
    val_nll: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_nll!r}\t{self.train_gate!r}\t{self.val_nll!r}\t{self.lr!r}"


@dataclass
class TrainResult:
    model: Scout
    optimizer: AdamW
    log: list[EpochLog] = field(default_factory=list)
    best_state: dict[str, np.ndarray] | None = None
    best_epoch: int = -1
    best_val: float = math.inf
    visits: list[list[str]] = field(default_factory=list)

    def load_best(self) -> None:
        if self.best_state is not None:
            load_state_dict(self.model.parameters(), self.best_state)


def batches(bundles: Sequence[FeatureBundle], size: int, order: np.ndarray | None = None):
    idx = np.arange(len(bundles)) if order is None else order
    for start in range(0, len(idx), size):
        yield [bundles[i] for i in idx[start:start + size]]


def evaluate_nll(model: Scout, bundles: Sequence[FeatureBundle], batch_size: int = 16) -> float:
    """Token-weighted mean NLL with dropout off."""
    total, count = 0.0, 0
    for chunk in batches(bundles, batch_size):
        batch = Batch.from_bundles(chunk)
        targets = batch.tokens[:, 1:]
        n = int(np.sum(targets != PAD))
        total += nll_loss(model(batch).logits, targets).item() * n
        count += n
    return total / count


def mean_gate_entropy(model: Scout, bundles: Sequence[FeatureBundle], batch_size: int = 16) -> float:
    """Teacher-forced mean gate entropy with dropout off (0 for ungated models)."""
    vals, weights = [], []
    for chunk in batches(bundles, batch_size):
        batch = Batch.from_bundles(chunk)
        out = model(batch)
        if not out.gates:
            return 0.0
        mask = batch.tokens[:, 1:] != PAD
        vals.append(gate_entropy_loss(out.gates, mask).item())
        weights.append(int(mask.sum()))
    return float(np.average(vals, weights=weights))


def train(model: Scout, train_set: Sequence[FeatureBundle], val_set: Sequence[FeatureBundle],
          config: TrainConfig, optimizer: AdamW | None = None, start_epoch: int = 0,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train ``model`` in place; keeps the parameters with the lowest validation NLL.

    The shuffle and dropout streams are seeded from ``config.seed`` and the
    epoch index, so resumed runs replay exactly the same batches.

    Raises:
        DivergenceError: on a non-finite loss; ``error.state`` holds the parameters.
    """
    if not train_set:
        raise ValueError("empty training split")
    params = model.parameters()
    if optimizer is None:
        optimizer = AdamW(params, config.lr_max, weight_decay=config.weight_decay,
                          no_decay=model.no_decay())
    result = TrainResult(model, optimizer)
    selection = val_set if val_set else train_set
    n_batches = math.ceil(len(train_set) / config.batch_size)
    schedule = config.schedule
    for epoch in range(start_epoch, config.epochs):
        shuffle = np.random.default_rng([config.seed, epoch, 1])
        drop_rng = np.random.default_rng([config.seed, epoch, 2])
        order = shuffle.permutation(len(train_set))
        result.visits.append([train_set[i].case_id for i in order])
        sum_nll = sum_gate = 0.0
        tokens = 0
        for i, chunk in enumerate(batches(train_set, config.batch_size, order)):
            lr = cosine_lr(epoch + i / n_batches, schedule)
            batch = Batch.from_bundles(chunk)
            targets = batch.tokens[:, 1:]
            out = model(batch, model.context(True, drop_rng))
            loss, parts = total_loss(out.logits, targets, out.gates, config.lambda_g)
            if not math.isfinite(parts.total):
                raise DivergenceError(f"non-finite loss at epoch {epoch} batch {i}",
                                      state_dict(params))
            grads = ad.backward(loss, params)
            if config.grad_clip is not None:
                clip_grad_norm(grads, config.grad_clip)
            try:
                optimizer.step(grads, lr)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), state_dict(params)) from exc
            n = int(np.sum(targets != PAD))
            sum_nll += parts.nll * n
            sum_gate += parts.gate_entropy * n
            tokens += n
        val_nll = evaluate_nll(model, selection)
        entry = EpochLog(epoch, sum_nll / tokens, sum_gate / tokens, val_nll,
                         cosine_lr(epoch, schedule))
        result.log.append(entry)
        log.debug("epoch %d nll %.4f gate %.4f val %.4f", epoch, entry.train_nll,
                  entry.train_gate, val_nll)
        if on_epoch is not None:
            on_epoch(entry)
        if val_nll < result.best_val:
            result.best_val, result.best_epoch = val_nll, epoch
            result.best_state = state_dict(params)
    return result
