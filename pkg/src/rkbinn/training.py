"""One-step supervised training with minibatch Adam.

Every trainable model in the package exposes the same small surface:
``params()`` (dict of arrays updated in place), ``copy()``,
``to_normalized(X)`` and ``loss_and_grad(Zin, Zout)`` working in the
model's normalized coordinates. :func:`train` only relies on that.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bilinear import RKCoefficients, RKModel
from .dynamics import Trajectory
from .numerics import DimensionError, make_rng

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    """Non-finite loss during training."""


@dataclass
class PairDataset:
    inputs: np.ndarray
    targets: np.ndarray
    h: float

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.shape != self.targets.shape or self.inputs.ndim != 2:
            raise DimensionError("inputs and targets must be equal (n, d) arrays")
        if len(self.inputs) < 1:
            raise ValueError("a pair dataset needs at least one pair")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def make_pairs(traj: Trajectory) -> PairDataset:
    if len(traj) < 2:
        raise ValueError("need at least 2 states to form a pair")
    return PairDataset(traj.states[:-1], traj.states[1:], traj.h)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    incremental: bool = False
    # epochs spent on the one-block model before switching to four blocks
    incremental_epochs: int = 20
    shuffle: bool = True
    val_fraction: float = 0.05

    def __post_init__(self):
        if min(self.learning_rate, self.adam_eps) <= 0:
            raise ValueError("learning rate and eps must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_update(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam step, applied in place to ``params``."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
    return state


@dataclass
class TrainResult:
    model: object
    history: list

    @property
    def final_train_mse(self) -> float:
        return self.history[-1]["train_mse"]

    @property
    def best_val_mse(self) -> float:
        vals = [h["val_mse"] for h in self.history if h["val_mse"] is not None]
        return min(vals) if vals else float("nan")


def _full_loss(model, Zin, Zout, chunk=8192) -> float:
    total = 0.0
    for s in range(0, len(Zin), chunk):
        loss, _ = model.loss_and_grad(Zin[s:s + chunk], Zout[s:s + chunk])
        total += loss * min(chunk, len(Zin) - s)
    return total / len(Zin)


def _snapshot(model) -> dict:
    return {k: v.copy() for k, v in model.params().items()}


def _restore(model, snap: dict) -> None:
    for k, v in model.params().items():
        v[...] = snap[k]


def train(model, data: PairDataset, config: TrainConfig, phase: str = "") -> TrainResult:
    """Minibatch Adam on the one-step MSE; the model is updated in place.

    The last ``val_fraction`` of the pairs is held out; the parameters
    with the lowest held-out loss are restored at the end. History entry
    0 is the loss of the initial parameters on the full training split.
    """
    Zin = model.to_normalized(data.inputs)
    Zout = model.to_normalized(data.targets)
    n_val = int(len(data) * config.val_fraction)
    n_tr = len(data) - n_val
    tr_in, tr_out = Zin[:n_tr], Zout[:n_tr]
    va_in, va_out = Zin[n_tr:], Zout[n_tr:]
    rng = make_rng(config.seed, "shuffle" + phase)
    params = model.params()
    state = AdamState()

    def val_loss():
        return _full_loss(model, va_in, va_out) if n_val else None

    start = time.perf_counter()
    history = [dict(epoch=0, train_mse=_full_loss(model, tr_in, tr_out), val_mse=val_loss(),
                    seconds=0.0, phase=phase)]
    best = history[0]["val_mse"]
    best_snap = _snapshot(model) if n_val else None
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_tr) if config.shuffle else np.arange(n_tr)
        seen, acc = 0, 0.0
        for b, s in enumerate(range(0, n_tr, bs)):
            idx = order[s:s + bs]
            loss, grads = model.loss_and_grad(tr_in[idx], tr_out[idx])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_update(params, grads, state, config)
            acc += loss * len(idx)
            seen += len(idx)
        entry = dict(epoch=epoch, train_mse=acc / seen, val_mse=val_loss(),
                     seconds=time.perf_counter() - start, phase=phase)
        history.append(entry)
        if n_val and entry["val_mse"] < best:
            best = entry["val_mse"]
            best_snap = _snapshot(model)
        log.debug("epoch %d train %.3e val %s", epoch, entry["train_mse"], entry["val_mse"])
    if best_snap is not None:
        _restore(model, best_snap)
    return TrainResult(model, history)


def train_binn(model: RKModel, data: PairDataset, config: TrainConfig) -> TrainResult:
    """Train an :class:`RKModel`, optionally one-block first then four-block.

    In incremental mode the shared block is first fitted inside a
    one-block (Euler-shaped) model for ``incremental_epochs`` epochs and
    then keeps training inside ``model`` for the remaining epochs.
    """
    if not np.isclose(data.h, model.dt, rtol=1e-9, atol=0.0):
        raise ValueError(f"data step {data.h} differs from model dt {model.dt}")
    if not (config.incremental and model.n_blocks == 4):
        return train(model, data, config)
    euler = RKModel(model.block, 1, model.dt, RKCoefficients.default(1), model.norm)
    n1 = min(config.incremental_epochs, config.epochs)
    first = train(euler, data, replace(config, epochs=n1), phase="blocks1")
    second = train(model, data, replace(config, epochs=config.epochs - n1), phase="blocks4")
    return TrainResult(model, first.history + second.history)


def write_training_log(history: list, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse", "seconds"])
        for i, h in enumerate(history):
            val = "" if h["val_mse"] is None else f"{h['val_mse']:.17g}"
            w.writerow([i, f"{h['train_mse']:.17g}", val, f"{h['seconds']:.3f}"])


def gradcheck_report(model, sample, eps: float = 1e-5) -> float:
    """Largest per-tensor relative error between analytic and central-difference gradients.

    ``sample`` is an ``(inputs, targets)`` pair in the model's normalized
    coordinates. The error for a tensor is ``|a - n| / (|a| + |n|)``
    (Euclidean norms), taken as 0 when both gradients vanish.
    """
    Zin, Zout = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in sample)
    _, grads = model.loss_and_grad(Zin, Zout)
    worst = 0.0
    for name, p in model.params().items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = model.loss_and_grad(Zin, Zout)
            flat[i] = orig - eps
            lm, _ = model.loss_and_grad(Zin, Zout)
            flat[i] = orig
            nflat[i] = (lp - lm) / (2 * eps)
        a = np.asarray(grads[name])
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        err = 0.0 if denom == 0 else float(np.linalg.norm(a - numeric) / denom)
        worst = max(worst, err)
    return worst
