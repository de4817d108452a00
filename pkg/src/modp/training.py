"""Losses, analytic gradients and the two-phase training schedule.

Phase one fits rows with mean-square error (inputs and targets are the same
batch). Phase two switches to a crosstab loss: the mean squared pooled
two-proportion z-value between the batch's predicted and true crosstabs,
with within-question cells masked out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dataset import ResponseMatrix
from .errors import ConfigError, DataValidationError, NumericalError
from .model import ForwardCache, MultiBladeModel, block_mask

MSE = "mse"
ZVAL = "zval"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4096
    mse_epochs: int = 30
    zval_epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"
    seed: int = 0
    pseudocount_loss: float = 0.01
    variance_floor: float = 1e-5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mse_epochs < 0 or self.zval_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.pseudocount_loss <= 0 or self.variance_floor <= 0:
            raise ConfigError("pseudocount_loss and variance_floor must be > 0")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be finite and > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def _check_shapes(output: np.ndarray, target: np.ndarray) -> None:
    if output.ndim != 2 or target.ndim != 2 or output.shape[1] != target.shape[1]:
        raise DataValidationError(f"shape mismatch: output {output.shape}, target {target.shape}")


def mse_loss(output: np.ndarray, target) -> float:
    target = target.as_float() if isinstance(target, ResponseMatrix) else np.asarray(target, float)
    if output.shape != target.shape:
        raise DataValidationError(f"shape mismatch: output {output.shape}, target {target.shape}")
    return float(np.mean((output - target) ** 2))


def mse_grad(output: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (output - target) / output.size


def _zval_terms(output, target, block_starts, pseudocount, variance_floor):
    _check_shapes(output, target)
    n_t, n_o = target.shape[0], output.shape[0]
    if n_t < 1 or n_o < 1:
        raise DataValidationError("zval loss needs at least one row in output and target")
    cross_o = output.T @ output + pseudocount
    cross_t = target.T @ target + pseudocount
    diff = cross_t / n_t - cross_o / n_o
    pooled = (cross_t + cross_o) / (n_t + n_o)
    inv = 1.0 / n_t + 1.0 / n_o
    var = pooled * (1.0 - pooled) * inv + variance_floor
    keep = ~block_mask(block_starts)
    return diff, pooled, var, keep, inv, n_t, n_o


def zval_loss(output: np.ndarray, target, block_starts: Sequence[int],
              pseudocount: float = 0.01, variance_floor: float = 1e-5) -> float:
    target = target.as_float() if isinstance(target, ResponseMatrix) else np.asarray(target, float)
    diff, _, var, keep, *_ = _zval_terms(output, target, block_starts, pseudocount, variance_floor)
    zsq = np.where(keep, diff ** 2 / var, 0.0)
    return float(np.mean(zsq))


def zval_grad(output: np.ndarray, target: np.ndarray, block_starts: Sequence[int],
              pseudocount: float = 0.01, variance_floor: float = 1e-5) -> np.ndarray:
    """d(zval_loss)/d(output); only the output crosstab depends on the parameters."""
    diff, pooled, var, keep, inv, n_t, n_o = _zval_terms(output, target, block_starts,
                                                         pseudocount, variance_floor)
    dvar = (1.0 - 2.0 * pooled) * inv / (n_t + n_o)
    g = (-2.0 * diff / (n_o * var) - diff ** 2 * dvar / var ** 2) * keep / diff.size
    return output @ (g + g.T)


def backward_from_output(model: MultiBladeModel, cache: ForwardCache,
                         d_out: np.ndarray) -> list[np.ndarray]:
    """Chain ``d_out`` back through gating and blades; order matches ``model.parameters()``."""
    x, w = cache.x, cache.weights
    grads: list[np.ndarray] = []
    for b, blade in enumerate(model.blades):
        p = cache.blade_out[b]
        dz = d_out * w[:, b:b + 1] * p * (1.0 - p)
        dW = x.T @ dz
        for s, e in zip(model.block_starts[:-1], model.block_starts[1:]):
            dW[s:e, s:e] = 0.0
        grads += [dW, dz.sum(axis=0)]
    g = model.gating
    d_w = np.einsum("bnk,nk->nb", cache.blade_out, d_out)
    d_logit = w * (d_w - np.sum(w * d_w, axis=1, keepdims=True))
    hidden = np.maximum(cache.hidden_pre, 0.0)
    d_hidden = (d_logit @ g.w2.T) * (cache.hidden_pre > 0)
    grads += [x.T @ d_hidden, d_hidden.sum(axis=0), hidden.T @ d_logit, d_logit.sum(axis=0)]
    return grads


def loss_and_grad(model: MultiBladeModel, batch, loss_kind: str,
                  pseudocount: float = 0.01, variance_floor: float = 1e-5):
    x = batch.as_float() if isinstance(batch, ResponseMatrix) else np.asarray(batch, float)
    cache = model.forward_cached(x)
    if loss_kind == MSE:
        loss = mse_loss(cache.output, x)
        d_out = mse_grad(cache.output, x)
    elif loss_kind == ZVAL:
        loss = zval_loss(cache.output, x, model.block_starts, pseudocount, variance_floor)
        d_out = zval_grad(cache.output, x, model.block_starts, pseudocount, variance_floor)
    else:
        raise ConfigError(f"unknown loss kind {loss_kind!r}")
    return loss, backward_from_output(model, cache, d_out)


def backward(model: MultiBladeModel, batch, loss_kind: str, **kw) -> list[np.ndarray]:
    return loss_and_grad(model, batch, loss_kind, **kw)[1]


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: list[np.ndarray], lr=1e-2):
        self.params, self.lr = params, lr

    def step(self, grads: list[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


@dataclass(frozen=True)
class LossRecord:
    step: int
    epoch: int
    loss_kind: str
    loss: float


@dataclass
class TrainResult:
    model: MultiBladeModel
    history: list[LossRecord] = field(default_factory=list)


def batch_slices(n_rows: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Near-equal batches of at most ``batch_size`` rows covering a permutation of the rows."""
    order = rng.permutation(n_rows) if rng is not None else np.arange(n_rows)
    return np.array_split(order, math.ceil(n_rows / batch_size))


def train(model: MultiBladeModel, data: ResponseMatrix, cfg: TrainConfig,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train a copy of ``model``; the argument is left untouched."""
    if data.N == 0:
        raise DataValidationError("cannot train on an empty matrix")
    if tuple(data.block_starts) != tuple(model.block_starts):
        raise DataValidationError("data block structure does not match the model")
    model = model.copy()
    model.apply_mask()
    x = data.as_float()
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model.parameters(), cfg)
    history: list[LossRecord] = []
    step = 0
    schedule = [MSE] * cfg.mse_epochs + [ZVAL] * cfg.zval_epochs
    for epoch, kind in enumerate(schedule):
        for rows in batch_slices(data.N, cfg.batch_size, rng):
            loss, grads = loss_and_grad(model, x[rows], kind, cfg.pseudocount_loss, cfg.variance_floor)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite {kind} loss at step {step} (epoch {epoch})", step=step)
            opt.step(grads)
            model.apply_mask()
            history.append(LossRecord(step, epoch, kind, loss))
            if progress is not None:
                progress(step, loss)
            step += 1
    return TrainResult(model, history)


def dataset_loss(model: MultiBladeModel, data: ResponseMatrix, loss_kind: str,
                 cfg: TrainConfig | None = None) -> float:
    """Row-weighted mean of the per-batch loss over fixed (unshuffled) batches."""
    cfg = cfg or TrainConfig()
    x = data.as_float()
    total = 0.0
    for rows in batch_slices(data.N, cfg.batch_size, None):
        out = model.forward(x[rows])
        if loss_kind == MSE:
            loss = mse_loss(out, x[rows])
        else:
            loss = zval_loss(out, x[rows], model.block_starts, cfg.pseudocount_loss, cfg.variance_floor)
        total += loss * len(rows)
    return total / data.N


def write_history(path, history: Sequence[LossRecord], seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("step\tepoch\tloss_kind\tloss\n")
        for r in history:
            fh.write(f"{r.step}\t{r.epoch}\t{r.loss_kind}\t{r.loss!r}\n")


def config_with(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
