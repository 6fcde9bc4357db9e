"""Adam mini-batch training with best-validation checkpoint selection."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import fno
from .errors import ContractError, EmptyDatasetError, TrainingDiverged

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    loss: str = "relative-l2"

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if self.loss not in ("relative-l2", "mse"):
            raise ContractError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return asdict(self)


DESK_TRAIN = dict(batch_size=20)
PAPER_TRAIN = dict(batch_size=100)


class Adam:
    """Bias-corrected Adam; decoupled weight decay when ``weight_decay > 0``."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p = params[k] - upd
            if self.wd:
                p = p - self.lr * self.wd * params[k]
            out[k] = p
        return out


def fit(params, loss_and_grad, n_train, cfg, val_loss=None):
    """Generic loop: ``loss_and_grad(params, indices) -> (loss, grads)``.

    Returns ``(best_params, log)`` where ``log`` holds one dict per epoch.
    Without ``val_loss`` the training loss selects the checkpoint.
    """
    if n_train < 1:
        raise EmptyDatasetError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    best, best_score, history = params, np.inf, []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n_train)
        losses = []
        for b, start in enumerate(range(0, n_train, cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            loss, grads = loss_and_grad(params, idx)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(epoch, b)
            params = opt.step(params, grads)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        score = float(val_loss(params)) if val_loss is not None else train_loss
        if not np.isfinite(score):
            raise TrainingDiverged(epoch, len(losses))
        history.append({"epoch": epoch + 1, "train_loss": train_loss,
                        "val_loss": score if val_loss is not None else None,
                        "wall_seconds": time.perf_counter() - t0})
        log.info("epoch %d train %.5f val %.5f", epoch + 1, train_loss, score)
        if score < best_score:
            best, best_score = params, score
    return best, history


def train(dataset, model_cfg, cfg, init_seed=None):
    """Train an FNO on a built dataset; returns ``(params, history)``."""
    x, y = dataset.inputs, dataset.targets
    tr, va = dataset.train_indices, dataset.val_indices
    if len(tr) == 0:
        raise EmptyDatasetError("training split is empty")
    params = fno.init_params(model_cfg, cfg.seed if init_seed is None else init_seed)

    def lg(p, idx):
        sel = tr[idx]
        return fno.loss_and_grad(p, x[sel], y[sel], model_cfg, cfg.loss)

    val = None
    if len(va):
        def val(p):
            return fno.loss_value(p, x[va], y[va], model_cfg, cfg.loss)
    return fit(params, lg, len(tr), cfg, val)
