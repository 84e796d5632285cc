"""Minibatch training loop for :class:`~ddfabc.forest.Forest`."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDiverged
from .forest import Forest, backward, batch_loss, init_forest, loss, predict_normalized
from .optim import make_optimizer

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


@dataclass
class TrainConfig:
    loss: str = "mse"
    optimizer: str = "qhadam"
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    patience: int = 20
    huber_delta: float = 1.0
    l1: float = 0.0
    loss_composition: str = "ensemble"
    n_trees: int = 32
    depth: int = 6
    beta1: float | None = None
    beta2: float | None = None
    nu1: float = 0.7
    nu2: float = 1.0
    max_rows: int = 0   # 0 = use every training row

    def __post_init__(self):
        if not self.lr > 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("need lr > 0, batch_size >= 1, epochs >= 1")
        if self.loss not in ("mse", "mae", "huber"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam", "qhadam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_composition not in ("ensemble", "per_tree"):
            raise ValueError(f"unknown loss composition {self.loss_composition!r}")

    def make_optimizer(self):
        betas = None
        if self.beta1 is not None or self.beta2 is not None:
            default = (0.995, 0.999) if self.optimizer == "qhadam" else (0.9, 0.999)
            betas = (self.beta1 if self.beta1 is not None else default[0],
                     self.beta2 if self.beta2 is not None else default[1])
        return make_optimizer(self.optimizer, self.lr, betas, (self.nu1, self.nu2))


def _arrays(data):
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.features, data.targets
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty or malformed sample set")
    return X, y


def new_forest(train_set, config: TrainConfig) -> Forest:
    X, y = _arrays(train_set)
    rng = np.random.default_rng(config.seed)
    return init_forest(X, y, config.n_trees, config.depth, rng, config.loss)


def train(forest: Forest | None, train_set, valid_set, config: TrainConfig, verbose: bool = False):
    """Train ``forest`` (or a freshly initialised one when ``None``).

    Returns ``(best_forest, history)``; ``best_forest`` holds the parameters
    with the lowest validation loss. ``history`` has per-epoch ``train_loss``,
    ``valid_loss`` and ``valid_mse`` in normalised target units.
    """
    Xtr, ytr = _arrays(train_set)
    Xva, yva = _arrays(valid_set)
    if forest is None:
        forest = new_forest((Xtr, ytr), config)
    forest = forest.copy()
    forest.loss_kind = config.loss
    rng = np.random.default_rng(config.seed + 1)
    if config.max_rows and Xtr.shape[0] > config.max_rows:
        keep = np.sort(rng.choice(Xtr.shape[0], config.max_rows, replace=False))
        Xtr, ytr = Xtr[keep], ytr[keep]
    Xtr_n, ytr_n = forest.normalize(Xtr), (ytr - forest.y_mean) / forest.y_std
    Xva_n, yva_n = forest.normalize(Xva), (yva - forest.y_mean) / forest.y_std
    kw = dict(kind=config.loss, delta=config.huber_delta, composition=config.loss_composition)

    def evaluate():
        pred = np.concatenate([predict_normalized(forest, Xva_n[s:s + 4096])
                               for s in range(0, Xva_n.shape[0], 4096)])
        vloss = float(np.mean(loss(pred, yva_n, config.loss, config.huber_delta)))
        return vloss, float(np.mean((pred - yva_n) ** 2))

    opt = config.make_optimizer()
    params = forest.params()
    v0, m0 = evaluate()
    limit = DIVERGENCE_FACTOR * max(v0, 1e-12)
    history = {"train_loss": [], "valid_loss": [], "valid_mse": [], "initial_valid_loss": v0,
               "best_epoch": -1}
    best, best_loss, stale = forest.copy(), v0, 0
    n = Xtr_n.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            value, grads = backward(forest, Xtr_n[idx], ytr_n[idx], l1=config.l1, **kw)
            opt.step(params, grads)
            total += value * idx.size
        vloss, vmse = evaluate()
        history["train_loss"].append(total / n)
        history["valid_loss"].append(vloss)
        history["valid_mse"].append(vmse)
        if verbose:
            log.info("epoch %d train %.3e valid %.3e", epoch, total / n, vloss)
        if not np.isfinite(vloss) or vloss > limit:
            raise TrainingDiverged(f"validation loss {vloss:g} exceeded {limit:g} at epoch {epoch}")
        if vloss < best_loss:
            best, best_loss, stale = forest.copy(), vloss, 0
            history["best_epoch"] = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


def evaluate_mse(forest: Forest, data) -> float:
    """Validation mse in normalised target units."""
    X, y = _arrays(data)
    pred = forest.predict(X)
    return float(np.mean(((pred - y) / forest.y_std) ** 2))


__all__ = ["TrainConfig", "train", "new_forest", "evaluate_mse", "batch_loss"]
