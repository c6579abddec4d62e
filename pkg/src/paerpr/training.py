from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Adam, Module, Tensor, no_grad
from .scene_sim import derive_seed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 0


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")

    @property
    def final_loss(self) -> float:
        return self.epoch_loss[-1] if self.epoch_loss else float("nan")


def fit(model: Module, n: int, batch_loss: Callable[[np.ndarray], Tensor],
        config: TrainConfig, tag: str) -> TrainHistory:
    """Minibatch Adam over ``n`` items; ``batch_loss(indices)`` builds the loss graph.

    Shuffling and dropout draw from streams derived from ``config.seed`` and
    ``tag``, so a run is bit-reproducible. ``initial_loss`` is the full-data
    loss in eval mode before the first update.
    """
    if n < 1:
        raise ValueError(f"{tag}: nothing to train on")
    params = model.trainable_parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, tag, "shuffle"))
    dropout_seed = derive_seed(config.seed, tag, "dropout")
    history = TrainHistory()
    history.initial_loss = evaluate_loss(model, n, batch_loss, config.batch_size)
    step = 0
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model.set_rng_stream(dropout_seed, step)
            opt.zero_grad()
            loss = batch_loss(idx)
            loss.backward()
            opt.step()
            step += 1
            total += float(loss.data) * len(idx)
            count += len(idx)
        history.epoch_loss.append(total / count)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            log.info("%s epoch %d/%d loss %.5f", tag, epoch + 1, config.epochs, history.epoch_loss[-1])
    model.eval()
    return history


def evaluate_loss(model: Module, n: int, batch_loss: Callable[[np.ndarray], Tensor],
                  batch_size: int) -> float:
    """Mean loss over all items in eval mode, without building a graph."""
    model.eval()
    total = 0.0
    with no_grad():
        for start in range(0, n, max(batch_size, 256)):
            idx = np.arange(start, min(n, start + max(batch_size, 256)))
            total += float(batch_loss(idx).data) * len(idx)
    return total / n
