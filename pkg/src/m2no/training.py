"""Adam training loop for the learnable operator.

The schedule follows the evaluation protocol used throughout: Adam with
initial learning rate 1e-3 halved every 100 epochs.  Every random choice
(shuffling) flows from the run seed through a dedicated Philox stream, and
all reductions happen in a fixed order, so a fixed seed reproduces the
loss history bitwise on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import NumericalError
from .grids import Field
from .model import ModelParams, backward, forward, loss_with_tape, named_tensors


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 0.5
    decay_every: int = 100
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_valid: float | None = None  # stop once the validation metric drops below


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    valid_rel_l2: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)


def relative_l2(params: ModelParams, pairs) -> float:
    """Mean of per-sample relative L2 errors ||pred - u|| / ||u||."""
    errors = []
    for a, u in pairs:
        pred = forward(params, a)
        pred_arr = pred.data if isinstance(pred, Field) else pred
        u_arr = u.data if isinstance(u, Field) else np.asarray(u)
        errors.append(np.linalg.norm(pred_arr - u_arr) / np.linalg.norm(u_arr))
    return float(np.mean(errors))


def dataset_loss(params: ModelParams, pairs, batch_size: int = 64) -> float:
    """Mean squared relative L2 loss over a dataset, batched for memory."""
    total, count = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        value, _ = loss_with_tape(params, chunk, record=False)
        total += value * len(chunk)
        count += len(chunk)
    return total / count


def train(params: ModelParams, train_pairs, valid_pairs, config: TrainConfig):
    """Optimize ``params`` in place with Adam; returns ``(params, history)``.

    The history records train loss (mean of batch losses), validation loss,
    and the validation relative L2 metric per epoch.  A non-finite loss
    aborts with a :class:`NumericalError` naming the epoch and batch.
    """
    if not train_pairs:
        raise ValueError("training set is empty")
    names = [name for name, _ in named_tensors(params)]
    tensors = dict(named_tensors(params))
    m_state = {name: np.zeros_like(arr) for name, arr in tensors.items()}
    v_state = {name: np.zeros_like(arr) for name, arr in tensors.items()}
    shuffle = rng.stream(config.seed, rng.PURPOSE_SHUFFLE)
    history = History()
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr * config.decay ** (epoch // config.decay_every)
        order = shuffle.permutation(len(train_pairs))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [train_pairs[i] for i in idx]
            value, tape = loss_with_tape(params, batch)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            batch_losses.append((value, len(batch)))
            grads = backward(tape)
            step += 1
            bc1 = 1.0 - config.beta1**step
            bc2 = 1.0 - config.beta2**step
            for name in names:
                g = grads[name]
                m = m_state[name]
                v = v_state[name]
                m *= config.beta1
                m += (1.0 - config.beta1) * g
                v *= config.beta2
                v += (1.0 - config.beta2) * g * g
                tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        total = sum(v * n for v, n in batch_losses)
        count = sum(n for _, n in batch_losses)
        history.epochs.append(epoch)
        history.train_loss.append(total / count)
        history.valid_loss.append(dataset_loss(params, valid_pairs) if valid_pairs else float("nan"))
        history.valid_rel_l2.append(relative_l2(params, valid_pairs) if valid_pairs else float("nan"))
        history.lr.append(lr)
        if (
            config.target_valid is not None
            and valid_pairs
            and history.valid_rel_l2[-1] < config.target_valid
        ):
            break
    return params, history
