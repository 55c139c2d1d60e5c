"""Mini-batch training on fixed-length sub-sequences, and sliding-window
application of a trained model to whole files.

Long files are never fed to a model directly.  Training draws random
fixed-length chunks; at test time the file is covered with overlapping
windows of the training length and the per-frame class scores are the
arithmetic mean over every window covering that frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import SequenceModel


@dataclass(frozen=True)
class TrainSpec:
    chunk_duration: float = 2.0
    batch_size: int = 32
    epochs: int = 20
    optimizer: str = "sgd"
    lr: float = 0.01
    rng_seed: int = 0
    batches_per_epoch: int | None = None
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.chunk_duration <= 0:
            raise ValueError("chunk_duration must be > 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class Optimizer:
    """SGD or Adam over the flat parameter vector, with norm clipping."""

    def __init__(self, spec: TrainSpec, n_params: int):
        self.spec = spec
        if spec.optimizer == "adam":
            self.m = np.zeros(n_params)
            self.v = np.zeros(n_params)
            self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        spec = self.spec
        if spec.grad_clip > 0:
            norm = float(np.linalg.norm(grad))
            if norm > spec.grad_clip:
                grad = grad * (spec.grad_clip / norm)
        if spec.optimizer == "sgd":
            params -= spec.lr * grad
            return
        self.t += 1
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad**2
        m_hat = self.m / (1 - beta1**self.t)
        v_hat = self.v / (1 - beta2**self.t)
        params -= spec.lr * m_hat / (np.sqrt(v_hat) + eps)


def fit(model: SequenceModel, batch_fn, spec: TrainSpec,
        log=None) -> list[float]:
    """Train `model` in place; returns the mean loss per epoch.

    `batch_fn(rng, epoch)` yields (X [B, T, D], y [B, T] or [B]) batches
    for one epoch; frame labels go with softmax heads.  The rng passed in
    is seeded from spec.rng_seed and the epoch index, so two runs with the
    same spec produce identical parameters.
    """
    tensors = model.parameter_tensors()
    optimizer = Optimizer(spec, len(model.params))
    history = []
    for epoch in range(spec.epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence((spec.rng_seed, epoch))
        )
        losses = []
        for x, y in batch_fn(rng, epoch):
            for p in tensors.values():
                p.zero_grad()
            logits = model.logits_tensor(Tensor(np.asarray(x)), tensors)
            loss = ad.softmax_cross_entropy(logits, np.asarray(y))
            loss.backward()
            optimizer.step(model.params, model.grad_vector(tensors))
            losses.append(float(loss.value))
        if not losses:
            raise ValueError("empty training epoch (no batches)")
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"loss diverged at epoch {epoch}")
        history.append(epoch_loss)
        if log is not None:
            log(epoch, epoch_loss)
    return history


# ---------------------------------------------------------------------------
# Sliding-window inference
# ---------------------------------------------------------------------------

def window_starts(n_frames: int, window_frames: int, step_frames: int) -> list[int]:
    """Window start indices covering [0, n_frames): regular grid plus a
    final window anchored at the end when the grid does not reach it."""
    if window_frames > n_frames:
        raise ValueError("window longer than sequence")
    starts = list(range(0, n_frames - window_frames + 1, step_frames))
    if starts[-1] != n_frames - window_frames:
        starts.append(n_frames - window_frames)
    return starts


def apply_sliding(score_fn, data: np.ndarray, window_frames: int,
                  step_frames: int) -> np.ndarray:
    """Mean of per-window scores over every window covering each frame.

    `score_fn` maps a [window_frames, D] slice to [window_frames, K]
    scores.  Sequences shorter than one window are reflection-padded to
    one window and the scores cropped back.
    """
    n_frames = data.shape[0]
    if n_frames < window_frames:
        pad = window_frames - n_frames
        mode = "reflect" if n_frames > 1 else "edge"
        padded = np.pad(data, ((0, pad), (0, 0)), mode=mode)
        return np.asarray(score_fn(padded))[:n_frames]
    starts = window_starts(n_frames, window_frames, step_frames)
    total = None
    counts = np.zeros(n_frames)
    for start in starts:
        scores = np.asarray(score_fn(data[start : start + window_frames]))
        if total is None:
            total = np.zeros((n_frames, scores.shape[1]))
        total[start : start + window_frames] += scores
        counts[start : start + window_frames] += 1.0
    return total / counts[:, None]


def apply_model(model: SequenceModel, data: np.ndarray,
                step_fraction: float = 0.1,
                normalize=None) -> np.ndarray:
    """Sliding-window scores of a frame-labeling model over file features.

    Windows have the model's training chunk length (meta["window_frames"]);
    the step defaults to 10% of the window.  Each window is normalized
    with `normalize` before the forward pass (per-sequence standardization
    by default), matching the training-time treatment of chunks.
    """
    if normalize is None:
        from ..features import standardize as normalize
    window_frames = int(model.meta["window_frames"])
    step_frames = max(1, int(round(step_fraction * window_frames)))
    n_frames = data.shape[0]
    if n_frames < window_frames:
        pad = window_frames - n_frames
        mode = "reflect" if n_frames > 1 else "edge"
        padded = np.pad(data, ((0, pad), (0, 0)), mode=mode)
        return model.forward(normalize(padded))[:n_frames]
    starts = window_starts(n_frames, window_frames, step_frames)
    batch = np.stack(
        [normalize(data[s : s + window_frames]) for s in starts]
    )
    scores = model.forward(batch)
    total = np.zeros((n_frames, scores.shape[-1]))
    counts = np.zeros(n_frames)
    for k, start in enumerate(starts):
        total[start : start + window_frames] += scores[k]
        counts[start : start + window_frames] += 1.0
    return total / counts[:, None]
