"""Speaker embeddings trained with metric-learning losses.

The embedding model is the shared sequence architecture with mean+std
temporal pooling and a unit-normalized output head, trained on short
single-speaker chunks.  Batches are built as N speakers x M chunks so
pair and triplet mining always finds positives and negatives in-batch.

Cosine distance d(a, b) = 1 - <a, b> on unit vectors is the working
metric everywhere (losses, verification, clustering).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Annotation, SlidingWindow, Timeline
from .features import MfccConfig, Waveform, frame_count, mfcc, standardize
from .labeling import TrainingFile
from .nnet import ArchSpec, Optimizer, SequenceModel, Tensor, TrainSpec
from .nnet import autodiff as ad
from .metrics import eer

LOSS_KINDS = (
    "triplet",
    "contrastive",
    "center",
    "additive-angular-margin",
    "congenerous-cosine",
)


@dataclass(frozen=True)
class LossSpec:
    kind: str = "triplet"
    margin: float = 0.2
    scale: float = 10.0
    center_weight: float = 0.01
    center_momentum: float = 0.95

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected {LOSS_KINDS}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


class LossState:
    """Trainable class weights and running centers for class-based losses."""

    def __init__(self, n_classes: int, dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(size=(n_classes, dim)) / np.sqrt(dim)
        self.centers = np.zeros((n_classes, dim))

    def update_centers(self, embeddings: np.ndarray, labels: np.ndarray,
                       momentum: float) -> None:
        """Exponential moving average toward each class's batch mean."""
        for k in np.unique(labels):
            batch_mean = embeddings[labels == k].mean(axis=0)
            self.centers[k] = momentum * self.centers[k] + (1 - momentum) * batch_mean


def cosine_distances(embeddings: Tensor) -> Tensor:
    """Pairwise 1 - <a, b> for unit-row embeddings, as a [B, B] tensor."""
    sim = embeddings @ ad.transpose(embeddings)
    return 1.0 - sim


def _check_multispeaker(labels: np.ndarray, kind: str) -> None:
    if len(np.unique(labels)) < 2:
        raise ValueError(f"{kind} loss needs at least two speakers per batch")


def _triplet_loss(emb: Tensor, labels: np.ndarray, spec: LossSpec) -> Tensor:
    _check_multispeaker(labels, "triplet")
    b = len(labels)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)          # (anchor, positive)
    neg_mask = ~same                                   # (anchor, negative)
    valid = pos_mask[:, :, None] & neg_mask[:, None, :]
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid triplet in batch")
    d = cosine_distances(emb)
    hinge = ad.relu(
        ad.reshape(d, (b, b, 1)) - ad.reshape(d, (b, 1, b)) + spec.margin
    )
    return ad.tsum(hinge * valid.astype(float)) / n_valid


def _contrastive_loss(emb: Tensor, labels: np.ndarray, spec: LossSpec) -> Tensor:
    _check_multispeaker(labels, "contrastive")
    b = len(labels)
    upper = np.triu(np.ones((b, b), dtype=bool), k=1)
    same = (labels[:, None] == labels[None, :]) & upper
    diff = (labels[:, None] != labels[None, :]) & upper
    n_pairs = int(upper.sum())
    d = cosine_distances(emb)
    pos = ad.tsum(d**2 * same.astype(float))
    neg = ad.tsum(ad.relu(spec.margin - d) ** 2 * diff.astype(float))
    return (pos + neg) / n_pairs


def _logits_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    return ad.softmax_cross_entropy(logits, labels)


def _center_loss(emb: Tensor, labels: np.ndarray, spec: LossSpec,
                 weights: Tensor, centers: np.ndarray) -> Tensor:
    logits = emb @ ad.transpose(weights)
    ce = _logits_cross_entropy(logits, labels)
    pull = ad.tmean(ad.tsum((emb - centers[labels]) ** 2, axis=-1))
    return ce + spec.center_weight * pull


def _aam_loss(emb: Tensor, labels: np.ndarray, spec: LossSpec,
              weights: Tensor) -> Tensor:
    norm = ad.sqrt(ad.tsum(weights**2, axis=-1, keepdims=True))
    unit_w = weights / (norm + 1e-12)
    cos = emb @ ad.transpose(unit_w)
    cos = ad.clip(cos, -1.0 + 1e-7, 1.0 - 1e-7)
    sin = ad.sqrt(1.0 - cos**2)
    phi = cos * np.cos(spec.margin) - sin * np.sin(spec.margin)
    onehot = np.zeros(cos.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    logits = spec.scale * (phi * onehot + cos * (1.0 - onehot))
    return _logits_cross_entropy(logits, labels)


def _congenerous_cosine_loss(emb: Tensor, labels: np.ndarray,
                             spec: LossSpec) -> Tensor:
    """Cross-entropy over scaled cosine to in-batch class centroids."""
    classes = np.unique(labels)
    onehot = (labels[None, :] == classes[:, None]).astype(float)
    sums = Tensor(onehot) @ emb                       # [C, E] class sums
    norm = ad.sqrt(ad.tsum(sums**2, axis=-1, keepdims=True))
    centroids = sums / (norm + 1e-12)
    logits = spec.scale * (emb @ ad.transpose(centroids))
    remapped = np.searchsorted(classes, labels)
    return _logits_cross_entropy(logits, remapped)


def embedding_loss(emb: Tensor, labels: np.ndarray, spec: LossSpec,
                   state: LossState | None = None,
                   weight_tensor: Tensor | None = None) -> Tensor:
    """Scalar loss tensor for a batch of unit-norm embeddings.

    Class-based losses (center, additive-angular-margin) need `state`
    and a tensor wrapping its weights so gradients reach them.
    """
    labels = np.asarray(labels)
    if spec.kind == "triplet":
        return _triplet_loss(emb, labels, spec)
    if spec.kind == "contrastive":
        return _contrastive_loss(emb, labels, spec)
    if spec.kind == "congenerous-cosine":
        return _congenerous_cosine_loss(emb, labels, spec)
    if state is None:
        raise ValueError(f"{spec.kind} loss needs a LossState")
    if weight_tensor is None:
        weight_tensor = Tensor(state.weights, requires_grad=True)
    if spec.kind == "center":
        return _center_loss(emb, labels, spec, weight_tensor, state.centers)
    return _aam_loss(emb, labels, spec, weight_tensor)


# ---------------------------------------------------------------------------
# Chunk extraction and training
# ---------------------------------------------------------------------------

def pure_speaker_regions(reference: Annotation, min_duration: float
                         ) -> dict[str, Timeline]:
    """Per speaker, regions where only that speaker talks, long enough
    to cut a training chunk from."""
    out = {}
    for label in reference.labels():
        own = reference.label_timeline(label).support()
        others = Timeline(
            [s for l in reference.labels() if l != label
             for s in reference.label_timeline(l)]
        )
        pure = own.subtract(others)
        keep = [s for s in pure if s.duration >= min_duration]
        if keep:
            out[label] = Timeline(keep)
    return out


def chunk_features(waveform: Waveform, start: float, duration: float,
                   config: MfccConfig = MfccConfig()) -> np.ndarray:
    """Standardized features of one chunk; reflection-padded when the
    chunk is shorter than requested (short final speech turns)."""
    sr = waveform.sample_rate
    n = int(round(duration * sr))
    first = int(round(start * sr))
    first = max(0, min(first, len(waveform.samples) - 1))
    samples = waveform.samples[first : first + n]
    if len(samples) < n:
        pad = n - len(samples)
        mode = "reflect" if len(samples) > 1 else "edge"
        samples = np.pad(samples, (0, pad), mode=mode)
    return standardize(mfcc(Waveform(samples, sr), config).data)


class SpeakerChunkSampler:
    """Draws N speakers x M single-speaker chunks per batch."""

    def __init__(self, files: list[TrainingFile], chunk_duration: float,
                 config: MfccConfig = MfccConfig()):
        self.files = files
        self.config = config
        self.chunk_duration = chunk_duration
        self.regions: dict[str, list[tuple[int, float, float]]] = {}
        for idx, f in enumerate(files):
            for label, timeline in pure_speaker_regions(
                f.reference, chunk_duration
            ).items():
                rows = self.regions.setdefault(label, [])
                for seg in timeline:
                    rows.append((idx, seg.start, seg.end))
        self.speakers = sorted(self.regions)
        if len(self.speakers) < 2:
            raise ValueError(
                "embedding training needs at least two speakers with "
                f"pure regions >= {chunk_duration}s"
            )

    def batch(self, rng: np.random.Generator, n_speakers: int,
              n_chunks: int) -> tuple[np.ndarray, np.ndarray]:
        """One (features, labels) batch; labels are global speaker indices."""
        n_speakers = min(n_speakers, len(self.speakers))
        chosen = rng.choice(len(self.speakers), size=n_speakers, replace=False)
        xs, ys = [], []
        for spk_idx in sorted(int(i) for i in chosen):
            rows = self.regions[self.speakers[spk_idx]]
            weights = np.array([end - start for _, start, end in rows])
            weights = weights / weights.sum()
            for _ in range(n_chunks):
                file_idx, start, end = rows[int(rng.choice(len(rows), p=weights))]
                t0 = float(rng.uniform(start, end - self.chunk_duration))
                xs.append(chunk_features(
                    self.files[file_idx].waveform, t0, self.chunk_duration,
                    self.config,
                ))
                ys.append(spk_idx)
        return np.stack(xs), np.array(ys)


def train_embedder(files: list[TrainingFile], arch: ArchSpec, spec: TrainSpec,
                   loss_spec: LossSpec = LossSpec(),
                   speakers_per_batch: int = 8, chunks_per_speaker: int = 4,
                   feature_config: MfccConfig = MfccConfig(),
                   log=None) -> tuple[SequenceModel, list[float]]:
    """Train the pooled-embedding model; returns (model, loss history)."""
    if arch.pooling != "stats":
        raise ValueError("embedding model needs stats pooling")
    sampler = SpeakerChunkSampler(files, spec.chunk_duration, feature_config)
    model = SequenceModel(arch, seed=spec.rng_seed)
    model.meta = {
        "task": "embedding",
        "chunk_duration": spec.chunk_duration,
        "window_frames": frame_count(
            int(round(spec.chunk_duration * files[0].waveform.sample_rate)),
            feature_config, files[0].waveform.sample_rate,
        ),
        "features": {"step": feature_config.step,
                     "window": feature_config.window,
                     "n_coefs": feature_config.n_coefs,
                     "include_c0": feature_config.include_c0},
        "loss": loss_spec.kind,
    }
    state = LossState(len(sampler.speakers), arch.output_dim,
                      seed=spec.rng_seed + 1)
    needs_weights = loss_spec.kind in ("center", "additive-angular-margin")
    optimizer = Optimizer(spec, len(model.params))
    weight_opt = Optimizer(spec, state.weights.size) if needs_weights else None
    tensors = model.parameter_tensors()
    total = sum(
        end - start for rows in sampler.regions.values()
        for _, start, end in rows
    )
    batch_size = min(speakers_per_batch, len(sampler.speakers)) * chunks_per_speaker
    n_batches = spec.batches_per_epoch or max(
        1, int(np.ceil(total / (spec.chunk_duration * batch_size)))
    )
    history = []
    for epoch in range(spec.epochs):
        rng = np.random.default_rng(np.random.SeedSequence((spec.rng_seed, epoch)))
        losses = []
        for _ in range(n_batches):
            x, y = sampler.batch(rng, speakers_per_batch, chunks_per_speaker)
            for p in tensors.values():
                p.zero_grad()
            weight_tensor = (
                Tensor(state.weights, requires_grad=True) if needs_weights else None
            )
            emb = model.forward_tensor(Tensor(x), tensors)
            loss = embedding_loss(emb, y, loss_spec, state, weight_tensor)
            loss.backward()
            optimizer.step(model.params, model.grad_vector(tensors))
            if needs_weights and weight_tensor.grad is not None:
                weight_opt.step(state.weights.reshape(-1),
                                weight_tensor.grad.reshape(-1))
            if loss_spec.kind == "center":
                state.update_centers(emb.value, y, loss_spec.center_momentum)
            losses.append(float(loss.value))
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"loss diverged at epoch {epoch}")
        history.append(epoch_loss)
        if log is not None:
            log(epoch, epoch_loss)
    return model, history


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def embed(model: SequenceModel, features: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of one standardized chunk [T x D]."""
    return model.forward(features)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


@dataclass(frozen=True)
class Trial:
    """One verification trial: two chunks and the same-speaker truth."""

    is_target: bool
    wav_a: str
    start_a: float
    duration_a: float
    wav_b: str
    start_b: float
    duration_b: float


def read_trials(path) -> list[Trial]:
    """`<label 0|1> <wav_a> <start_a> <dur_a> <wav_b> <start_b> <dur_b>`"""
    trials = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields")
            trials.append(Trial(
                fields[0] == "1", fields[1], float(fields[2]), float(fields[3]),
                fields[4], float(fields[5]), float(fields[6]),
            ))
    return trials


def write_trials(path, trials: list[Trial]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trials:
            f.write(
                f"{int(t.is_target)} {t.wav_a} {t.start_a:.3f} {t.duration_a:.3f} "
                f"{t.wav_b} {t.start_b:.3f} {t.duration_b:.3f}\n"
            )


def verify_trials(model: SequenceModel, trials: list[Trial],
                  waveforms: dict[str, Waveform],
                  config: MfccConfig = MfccConfig()
                  ) -> tuple[list[float], float]:
    """Cosine scores for each trial plus the resulting equal error rate."""
    if not any(t.is_target for t in trials) or all(t.is_target for t in trials):
        raise ValueError("need at least one target and one non-target trial")
    duration = float(model.meta.get("chunk_duration", 0.5))
    scores = []
    for t in trials:
        ea = embed(model, chunk_features(waveforms[t.wav_a], t.start_a,
                                         duration, config))
        eb = embed(model, chunk_features(waveforms[t.wav_b], t.start_b,
                                         duration, config))
        scores.append(cosine_similarity(ea, eb))
    rate = eer(list(zip(scores, [t.is_target for t in trials])))
    return scores, rate
