"""Frame-labeling tasks: voice activity, speaker change, overlapped
speech, and per-file re-segmentation.

Each task turns a reference annotation into per-frame class labels (a
frame is labeled by its midpoint), trains the shared sequence model on
random fixed-length chunks, and post-processes sliding-window scores
back into timelines (threshold binarization), change instants (peak
picking) or a relabeled annotation (re-segmentation).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .core import Annotation, Segment, SlidingWindow, Timeline
from .features import (
    AugmentSpec,
    MfccConfig,
    Waveform,
    add_noise,
    frame_count,
    load_noise_bank,
    mfcc,
    standardize,
    synth_overlap,
)
from .nnet import ArchSpec, SequenceModel, TrainSpec, apply_model, fit

TASKS = ("vad", "scd", "osd")


@dataclass(frozen=True)
class FrameLabels:
    """Integer class per frame, aligned with a feature sequence."""

    labels: np.ndarray
    window: SlidingWindow
    n_classes: int

    def __post_init__(self):
        if self.labels.ndim != 1:
            raise ValueError("labels must be a 1-D array")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.n_classes
        ):
            raise ValueError("labels out of range")


@dataclass(frozen=True)
class BinarizeParams:
    threshold: float = 0.5
    min_duration_on: float = 0.0
    min_duration_off: float = 0.0

    def __post_init__(self):
        if self.min_duration_on < 0 or self.min_duration_off < 0:
            raise ValueError("min durations must be >= 0")


@dataclass(frozen=True)
class PeakParams:
    threshold: float = 0.5
    min_gap: float = 0.0

    def __post_init__(self):
        if self.min_gap < 0:
            raise ValueError("min_gap must be >= 0")


@dataclass(frozen=True)
class ScdSpec:
    """Label smearing half-width around change instants, in seconds."""

    neighborhood: float = 0.2

    def __post_init__(self):
        if self.neighborhood <= 0:
            raise ValueError("neighborhood must be > 0")


@dataclass(frozen=True)
class ResegSpec:
    n_speakers: int | None = None
    epochs: int = 20
    overlap_aware: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.n_speakers is not None and self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")


@dataclass(frozen=True)
class TrainingFile:
    """One training document: audio plus its reference annotation."""

    uri: str
    waveform: Waveform
    reference: Annotation


# ---------------------------------------------------------------------------
# Label construction (pure functions of annotation + geometry)
# ---------------------------------------------------------------------------

def _coverage_mask(timeline: Timeline, times: np.ndarray) -> np.ndarray:
    """True where a time point falls inside the timeline's support."""
    support = timeline.support()
    if not support:
        return np.zeros(len(times), dtype=bool)
    starts = np.array([s.start for s in support])
    ends = np.array([s.end for s in support])
    idx = np.searchsorted(starts, times, side="right") - 1
    ok = idx >= 0
    out = np.zeros(len(times), dtype=bool)
    out[ok] = times[ok] < ends[idx[ok]]
    return out


def speaker_counts(reference: Annotation, times: np.ndarray) -> np.ndarray:
    """Number of distinct active speakers at each time point."""
    counts = np.zeros(len(times), dtype=np.int64)
    for label in reference.labels():
        counts += _coverage_mask(reference.label_timeline(label), times)
    return counts


def change_points(reference: Annotation) -> np.ndarray:
    """Instants where the active-speaker set changes.

    Boundaries of each speaker's support, deduplicated; a speaker's own
    adjacent segments merge first, so seamless same-speaker continuations
    are not change points.
    """
    times: set[float] = set()
    for label in reference.labels():
        for segment in reference.label_timeline(label).support():
            times.add(segment.start)
            times.add(segment.end)
    return np.array(sorted(times))


def vad_labels(reference: Annotation, window: SlidingWindow,
               n_frames: int) -> FrameLabels:
    """1 where the frame midpoint lies inside the speech support."""
    times = window.middles(n_frames)
    mask = _coverage_mask(reference.speech(), times)
    return FrameLabels(mask.astype(np.int64), window, 2)


def scd_labels(reference: Annotation, window: SlidingWindow, n_frames: int,
               spec: ScdSpec = ScdSpec()) -> FrameLabels:
    """1 where the frame midpoint is within `neighborhood` of a change."""
    times = window.middles(n_frames)
    points = change_points(reference)
    if len(points) == 0:
        labels = np.zeros(n_frames, dtype=np.int64)
        return FrameLabels(labels, window, 2)
    idx = np.searchsorted(points, times)
    left = np.abs(times - points[np.clip(idx - 1, 0, len(points) - 1)])
    right = np.abs(points[np.clip(idx, 0, len(points) - 1)] - times)
    nearest = np.minimum(left, right)
    return FrameLabels(
        (nearest < spec.neighborhood).astype(np.int64), window, 2
    )


def osd_labels(reference: Annotation, window: SlidingWindow,
               n_frames: int) -> FrameLabels:
    """1 where at least two speakers are active at the frame midpoint."""
    times = window.middles(n_frames)
    counts = speaker_counts(reference, times)
    return FrameLabels((counts >= 2).astype(np.int64), window, 2)


# ---------------------------------------------------------------------------
# Score post-processing
# ---------------------------------------------------------------------------

def _frame_slot_end(i: int, window: SlidingWindow, n_frames: int) -> float:
    if i >= n_frames - 1:
        return window.start + (n_frames - 1) * window.step + window.window
    return window.start + (i + 1) * window.step


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True, as (first, last) inclusive frame indices."""
    runs = []
    start = None
    for i, on in enumerate(mask):
        if on and start is None:
            start = i
        elif not on and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def binarize(scores: np.ndarray, window: SlidingWindow,
             params: BinarizeParams) -> Timeline:
    """Timeline of maximal runs with score > threshold.

    A run [i..j] spans from frame i's start to frame j+1's start (the
    last frame extends to the end of its analysis window), so a file-wide
    run spans the whole feature extent.  Gaps shorter than
    min_duration_off are filled first, then segments shorter than
    min_duration_on are dropped.
    """
    scores = np.asarray(scores).reshape(-1)
    n = len(scores)
    segments = [
        Segment(window.start + first * window.step,
                _frame_slot_end(last, window, n))
        for first, last in _runs(scores > params.threshold)
    ]
    if params.min_duration_off > 0 and len(segments) > 1:
        merged = [segments[0]]
        for seg in segments[1:]:
            if seg.start - merged[-1].end < params.min_duration_off:
                merged[-1] = Segment(merged[-1].start, seg.end)
            else:
                merged.append(seg)
        segments = merged
    if params.min_duration_on > 0:
        segments = [s for s in segments if s.duration >= params.min_duration_on]
    return Timeline(segments)


def peak_pick(scores: np.ndarray, window: SlidingWindow,
              params: PeakParams) -> list[float]:
    """Midpoints of strict local maxima above the threshold.

    Peaks closer than min_gap are thinned, keeping the higher-scored one
    (earlier peak wins ties); output times are strictly increasing.
    """
    scores = np.asarray(scores).reshape(-1)
    if len(scores) < 3:
        return []
    interior = np.arange(1, len(scores) - 1)
    is_peak = (
        (scores[interior] > scores[interior - 1])
        & (scores[interior] > scores[interior + 1])
        & (scores[interior] > params.threshold)
    )
    candidates = interior[is_peak]
    # descending score, index as deterministic tie-break
    order = sorted(candidates, key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        t = window.frame_middle(i)
        if all(abs(t - window.frame_middle(j)) >= params.min_gap for j in kept):
            kept.append(i)
    return [window.frame_middle(i) for i in sorted(kept)]


# ---------------------------------------------------------------------------
# Chunk sampling and task training
# ---------------------------------------------------------------------------

class ChunkSampler:
    """Draws random fixed-length chunks and their frame labels.

    Owns no RNG: every draw uses the generator handed in by the training
    loop, so batches are reproducible per (seed, epoch) and independent
    across data-loading workers.
    """

    def __init__(self, files: list[TrainingFile], task: str,
                 feature_config: MfccConfig = MfccConfig(),
                 scd_spec: ScdSpec = ScdSpec(),
                 augment: AugmentSpec | None = None):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
        if not files:
            raise ValueError("empty training set")
        self.files = files
        self.task = task
        self.config = feature_config
        self.scd_spec = scd_spec
        self.augment = augment
        self.noise_bank = None
        if augment is not None and augment.noise_dir:
            self.noise_bank = load_noise_bank(augment.noise_dir)
        self.durations = np.array([f.waveform.duration for f in files])
        self.weights = self.durations / self.durations.sum()
        self._changes = [change_points(f.reference) for f in files]

    def chunk_frames(self, chunk_duration: float) -> int:
        sr = self.files[0].waveform.sample_rate
        return frame_count(int(round(chunk_duration * sr)), self.config, sr)

    def _labels(self, file_idx: int, midpoints: np.ndarray) -> np.ndarray:
        ref = self.files[file_idx].reference
        if self.task == "vad":
            return _coverage_mask(ref.speech(), midpoints).astype(np.int64)
        if self.task == "osd":
            return (speaker_counts(ref, midpoints) >= 2).astype(np.int64)
        points = self._changes[file_idx]
        if len(points) == 0:
            return np.zeros(len(midpoints), dtype=np.int64)
        idx = np.searchsorted(points, midpoints)
        left = np.abs(midpoints - points[np.clip(idx - 1, 0, len(points) - 1)])
        right = np.abs(points[np.clip(idx, 0, len(points) - 1)] - midpoints)
        near = np.minimum(left, right)
        return (near < self.scd_spec.neighborhood).astype(np.int64)

    def _draw(self, rng: np.random.Generator, chunk_duration: float):
        file_idx = int(rng.choice(len(self.files), p=self.weights))
        source = self.files[file_idx]
        sr = source.waveform.sample_rate
        n_samples = int(round(chunk_duration * sr))
        if n_samples > len(source.waveform.samples):
            raise ValueError(
                f"{source.uri}: file shorter than one {chunk_duration}s chunk"
            )
        first = int(rng.integers(0, len(source.waveform.samples) - n_samples + 1))
        start = first / sr
        chunk = Waveform(source.waveform.samples[first : first + n_samples], sr)
        geometry = SlidingWindow(0.0, self.config.step, self.config.window)
        n = frame_count(n_samples, self.config, sr)
        midpoints = start + geometry.middles(n)
        if self.task == "osd":
            counts = speaker_counts(source.reference, midpoints)
        else:
            counts = None
        return chunk, self._labels(file_idx, midpoints), counts, midpoints

    def sample(self, rng: np.random.Generator, chunk_duration: float):
        """One (features [F x D], labels [F]) training example."""
        chunk, labels, counts, _ = self._draw(rng, chunk_duration)
        if self.task == "osd" and self.augment is not None and (
            rng.uniform() < self.augment.overlap_probability
        ):
            other, _, other_counts, _ = self._draw(rng, chunk_duration)
            snr = float(rng.uniform(self.augment.overlap_snr_min,
                                    self.augment.overlap_snr_max))
            chunk, labels = synth_overlap(chunk, counts, other, other_counts, snr)
        if self.noise_bank is not None:
            noise = self.noise_bank[int(rng.integers(0, len(self.noise_bank)))]
            snr = float(rng.uniform(self.augment.snr_min, self.augment.snr_max))
            chunk = add_noise(chunk, noise, snr, rng)
        return standardize(mfcc(chunk, self.config).data), labels

    def batches(self, rng: np.random.Generator, n_batches: int,
                batch_size: int, chunk_duration: float):
        for _ in range(n_batches):
            pairs = [self.sample(rng, chunk_duration) for _ in range(batch_size)]
            yield np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def train_labeler(files: list[TrainingFile], task: str, arch: ArchSpec,
                  spec: TrainSpec, feature_config: MfccConfig = MfccConfig(),
                  scd_spec: ScdSpec = ScdSpec(),
                  augment: AugmentSpec | None = None,
                  log=None) -> tuple[SequenceModel, list[float]]:
    """Train a frame classifier on random chunks of the training files.

    Returns the model and the per-epoch mean loss.  One epoch covers the
    training set once in expectation: ceil(total / (chunk * batch))
    batches unless spec.batches_per_epoch overrides it.
    """
    if augment is None and task == "osd":
        augment = AugmentSpec()
    sampler = ChunkSampler(files, task, feature_config, scd_spec, augment)
    if arch.output_dim != 2 or arch.pooling != "none":
        raise ValueError("labeling tasks need a 2-class softmax architecture")
    model = SequenceModel(arch, seed=spec.rng_seed)
    model.meta = {
        "task": task,
        "chunk_duration": spec.chunk_duration,
        "window_frames": sampler.chunk_frames(spec.chunk_duration),
        "features": {"step": feature_config.step,
                     "window": feature_config.window,
                     "n_coefs": feature_config.n_coefs,
                     "include_c0": feature_config.include_c0},
    }
    total = sampler.durations.sum()
    n_batches = spec.batches_per_epoch or max(
        1, int(np.ceil(total / (spec.chunk_duration * spec.batch_size)))
    )

    def batch_fn(rng, epoch):
        return sampler.batches(rng, n_batches, spec.batch_size,
                               spec.chunk_duration)

    history = fit(model, batch_fn, spec, log=log)
    return model, history


# ---------------------------------------------------------------------------
# Re-segmentation
# ---------------------------------------------------------------------------

def _class_masks(scores: np.ndarray, overlap_mask: np.ndarray | None):
    primary = scores.argmax(axis=1)
    masks = {}
    n_classes = scores.shape[1]
    if overlap_mask is not None:
        partial = scores.copy()
        partial[np.arange(len(primary)), primary] = -np.inf
        secondary = partial.argmax(axis=1)
    for k in range(1, n_classes):
        active = primary == k
        if overlap_mask is not None:
            active = active | (overlap_mask & (secondary == k))
        masks[k] = active
    return masks


def resegment(features, hypothesis: Annotation, spec: ResegSpec,
              arch: ArchSpec, train_spec: TrainSpec,
              overlap: Timeline | None = None) -> Annotation:
    """Per-file refinement of a diarization hypothesis.

    A fresh (n_speakers + 1)-class labeler is trained on this very file,
    using the hypothesis as its (imperfect) labels, for spec.epochs
    complete passes; frames are then reassigned to the best-scoring
    class, class 0 meaning non-speech.  With overlap_aware set, frames
    inside `overlap` also receive the second-best class.
    """
    speakers = hypothesis.labels()
    if not speakers:
        raise ValueError("empty hypothesis: nothing to re-segment")
    if spec.n_speakers is not None and spec.n_speakers != len(speakers):
        raise ValueError(
            f"hypothesis has {len(speakers)} speakers, spec says {spec.n_speakers}"
        )
    data = features.data
    window = features.window
    n_frames = data.shape[0]
    midpoints = window.middles(n_frames)
    # frame class: 0 = non-speech, 1 + index of speaker (first wins overlaps)
    frame_class = np.zeros(n_frames, dtype=np.int64)
    for k, label in enumerate(reversed(speakers)):
        mask = _coverage_mask(hypothesis.label_timeline(label), midpoints)
        frame_class[mask] = len(speakers) - k
    n_classes = len(speakers) + 1
    arch = replace(arch, input_dim=data.shape[1], output_dim=n_classes,
                   pooling="none")
    seed = (train_spec.rng_seed, zlib.crc32(hypothesis.uri.encode("utf-8")))
    model = SequenceModel(
        arch, seed=np.random.SeedSequence(seed).generate_state(1)[0]
    )
    window_frames = min(
        n_frames, max(1, window.n_frames(train_spec.chunk_duration))
    )
    model.meta = {"task": "reseg", "window_frames": window_frames}

    starts = list(range(0, n_frames - window_frames + 1, window_frames))
    if not starts or starts[-1] != n_frames - window_frames:
        starts.append(max(0, n_frames - window_frames))

    def batch_fn(rng, epoch):
        order = rng.permutation(len(starts))
        for i in range(0, len(order), train_spec.batch_size):
            chosen = [starts[j] for j in order[i : i + train_spec.batch_size]]
            x = np.stack(
                [standardize(data[s : s + window_frames]) for s in chosen]
            )
            y = np.stack(
                [frame_class[s : s + window_frames] for s in chosen]
            )
            yield x, y

    reseg_spec = replace(train_spec, epochs=spec.epochs)
    fit(model, batch_fn, reseg_spec)
    scores = apply_model(model, data)
    overlap_mask = None
    if spec.overlap_aware and overlap is not None and len(overlap):
        overlap_mask = _coverage_mask(overlap, midpoints)
    tracks = []
    for k, active in _class_masks(scores, overlap_mask).items():
        label = speakers[k - 1]
        for first, last in _runs(active):
            tracks.append((
                Segment(window.start + first * window.step,
                        _frame_slot_end(last, window, n_frames)),
                f"{label}#{first}",
                label,
            ))
    return Annotation(hypothesis.uri, tracks)
