"""Audio decoding, MFCC extraction and on-the-fly augmentation.

The cepstral chain is fully pinned so golden tests are possible:
pre-emphasis 0.97, Hamming window, 512-point FFT, 40 triangular mel
filters spanning 0..sr/2, natural log, orthonormal DCT-II keeping
coefficients 1..19 (energy coefficient 0 excluded by default), then
first- and second-order delta features from a +/-2 frame regression.

Augmentation (additive noise, overlap synthesis) is seeded: the same
spec and seed produce bit-identical augmented chunks, which realizes an
unbounded stream of variants without precomputing them.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SlidingWindow


class UnsupportedFormatError(ValueError):
    """Input audio is not 16-bit PCM mono WAV."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def crop(self, start: float, duration: float) -> "Waveform":
        i0 = int(round(start * self.sample_rate))
        n = int(round(duration * self.sample_rate))
        i0 = max(0, min(i0, len(self.samples)))
        return Waveform(self.samples[i0 : i0 + n], self.sample_rate)


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise UnsupportedFormatError(
                f"{path}: expected mono audio, got {w.getnchannels()} channels"
            )
        if w.getsampwidth() != 2:
            raise UnsupportedFormatError(
                f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit"
            )
        if w.getcomptype() != "NONE":
            raise UnsupportedFormatError(
                f"{path}: compressed WAV ({w.getcomptype()}) not supported"
            )
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform) -> None:
    """Write 16-bit PCM mono WAV; samples are clipped to [-1, 1)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(waveform.sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


@dataclass(frozen=True)
class SlidingWindowFeature:
    """A frame-aligned [T x D] matrix plus its sliding-window geometry."""

    data: np.ndarray
    window: SlidingWindow

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"expected [T x D] matrix, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dimension(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    """Cepstral extraction settings; the defaults are the pinned chain."""

    window: float = 0.025
    step: float = 0.010
    n_fft: int = 512
    n_mels: int = 40
    n_coefs: int = 19
    include_c0: bool = False
    preemphasis: float = 0.97
    log_floor: float = 1e-10

    @property
    def dimension(self) -> int:
        base = self.n_coefs + (1 if self.include_c0 else 0)
        return 3 * base


def mel_scale(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular unit-height filters on FFT bins, 0..sr/2."""
    edges_mel = np.linspace(0.0, mel_scale(sample_rate / 2.0), n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    # orthonormal DCT-II rows 0..n_out-1
    k = np.arange(n_out)[:, None]
    m = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * m + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    mat[0] /= np.sqrt(2.0)
    return mat


def _delta(x: np.ndarray) -> np.ndarray:
    # +/-2 frame regression with edge replication
    pad = np.concatenate([x[:1], x[:1], x, x[-1:], x[-1:]], axis=0)
    return (pad[3:-1] - pad[1:-3] + 2.0 * (pad[4:] - pad[:-4])) / 10.0


def frame_count(n_samples: int, config: MfccConfig, sample_rate: int) -> int:
    win = int(round(config.window * sample_rate))
    hop = int(round(config.step * sample_rate))
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def mfcc(waveform: Waveform, config: MfccConfig = MfccConfig()) -> SlidingWindowFeature:
    """Extract cepstra + deltas + delta-deltas; D = 3 * n_coefs.

    Frame i covers [i*step, i*step + window); T = floor((N - win)/hop) + 1.
    Audio shorter than one analysis window is an error.
    """
    sr = waveform.sample_rate
    win = int(round(config.window * sr))
    hop = int(round(config.step * sr))
    x = waveform.samples
    if len(x) < win:
        raise ValueError(
            f"audio too short: {len(x)} samples < one {win}-sample window"
        )
    emph = np.concatenate([x[:1], x[1:] - config.preemphasis * x[:-1]])
    n_frames = (len(x) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx] * np.hamming(win)[None, :]
    spectrum = np.fft.rfft(frames, n=config.n_fft, axis=1)
    power = (spectrum.real**2 + spectrum.imag**2)
    bank = mel_filterbank(config.n_mels, config.n_fft, sr)
    energies = np.log(np.maximum(power @ bank.T, config.log_floor))
    first = 0 if config.include_c0 else 1
    dct = _dct_matrix(config.n_coefs + 1, config.n_mels)[first : config.n_coefs + 1]
    cepstra = energies @ dct.T
    d1 = _delta(cepstra)
    d2 = _delta(d1)
    data = np.concatenate([cepstra, d1, d2], axis=1)
    geometry = SlidingWindow(start=0.0, step=config.step, window=config.window)
    return SlidingWindowFeature(data, geometry)


def standardize(data: np.ndarray) -> np.ndarray:
    """Per-sequence zero-mean unit-variance columns (constant columns -> 0)."""
    mean = data.mean(axis=0, keepdims=True)
    std = data.std(axis=0, keepdims=True)
    return (data - mean) / np.maximum(std, 1e-8)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    """On-the-fly augmentation settings for training chunk loaders."""

    noise_dir: str | None = None
    snr_min: float = 5.0
    snr_max: float = 20.0
    overlap_probability: float = 0.5
    overlap_snr_min: float = 0.0
    overlap_snr_max: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.snr_min > self.snr_max:
            raise ValueError("snr_min must be <= snr_max")
        if self.overlap_snr_min > self.overlap_snr_max:
            raise ValueError("overlap_snr_min must be <= overlap_snr_max")
        if not 0.0 <= self.overlap_probability <= 1.0:
            raise ValueError("overlap_probability must be in [0, 1]")


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x**2))) if len(x) else 0.0


def add_noise(
    chunk: Waveform,
    noise: Waveform,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> Waveform:
    """Mix `noise` into `chunk` at the requested signal-to-noise ratio.

    The noise gain is rms(chunk) / (rms(noise) * 10^(snr/20)).  Noise
    longer than the chunk is cropped at a random offset; shorter noise is
    looped.  The mix is rescaled if its peak exceeds 1.  A silent chunk is
    returned unchanged, as is any chunk when snr is +inf.
    """
    if chunk.sample_rate != noise.sample_rate:
        raise ValueError("chunk and noise sample rates differ")
    signal_rms = _rms(chunk.samples)
    if signal_rms == 0.0 or snr_db == np.inf:
        return chunk
    n = len(chunk.samples)
    noise_samples = noise.samples
    if len(noise_samples) < n:
        reps = -(-n // len(noise_samples))
        noise_samples = np.tile(noise_samples, reps)
    if len(noise_samples) > n:
        offset = 0
        if rng is not None:
            offset = int(rng.integers(0, len(noise_samples) - n + 1))
        noise_samples = noise_samples[offset : offset + n]
    noise_rms = _rms(noise_samples)
    if noise_rms == 0.0:
        return chunk
    alpha = signal_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    mixed = chunk.samples + alpha * noise_samples
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        mixed = mixed / peak
    return Waveform(mixed, chunk.sample_rate)


def synth_overlap(
    chunk_a: Waveform,
    counts_a: np.ndarray,
    chunk_b: Waveform,
    counts_b: np.ndarray,
    snr_db: float,
) -> tuple[Waveform, np.ndarray]:
    """Weighted sum of two chunks, for overlap-detector training.

    `counts_*` hold the number of active speakers per frame.  The mixed
    chunk's positive label is 1 wherever the summed speaker count reaches
    two, and the mixing itself follows the add_noise gain semantics with
    chunk_b playing the noise role.
    """
    if len(chunk_a.samples) != len(chunk_b.samples):
        raise ValueError("chunks must have equal length")
    if chunk_a.sample_rate != chunk_b.sample_rate:
        raise ValueError("chunks must have equal sample rate")
    if len(counts_a) != len(counts_b):
        raise ValueError("frame count arrays must have equal length")
    mixed = add_noise(chunk_a, chunk_b, snr_db)
    labels = ((np.asarray(counts_a) + np.asarray(counts_b)) >= 2).astype(np.int64)
    return mixed, labels


def load_noise_bank(noise_dir) -> list[Waveform]:
    """All WAV files of a flat directory, sorted by name for determinism."""
    paths = sorted(Path(noise_dir).glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no WAV files in noise directory {noise_dir}")
    return [read_wav(p) for p in paths]
