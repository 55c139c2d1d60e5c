"""Dataset protocols and the built-in synthetic conversation generator.

A protocol names a corpus and pins its train/dev/eval file lists; loading
validates that the splits are disjoint and that every referenced file
exists, so no experiment can accidentally mix training and test data.

The generator produces desk-scale conversations between harmonic
"voices": each speaker gets a unique fundamental frequency plus a fixed
spectral envelope and a slow amplitude modulation, so speakers are easy
to tell apart and end-to-end thresholds test the plumbing and algorithms
rather than model capacity.  Ground-truth RTTM/UEM match the generated
activity exactly, and the same seed reproduces the corpus byte for byte.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Annotation, Segment, Timeline, read_rttm, read_uem, write_rttm, write_uem
from .features import Waveform, read_wav, write_wav
from .labeling import TrainingFile

SPLITS = ("train", "dev", "eval")


@dataclass(frozen=True)
class ProtocolFile:
    uri: str
    wav: str
    rttm: str
    uem: str | None = None


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    train: tuple[ProtocolFile, ...]
    dev: tuple[ProtocolFile, ...]
    eval: tuple[ProtocolFile, ...]

    def split(self, name: str) -> tuple[ProtocolFile, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def uris(self, split: str) -> list[str]:
        return [f.uri for f in self.split(split)]


class ProtocolError(ValueError):
    pass


def load_protocol(path) -> ProtocolSpec:
    """Read and validate a protocol config (YAML).

    Hard errors: a uri listed in two splits, or a missing wav/rttm/uem
    file.  Every split may be empty except train-only protocols are fine;
    validation is purely structural.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict) or "name" not in raw:
        raise ProtocolError(f"{path}: protocol config needs a 'name' entry")
    base = path.parent
    splits: dict[str, list[ProtocolFile]] = {}
    for split in SPLITS:
        rows = []
        for entry in raw.get(split, []) or []:
            missing = {"uri", "wav", "rttm"} - set(entry)
            if missing:
                raise ProtocolError(
                    f"{path}: {split} entry missing keys {sorted(missing)}"
                )
            wav = str(base / entry["wav"])
            rttm = str(base / entry["rttm"])
            uem = str(base / entry["uem"]) if entry.get("uem") else None
            for kind, p in (("wav", wav), ("rttm", rttm), ("uem", uem)):
                if p is not None and not Path(p).exists():
                    raise ProtocolError(
                        f"{path}: missing {kind} file {p} (uri {entry['uri']})"
                    )
            rows.append(ProtocolFile(entry["uri"], wav, rttm, uem))
        splits[split] = rows
    seen: dict[str, str] = {}
    for split in SPLITS:
        for f in splits[split]:
            if f.uri in seen:
                raise ProtocolError(
                    f"{path}: uri {f.uri!r} appears in both "
                    f"{seen[f.uri]!r} and {split!r} splits"
                )
            seen[f.uri] = split
    return ProtocolSpec(raw["name"], *(tuple(splits[s]) for s in SPLITS))


def load_reference(protocol_file: ProtocolFile) -> Annotation:
    annotations = read_rttm(protocol_file.rttm)
    if protocol_file.uri not in annotations:
        raise ProtocolError(
            f"{protocol_file.rttm}: no annotation for uri {protocol_file.uri!r}"
        )
    return annotations[protocol_file.uri]


def load_uem(protocol_file: ProtocolFile,
             fallback_duration: float | None = None) -> Timeline:
    if protocol_file.uem is not None:
        regions = read_uem(protocol_file.uem)
        if protocol_file.uri in regions:
            return regions[protocol_file.uri]
    if fallback_duration is None:
        raise ProtocolError(f"no evaluation map for uri {protocol_file.uri!r}")
    return Timeline([Segment(0.0, fallback_duration)])


def load_training_files(files) -> list[TrainingFile]:
    return [
        TrainingFile(f.uri, read_wav(f.wav), load_reference(f))
        for f in files
    ]


# ---------------------------------------------------------------------------
# Synthetic conversations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 6
    n_train: int = 20
    n_dev: int = 5
    n_eval: int = 5
    duration: float = 60.0
    sample_rate: int = 16000
    turn_mean: float = 2.5
    turn_std: float = 1.0
    pause_probability: float = 0.4
    overlap_probability: float = 0.15
    noise_level: float = 0.0
    speakers_per_file: tuple[int, int] = (2, 3)
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.pause_probability <= 1:
            raise ValueError("pause_probability must be in [0, 1]")
        if not 0 <= self.overlap_probability <= 1:
            raise ValueError("overlap_probability must be in [0, 1]")
        if self.duration <= 0 or self.turn_mean <= 0:
            raise ValueError("durations must be positive")
        if self.n_speakers < 2:
            raise ValueError("need at least two speakers")


@dataclass(frozen=True)
class VoiceSpec:
    """A deterministic harmonic voice: pitch, spectral envelope, modulation."""

    fundamental_hz: float
    envelope_decay: float
    formant_hz: float
    formant_gain: float
    modulation_hz: float
    vibrato_hz: float = 5.0
    vibrato_depth: float = 0.01


def speaker_voices(spec: SynthSpec) -> list[VoiceSpec]:
    """One distinct voice per speaker, pitches spread over 90-300 Hz."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.rng_seed, 7001)))
    pitches = np.linspace(100.0, 280.0, spec.n_speakers)
    voices = []
    for k in range(spec.n_speakers):
        voices.append(VoiceSpec(
            fundamental_hz=float(pitches[k]),
            envelope_decay=float(rng.uniform(3.0, 8.0)),
            formant_hz=float(rng.uniform(500.0, 2500.0)),
            formant_gain=float(rng.uniform(1.0, 3.0)),
            modulation_hz=float(rng.uniform(2.0, 5.0)),
        ))
    return voices


def render_voice(voice: VoiceSpec, duration: float, sample_rate: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Harmonic stack with vibrato, formant bump, and syllabic modulation."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    phase_mod = (voice.vibrato_depth * voice.fundamental_hz
                 / voice.vibrato_hz) * np.sin(2 * np.pi * voice.vibrato_hz * t)
    signal = np.zeros(n)
    n_harmonics = max(3, int(4000.0 // voice.fundamental_hz))
    for h in range(1, n_harmonics + 1):
        freq = h * voice.fundamental_hz
        amp = np.exp(-h / voice.envelope_decay)
        amp *= 1.0 + voice.formant_gain * np.exp(
            -((freq - voice.formant_hz) ** 2) / (2 * 300.0**2)
        )
        phase = rng.uniform(0, 2 * np.pi)
        signal += amp * np.sin(2 * np.pi * freq * t + h * 2 * np.pi * phase_mod
                               + phase)
    mod_phase = rng.uniform(0, 2 * np.pi)
    signal *= 0.65 + 0.35 * np.sin(2 * np.pi * voice.modulation_hz * t + mod_phase)
    # raised-cosine edges keep energy inside the labeled turn
    ramp = min(int(0.010 * sample_rate), n // 2)
    if ramp > 0:
        window = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
        signal[:ramp] *= window
        signal[-ramp:] *= window[::-1]
    peak = np.max(np.abs(signal))
    return 0.3 * signal / peak if peak > 0 else signal


def _quantize(t: float) -> float:
    """Millisecond grid: keeps RTTM text and sample indexing exact."""
    return round(t, 3)


def synth_conversation(spec: SynthSpec, cast: list[int],
                       voices: list[VoiceSpec], seed) -> tuple[
                           Waveform, list[tuple[float, float, int]]]:
    """One conversation; returns audio plus (start, end, speaker) turns."""
    rng = np.random.default_rng(seed)
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    samples = np.zeros(n)
    turns: list[tuple[float, float, int]] = []
    cursor = float(rng.uniform(0.5, 1.5))
    previous_speaker = -1
    previous_end = cursor
    while True:
        choices = [s for s in cast if s != previous_speaker]
        speaker = int(choices[rng.integers(0, len(choices))])
        length = float(np.clip(rng.normal(spec.turn_mean, spec.turn_std),
                               0.8, 6.0))
        draw = rng.uniform()
        if turns and draw < spec.overlap_probability:
            max_back = min(1.0, 0.5 * (previous_end - turns[-1][0]), 0.5 * length)
            start = previous_end - float(rng.uniform(0.2, max(0.21, max_back)))
        elif draw < spec.overlap_probability + spec.pause_probability:
            start = previous_end + float(rng.uniform(0.3, 1.5))
        else:
            start = previous_end + float(rng.uniform(0.05, 0.25))
        start = _quantize(max(0.0, start))
        end = _quantize(start + length)
        if end > spec.duration - 0.2:
            break
        turn_audio = render_voice(voices[speaker], end - start, sr, rng)
        i0 = int(round(start * sr))
        samples[i0 : i0 + len(turn_audio)] += turn_audio
        turns.append((start, end, speaker))
        previous_speaker = speaker
        previous_end = end
    if spec.noise_level > 0:
        samples += spec.noise_level * rng.standard_normal(n)
    peak = np.max(np.abs(samples))
    if peak > 0.99:
        samples *= 0.99 / peak
    return Waveform(samples, sr), turns


def _file_annotation(uri: str, turns: list[tuple[float, float, int]]
                     ) -> Annotation:
    return Annotation.from_records(
        uri, [(start, end, f"spk{speaker}") for start, end, speaker in turns]
    )


def generate_corpus(spec: SynthSpec, out_dir) -> Path:
    """Write WAV + RTTM + UEM per file and a protocol config; returns the
    protocol path.  File seeds derive from the corpus seed and the uri, so
    generation is order-independent and reproducible."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "rttm").mkdir(parents=True, exist_ok=True)
    (out / "uem").mkdir(parents=True, exist_ok=True)
    voices = speaker_voices(spec)
    counts = {"train": spec.n_train, "dev": spec.n_dev, "eval": spec.n_eval}
    config: dict = {"name": "synthetic"}
    for split in SPLITS:
        entries = []
        for i in range(counts[split]):
            uri = f"{split}{i:03d}"
            rng_cast = np.random.default_rng(
                np.random.SeedSequence(
                    (spec.rng_seed, zlib.crc32(uri.encode()), 1)
                )
            )
            n_cast = int(rng_cast.integers(spec.speakers_per_file[0],
                                           spec.speakers_per_file[1] + 1))
            cast = sorted(
                int(s) for s in rng_cast.choice(
                    spec.n_speakers, size=n_cast, replace=False
                )
            )
            waveform, turns = synth_conversation(
                spec, cast, voices,
                np.random.SeedSequence(
                    (spec.rng_seed, zlib.crc32(uri.encode()), 2)
                ),
            )
            write_wav(out / "wav" / f"{uri}.wav", waveform)
            write_rttm(out / "rttm" / f"{uri}.rttm", _file_annotation(uri, turns))
            write_uem(
                out / "uem" / f"{uri}.uem",
                {uri: Timeline([Segment(0.0, spec.duration)])},
            )
            entries.append({
                "uri": uri,
                "wav": f"wav/{uri}.wav",
                "rttm": f"rttm/{uri}.rttm",
                "uem": f"uem/{uri}.uem",
            })
        config[split] = entries
    protocol_path = out / "protocol.yml"
    with open(protocol_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f, sort_keys=False)
    return protocol_path
