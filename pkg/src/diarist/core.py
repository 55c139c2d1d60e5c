"""Temporal data model shared by every block of the toolkit.

Segments, timelines (sets of segments) and annotations (speaker-labeled
segments) are the currency exchanged between detection, clustering and
scoring.  All types are immutable after construction and use plain
double-precision seconds; no frame grid is imposed here so that metric
computations stay frame-rate independent.

Also hosts the RTTM / UEM readers and writers:

    RTTM:  SPEAKER <uri> <chan> <start> <dur> <NA> <NA> <label> <NA> <NA>
    UEM:   <uri> <chan> <start> <end>

RTTM output is fixed to 3 decimal places so golden files are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union


class RttmParseError(ValueError):
    """Raised on a malformed RTTM or UEM line; carries the line number."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


@dataclass(frozen=True, order=True)
class Segment:
    """A time interval [start, end) in seconds."""

    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def middle(self) -> float:
        return 0.5 * (self.start + self.end)

    def __bool__(self) -> bool:
        """A segment is truthy iff it has strictly positive duration."""
        return self.end > self.start

    def overlaps(self, other: "Segment") -> bool:
        return self.start < other.end and other.start < self.end

    def intersects(self, other: "Segment") -> bool:
        """True if the two segments overlap or merely touch."""
        return self.start <= other.end and other.start <= self.end

    def __and__(self, other: "Segment") -> "Segment":
        """Intersection (may be empty, i.e. falsy)."""
        return Segment(max(self.start, other.start), min(self.end, other.end))

    def __contains__(self, t: float) -> bool:
        return self.start <= t < self.end

    def __str__(self) -> str:
        return f"[{self.start:.3f}, {self.end:.3f}]"


def _check_segment(segment: Segment) -> Segment:
    if not isinstance(segment, Segment):
        raise TypeError(f"expected Segment, got {type(segment).__name__}")
    if not (segment.end > segment.start):
        raise ValueError(f"zero or negative length segment {segment!r}")
    if not (math.isfinite(segment.start) and math.isfinite(segment.end)):
        raise ValueError(f"non-finite segment {segment!r}")
    return segment


class Timeline:
    """An ordered set of segments (possibly overlapping).

    Iteration order is sorted by (start, end).  Zero- and negative-length
    segments are rejected on construction.
    """

    __slots__ = ("_segments",)

    def __init__(self, segments: Iterable[Segment] = ()):
        self._segments: tuple[Segment, ...] = tuple(
            sorted(_check_segment(s) for s in segments)
        )

    def __iter__(self) -> Iterator[Segment]:
        return iter(self._segments)

    def __len__(self) -> int:
        return len(self._segments)

    def __bool__(self) -> bool:
        return bool(self._segments)

    def __getitem__(self, i):
        return self._segments[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Timeline) and self._segments == other._segments

    def __hash__(self) -> int:
        return hash(self._segments)

    def __repr__(self) -> str:
        inner = ", ".join(str(s) for s in self._segments)
        return f"Timeline({{{inner}}})"

    @property
    def extent(self) -> Segment:
        if not self._segments:
            return Segment(0.0, 0.0)
        return Segment(
            self._segments[0].start, max(s.end for s in self._segments)
        )

    def duration(self) -> float:
        """Total duration of the support (overlaps counted once)."""
        return sum(s.duration for s in self.support())

    def support(self) -> "Timeline":
        """Merge overlapping and adjacent segments.

        The result is pairwise disjoint, sorted, and covers exactly the
        union of the input segments.  Idempotent.
        """
        merged: list[Segment] = []
        for seg in self._segments:
            if merged and seg.start <= merged[-1].end:
                if seg.end > merged[-1].end:
                    merged[-1] = Segment(merged[-1].start, seg.end)
            else:
                merged.append(seg)
        return Timeline(merged)

    def covers(self, t: float) -> bool:
        return any(t in s for s in self._segments)

    def crop(self, focus: Union[Segment, "Timeline"]) -> "Timeline":
        """Intersect every segment with `focus`; empty bits are dropped."""
        windows = [focus] if isinstance(focus, Segment) else list(focus)
        out = []
        for seg in self._segments:
            for win in windows:
                inter = seg & win
                if inter:
                    out.append(inter)
        return Timeline(out)

    def union(self, other: "Timeline") -> "Timeline":
        return Timeline(list(self._segments) + list(other))

    def intersection(self, other: "Timeline") -> "Timeline":
        """Support of the pointwise intersection of the two unions."""
        a = self.support()
        b = other.support()
        out = []
        for seg in a:
            for w in b:
                inter = seg & w
                if inter:
                    out.append(inter)
        return Timeline(out)

    def subtract(self, other: "Timeline") -> "Timeline":
        """Support of self minus the union of `other`."""
        result = list(self.support())
        for hole in other.support():
            nxt: list[Segment] = []
            for seg in result:
                if not seg.overlaps(hole):
                    nxt.append(seg)
                    continue
                left = Segment(seg.start, min(seg.end, hole.start))
                right = Segment(max(seg.start, hole.end), seg.end)
                if left:
                    nxt.append(left)
                if right:
                    nxt.append(right)
            result = nxt
        return Timeline(result)

    def gaps(self, focus: Segment) -> "Timeline":
        """Sub-segments of `focus` not covered by this timeline."""
        return Timeline([focus]).subtract(self)


class Annotation:
    """Speaker-labeled tracks for one file.

    A track is a (segment, track_id, label) triple; (segment, track_id)
    pairs are unique.  Tracks of the same label may overlap tracks of
    other labels (overlapped speech) or, in pathological hypotheses, each
    other.
    """

    __slots__ = ("uri", "_tracks")

    def __init__(
        self,
        uri: str = "",
        tracks: Iterable[tuple[Segment, object, str]] = (),
    ):
        self.uri = uri
        seen: set[tuple[Segment, object]] = set()
        rows = []
        for segment, track_id, label in tracks:
            _check_segment(segment)
            key = (segment, track_id)
            if key in seen:
                raise ValueError(f"duplicate track {key!r}")
            seen.add(key)
            rows.append((segment, track_id, str(label)))
        rows.sort(key=lambda r: (r[0].start, r[0].end, str(r[1])))
        self._tracks: tuple[tuple[Segment, object, str], ...] = tuple(rows)

    @classmethod
    def from_records(
        cls, uri: str, records: Iterable[tuple[float, float, str]]
    ) -> "Annotation":
        """Build from (start, end, label) rows; track ids are generated."""
        tracks = [
            (Segment(start, end), i, label)
            for i, (start, end, label) in enumerate(records)
        ]
        return cls(uri, tracks)

    def itertracks(self) -> Iterator[tuple[Segment, object, str]]:
        return iter(self._tracks)

    def itersegments(self) -> Iterator[tuple[Segment, str]]:
        for segment, _, label in self._tracks:
            yield segment, label

    def __len__(self) -> int:
        return len(self._tracks)

    def __bool__(self) -> bool:
        return bool(self._tracks)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Annotation)
            and self.uri == other.uri
            and self._tracks == other._tracks
        )

    def __repr__(self) -> str:
        rows = ", ".join(f"{s}{{{l}}}" for s, _, l in self._tracks)
        return f"Annotation({self.uri!r}, {rows})"

    def labels(self) -> list[str]:
        return sorted({label for _, _, label in self._tracks})

    def label_timeline(self, label: str) -> Timeline:
        return Timeline(
            s for s, _, l in self._tracks if l == label
        )

    def label_duration(self, label: str) -> float:
        """Summed track duration for `label` (overlaps not merged)."""
        return sum(s.duration for s, _, l in self._tracks if l == label)

    def total_duration(self) -> float:
        return sum(s.duration for s, _, _ in self._tracks)

    def speech(self) -> Timeline:
        """Support of all tracks regardless of label."""
        return Timeline(s for s, _, _ in self._tracks).support()

    def crop(self, focus: Union[Segment, Timeline]) -> "Annotation":
        """Intersect every track with `focus`, preserving labels.

        Output segments are intersections of input segments with the
        focus; empty intersections are dropped.
        """
        windows = [focus] if isinstance(focus, Segment) else list(focus)
        out = []
        n = 0
        for segment, _, label in self._tracks:
            for win in windows:
                inter = segment & win
                if inter:
                    out.append((inter, n, label))
                    n += 1
        return Annotation(self.uri, out)

    def active_labels(self, t: float) -> set[str]:
        return {label for s, _, label in self._tracks if t in s}

    def rename(self, mapping: dict[str, str]) -> "Annotation":
        return Annotation(
            self.uri,
            [
                (s, tid, mapping.get(label, label))
                for s, tid, label in self._tracks
            ],
        )


@dataclass(frozen=True)
class SlidingWindow:
    """Frame geometry: frame i covers [start + i*step, start + i*step + window)."""

    start: float = 0.0
    step: float = 0.010
    window: float = 0.025

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.window <= 0:
            raise ValueError("window must be > 0")

    def frame_segment(self, i: int) -> Segment:
        left = self.start + i * self.step
        return Segment(left, left + self.window)

    def frame_middle(self, i: int) -> float:
        return self.start + i * self.step + 0.5 * self.window

    def middles(self, n: int):
        import numpy as np

        return self.start + np.arange(n) * self.step + 0.5 * self.window

    def time_to_frame(self, t: float) -> int:
        """Index of the frame whose midpoint is closest to t (clipped at 0)."""
        return max(0, round((t - self.start - 0.5 * self.window) / self.step))

    def n_frames(self, duration: float) -> int:
        """Number of whole frames fitting in `duration` seconds."""
        if duration < self.window:
            return 0
        return int(math.floor((duration - self.window) / self.step)) + 1

    def shifted(self, offset: float) -> "SlidingWindow":
        return SlidingWindow(self.start + offset, self.step, self.window)


# ---------------------------------------------------------------------------
# RTTM / UEM
# ---------------------------------------------------------------------------

def read_rttm(path) -> dict[str, Annotation]:
    """Parse an RTTM file into one Annotation per uri.

    Only SPEAKER lines are accepted; blank lines are skipped.  Anything
    else raises RttmParseError with the offending line number.
    """
    per_uri: dict[str, list[tuple[float, float, str]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if fields[0] != "SPEAKER":
                raise RttmParseError(
                    path, lineno, f"expected SPEAKER line, got {fields[0]!r}"
                )
            if len(fields) != 10:
                raise RttmParseError(
                    path, lineno, f"expected 10 fields, got {len(fields)}"
                )
            uri = fields[1]
            try:
                start = float(fields[3])
                dur = float(fields[4])
            except ValueError as exc:
                raise RttmParseError(path, lineno, str(exc)) from exc
            if dur <= 0:
                raise RttmParseError(
                    path, lineno, f"non-positive duration {dur}"
                )
            label = fields[7]
            per_uri.setdefault(uri, []).append((start, start + dur, label))
    return {
        uri: Annotation.from_records(uri, rows)
        for uri, rows in per_uri.items()
    }


def rttm_lines(annotation: Annotation) -> list[str]:
    return [
        f"SPEAKER {annotation.uri} 1 {segment.start:.3f} "
        f"{segment.duration:.3f} <NA> <NA> {label} <NA> <NA>"
        for segment, _, label in annotation.itertracks()
    ]


def write_rttm(path, annotations: Union[Annotation, dict[str, Annotation]]) -> None:
    """Write one or several annotations, 3 decimal places, sorted by uri."""
    if isinstance(annotations, Annotation):
        annotations = {annotations.uri: annotations}
    lines = []
    for uri in sorted(annotations):
        lines.extend(rttm_lines(annotations[uri]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def read_uem(path) -> dict[str, Timeline]:
    """Parse a UEM file into one support-merged Timeline per uri."""
    per_uri: dict[str, list[Segment]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise RttmParseError(
                    path, lineno, f"expected 4 fields, got {len(fields)}"
                )
            uri = fields[0]
            try:
                start = float(fields[2])
                end = float(fields[3])
            except ValueError as exc:
                raise RttmParseError(path, lineno, str(exc)) from exc
            if end <= start:
                raise RttmParseError(
                    path, lineno, f"empty evaluation region [{start}, {end}]"
                )
            per_uri.setdefault(uri, []).append(Segment(start, end))
    return {uri: Timeline(segs).support() for uri, segs in per_uri.items()}


def write_uem(path, timelines: dict[str, Timeline]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for uri in sorted(timelines):
            for seg in timelines[uri].support():
                f.write(f"{uri} 1 {seg.start:.3f} {seg.end:.3f}\n")
