"""Evaluation metrics: detection error, purity/coverage, precision/recall,
diarization error rate, and equal error rate.

Everything is computed on time intervals, never on a frame grid, so all
rates are invariant to scaling the timestamps.  Detection and diarization
rates are returned in percent; EER is a fraction in [0, 1].

The speaker mapping inside DER is the exact maximum-duration one-to-one
assignment (augmenting-path solver) up to 64x64 speaker pairs; larger
problems fall back to a greedy mapping with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Annotation, Segment, SlidingWindow, Timeline

MAX_EXACT_SPEAKERS = 64


class EmptyReferenceError(ValueError):
    """Reference has no scored speech: the requested rate is undefined."""


def _scoped(timeline: Timeline, uem: Timeline) -> Timeline:
    return timeline.crop(uem.support())


def detection_error(reference: Annotation, hypothesis: Timeline,
                    uem: Timeline) -> dict[str, float]:
    """Speech detection rates in percent, relative to reference speech.

    miss = |ref \\ hyp| / |ref|, fa = |hyp \\ ref| / |ref|, all inside
    the evaluation map; deter = fa + miss.
    """
    if not uem:
        raise ValueError("empty evaluation map")
    ref = _scoped(reference.speech(), uem).support()
    hyp = _scoped(hypothesis.support(), uem).support()
    total = ref.duration()
    if total == 0:
        raise EmptyReferenceError("no reference speech inside the evaluation map")
    miss = ref.subtract(hyp).duration()
    fa = hyp.subtract(ref).duration()
    return {
        "deter": 100.0 * (miss + fa) / total,
        "fa": 100.0 * fa / total,
        "miss": 100.0 * miss / total,
    }


def _cropped_label_segments(annotation: Annotation,
                            uem: Timeline) -> dict[str, list[Segment]]:
    """Track segments intersected with the evaluation map, per label."""
    windows = list(uem.support())
    per_label: dict[str, list[Segment]] = {l: [] for l in annotation.labels()}
    for segment, _, label in annotation.itertracks():
        for window in windows:
            inter = segment & window
            if inter:
                per_label[label].append(inter)
    return per_label


def _pairwise_overlap(ref: Annotation, hyp: Annotation,
                      uem: Timeline) -> tuple[list, list, np.ndarray]:
    """Per-(ref label, hyp label) summed track intersection inside uem."""
    ref_segs = _cropped_label_segments(ref, uem)
    hyp_segs = _cropped_label_segments(hyp, uem)
    ref_labels = sorted(ref_segs)
    hyp_labels = sorted(hyp_segs)
    grid = np.zeros((len(ref_labels), len(hyp_labels)))
    for i, rl in enumerate(ref_labels):
        for j, hl in enumerate(hyp_labels):
            grid[i, j] = sum(
                (r & h).duration
                for r in ref_segs[rl]
                for h in hyp_segs[hl]
                if r.overlaps(h)
            )
    return ref_labels, hyp_labels, grid


def purity_coverage(reference: Annotation, hypothesis: Annotation,
                    uem: Timeline) -> dict[str, float]:
    """Cluster purity and coverage in percent.

    Durations are summed over tracks as emitted (no support merging), so
    splitting a reference turn across hypothesis clusters lowers coverage
    and mixing speakers inside one cluster lowers purity.
    """
    if not uem:
        raise ValueError("empty evaluation map")
    ref_labels, hyp_labels, grid = _pairwise_overlap(reference, hypothesis, uem)
    ref_total = sum(reference.crop(uem).label_duration(l) for l in ref_labels)
    hyp_total = sum(hypothesis.crop(uem).label_duration(l) for l in hyp_labels)
    if ref_total == 0:
        raise EmptyReferenceError("no reference speech inside the evaluation map")
    if hyp_total == 0:
        raise ValueError("empty hypothesis inside the evaluation map")
    purity = 100.0 * grid.max(axis=0).sum() / hyp_total
    coverage = 100.0 * grid.max(axis=1).sum() / ref_total
    return {"purity": purity, "coverage": coverage}


def precision_recall(reference: Timeline, hypothesis: Timeline,
                     uem: Timeline) -> dict[str, float]:
    """Interval precision/recall of a detected region set, in percent."""
    if not uem:
        raise ValueError("empty evaluation map")
    ref = _scoped(reference, uem).support()
    hyp = _scoped(hypothesis, uem).support()
    if not hyp.duration():
        raise ValueError("empty hypothesis: precision undefined")
    if not ref.duration():
        raise EmptyReferenceError("empty reference: recall undefined")
    tp = ref.intersection(hyp).duration()
    return {
        "precision": 100.0 * tp / hyp.duration(),
        "recall": 100.0 * tp / ref.duration(),
    }


# ---------------------------------------------------------------------------
# Assignment problem (exact, augmenting paths over potentials)
# ---------------------------------------------------------------------------

def solve_assignment(cost: np.ndarray) -> list[int]:
    """Column assigned to each row minimizing total cost (square matrix).

    Shortest augmenting path method with dual potentials; O(n^3).
    """
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    # 1-based internal arrays, standard potentials formulation
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    way = np.zeros(n + 1, dtype=int)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, n + 1):
        if match[j]:
            assignment[match[j] - 1] = j - 1
    return assignment


def best_mapping(overlap: np.ndarray) -> dict[int, int]:
    """One-to-one row->column mapping maximizing the summed overlap."""
    n_ref, n_hyp = overlap.shape
    if n_ref == 0 or n_hyp == 0:
        return {}
    n = max(n_ref, n_hyp)
    if n > MAX_EXACT_SPEAKERS:
        warnings.warn(
            f"{n} speakers exceed the exact-assignment limit "
            f"({MAX_EXACT_SPEAKERS}); falling back to a greedy mapping"
        )
        return _greedy_mapping(overlap)
    padded = np.zeros((n, n))
    padded[:n_ref, :n_hyp] = overlap
    assignment = solve_assignment(-padded)
    return {
        i: j
        for i, j in enumerate(assignment[:n_ref])
        if j < n_hyp and overlap[i, j] > 0
    }


def _greedy_mapping(overlap: np.ndarray) -> dict[int, int]:
    pairs = [
        (-overlap[i, j], i, j)
        for i in range(overlap.shape[0])
        for j in range(overlap.shape[1])
        if overlap[i, j] > 0
    ]
    pairs.sort()
    mapping: dict[int, int] = {}
    used_cols: set[int] = set()
    for _, i, j in pairs:
        if i not in mapping and j not in used_cols:
            mapping[i] = j
            used_cols.add(j)
    return mapping


# ---------------------------------------------------------------------------
# Diarization error rate
# ---------------------------------------------------------------------------

def _collar_timeline(reference: Annotation, collar: float) -> Timeline:
    if collar <= 0:
        return Timeline()
    half = 0.5 * collar
    cuts = []
    for segment, _, _ in reference.itertracks():
        cuts.append(Segment(segment.start - half, segment.start + half))
        cuts.append(Segment(segment.end - half, segment.end + half))
    return Timeline(cuts).support()


def _boundaries(*annotations, scope: Timeline) -> np.ndarray:
    times = set()
    for window in scope.support():
        times.add(window.start)
        times.add(window.end)
    for annotation in annotations:
        for segment, _, _ in annotation.itertracks():
            times.add(segment.start)
            times.add(segment.end)
    return np.array(sorted(times))


def der(reference: Annotation, hypothesis: Annotation, uem: Timeline,
        collar: float = 0.0) -> dict[str, float]:
    """Diarization error rate and its components, in percent.

    Scored regions are the evaluation map minus +-collar/2 around every
    reference segment boundary.  Overlapped speech is scored: with r
    reference and h hypothesis speakers active, an instant contributes
    max(0, r-h) miss, max(0, h-r) false alarm and min(r, h) - matched
    confusion, all divided by the total reference speaker time.  The
    speaker mapping maximizes total matched duration exactly.
    """
    if not uem:
        raise ValueError("empty evaluation map")
    scope = uem.support().subtract(_collar_timeline(reference, collar))
    ref_labels = reference.labels()
    hyp_labels = hypothesis.labels()
    ref_timelines = [reference.label_timeline(l).support() for l in ref_labels]
    hyp_timelines = [hypothesis.label_timeline(l).support() for l in hyp_labels]
    cuts = _boundaries(reference, hypothesis, scope=scope)
    # active label sets per elementary interval
    pieces = []  # (duration, ref label indices, hyp label indices)
    for left, right in zip(cuts[:-1], cuts[1:]):
        if right <= left:
            continue
        mid = 0.5 * (left + right)
        if not scope.covers(mid):
            continue
        ref_active = [i for i, t in enumerate(ref_timelines) if t.covers(mid)]
        hyp_active = [j for j, t in enumerate(hyp_timelines) if t.covers(mid)]
        if ref_active or hyp_active:
            pieces.append((right - left, ref_active, hyp_active))
    total = sum(d * len(r) for d, r, _ in pieces)
    if total == 0:
        raise EmptyReferenceError("no reference speech inside the evaluation map")
    overlap = np.zeros((len(ref_labels), len(hyp_labels)))
    for d, ref_active, hyp_active in pieces:
        for i in ref_active:
            for j in hyp_active:
                overlap[i, j] += d
    mapping = best_mapping(overlap)
    miss = fa = confusion = 0.0
    for d, ref_active, hyp_active in pieces:
        r, h = len(ref_active), len(hyp_active)
        matched = sum(
            1 for i in ref_active if mapping.get(i, -1) in hyp_active
        )
        miss += d * max(0, r - h)
        fa += d * max(0, h - r)
        confusion += d * (min(r, h) - matched)
    return {
        "der": 100.0 * (miss + fa + confusion) / total,
        "miss": 100.0 * miss / total,
        "fa": 100.0 * fa / total,
        "confusion": 100.0 * confusion / total,
        "total": total,
    }


def pooled_der(per_file: list[dict[str, float]]) -> dict[str, float]:
    """Aggregate per-file DER components by pooling error durations."""
    total = sum(r["total"] for r in per_file)
    if total == 0:
        raise EmptyReferenceError("no reference speech in any file")
    out = {}
    for key in ("der", "miss", "fa", "confusion"):
        out[key] = sum(r[key] * r["total"] for r in per_file) / total
    out["total"] = total
    return out


# ---------------------------------------------------------------------------
# Equal error rate
# ---------------------------------------------------------------------------

def eer(scores: list[tuple[float, bool]]) -> float:
    """Equal error rate of target/non-target scores, as a fraction.

    Operating points come from sweeping a threshold over the observed
    scores; linear interpolation between adjacent points of the resulting
    ROC (convex hull, the achievable operating curve) locates the point
    where false-acceptance equals false-rejection.
    """
    targets = np.array([s for s, is_target in scores if is_target])
    others = np.array([s for s, is_target in scores if not is_target])
    if len(targets) == 0 or len(others) == 0:
        raise ValueError("need at least one target and one non-target trial")
    all_scores = np.concatenate([targets, others])
    points = {(0.0, 0.0), (1.0, 1.0)}
    for t in np.unique(all_scores):
        points.add((float((others >= t).mean()), float((targets >= t).mean())))
    ordered = sorted(points)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    hull: list[tuple[float, float]] = []
    for p in ordered:
        while len(hull) >= 2 and cross(hull[-2], hull[-1], p) >= 0:
            hull.pop()
        hull.append(p)
    # walk the hull to where false-rejection (1 - tpr) crosses false-alarm
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        f1 = x1 + y1 - 1.0
        f2 = x2 + y2 - 1.0
        if f1 <= 0.0 <= f2:
            denom = (x2 - x1) + (y2 - y1)
            t = -f1 / denom if denom else 0.0
            return float(x1 + t * (x2 - x1))
    return 0.0
