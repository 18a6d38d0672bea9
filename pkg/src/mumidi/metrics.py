"""Objective evaluation: chord accuracy, perplexity and overlap distances of
smoothed per-track, per-bar feature distributions."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .chords import ChordLane, EmptyInput, infer_chords
from .score import ROLES, STEPS_PER_BAR, Role, Score
from .tokens import TokenSeq

GRID_POINTS_PER_CLASS = 8
MIN_BANDWIDTH = 0.5


class EmptyCell(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class Feature(enum.Enum):
    PITCH = "p"
    VELOCITY = "v"
    DURATION = "d"
    IOI = "ioi"

    @property
    def n_classes(self) -> int:
        return 12 if self is Feature.PITCH else 32


# ---------------------------------------------------------------------------
# histograms


def _ioi_by_bar(notes) -> dict[int, list[int]]:
    onsets = sorted(n.onset for n in notes)
    out: dict[int, list[int]] = {}
    for a, b in zip(onsets, onsets[1:]):
        out.setdefault(a // STEPS_PER_BAR, []).append(min(32, max(1, b - a)))
    return out


def feature_histogram(s: Score, feature: Feature | str, role: Role, bar: int) -> np.ndarray:
    """Counts per class for one (track, bar) cell; class ``i`` sits at index ``i``.

    Pitch uses pitch class 0..11 and ignores drums; velocity, duration and
    IOI use levels 1..32 stored at index level - 1. IOI is the onset gap
    between consecutive notes of the track (sorted by onset), clamped to
    1..32 and credited to the bar of the earlier note.
    """
    feature = Feature(feature)
    counts = np.zeros(feature.n_classes, dtype=np.int64)
    notes = s.notes(role)
    if feature is Feature.IOI:
        for gap in _ioi_by_bar(notes).get(bar, ()):
            counts[gap - 1] += 1
    elif not (feature is Feature.PITCH and role is Role.DRUM):
        for n in notes:
            if n.bar != bar:
                continue
            if feature is Feature.PITCH:
                counts[(n.pitch - 1) % 12] += 1
            elif feature is Feature.VELOCITY:
                counts[n.velocity - 1] += 1
            else:
                counts[n.duration - 1] += 1
    if not counts.any():
        raise EmptyCell(f"no {feature.value} events for {role.value} in bar {bar}")
    return counts


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True, eq=False)
class ClassPdf:
    """Density sampled on a grid over [0.5, K + 0.5]; class ``i`` is centred on ``i + 1``."""

    classes: int
    grid: np.ndarray
    density: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def same_grid(self, other: ClassPdf) -> bool:
        return self.classes == other.classes and np.array_equal(self.grid, other.grid)


def class_grid(k: int) -> np.ndarray:
    return np.linspace(0.5, k + 0.5, GRID_POINTS_PER_CLASS * k + 1)


def _normalised(k: int, grid: np.ndarray, density: np.ndarray) -> ClassPdf:
    density = np.maximum(density, 0.0)
    area = np.trapezoid(density, grid)
    if not area > 0:
        raise EmptyCell("density has no mass on the grid")
    return ClassPdf(k, grid, density / area)


def scott_bandwidth(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    centres = np.arange(1, len(counts) + 1)
    mean = (counts * centres).sum() / n
    var = (counts * (centres - mean) ** 2).sum() / (n - 1) if n > 1 else 0.0
    return max(MIN_BANDWIDTH, n ** -0.2 * math.sqrt(var))


def kde_pdf(counts: Sequence[int] | np.ndarray, bandwidth: float | None = None) -> ClassPdf:
    """Gaussian-smoothed class histogram.

    Each class contributes a unit-width box (its bin) blurred by a Gaussian of
    width ``bandwidth``; as the bandwidth goes to 0 the density becomes the
    piecewise-constant histogram. The default bandwidth is Scott's rule
    floored at 0.5 class.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or not counts.sum() > 0:
        raise EmptyCell("empty histogram")
    k = len(counts)
    h = scott_bandwidth(counts) if bandwidth is None else float(bandwidth)
    grid = class_grid(k)
    centres = np.arange(1, k + 1)
    if h > 0:
        d = grid[:, None] - centres[None, :]
        mass = ndtr((d + 0.5) / h) - ndtr((d - 0.5) / h)
    else:
        mass = histogram_mass(grid, centres)
    return _normalised(k, grid, mass @ (counts / counts.sum()))


def histogram_mass(grid: np.ndarray, centres: np.ndarray) -> np.ndarray:
    """Indicator of each class bin on the grid; bin edges get one half."""
    d = np.abs(grid[:, None] - centres[None, :])
    return np.where(d < 0.5, 1.0, np.where(d == 0.5, 0.5, 0.0))


def histogram_pdf(counts: Sequence[int] | np.ndarray) -> ClassPdf:
    """Piecewise-constant density of the raw histogram on the class grid."""
    counts = np.asarray(counts, dtype=np.float64)
    if not counts.sum() > 0:
        raise EmptyCell("empty histogram")
    k = len(counts)
    grid = class_grid(k)
    return _normalised(k, grid, histogram_mass(grid, np.arange(1, k + 1)) @ (counts / counts.sum()))


def overlapped_area(p: ClassPdf, q: ClassPdf) -> float:
    if not p.same_grid(q):
        raise GridMismatch("densities are sampled on different grids")
    oa = float(np.trapezoid(np.minimum(p.density, q.density), p.grid))
    return min(1.0, max(0.0, oa))


# ---------------------------------------------------------------------------
# distances


@dataclass(frozen=True)
class Distance:
    value: float  # NaN when no cell was comparable
    cells: int
    skipped: int


def distribution_distance(gen: Score, ref: Score, feature: Feature | str) -> Distance:
    """Mean overlapped area over (track, bar) cells where both scores have events.

    Cells empty on either side are skipped, not scored as zero. Drum cells
    take no part in the pitch-class distance.
    """
    feature = Feature(feature)
    if gen.n_bars != ref.n_bars:
        raise ShapeMismatch(f"bar counts differ: {gen.n_bars} vs {ref.n_bars}")
    total, cells, skipped = 0.0, 0, 0
    for role in ROLES:
        if role not in gen.tracks and role not in ref.tracks:
            continue
        if feature is Feature.PITCH and role is Role.DRUM:
            continue
        for bar in range(gen.n_bars):
            try:
                a = feature_histogram(gen, feature, role, bar)
                b = feature_histogram(ref, feature, role, bar)
            except EmptyCell:
                skipped += 1
                continue
            total += overlapped_area(kde_pdf(a), kde_pdf(b))
            cells += 1
    return Distance(total / cells if cells else math.nan, cells, skipped)


# ---------------------------------------------------------------------------
# chord accuracy


class Granularity(enum.Enum):
    HALF_BAR = "half_bar"
    BAR = "bar"


def chord_accuracy(
    gen: Score,
    lane: ChordLane | Mapping[Role, ChordLane],
    granularity: Granularity | str = Granularity.HALF_BAR,
) -> float:
    """Fraction of (track, chord slot) cells whose inferred chord matches the reference.

    Each non-drum track's chords are inferred from that track alone.
    ``lane`` is either one lane shared by all tracks or a lane per role. At
    bar granularity a bar matches only if both of its halves match.
    """
    granularity = Granularity(granularity)
    roles = [r for r in gen.tracks if r is not Role.DRUM]
    if not roles:
        raise EmptyInput("no non-drum track to score")
    hits = cells = 0
    for role in roles:
        ref = lane[role] if isinstance(lane, Mapping) else lane
        if len(ref) != 2 * gen.n_bars:
            raise ShapeMismatch(f"lane has {len(ref)} entries, expected {2 * gen.n_bars}")
        match = [a == b for a, b in zip(infer_chords(gen, roles=[role]), ref)]
        if granularity is Granularity.BAR:
            match = [match[i] and match[i + 1] for i in range(0, len(match), 2)]
        hits += sum(match)
        cells += len(match)
    return hits / cells


def reference_lanes(ref: Score, roles: Iterable[Role]) -> dict[Role, ChordLane]:
    """Per-role reference lanes: the matching reference track where it exists,
    otherwise the reference's own chord lane or all of its pitched tracks."""
    full: ChordLane | None = None
    out = {}
    for role in roles:
        if role in ref.tracks and role is not Role.DRUM:
            out[role] = infer_chords(ref, roles=[role])
            continue
        if full is None:
            if len(ref.chords) == 2 * ref.n_bars:
                full = tuple(c for _, _, c in ref.chords)
            else:
                full = infer_chords(ref)
        out[role] = full
    return out


# ---------------------------------------------------------------------------
# perplexity


class PplMode(enum.Enum):
    PER_STEP = "per_step"
    PER_HEAD = "per_head"


class NonFiniteLoss(FloatingPointError):
    pass


Scorer = Callable[[TokenSeq, TokenSeq], tuple[np.ndarray, np.ndarray, np.ndarray]]


def perplexity(scorer, dataset: Iterable[tuple[TokenSeq, TokenSeq]], mode: PplMode | str = PplMode.PER_STEP) -> float:
    """exp of the mean teacher-forced NLL.

    ``scorer`` is a model or a callable returning per-step NLL arrays for the
    three heads with NaN where a head is absent. ``per_step`` averages the
    present heads within each step, then over steps; ``per_head`` counts each
    present head as one token.
    """
    mode = PplMode(mode)
    if not callable(scorer) or hasattr(scorer, "decode_step"):
        from .model.train import score as model_score

        model = scorer
        scorer = lambda c, t: model_score(model, c, t)  # noqa: E731
    total, count = 0.0, 0
    for cond, tgt in dataset:
        nll = np.stack(scorer(cond, tgt))
        present = ~np.isnan(nll)
        if not np.isfinite(nll[present]).all():
            raise NonFiniteLoss("non-finite NLL while scoring")
        if mode is PplMode.PER_STEP:
            per_step = np.where(present, nll, 0.0).sum(axis=0) / present.sum(axis=0)
            total += float(per_step.sum())
            count += per_step.size
        else:
            total += float(nll[present].sum())
            count += int(present.sum())
    if not count:
        raise ValueError("nothing to score")
    return math.exp(total / count)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class EvalReport:
    ca: float
    ppl: float | None
    d_p: float
    d_v: float
    d_d: float
    d_ioi: float
    skipped_cells: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

        return {
            "ca": clean(self.ca),
            "ppl": clean(self.ppl),
            "d_p": clean(self.d_p),
            "d_v": clean(self.d_v),
            "d_d": clean(self.d_d),
            "d_ioi": clean(self.d_ioi),
            "skipped_cells": dict(self.skipped_cells),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def evaluate(
    gen: Score,
    ref: Score,
    *,
    lane: ChordLane | None = None,
    ppl: float | None = None,
    granularity: Granularity | str = Granularity.HALF_BAR,
) -> EvalReport:
    """Score a generated piece against its reference.

    Without an explicit ``lane`` each generated track is compared with the
    chords of the same reference track (see :func:`reference_lanes`).
    """
    roles = [r for r in gen.tracks if r is not Role.DRUM]
    if not roles:
        ca = math.nan
    else:
        ca = chord_accuracy(gen, lane if lane is not None else reference_lanes(ref, roles), granularity)
    dists = {f: distribution_distance(gen, ref, f) for f in Feature}
    return EvalReport(
        ca=ca,
        ppl=ppl,
        d_p=dists[Feature.PITCH].value,
        d_v=dists[Feature.VELOCITY].value,
        d_d=dists[Feature.DURATION].value,
        d_ioi=dists[Feature.IOI].value,
        skipped_cells={f.value: d.skipped for f, d in dists.items()},
    )


def mean_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Cell-agnostic mean over pieces (NaN entries ignored)."""

    def avg(xs):
        xs = [x for x in xs if x is not None and not math.isnan(x)]
        return sum(xs) / len(xs) if xs else math.nan

    ppl = [r.ppl for r in reports if r.ppl is not None]
    skipped: dict[str, int] = {}
    for r in reports:
        for k, v in r.skipped_cells.items():
            skipped[k] = skipped.get(k, 0) + v
    return EvalReport(
        ca=avg(r.ca for r in reports),
        ppl=avg(ppl) if ppl else None,
        d_p=avg(r.d_p for r in reports),
        d_v=avg(r.d_v for r in reports),
        d_d=avg(r.d_d for r in reports),
        d_ioi=avg(r.d_ioi for r in reports),
        skipped_cells=skipped,
    )
