"""Half-bar chord recognition with an HMM decoded by Viterbi."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .score import (
    ALL_CHORDS,
    C_MAJOR,
    HALF_BAR,
    ChordSymbol,
    Role,
    Score,
)

ChordLane = tuple[ChordSymbol, ...]


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ChordHmm:
    """Chord states plus a trailing NoChord state.

    Emission of chord ``c`` for a frame with normalised pitch-class
    histogram ``h`` is ``sum(h * log(template_c))`` where the template puts
    weight 1 on chord tones, 0 elsewhere, plus ``smoothing``, normalised to
    sum to one. NoChord is the only state allowed on silent frames and is
    forbidden elsewhere.
    """

    chords: tuple[ChordSymbol, ...] = ALL_CHORDS
    stay_logit: float = 0.0
    switch_logit: float = -2.0
    smoothing: float = 1e-3

    def __post_init__(self) -> None:
        if not self.stay_logit > self.switch_logit:
            raise ValueError("stay_logit must exceed switch_logit")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if not self.chords:
            raise ValueError("at least one chord state is required")

    @property
    def n_states(self) -> int:
        return len(self.chords) + 1

    def templates(self) -> np.ndarray:
        t = np.zeros((len(self.chords), 12))
        for i, c in enumerate(self.chords):
            t[i, sorted(c.pitch_classes)] = 1.0
        return t

    def log_templates(self) -> np.ndarray:
        t = self.templates() + self.smoothing
        return np.log(t / t.sum(axis=1, keepdims=True))

    def emissions(self, histograms: np.ndarray) -> np.ndarray:
        """[frames, 12] raw histograms -> [frames, n_states] log emission scores."""
        h = np.asarray(histograms, dtype=np.float64)
        totals = h.sum(axis=1)
        silent = totals <= 0
        norm = np.divide(h, totals[:, None], out=np.zeros_like(h), where=~silent[:, None])
        out = np.empty((len(h), self.n_states))
        out[:, :-1] = norm @ self.log_templates().T
        out[:, -1] = 0.0
        out[silent, :-1] = -np.inf
        out[~silent, -1] = -np.inf
        return out

    def transitions(self) -> np.ndarray:
        n = self.n_states
        t = np.full((n, n), self.switch_logit)
        np.fill_diagonal(t, self.stay_logit)
        return t


DEFAULT_HMM = ChordHmm()


def viterbi(emissions: np.ndarray, transitions: np.ndarray, tol: float = 1e-9) -> list[int]:
    """Highest-scoring state path; ties go to the lexicographically smallest path.

    Runs the max-sum recursion backwards (best score from each state to the
    end), then walks forward choosing the smallest state that stays optimal.
    """
    n_frames, n_states = emissions.shape
    if n_frames == 0:
        return []
    best_to_end = np.empty_like(emissions)
    best_to_end[-1] = emissions[-1]
    for t in range(n_frames - 2, -1, -1):
        best_to_end[t] = emissions[t] + np.max(transitions + best_to_end[t + 1][None, :], axis=1)

    def pick(scores: np.ndarray) -> int:
        top = scores.max()
        return int(np.flatnonzero(scores >= top - tol)[0])

    path = [pick(best_to_end[0])]
    for t in range(1, n_frames):
        path.append(pick(transitions[path[-1]] + best_to_end[t]))
    return path


def pitch_class_histograms(s: Score, roles: Iterable[Role] | None = None) -> np.ndarray:
    """Duration-weighted pitch-class histogram per half-bar frame (drums excluded)."""
    n_frames = 2 * s.n_bars
    hist = np.zeros((n_frames, 12))
    selected = set(roles) if roles is not None else set(s.tracks)
    for role, notes in s.tracks.items():
        if role is Role.DRUM or role not in selected:
            continue
        for n in notes:
            pc = (n.pitch - 1) % 12
            start, end = n.onset, n.onset + n.duration
            f = start // HALF_BAR
            while f < n_frames and f * HALF_BAR < end:
                lo, hi = max(start, f * HALF_BAR), min(end, (f + 1) * HALF_BAR)
                hist[f, pc] += hi - lo
                f += 1
    return hist


def states_to_lane(path: Sequence[int], hmm: ChordHmm) -> ChordLane:
    lane = []
    prev = C_MAJOR
    for s in path:
        if s < len(hmm.chords):
            prev = hmm.chords[s]
        lane.append(prev)
    return tuple(lane)


def infer_chords(s: Score, roles: Iterable[Role] | None = None, hmm: ChordHmm = DEFAULT_HMM) -> ChordLane:
    """Two chords per bar from the pitched notes of ``s`` (optionally only ``roles``)."""
    hist = pitch_class_histograms(s, roles)
    if hist.sum() <= 0:
        raise EmptyInput("no pitched notes to infer chords from")
    path = viterbi(hmm.emissions(hist), hmm.transitions())
    return states_to_lane(path, hmm)


def lane_to_entries(lane: ChordLane) -> tuple[tuple[int, int, ChordSymbol], ...]:
    return tuple((i // 2, i % 2, c) for i, c in enumerate(lane))
