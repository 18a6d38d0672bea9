"""Independent reference computations used to freeze expected values.

Nothing here calls into the code under test beyond the plain data types.
"""

from __future__ import annotations

import math

import numpy as np

from mumidi.score import Score


def mumidi_length(s: Score) -> int:
    """Bars + occupied positions + chord entries + (position, role) groups + notes."""
    chord_steps = {b * 32 + (0 if h == 0 else 15) for b, h, _ in s.chords}
    note_steps = {n.onset for notes in s.tracks.values() for n in notes}
    groups = {(n.onset, r) for r, notes in s.tracks.items() for n in notes}
    return s.n_bars + len(chord_steps | note_steps) + len(s.chords) + len(groups) + s.n_notes


def chord_histograms(s: Score) -> np.ndarray:
    """Per half-bar pitch-class time (in steps) of every non-drum note, computed step by step."""
    frames = np.zeros((2 * s.n_bars, 12))
    for role, notes in s.tracks.items():
        if role.value == "drum":
            continue
        for n in notes:
            for t in range(n.onset, n.onset + n.duration):
                if t // 16 < len(frames):
                    frames[t // 16, (n.pitch - 1) % 12] += 1
    return frames


def chord_emissions(hist: np.ndarray, chords, smoothing: float = 1e-3) -> np.ndarray:
    """Log-emission per (frame, state); the last state is the no-chord state."""
    out = np.full((len(hist), len(chords) + 1), -np.inf)
    for f, h in enumerate(hist):
        if h.sum() == 0:
            out[f, -1] = 0.0
            continue
        w = h / h.sum()
        for c, chord in enumerate(chords):
            tpl = np.array([1.0 if pc in chord.pitch_classes else 0.0 for pc in range(12)]) + smoothing
            out[f, c] = float(np.dot(w, np.log(tpl / tpl.sum())))
    return out


def exhaustive_path(emissions: np.ndarray, stay: float, switch: float, tol: float = 1e-9) -> list[int]:
    """Best state path by scoring every path; ties go to the lexicographically smallest."""
    n_frames, n_states = emissions.shape
    trans = np.full((n_states, n_states), switch)
    np.fill_diagonal(trans, stay)
    with np.errstate(invalid="ignore"):
        total = emissions[0].copy()
        for t in range(1, n_frames):
            total = total[..., :, None] + (trans + emissions[t])
    flat = total.reshape(-1)
    best = np.max(flat)
    first = int(np.flatnonzero(flat >= best - tol)[0])
    return [int(i) for i in np.unravel_index(first, total.shape)] if n_frames > 1 else [first]


def path_to_chords(path, chords, default):
    out, prev = [], default
    for s in path:
        if s < len(chords):
            prev = chords[s]
        out.append(prev)
    return out


def kde_tail_bound(a: int, b: int, h: float = 0.5) -> float:
    """Upper bound on the overlap of two single-class box-Gaussian densities ``|a - b|`` apart.

    Each density is below ``1`` everywhere and below the Gaussian tail beyond
    the midpoint, so the overlap is at most twice the mass of one density
    past the midpoint.
    """
    gap = abs(a - b) / 2 - 0.5
    return 2 * 0.5 * math.erfc(gap / (h * math.sqrt(2)))


def param_count(d: int, enc: int, dec: int, ffn: int, max_bars: int) -> int:
    """Closed-form parameter count written out term by term."""
    v1, v2, v3, positions, tempos = 379, 32, 32, 33, 3
    emb = (v1 + v2 + v3 + max_bars + positions + tempos) * d
    mha = 4 * (d * d + d)
    ff = (d * ffn + ffn) + (ffn * d + d)
    ln = 2 * d
    enc_layer = mha + ff + 2 * ln
    dec_layer = 2 * mha + ff + 3 * ln
    heads = (d * v1 + v1) + (d * v2 + v2) + (d * v3 + v3)
    return emb + enc * enc_layer + dec * dec_layer + heads
