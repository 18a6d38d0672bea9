"""Index layout of the three output vocabularies and token <-> step-id conversion.

Primary vocabulary (V1)::

    0          Bar
    1..32      Pos(1..32)
    33..38     Track(role), canonical role order
    39..122    Chord, by ChordSymbol.index
    123..250   pitch 1..128
    251..378   drum 1..128

Velocity and duration heads each cover levels 1..32 as indices 0..31.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..score import ROLES, ChordSymbol, Role, TempoClass, TEMPO_CLASSES
from ..tokens import BAR, Bar, Chord, Note, Pos, Token, TokenSeq, Track

BAR_ID = 0
POS_BASE = 0
TRACK_BASE = 33
CHORD_BASE = 39
PITCH_BASE = 123
DRUM_BASE = 251
V1_SIZE = 379
N_VELOCITY = 32
N_DURATION = 32
N_POSITIONS = 33  # index 0 is the "no position yet" slot


def pos_id(k: int) -> int:
    return POS_BASE + k


def track_id(role: Role) -> int:
    return TRACK_BASE + role.order


def note_id(pitch: int, role: Role | None) -> int:
    return (DRUM_BASE if role is Role.DRUM else PITCH_BASE) + pitch - 1


def is_note_id(i: int) -> bool:
    return i >= PITCH_BASE


def structural_token(i: int) -> Token:
    """Token for a non-note V1 index."""
    if i == BAR_ID:
        return BAR
    if i < TRACK_BASE:
        return Pos(i - POS_BASE)
    if i < CHORD_BASE:
        return Track(ROLES[i - TRACK_BASE])
    if i < PITCH_BASE:
        return Chord(ChordSymbol.from_index(i - CHORD_BASE))
    raise ValueError(f"index {i} is a note symbol")


def note_pitch(i: int) -> int:
    return i - (DRUM_BASE if i >= DRUM_BASE else PITCH_BASE) + 1


@dataclass(frozen=True)
class Steps:
    """Per-step integer inputs for one token sequence.

    ``vel``/``dur`` are -1 on non-note steps; ``bar`` is 0-based; ``pos`` is
    0 before the first Pos of a bar (and on Bar steps), else 1..32.
    """

    tok: np.ndarray
    vel: np.ndarray
    dur: np.ndarray
    bar: np.ndarray
    pos: np.ndarray
    tempo: int

    def __len__(self) -> int:
        return len(self.tok)

    @property
    def is_note(self) -> np.ndarray:
        return self.vel >= 0

    def slice(self, lo: int, hi: int) -> Steps:
        return Steps(self.tok[lo:hi], self.vel[lo:hi], self.dur[lo:hi], self.bar[lo:hi], self.pos[lo:hi], self.tempo)

    def segments(self) -> list[tuple[int, int]]:
        """[lo, hi) ranges of consecutive steps sharing a bar."""
        if not len(self):
            return []
        cuts = np.flatnonzero(np.diff(self.bar)) + 1
        bounds = [0, *cuts.tolist(), len(self)]
        return list(zip(bounds[:-1], bounds[1:]))


def tempo_id(t: TempoClass) -> int:
    return TEMPO_CLASSES.index(t)


class StepTracker:
    """Tracks bar, position and open role while scanning tokens left to right."""

    def __init__(self) -> None:
        self.bar = -1
        self.pos = 0
        self.role: Role | None = None

    def ids(self, tok: Token) -> tuple[int, int, int, int, int]:
        """Advance over ``tok``; return (v1, vel, dur, bar, pos) for its step."""
        match tok:
            case Bar():
                self.bar += 1
                self.pos = 0
                self.role = None
                i = BAR_ID
            case Pos(k):
                self.pos = k
                self.role = None
                i = pos_id(k)
            case Track(role):
                self.role = role
                i = track_id(role)
            case Chord(chord):
                i = CHORD_BASE + chord.index
            case Note(p, v, d):
                return note_id(p, self.role), v - 1, d - 1, max(self.bar, 0), self.pos
            case _:
                raise TypeError(f"not a token: {tok!r}")
        return i, -1, -1, max(self.bar, 0), self.pos


def to_steps(tokens: Iterable[Token], tempo: TempoClass) -> Steps:
    tr = StepTracker()
    rows = [tr.ids(t) for t in tokens]
    arr = np.array(rows, dtype=np.int64).reshape(-1, 5)
    return Steps(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], tempo_id(tempo))


def teacher_forcing(target: TokenSeq) -> tuple[Steps, np.ndarray, np.ndarray, np.ndarray]:
    """Decoder inputs and gold outputs for a target sequence.

    The sequence is closed with an extra Bar that acts as the end symbol, so
    inputs are the target tokens and outputs are the same tokens shifted by
    one. Gold velocity/duration are -1 where the output is not a note.
    """
    inputs = to_steps(target.tokens, target.tempo)
    full = to_steps((*target.tokens, BAR), target.tempo)
    return inputs, full.tok[1:], full.vel[1:], full.dur[1:]
