"""Score <-> MuMIDI conversion, quantization and baseline length counts."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from typing import Iterable, Mapping

from .midi_io import RawMidi, RawNote, RawTrack
from .score import (
    HALF_BAR,
    ROLES,
    STEPS_PER_BAR,
    ChordSymbol,
    InvariantViolation,
    QNote,
    Role,
    Score,
    TempoClass,
)
from .tokens import (
    BAR,
    Chord,
    GrammarState,
    Note,
    Pos,
    TokenSeq,
    Track,
)

STEPS_PER_BEAT = STEPS_PER_BAR // 4
CHORD_MARKER = "chord"
END_MARKER = "end"


class EmptyInput(ValueError):
    pass


class EmptyCondition(ValueError):
    pass


def velocity_level(velocity: int) -> int:
    return min(32, max(1, velocity // 4 + 1))


def velocity_value(level: int) -> int:
    """Bin midpoint used when rendering a level back to MIDI velocity."""
    return 4 * (level - 1) + 2


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _parse_markers(raw: RawMidi, ticks_per_step: float) -> tuple[list, int | None]:
    chords, end_bars = [], None
    ticks_per_bar = ticks_per_step * STEPS_PER_BAR
    for tick, text in raw.markers:
        parts = text.split()
        if len(parts) == 3 and parts[0] == CHORD_MARKER:
            step = _round_half_up(tick / ticks_per_step)
            bar, within = divmod(step, STEPS_PER_BAR)
            try:
                chord = ChordSymbol.parse(parts[1], parts[2])
            except InvariantViolation:
                continue
            chords.append((bar, 0 if within < HALF_BAR - 1 else 1, chord))
        elif parts == [END_MARKER]:
            end_bars = _round_half_up(tick / ticks_per_bar)
    return chords, end_bars


def quantize(raw: RawMidi, role_assignment: Mapping[int, Role]) -> Score:
    """Snap a 4/4 RawMidi onto the 32-steps-per-bar grid.

    Tracks missing from ``role_assignment`` are dropped; tracks sharing a
    role are merged. Chord and end markers written by
    ``render_score_to_midi`` are read back, so rendering is invertible.
    """
    tps = raw.ticks_per_beat / STEPS_PER_BEAT
    tracks: dict[Role, list[QNote]] = defaultdict(list)
    for idx, role in role_assignment.items():
        for n in raw.tracks[idx].notes:
            onset = _round_half_up(n.onset_tick / tps)
            dur = min(32, max(1, _round_half_up(n.duration_ticks / tps)))
            tracks[role].append(QNote(onset, n.pitch + 1, velocity_level(n.velocity), dur))
    if not any(tracks.values()):
        raise EmptyInput("no notes to quantize")
    chords, end_bars = _parse_markers(raw, tps)
    last_onset = max(n.onset for notes in tracks.values() for n in notes)
    n_bars = last_onset // STEPS_PER_BAR + 1
    if end_bars is not None:
        n_bars = max(n_bars, end_bars)
    chords = [c for c in chords if c[0] < n_bars]
    # a repeated slot keeps its last marker
    slots = {(b, h): c for b, h, c in chords}
    return Score(
        TempoClass.from_bpm(raw.tempo_bpm),
        n_bars,
        dict(tracks),
        tuple((b, h, c) for (b, h), c in slots.items()),
    )


# ---------------------------------------------------------------------------
# MuMIDI


def encode(s: Score) -> TokenSeq:
    events: dict[int, dict[Role, list[QNote]]] = defaultdict(lambda: defaultdict(list))
    for role, notes in s.tracks.items():
        for n in notes:
            events[n.onset][role].append(n)
    chord_at = {b * STEPS_PER_BAR + (0 if h == 0 else HALF_BAR - 1): c for b, h, c in s.chords}

    out = []
    for bar in range(s.n_bars):
        out.append(BAR)
        lo = bar * STEPS_PER_BAR
        steps = sorted({t for t in events if lo <= t < lo + STEPS_PER_BAR} | {t for t in chord_at if lo <= t < lo + STEPS_PER_BAR})
        for step in steps:
            out.append(Pos(step - lo + 1))
            if step in chord_at:
                out.append(Chord(chord_at[step]))
            groups = events.get(step, {})
            for role in ROLES:
                notes = groups.get(role)
                if not notes:
                    continue
                out.append(Track(role))
                for n in sorted(notes, key=lambda n: (n.pitch, n.duration, n.velocity)):
                    out.append(Note(n.pitch, n.velocity, n.duration))
    return TokenSeq(s.tempo, tuple(out))


def decode(t: TokenSeq) -> Score:
    """Inverse of :func:`encode`. Order within a bar is not required to be canonical."""
    g = GrammarState()
    tracks: dict[Role, list[QNote]] = defaultdict(list)
    chords = []
    for i, tok in enumerate(t.tokens):
        g.feed(tok, i)
        match tok:
            case Chord(chord):
                chords.append((g.bar, 0 if g.pos == 1 else 1, chord))
            case Note(p, v, d):
                tracks[g.role].append(QNote(g.bar * STEPS_PER_BAR + g.pos - 1, p, v, d))
    g.finish(len(t.tokens))
    return Score(t.tempo, g.bar + 1, dict(tracks), tuple(chords))


def split_condition_target(s: Score, condition_roles: Iterable[Role]) -> tuple[TokenSeq, TokenSeq]:
    cond = frozenset(condition_roles)
    if not cond:
        raise EmptyCondition("condition role set is empty")
    if not cond <= set(ROLES):
        raise InvariantViolation(f"unknown condition roles {cond - set(ROLES)}")
    condition = s.restrict(cond, keep_chords=True)
    target = s.restrict(set(ROLES) - cond, keep_chords=False)
    return encode(condition), encode(target)


# ---------------------------------------------------------------------------
# baselines


class BaselineStyle(enum.Enum):
    MIDI_LIKE = "midi_like"
    REMI = "remi"


MAX_TIME_SHIFT = STEPS_PER_BAR


def encode_baseline(s: Score, style: BaselineStyle | str) -> int:
    """Token count of the same score under a multi-token-per-note baseline.

    REMI (track-extended): one Bar per bar; every chord costs Position +
    Chord; every note costs Position, Track, Velocity, Pitch and Duration.

    MIDI-like (instrument-specific events): one Bar per bar; every note
    costs Set-Velocity, Note-On and Note-Off; chords cost one token; a
    Time-Shift (at most one bar long) moves the clock to each new event time
    that is not a bar start.
    """
    style = BaselineStyle(style)
    n_notes = s.n_notes
    if style is BaselineStyle.REMI:
        return s.n_bars + 2 * len(s.chords) + 5 * n_notes

    times = set()
    for notes in s.tracks.values():
        for n in notes:
            times.add(n.onset)
            times.add(n.onset + n.duration)
    for b, h, _ in s.chords:
        times.add(b * STEPS_PER_BAR + (0 if h == 0 else HALF_BAR - 1))
    last_bar_start = (s.n_bars - 1) * STEPS_PER_BAR
    shifts = 0
    clock = 0
    for t in sorted(times):
        # passing a Bar token restarts the clock at that bar's start
        bar_start = min(t // STEPS_PER_BAR * STEPS_PER_BAR, last_bar_start)
        if bar_start > clock:
            clock = bar_start
        if t > clock:
            shifts += math.ceil((t - clock) / MAX_TIME_SHIFT)
            clock = t
    return s.n_bars + len(s.chords) + 3 * n_notes + shifts


# ---------------------------------------------------------------------------
# export

RENDER_TICKS_PER_BEAT = 480
RENDER_TEMPO = {TempoClass.LOW: 80.0, TempoClass.MID: 120.0, TempoClass.HIGH: 170.0}
ROLE_PROGRAM = {
    Role.MELODY: 73,
    Role.DRUM: 0,
    Role.PIANO: 0,
    Role.STRING: 48,
    Role.GUITAR: 25,
    Role.BASS: 33,
}


def render_score_to_midi(s: Score, *, chords: bool = True, markers: Iterable[tuple[int, str]] = ()) -> RawMidi:
    """Export a Score at 480 ticks/beat (60 ticks per step).

    Chords and the piece length travel as marker events so that
    ``quantize`` can recover the exact Score.
    """
    tps = RENDER_TICKS_PER_BEAT // STEPS_PER_BEAT
    tracks = []
    for role, notes in s.tracks.items():
        tracks.append(RawTrack(
            name=role.value.capitalize(),
            program=ROLE_PROGRAM[role],
            is_drum=role is Role.DRUM,
            notes=tuple(
                RawNote(n.onset * tps, n.pitch - 1, velocity_value(n.velocity), n.duration * tps)
                for n in notes
            ),
        ))
    marks = list(markers)
    if chords:
        for b, h, c in s.chords:
            step = b * STEPS_PER_BAR + (0 if h == 0 else HALF_BAR - 1)
            marks.append((step * tps, f"{CHORD_MARKER} {c.root_name} {c.quality.value}"))
        marks.append((s.n_bars * STEPS_PER_BAR * tps, END_MARKER))
    return RawMidi(
        ticks_per_beat=RENDER_TICKS_PER_BEAT,
        tempo_bpm=RENDER_TEMPO[s.tempo],
        time_signatures=((0, 4, 4),),
        tracks=tuple(tracks),
        markers=tuple(marks),
    )
