"""Seeded generators for random scores, random MIDI files and a small
synthetic pop-style corpus."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .codec import render_score_to_midi
from .midi_io import RawMidi, RawNote, RawTrack, write_smf
from .score import (
    ALL_CHORDS,
    ROLES,
    STEPS_PER_BAR,
    ChordSymbol,
    QNote,
    Quality,
    Role,
    Score,
    TempoClass,
)


def random_score(
    rng: np.random.Generator,
    *,
    max_bars: int = 6,
    max_notes: int = 40,
    chords: bool = True,
    roles: tuple[Role, ...] = ROLES,
) -> Score:
    """Unstructured random score: any onset, any attributes, stacked notes allowed."""
    n_bars = int(rng.integers(0, max_bars + 1))
    tracks: dict[Role, list[QNote]] = {}
    if n_bars:
        for role in roles:
            if rng.random() < 0.4:
                continue
            k = int(rng.integers(0, max_notes // len(roles) + 2))
            onsets = rng.integers(0, n_bars * STEPS_PER_BAR, size=k)
            tracks[role] = [
                QNote(int(o), int(rng.integers(1, 129)), int(rng.integers(1, 33)), int(rng.integers(1, 33)))
                for o in onsets
            ]
            # occasional exact duplicates and same-onset stacks
            if k and rng.random() < 0.2:
                tracks[role].append(tracks[role][0])
    entries = []
    if chords:
        for b in range(n_bars):
            for h in (0, 1):
                if rng.random() < 0.5:
                    entries.append((b, h, ALL_CHORDS[int(rng.integers(84))]))
    tempo = TempoClass(rng.choice([t.value for t in TempoClass]))
    return Score(tempo, n_bars, tracks, tuple(entries))


def random_raw_midi(rng: np.random.Generator, max_tracks: int = 4, max_notes: int = 30) -> RawMidi:
    """Random RawMidi whose same-pitch notes never overlap within a track."""
    tpb = int(rng.choice([96, 120, 192, 384, 480, 960]))
    tracks = []
    for k in range(int(rng.integers(0, max_tracks + 1))):
        busy: dict[int, int] = {}
        notes = []
        for _ in range(int(rng.integers(0, max_notes + 1))):
            pitch = int(rng.integers(0, 128))
            start = busy.get(pitch, 0) + int(rng.integers(0, 4 * tpb))
            dur = int(rng.integers(1, 4 * tpb))
            notes.append(RawNote(start, pitch, int(rng.integers(1, 128)), dur))
            busy[pitch] = start + dur
        tracks.append(RawTrack(
            name=f"track {k}" if rng.random() < 0.7 else "",
            program=int(rng.integers(0, 128)),
            is_drum=bool(rng.random() < 0.2),
            notes=tuple(notes),
        ))
    sigs, tick = [], 0
    for _ in range(int(rng.integers(0, 4))):
        sigs.append((tick, int(rng.integers(1, 13)), int(rng.choice([2, 4, 8, 16]))))
        tick += int(rng.integers(1, 16 * tpb))
    markers = tuple((int(rng.integers(0, 16 * tpb)), f"m{i}") for i in range(int(rng.integers(0, 3))))
    return RawMidi(
        ticks_per_beat=tpb,
        tempo_bpm=round(float(rng.uniform(30, 300)), 2),
        time_signatures=tuple(sigs),
        tracks=tuple(tracks),
        markers=markers,
    )


# ---------------------------------------------------------------------------
# pop-style pieces

_PROGRESSIONS = (
    ((0, "major"), (7, "major"), (9, "minor"), (5, "major")),
    ((9, "minor"), (5, "major"), (0, "major"), (7, "major")),
    ((0, "major"), (9, "minor"), (5, "major"), (7, "major")),
    ((2, "minor7"), (7, "major"), (0, "major7"), (9, "minor7")),
    ((5, "major"), (7, "major"), (4, "minor"), (9, "minor")),
)
_SCALE = (0, 2, 4, 5, 7, 9, 11)


def _chord_pitches(chord: ChordSymbol, base: int) -> list[int]:
    return [base + chord.root + i for i in chord.quality.intervals]


def _note(onset: int, midi_pitch: int, vel: int, dur: int) -> QNote:
    return QNote(onset, midi_pitch + 1, max(1, min(32, vel)), max(1, min(32, dur)))


def pop_piece(
    rng: np.random.Generator,
    n_bars: int = 16,
    roles: frozenset[Role] | None = None,
    transpose: int | None = None,
) -> Score:
    """A loop-based pop arrangement over a four-chord progression.

    Each accompaniment role picks one of a few idiomatic patterns per piece
    (e.g. block chords vs. arpeggios for piano), so densities vary across
    the corpus the way real arrangements do.
    """
    roles = frozenset(ROLES) if roles is None else frozenset(roles)
    shift = int(rng.integers(0, 12)) if transpose is None else transpose
    prog = _PROGRESSIONS[int(rng.integers(len(_PROGRESSIONS)))]
    prog = [ChordSymbol((r + shift) % 12, Quality(q)) for r, q in prog]
    chords_per_bar = int(rng.choice([1, 2]))
    lane = []
    for b in range(n_bars):
        for h in (0, 1):
            idx = (b * chords_per_bar + (h if chords_per_bar == 2 else 0)) % len(prog)
            lane.append(prog[idx])

    def chord_at(step: int) -> ChordSymbol:
        return lane[min(step // 16, len(lane) - 1)]

    tracks: dict[Role, list[QNote]] = {r: [] for r in ROLES if r in roles}
    vel_base = int(rng.integers(18, 28))
    piano_style = rng.choice(["block", "arpeggio", "arpeggio", "half"])
    drum_style = rng.choice(["eighths", "quarters", "sixteenths"])
    bass_style = rng.choice(["quarters", "eighths", "roots"])
    guitar_style = rng.choice(["offbeat", "strum", "picked", "riff"])
    string_style = rng.choice(["pad", "halfpad", "line", "counter"])

    for b in range(n_bars):
        lo = b * STEPS_PER_BAR
        if Role.MELODY in roles:
            t = lo
            while t < lo + STEPS_PER_BAR:
                dur = int(rng.choice([2, 4, 4, 8]))
                c = chord_at(t)
                if rng.random() < 0.8:
                    pcs = list(c.pitch_classes) if rng.random() < 0.6 else [(c.root + s) % 12 for s in _SCALE]
                    pc = int(rng.choice(pcs))
                    tracks[Role.MELODY].append(_note(t, 60 + pc, vel_base + 3 + int(rng.integers(-2, 3)), dur))
                t += dur
        if Role.DRUM in roles:
            step = {"eighths": 4, "quarters": 8, "sixteenths": 2}[drum_style]
            for t in range(lo, lo + STEPS_PER_BAR, step):
                beat = (t - lo) // 8
                tracks[Role.DRUM].append(_note(t, 42, vel_base - 4, 2))
                if (t - lo) % 8 == 0:
                    tracks[Role.DRUM].append(_note(t, 36 if beat % 2 == 0 else 38, vel_base + 2, 2))
        if Role.PIANO in roles:
            for t in range(lo, lo + STEPS_PER_BAR, 8 if piano_style != "half" else 16):
                c = chord_at(t)
                if piano_style == "arpeggio":
                    for k, p in enumerate(_chord_pitches(c, 60)[:4]):
                        tracks[Role.PIANO].append(_note(t + 2 * k, p, vel_base, 2))
                else:
                    dur = 8 if piano_style == "block" else 16
                    for p in _chord_pitches(c, 48):
                        tracks[Role.PIANO].append(_note(t, p, vel_base, dur))
        if Role.BASS in roles:
            step = {"quarters": 8, "eighths": 4, "roots": 16}[bass_style]
            for t in range(lo, lo + STEPS_PER_BAR, step):
                c = chord_at(t)
                p = 36 + c.root + (7 if bass_style == "eighths" and (t - lo) % 8 == 4 else 0)
                tracks[Role.BASS].append(_note(t, p, vel_base + 1, step))
        if Role.GUITAR in roles:
            if guitar_style == "riff":
                # single-note scale riff over the chord root
                for t in range(lo, lo + STEPS_PER_BAR, 4):
                    if rng.random() < 0.75:
                        c = chord_at(t)
                        step = _SCALE[int(rng.integers(0, 5))]
                        tracks[Role.GUITAR].append(_note(t, 52 + (c.root + step) % 12, vel_base - 2, 4))
            elif guitar_style == "picked":
                for t in range(lo, lo + STEPS_PER_BAR, 4):
                    c = chord_at(t)
                    ps = _chord_pitches(c, 52)
                    tracks[Role.GUITAR].append(_note(t, ps[((t - lo) // 4) % len(ps)], vel_base - 2, 4))
            else:
                offs = (8, 24) if guitar_style == "offbeat" else (0, 8, 16, 24)
                for off in offs:
                    c = chord_at(lo + off)
                    for p in _chord_pitches(c, 52)[:3]:
                        tracks[Role.GUITAR].append(_note(lo + off, p, vel_base - 2, 6))
        if Role.STRING in roles:
            if string_style == "counter":
                t = lo
                while t < lo + STEPS_PER_BAR:
                    dur = int(rng.choice([4, 8, 8, 16]))
                    pc = int(rng.choice(sorted(chord_at(t).pitch_classes)))
                    tracks[Role.STRING].append(_note(t, 72 + pc, vel_base - 6, dur))
                    t += dur
            elif string_style == "line":
                for t in range(lo, lo + STEPS_PER_BAR, 8):
                    c = chord_at(t)
                    tracks[Role.STRING].append(_note(t, 72 + c.root, vel_base - 6, 8))
            else:
                span = 32 if string_style == "pad" else 16
                for t in range(lo, lo + STEPS_PER_BAR, span):
                    for p in _chord_pitches(chord_at(t), 60)[:3]:
                        tracks[Role.STRING].append(_note(t, p, vel_base - 6, span))
    # played-in parts: late onsets by one step, never across the bar line
    humanize = float(rng.choice([0.0, 0.15, 0.3]))
    if humanize:
        for role, notes in tracks.items():
            if role is Role.DRUM:
                continue
            tracks[role] = [
                QNote(n.onset + 1, n.pitch, n.velocity, n.duration)
                if rng.random() < humanize and (n.onset + 1) % STEPS_PER_BAR else n
                for n in notes
            ]
    tempo = TempoClass(rng.choice(["low", "mid", "mid", "high"]))
    return Score(tempo, n_bars, tracks, tuple((i // 2, i % 2, c) for i, c in enumerate(lane)))


def pop_corpus(n: int, seed: int = 0, n_bars: int = 16, roles=None) -> list[Score]:
    rng = np.random.default_rng(seed)
    return [pop_piece(rng, n_bars, roles) for _ in range(n)]


def write_synthetic_corpus(directory, n_valid: int = 20, n_invalid: int = 5, seed: int = 0, n_bars: int = 8) -> list[Path]:
    """Write ``n_valid`` files that survive preprocessing and ``n_invalid`` that do not.

    Valid files alternate between a named melody track and an unnamed flute
    melody. Invalid files cycle through: no melody, too few tracks after
    filtering, 3/4 only, truncated bytes, not a MIDI file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_valid):
        s = pop_piece(rng, n_bars, frozenset({Role.MELODY, Role.DRUM, Role.PIANO, Role.BASS}))
        raw = render_score_to_midi(s, chords=False)
        tracks = []
        for t in raw.tracks:
            name = {"Melody": "Melody" if i % 2 == 0 else "Lead"}.get(t.name, t.name + " part")
            tracks.append(RawTrack(name, t.program, t.is_drum, t.notes))
        raw = RawMidi(raw.ticks_per_beat, raw.tempo_bpm, ((0, 4, 4),) if i % 3 else (), tuple(tracks))
        paths.append(directory / f"valid_{i:03d}.mid")
        paths[-1].write_bytes(write_smf(raw))

    for i in range(n_invalid):
        kind = i % 5
        path = directory / f"invalid_{i:03d}.mid"
        if kind == 0:  # no melody: the flute becomes an oboe
            s = pop_piece(rng, n_bars, frozenset({Role.MELODY, Role.PIANO, Role.BASS}))
            raw = render_score_to_midi(s, chords=False)
            tracks = tuple(RawTrack("part", 68 if t.program == 73 else t.program, t.is_drum, t.notes) for t in raw.tracks)
            data = write_smf(RawMidi(raw.ticks_per_beat, raw.tempo_bpm, (), tracks))
        elif kind == 1:  # melody + one other track only
            s = pop_piece(rng, n_bars, frozenset({Role.MELODY, Role.BASS}))
            data = write_smf(render_score_to_midi(s, chords=False))
        elif kind == 2:  # 3/4 throughout
            s = pop_piece(rng, n_bars, frozenset({Role.MELODY, Role.PIANO, Role.BASS}))
            raw = render_score_to_midi(s, chords=False)
            data = write_smf(RawMidi(raw.ticks_per_beat, raw.tempo_bpm, ((0, 3, 4),), raw.tracks))
        elif kind == 3:  # truncated
            s = pop_piece(rng, n_bars, frozenset({Role.MELODY, Role.PIANO, Role.BASS}))
            data = write_smf(render_score_to_midi(s, chords=False))[:-40]
        else:
            data = b"RIFF not a midi file"
        path.write_bytes(data)
        paths.append(path)
    return paths
