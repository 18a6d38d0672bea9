"""Corpus cleansing: melody extraction, track compression, filtration,
4/4 segmentation, chord recognition and condition/target sharding."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .chords import EmptyInput as NoPitchedNotes
from .chords import infer_chords, lane_to_entries
from .codec import EmptyInput, quantize, split_condition_target
from .midi_io import MidiError, RawMidi, RawTrack, read_midi_file
from .score import ROLES, Role, Score
from .tokens import TokenSeq, write_jsonl

log = logging.getLogger(__name__)

FLUTE_PROGRAM = 73
MIN_TRACK_NOTES = 20
MIN_TRACKS = 3
FORMAT_VERSION = "mumidi-dataset-1"


class EmptyCorpus(RuntimeError):
    pass


def extract_melody(raw: RawMidi) -> int | None:
    """Index of the melody track: a track named like "melody", else the first flute."""
    for i, t in enumerate(raw.tracks):
        if "melody" in t.name.lower() and t.notes:
            return i
    for i, t in enumerate(raw.tracks):
        if not t.is_drum and t.program == FLUTE_PROGRAM and t.notes:
            return i
    return None


def program_role(track: RawTrack) -> Role:
    if track.is_drum:
        return Role.DRUM
    p = track.program
    if 32 <= p <= 39:
        return Role.BASS
    if 24 <= p <= 31:
        return Role.GUITAR
    if 0 <= p <= 7:
        return Role.PIANO
    return Role.STRING


def _span(track: RawTrack) -> tuple[int, int]:
    return (
        min(n.onset_tick for n in track.notes),
        max(n.onset_tick + n.duration_ticks for n in track.notes),
    )


def _resolve_bass(raw: RawMidi, indices: list[int]) -> list[int]:
    """Among time-overlapping bass tracks keep the one with the most notes."""
    clusters: list[list[int]] = []
    for i in sorted(indices, key=lambda i: _span(raw.tracks[i])):
        lo, _ = _span(raw.tracks[i])
        if clusters and lo < max(_span(raw.tracks[j])[1] for j in clusters[-1]):
            clusters[-1].append(i)
        else:
            clusters.append([i])
    keep = [max(c, key=lambda i: (len(raw.tracks[i].notes), -i)) for c in clusters]
    return sorted(keep)


def assign_roles(raw: RawMidi, melody_idx: int | None) -> dict[int, Role]:
    """Map track index -> role for every non-empty track that survives compression.

    Files whose track names are exactly role names (as written by
    ``render_score_to_midi``) keep those roles.
    """
    names = {r.value for r in ROLES}
    live = [i for i, t in enumerate(raw.tracks) if t.notes]
    if live and all(raw.tracks[i].name.lower() in names for i in live):
        return {i: Role(raw.tracks[i].name.lower()) for i in live}

    roles: dict[int, Role] = {}
    bass = []
    for i in live:
        if i == melody_idx:
            roles[i] = Role.MELODY
            continue
        role = program_role(raw.tracks[i])
        if role is Role.BASS:
            bass.append(i)
        else:
            roles[i] = role
    for i in _resolve_bass(raw, bass) if bass else []:
        roles[i] = Role.BASS
    return dict(sorted(roles.items()))


def compress_tracks(raw: RawMidi, melody_idx: int | None) -> Score:
    return quantize(raw, assign_roles(raw, melody_idx))


def drop_sparse_tracks(s: Score, min_notes: int = MIN_TRACK_NOTES) -> Score:
    return s.restrict([r for r, n in s.tracks.items() if len(n) >= min_notes])


def filter_piece(s: Score) -> bool:
    kept = drop_sparse_tracks(s)
    return (
        len(kept.tracks) >= MIN_TRACKS
        and Role.MELODY in kept.tracks
        and any(r is not Role.MELODY for r in kept.tracks)
    )


def _is_four_four(num: int, den: int) -> bool:
    return (num, den) == (4, 4)


def segment(raw: RawMidi) -> list[RawMidi]:
    """Split at time-signature changes and keep the 4/4 stretches.

    Notes are assigned to the segment holding their onset and cut at its end.
    A repeated identical signature is not a change.
    """
    end = max(raw.end_tick, max((t for t, _, _ in raw.time_signatures), default=0))
    regions: list[tuple[int, int, bool]] = []
    sigs = list(raw.time_signatures)
    if not sigs or sigs[0][0] > 0:
        sigs.insert(0, (0, 4, 4))
    merged: list[tuple[int, int, int]] = []
    for sig in sigs:
        if merged and sig[1:] == merged[-1][1:]:
            continue
        merged.append(sig)
    for k, (tick, num, den) in enumerate(merged):
        stop = merged[k + 1][0] if k + 1 < len(merged) else end
        if stop > tick:
            regions.append((tick, stop, _is_four_four(num, den)))

    out = []
    for lo, hi, ok in regions:
        if not ok:
            continue
        tracks = []
        for t in raw.tracks:
            notes = tuple(
                (n.onset_tick - lo, n.pitch, n.velocity, min(n.duration_ticks, hi - n.onset_tick))
                for n in t.notes
                if lo <= n.onset_tick < hi
            )
            tracks.append(RawTrack(t.name, t.program, t.is_drum, notes))
        out.append(RawMidi(
            ticks_per_beat=raw.ticks_per_beat,
            tempo_bpm=raw.tempo_bpm,
            time_signatures=((0, 4, 4),),
            tracks=tuple(tracks),
            markers=tuple((t - lo, s) for t, s in raw.markers if lo <= t < hi),
        ))
    return out


# ---------------------------------------------------------------------------
# whole corpus


@dataclass(frozen=True)
class Piece:
    piece_id: str
    score: Score
    tempo_bpm: float
    condition: TokenSeq
    target: TokenSeq


@dataclass
class CorpusStats:
    pieces: int = 0
    bars: int = 0
    hours: float = 0.0

    def add(self, bars: int, tempo_bpm: float) -> None:
        self.pieces += 1
        self.bars += bars
        self.hours += bars * 4 * 60.0 / tempo_bpm / 3600.0

    def merge(self, other: CorpusStats) -> CorpusStats:
        return CorpusStats(self.pieces + other.pieces, self.bars + other.bars, self.hours + other.hours)

    def to_json(self) -> dict:
        return {"pieces": self.pieces, "bars": self.bars, "hours": round(self.hours, 6)}


@dataclass
class PipelineResult:
    pieces: list[Piece] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    stats: CorpusStats = field(default_factory=CorpusStats)

    @property
    def pairs(self) -> list[tuple[TokenSeq, TokenSeq]]:
        return [(p.condition, p.target) for p in self.pieces]


def process_midi(raw: RawMidi, name: str, condition_roles: Iterable[Role] = (Role.MELODY,)) -> tuple[list[Piece], list[dict]]:
    """Run every per-file stage after parsing; returns pieces and skip records."""
    pieces, skipped = [], []
    segments = segment(raw)
    if not segments:
        return [], [{"file": name, "reason": "no 4/4 segment"}]
    for k, seg in enumerate(segments):
        sid = f"{name}#{k}"
        melody = extract_melody(seg)
        if melody is None:
            skipped.append({"file": sid, "reason": "no melody track"})
            continue
        try:
            score = drop_sparse_tracks(compress_tracks(seg, melody))
        except EmptyInput:
            skipped.append({"file": sid, "reason": "no notes"})
            continue
        if not filter_piece(score):
            skipped.append({"file": sid, "reason": "filtered"})
            continue
        try:
            lane = infer_chords(score)
        except NoPitchedNotes:
            skipped.append({"file": sid, "reason": "no pitched notes"})
            continue
        score = score.with_chords(lane_to_entries(lane))
        cond, tgt = split_condition_target(score, condition_roles)
        pieces.append(Piece(sid, score, seg.tempo_bpm, cond, tgt))
    return pieces, skipped


def run_pipeline(
    corpus_dir,
    out_dir=None,
    *,
    shard_size: int = 1000,
    condition_roles: Iterable[Role] = (Role.MELODY,),
    run_config: dict | None = None,
) -> PipelineResult:
    """Process every ``*.mid``/``*.midi`` file under ``corpus_dir`` in sorted order.

    With ``out_dir`` set, writes ``shard-NNNNN.condition.jsonl`` /
    ``shard-NNNNN.target.jsonl`` (line-aligned), ``skipped.jsonl``,
    ``stats.json`` and ``manifest.json``.
    """
    corpus_dir = Path(corpus_dir)
    files = sorted(p for p in corpus_dir.rglob("*") if p.is_file() and p.suffix.lower() in (".mid", ".midi"))
    if not files:
        raise EmptyCorpus(f"no MIDI files under {corpus_dir}")
    cond_roles = tuple(sorted(set(condition_roles), key=lambda r: r.order))
    result = PipelineResult()
    for path in files:
        name = path.relative_to(corpus_dir).as_posix()
        try:
            raw = read_midi_file(path)
        except (MidiError, OSError) as exc:
            log.warning("skipping %s: %s", name, exc)
            result.skipped.append({"file": name, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        pieces, skipped = process_midi(raw, name, cond_roles)
        for p in pieces:
            result.stats.add(p.score.n_bars, p.tempo_bpm)
        result.pieces.extend(pieces)
        result.skipped.extend(skipped)
    if not result.pieces:
        raise EmptyCorpus(f"no piece in {corpus_dir} survived preprocessing")
    if out_dir is not None:
        write_dataset(result, out_dir, shard_size=shard_size, condition_roles=cond_roles, run_config=run_config)
    return result


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_dataset(result: PipelineResult, out_dir, *, shard_size: int, condition_roles, run_config: dict | None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    for start in range(0, len(result.pieces), shard_size):
        chunk = result.pieces[start:start + shard_size]
        stem = f"shard-{start // shard_size:05d}"
        write_jsonl(out / f"{stem}.condition.jsonl", (p.condition for p in chunk))
        write_jsonl(out / f"{stem}.target.jsonl", (p.target for p in chunk))
        shards.append({"stem": stem, "pieces": [p.piece_id for p in chunk]})
    with open(out / "skipped.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in result.skipped:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    (out / "stats.json").write_text(_dump(result.stats.to_json()), encoding="utf-8")
    manifest = {
        "format_version": FORMAT_VERSION,
        "condition_roles": [r.value for r in condition_roles],
        "shards": shards,
        "run_config": run_config or {},
    }
    (out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")


def load_pairs(shard_dir) -> list[tuple[TokenSeq, TokenSeq]]:
    from .tokens import read_jsonl

    shard_dir = Path(shard_dir)
    pairs = []
    for cond_path in sorted(shard_dir.glob("shard-*.condition.jsonl")):
        tgt_path = cond_path.with_name(cond_path.name.replace(".condition.", ".target."))
        conds, tgts = read_jsonl(cond_path), read_jsonl(tgt_path)
        if len(conds) != len(tgts):
            raise ValueError(f"{cond_path.name} and {tgt_path.name} are not line-aligned")
        pairs.extend(zip(conds, tgts))
    return pairs
