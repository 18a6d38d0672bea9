"""Standard MIDI File reading and writing.

Only what the rest of the package needs is modelled: notes (as matched
on/off pairs), the first tempo, time signatures, marker text, track names,
programs and the drum-channel flag. Pitch bend, controllers and SysEx
payloads are skipped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

DRUM_CHANNEL = 9
DEFAULT_TEMPO_BPM = 120.0


class MidiError(ValueError):
    """Base class for SMF decoding errors."""


class MalformedHeader(MidiError):
    pass


class UnsupportedFormat(MidiError):
    pass


class UnsupportedDivision(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class RunningStatusViolation(MidiError):
    pass


class MalformedEvent(MidiError):
    pass


class InvalidInput(ValueError):
    """A RawMidi value that violates its invariants."""


class RawNote(NamedTuple):
    onset_tick: int
    pitch: int
    velocity: int
    duration_ticks: int


@dataclass(frozen=True, slots=True)
class RawTrack:
    """One instrument part. Notes are kept sorted so equality is multiset equality."""

    name: str = ""
    program: int = 0
    is_drum: bool = False
    notes: tuple[RawNote, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.program <= 127:
            raise InvalidInput(f"program {self.program} outside 0..127")
        notes = tuple(sorted(RawNote(*n) for n in self.notes))
        for n in notes:
            if n.onset_tick < 0 or n.duration_ticks < 1:
                raise InvalidInput(f"bad note timing {n}")
            if not 0 <= n.pitch <= 127 or not 1 <= n.velocity <= 127:
                raise InvalidInput(f"note out of MIDI range {n}")
        object.__setattr__(self, "notes", notes)


@dataclass(frozen=True, slots=True)
class RawMidi:
    ticks_per_beat: int = 480
    tempo_bpm: float = DEFAULT_TEMPO_BPM
    time_signatures: tuple[tuple[int, int, int], ...] = ()
    tracks: tuple[RawTrack, ...] = ()
    markers: tuple[tuple[int, str], ...] = field(default=())

    def __post_init__(self) -> None:
        if not 0 < self.ticks_per_beat < 0x8000:
            raise InvalidInput(f"ticks_per_beat {self.ticks_per_beat} not in 1..32767")
        if not self.tempo_bpm > 0:
            raise InvalidInput(f"tempo {self.tempo_bpm} must be positive")
        sigs = tuple((int(t), int(n), int(d)) for t, n, d in self.time_signatures)
        for (t0, _, _), (t1, _, _) in zip(sigs, sigs[1:]):
            if t1 <= t0:
                raise InvalidInput("time signatures must be strictly increasing in tick")
        for t, num, den in sigs:
            if t < 0 or num < 1 or den < 1 or den & (den - 1):
                raise InvalidInput(f"bad time signature {(t, num, den)}")
        object.__setattr__(self, "time_signatures", sigs)
        object.__setattr__(self, "tracks", tuple(self.tracks))
        markers = tuple(sorted(((int(t), str(s)) for t, s in self.markers), key=lambda m: m[0]))
        object.__setattr__(self, "markers", markers)

    @property
    def n_notes(self) -> int:
        return sum(len(t.notes) for t in self.tracks)

    @property
    def end_tick(self) -> int:
        """Tick of the last note release (0 for an empty file)."""
        return max(
            (n.onset_tick + n.duration_ticks for t in self.tracks for n in t.notes),
            default=0,
        )


# ---------------------------------------------------------------------------
# reading


class _Reader:
    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int, end: int) -> None:
        self.data, self.pos, self.end = data, pos, end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk(f"event runs past chunk end at byte {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedChunk(f"{n}-byte payload runs past chunk end at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MalformedEvent(f"variable-length quantity longer than 4 bytes at byte {self.pos}")


@dataclass
class _ChannelState:
    program: int | None = None
    notes: list[RawNote] = field(default_factory=list)
    open: dict[int, tuple[int, int]] = field(default_factory=dict)  # pitch -> (onset, velocity)

    def close(self, pitch: int, tick: int) -> None:
        onset, vel = self.open.pop(pitch)
        if tick > onset:
            self.notes.append(RawNote(onset, pitch, vel, tick - onset))


def _decode_text(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def _parse_track(r: _Reader, chunk_idx: int, tempos, sigs, markers) -> tuple[str, dict[int, _ChannelState]]:
    name = ""
    channels: dict[int, _ChannelState] = {}
    tick = 0
    status: int | None = None
    while r.pos < r.end:
        tick += r.varlen()
        b = r.byte()
        if b & 0x80:
            if b < 0xF0:
                status = b
            first = None
        else:
            if status is None:
                raise RunningStatusViolation(f"data byte 0x{b:02x} without a running status at byte {r.pos - 1}")
            first = b
            b = status

        if b == 0xFF:
            mtype = r.byte()
            payload = r.take(r.varlen())
            status = None
            if mtype == 0x2F:
                break
            if mtype == 0x51 and len(payload) == 3:
                mpqn = int.from_bytes(payload, "big")
                if mpqn > 0:
                    tempos.append((tick, chunk_idx, mpqn))
            elif mtype == 0x58 and len(payload) >= 2:
                sigs.append((tick, chunk_idx, payload[0], 2 ** payload[1]))
            elif mtype == 0x03 and not name:
                name = _decode_text(payload)
            elif mtype == 0x06:
                markers.append((tick, chunk_idx, _decode_text(payload)))
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
            continue
        if b >= 0xF0:
            raise MalformedEvent(f"unexpected status byte 0x{b:02x} in track data")

        kind, ch = b & 0xF0, b & 0x0F
        d1 = first if first is not None else r.byte()
        d2 = r.byte() if kind not in (0xC0, 0xD0) else 0
        if d1 > 127 or d2 > 127:
            raise MalformedEvent(f"data byte above 127 in channel message at byte {r.pos}")
        state = channels.setdefault(ch, _ChannelState())
        if kind == 0x90 and d2 > 0:
            if d1 in state.open:  # overlapping note-on: the earlier note ends here
                state.close(d1, tick)
            state.open[d1] = (tick, d2)
        elif kind == 0x80 or kind == 0x90:
            if d1 in state.open:
                state.close(d1, tick)
        elif kind == 0xC0 and state.program is None:
            state.program = d1
    for state in channels.values():
        for pitch in sorted(state.open):
            state.close(pitch, tick)
    return name, channels


def parse_smf(data: bytes) -> RawMidi:
    """Decode SMF bytes (format 0 or 1, tick division) into a RawMidi.

    Each (track chunk, channel) pair holding channel events becomes one
    RawTrack, so format-0 files are split by channel.
    """
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd header chunk")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedHeader(f"bad header length {hlen}")
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF format {fmt} is not supported")
    if division & 0x8000:
        raise UnsupportedDivision("SMPTE time division is not supported")
    if division == 0:
        raise MalformedHeader("ticks per beat is zero")

    tempos: list = []
    sigs: list = []
    markers: list = []
    tracks: list[RawTrack] = []
    pos = 8 + hlen
    chunk_idx = 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedChunk(f"incomplete chunk header at byte {pos}")
        ctype, clen = data[pos:pos + 4], struct.unpack(">I", data[pos + 4:pos + 8])[0]
        start, end = pos + 8, pos + 8 + clen
        if end > len(data):
            raise TruncatedChunk(f"chunk at byte {pos} declares {clen} bytes, {len(data) - start} available")
        if ctype == b"MTrk":
            name, channels = _parse_track(_Reader(data, start, end), chunk_idx, tempos, sigs, markers)
            for ch in sorted(channels):
                st = channels[ch]
                tracks.append(RawTrack(
                    name=name,
                    program=st.program or 0,
                    is_drum=ch == DRUM_CHANNEL,
                    notes=tuple(st.notes),
                ))
            chunk_idx += 1
        pos = end

    tempo = DEFAULT_TEMPO_BPM
    if tempos:
        _, _, mpqn = min(tempos)
        tempo = round(60_000_000 / mpqn, 2)
    by_tick: dict[int, tuple[int, int]] = {}
    for t, _, num, den in sorted(sigs):
        by_tick[t] = (num, den)
    return RawMidi(
        ticks_per_beat=division,
        tempo_bpm=tempo,
        time_signatures=tuple((t, n, d) for t, (n, d) in sorted(by_tick.items())),
        tracks=tuple(tracks),
        markers=tuple((t, s) for t, _, s in sorted(markers, key=lambda m: (m[0], m[1]))),
    )


# ---------------------------------------------------------------------------
# writing


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _meta(mtype: int, payload: bytes) -> bytes:
    return bytes([0xFF, mtype]) + _varlen(len(payload)) + payload


def _chunk(events: list[tuple[int, int, bytes]]) -> bytes:
    events.sort(key=lambda e: (e[0], e[1]))
    body = bytearray()
    last = 0
    for tick, _, msg in events:
        body += _varlen(tick - last) + msg
        last = tick
    body += b"\x00" + _meta(0x2F, b"")
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_smf(m: RawMidi) -> bytes:
    """Encode as SMF format 1: a conductor track followed by one chunk per RawTrack."""
    if not isinstance(m, RawMidi):
        raise InvalidInput("write_smf expects a RawMidi")
    mpqn = round(60_000_000 / m.tempo_bpm)
    if not 0 < mpqn < 1 << 24:
        raise InvalidInput(f"tempo {m.tempo_bpm} bpm not representable")

    conductor: list[tuple[int, int, bytes]] = [(0, 0, _meta(0x51, mpqn.to_bytes(3, "big")))]
    for tick, num, den in m.time_signatures:
        conductor.append((tick, 1, _meta(0x58, bytes([num, den.bit_length() - 1, 24, 8]))))
    for tick, text in m.markers:
        conductor.append((tick, 2, _meta(0x06, text.encode("utf-8"))))
    chunks = [_chunk(conductor)]

    melodic = 0
    for track in m.tracks:
        if track.is_drum:
            ch = DRUM_CHANNEL
        else:
            ch = (0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15)[melodic % 15]
            melodic += 1
        events: list[tuple[int, int, bytes]] = []
        if track.name:
            events.append((0, 0, _meta(0x03, track.name.encode("utf-8"))))
        events.append((0, 1, bytes([0xC0 | ch, track.program])))
        for n in track.notes:
            # releases sort before onsets at the same tick
            events.append((n.onset_tick, 3, bytes([0x90 | ch, n.pitch, n.velocity])))
            events.append((n.onset_tick + n.duration_ticks, 2, bytes([0x80 | ch, n.pitch, 0])))
        chunks.append(_chunk(events))

    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), m.ticks_per_beat)
    return header + b"".join(chunks)


def read_midi_file(path) -> RawMidi:
    with open(path, "rb") as fh:
        return parse_smf(fh.read())


def write_midi_file(path, m: RawMidi) -> None:
    with open(path, "wb") as fh:
        fh.write(write_smf(m))
