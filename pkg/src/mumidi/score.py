"""Quantized multi-track score types shared by the codec, pipeline and metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping

STEPS_PER_BAR = 32
HALF_BAR = 16
N_VELOCITY = 32
N_DURATION = 32
N_PITCH = 128


class InvariantViolation(ValueError):
    pass


class Role(enum.Enum):
    """The six track roles, declared in canonical within-position order."""

    MELODY = "melody"
    DRUM = "drum"
    PIANO = "piano"
    STRING = "string"
    GUITAR = "guitar"
    BASS = "bass"

    @property
    def order(self) -> int:
        return _ROLE_ORDER[self]


ROLES: tuple[Role, ...] = tuple(Role)
_ROLE_ORDER = {r: i for i, r in enumerate(ROLES)}
ACCOMPANIMENT_ROLES = frozenset(ROLES) - {Role.MELODY}


class TempoClass(enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"

    @classmethod
    def from_bpm(cls, bpm: float) -> TempoClass:
        # 90 and 160 both fall in the middle class
        if bpm < 90:
            return cls.LOW
        if bpm > 160:
            return cls.HIGH
        return cls.MID


TEMPO_CLASSES: tuple[TempoClass, ...] = tuple(TempoClass)

ROOT_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


class Quality(enum.Enum):
    MAJOR = "major"
    MINOR = "minor"
    DIMINISHED = "diminished"
    AUGMENTED = "augmented"
    MAJOR7 = "major7"
    MINOR7 = "minor7"
    HALF_DIMINISHED = "half_diminished"

    @property
    def intervals(self) -> tuple[int, ...]:
        return _INTERVALS[self]


_INTERVALS = {
    Quality.MAJOR: (0, 4, 7),
    Quality.MINOR: (0, 3, 7),
    Quality.DIMINISHED: (0, 3, 6),
    Quality.AUGMENTED: (0, 4, 8),
    Quality.MAJOR7: (0, 4, 7, 11),
    Quality.MINOR7: (0, 3, 7, 10),
    Quality.HALF_DIMINISHED: (0, 3, 6, 10),
}
QUALITIES: tuple[Quality, ...] = tuple(Quality)


@dataclass(frozen=True, slots=True)
class ChordSymbol:
    root: int
    quality: Quality

    def __post_init__(self) -> None:
        if not 0 <= self.root < 12:
            raise InvariantViolation(f"chord root {self.root} outside 0..11")
        if not isinstance(self.quality, Quality):
            object.__setattr__(self, "quality", Quality(self.quality))

    def __lt__(self, other: ChordSymbol) -> bool:
        return self.index < other.index

    @property
    def index(self) -> int:
        return self.root * len(QUALITIES) + QUALITIES.index(self.quality)

    @classmethod
    def from_index(cls, i: int) -> ChordSymbol:
        root, q = divmod(i, len(QUALITIES))
        return cls(root, QUALITIES[q])

    @classmethod
    def parse(cls, root: str, quality: str) -> ChordSymbol:
        try:
            return cls(ROOT_NAMES.index(root), Quality(quality))
        except ValueError as exc:
            raise InvariantViolation(f"unknown chord {root}:{quality}") from exc

    @property
    def root_name(self) -> str:
        return ROOT_NAMES[self.root]

    @property
    def pitch_classes(self) -> frozenset[int]:
        return frozenset((self.root + i) % 12 for i in self.quality.intervals)

    def __str__(self) -> str:
        return f"{self.root_name}:{self.quality.value}"


ALL_CHORDS: tuple[ChordSymbol, ...] = tuple(ChordSymbol.from_index(i) for i in range(84))
C_MAJOR = ChordSymbol(0, Quality.MAJOR)


@dataclass(frozen=True, slots=True)
class QNote:
    """A note on the 32-steps-per-bar grid.

    ``pitch`` is 1-based (MIDI pitch + 1); for the drum role it is the drum
    type index instead.
    """

    onset: int
    pitch: int
    velocity: int
    duration: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise InvariantViolation(f"negative onset {self.onset}")
        if not 1 <= self.pitch <= N_PITCH:
            raise InvariantViolation(f"pitch {self.pitch} outside 1..128")
        if not 1 <= self.velocity <= N_VELOCITY:
            raise InvariantViolation(f"velocity level {self.velocity} outside 1..32")
        if not 1 <= self.duration <= N_DURATION:
            raise InvariantViolation(f"duration {self.duration} outside 1..32")

    @property
    def bar(self) -> int:
        return self.onset // STEPS_PER_BAR

    @property
    def position(self) -> int:
        """1-based position within the bar."""
        return self.onset % STEPS_PER_BAR + 1

    @property
    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.onset, self.pitch, self.duration, self.velocity)


ChordEntry = tuple[int, int, ChordSymbol]  # (bar, half, chord)


@dataclass(frozen=True, slots=True)
class Score:
    """A quantized piece: notes per role plus a half-bar chord lane.

    Construction canonicalises the value (notes sorted, empty roles dropped,
    chords sorted), so ``==`` compares musical content.
    """

    tempo: TempoClass
    n_bars: int
    tracks: Mapping[Role, tuple[QNote, ...]]
    chords: tuple[ChordEntry, ...] = ()

    def __post_init__(self) -> None:
        if self.n_bars < 0:
            raise InvariantViolation("negative bar count")
        tempo = self.tempo if isinstance(self.tempo, TempoClass) else TempoClass(self.tempo)
        limit = STEPS_PER_BAR * self.n_bars
        tracks: dict[Role, tuple[QNote, ...]] = {}
        for role in ROLES:
            notes = tuple(sorted(self.tracks.get(role, ()), key=lambda n: n.sort_key))
            if not notes:
                continue
            if notes[-1].onset >= limit:
                raise InvariantViolation(f"{role.value} note at step {notes[-1].onset} beyond {self.n_bars} bars")
            tracks[role] = notes
        unknown = set(self.tracks) - set(ROLES)
        if unknown:
            raise InvariantViolation(f"unknown roles {unknown}")
        chords = tuple(sorted((int(b), int(h), c) for b, h, c in self.chords))
        seen = set()
        for bar, half, _ in chords:
            if not 0 <= bar < self.n_bars or half not in (0, 1):
                raise InvariantViolation(f"chord slot {(bar, half)} outside the piece")
            if (bar, half) in seen:
                raise InvariantViolation(f"two chords in slot {(bar, half)}")
            seen.add((bar, half))
        object.__setattr__(self, "tempo", tempo)
        object.__setattr__(self, "tracks", tracks)
        object.__setattr__(self, "chords", chords)

    __hash__ = None  # type: ignore[assignment]

    @property
    def roles(self) -> tuple[Role, ...]:
        return tuple(self.tracks)

    @property
    def n_notes(self) -> int:
        return sum(len(v) for v in self.tracks.values())

    def notes(self, role: Role) -> tuple[QNote, ...]:
        return self.tracks.get(role, ())

    def restrict(self, roles: Iterable[Role], *, keep_chords: bool = True) -> Score:
        keep = set(roles)
        return Score(
            self.tempo,
            self.n_bars,
            {r: n for r, n in self.tracks.items() if r in keep},
            self.chords if keep_chords else (),
        )

    def with_chords(self, chords: Iterable[ChordEntry]) -> Score:
        return Score(self.tempo, self.n_bars, self.tracks, tuple(chords))


def merge_scores(a: Score, b: Score) -> Score:
    """Union of two scores over the same bars (note lists concatenated per role)."""
    if a.n_bars != b.n_bars or a.tempo != b.tempo:
        raise InvariantViolation("cannot merge scores with different bar counts or tempo")
    tracks = {r: a.notes(r) + b.notes(r) for r in ROLES}
    return Score(a.tempo, a.n_bars, tracks, a.chords + b.chords)
