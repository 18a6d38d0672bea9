"""MuMIDI tokens, the JSONL wire format and the sequence grammar.

Grammar (one piece)::

    piece    := bar*
    bar      := Bar position*
    position := Pos(k) Chord? group*      -- at least one of Chord / group
    group    := Track(role) Note+

A Chord may only follow Pos(1) or Pos(16).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .score import (
    ROLES,
    STEPS_PER_BAR,
    ChordSymbol,
    InvariantViolation,
    Role,
    TempoClass,
)

CHORD_POSITIONS = (1, 16)


@dataclass(frozen=True, slots=True)
class Bar:
    def to_json(self) -> list:
        return ["bar"]


@dataclass(frozen=True, slots=True)
class Pos:
    k: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= STEPS_PER_BAR:
            raise InvariantViolation(f"position {self.k} outside 1..32")

    def to_json(self) -> list:
        return ["pos", self.k]


@dataclass(frozen=True, slots=True)
class Track:
    role: Role

    def to_json(self) -> list:
        return ["track", self.role.value]


@dataclass(frozen=True, slots=True)
class Chord:
    chord: ChordSymbol

    def to_json(self) -> list:
        return ["chord", self.chord.root_name, self.chord.quality.value]


@dataclass(frozen=True, slots=True)
class Note:
    pitch: int
    velocity: int
    duration: int

    def __post_init__(self) -> None:
        if not (1 <= self.pitch <= 128 and 1 <= self.velocity <= 32 and 1 <= self.duration <= 32):
            raise InvariantViolation(f"note attributes out of range: {self}")

    def to_json(self) -> list:
        return ["note", self.pitch, self.velocity, self.duration]


Token = Union[Bar, Pos, Track, Chord, Note]
BAR = Bar()


@dataclass(frozen=True, slots=True)
class TokenSeq:
    tempo: TempoClass
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not isinstance(self.tempo, TempoClass):
            object.__setattr__(self, "tempo", TempoClass(self.tempo))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_bars(self) -> int:
        return sum(1 for t in self.tokens if isinstance(t, Bar))

    def to_json(self) -> dict:
        return {"tempo": self.tempo.value, "tokens": [t.to_json() for t in self.tokens]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), ensure_ascii=False)


class TokenFormatError(ValueError):
    pass


def token_from_json(item) -> Token:
    try:
        kind, *args = item
        if kind == "bar" and not args:
            return BAR
        if kind == "pos":
            (k,) = args
            return Pos(int(k))
        if kind == "track":
            (role,) = args
            return Track(Role(role))
        if kind == "chord":
            root, quality = args
            return Chord(ChordSymbol.parse(root, quality))
        if kind == "note":
            p, v, d = args
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in (p, v, d)):
                raise TokenFormatError(f"note attributes must be integers: {item!r}")
            return Note(p, v, d)
    except (ValueError, TypeError, InvariantViolation) as exc:
        raise TokenFormatError(f"bad token {item!r}: {exc}") from exc
    raise TokenFormatError(f"bad token {item!r}")


def seq_from_json(obj: dict) -> TokenSeq:
    try:
        tempo = TempoClass(obj["tempo"])
        items = obj["tokens"]
    except (KeyError, ValueError, TypeError) as exc:
        raise TokenFormatError(f"bad piece object: {exc}") from exc
    return TokenSeq(tempo, tuple(token_from_json(t) for t in items))


def loads(line: str) -> TokenSeq:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TokenFormatError(str(exc)) from exc
    return seq_from_json(obj)


def read_jsonl(path) -> list[TokenSeq]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(loads(line))
            except TokenFormatError as exc:
                raise TokenFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_jsonl(path, seqs: Iterable[TokenSeq]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in seqs:
            fh.write(s.dumps() + "\n")


# ---------------------------------------------------------------------------
# grammar


class GrammarError(ValueError):
    def __init__(self, index: int, expected: Iterable[str], got: Token | None = None):
        self.index = index
        self.expected = tuple(sorted(expected))
        self.got = got
        super().__init__(f"token {index} ({got!r}) not allowed; expected one of {self.expected}")


class ChordPlacementError(GrammarError):
    def __init__(self, index: int, got: Token | None = None):
        super().__init__(index, ("pos", "track"), got)
        self.args = (f"chord at token {index} does not follow Pos(1) or Pos(16)",)


class NoteOutsideTrack(GrammarError):
    def __init__(self, index: int, got: Token | None = None):
        super().__init__(index, ("track",), got)
        self.args = (f"note at token {index} is not inside a Track group",)


# parser states
START, AFTER_BAR, AFTER_POS, AFTER_CHORD, AFTER_TRACK, AFTER_NOTE = range(6)


@dataclass(slots=True)
class GrammarState:
    """Incremental grammar checker.

    ``strict`` additionally demands canonical order (increasing positions,
    increasing roles, strictly increasing pitch inside a group); generation
    uses it so every sampled bar is finite and already canonical.
    """

    strict: bool = False
    allow_chords: bool = True
    roles: frozenset[Role] = frozenset(ROLES)
    state: int = START
    bar: int = -1
    pos: int = 0
    role: Role | None = None
    last_pitch: int = 0
    chord_slots: set | None = None

    def __post_init__(self) -> None:
        self.chord_slots = set()

    # -- queries used by constrained sampling --------------------------------

    def can_bar(self) -> bool:
        return self.state in (START, AFTER_BAR, AFTER_CHORD, AFTER_NOTE)

    def pos_range(self) -> range:
        if self.state not in (AFTER_BAR, AFTER_CHORD, AFTER_NOTE):
            return range(0)
        lo = self.pos + 1 if self.strict and self.state != AFTER_BAR else 1
        return range(lo, STEPS_PER_BAR + 1)

    def can_chord(self) -> bool:
        return (
            self.allow_chords
            and self.state == AFTER_POS
            and self.pos in CHORD_POSITIONS
            and (self.bar, self.pos) not in self.chord_slots
        )

    def allowed_roles(self) -> list[Role]:
        if self.state not in (AFTER_POS, AFTER_CHORD, AFTER_NOTE):
            return []
        out = [r for r in ROLES if r in self.roles]
        if self.strict and self.state == AFTER_NOTE and self.role is not None:
            out = [r for r in out if r.order > self.role.order]
        return out

    def note_role(self) -> Role | None:
        """Role of the open group if a Note may come next, else None."""
        if self.state in (AFTER_TRACK, AFTER_NOTE):
            return self.role
        return None

    def min_pitch(self) -> int:
        if self.strict and self.state == AFTER_NOTE:
            return self.last_pitch + 1
        return 1

    def can_end(self) -> bool:
        return self.state in (START, AFTER_BAR, AFTER_CHORD, AFTER_NOTE)

    # -- transition ----------------------------------------------------------

    def expected(self) -> set[str]:
        exp = set()
        if self.can_bar():
            exp.add("bar")
        if self.pos_range():
            exp.add("pos")
        if self.can_chord():
            exp.add("chord")
        if self.allowed_roles():
            exp.add("track")
        if self.note_role() is not None:
            exp.add("note")
        return exp

    def feed(self, tok: Token, index: int = 0) -> None:
        match tok:
            case Bar():
                if not self.can_bar():
                    raise GrammarError(index, self.expected(), tok)
                self.bar += 1
                self.pos = 0
                self.role = None
                self.state = AFTER_BAR
            case Pos(k):
                if k not in self.pos_range():
                    raise GrammarError(index, self.expected(), tok)
                self.pos = k
                self.role = None
                self.state = AFTER_POS
            case Chord():
                if self.state != AFTER_POS or self.pos not in CHORD_POSITIONS:
                    raise ChordPlacementError(index, tok)
                if not self.can_chord():
                    raise GrammarError(index, self.expected(), tok)
                self.chord_slots.add((self.bar, self.pos))
                self.state = AFTER_CHORD
            case Track(role):
                if role not in self.allowed_roles():
                    raise GrammarError(index, self.expected(), tok)
                self.role = role
                self.last_pitch = 0
                self.state = AFTER_TRACK
            case Note(pitch=p):
                if self.note_role() is None:
                    raise NoteOutsideTrack(index, tok)
                if p < self.min_pitch():
                    raise GrammarError(index, self.expected(), tok)
                self.last_pitch = p
                self.state = AFTER_NOTE
            case _:
                raise GrammarError(index, self.expected(), tok)

    def finish(self, index: int) -> None:
        if not self.can_end():
            raise GrammarError(index, self.expected(), None)


def check_grammar(tokens: Iterable[Token], **kwargs) -> None:
    g = GrammarState(**kwargs)
    i = -1
    for i, tok in enumerate(tokens):
        g.feed(tok, i)
    g.finish(i + 1)


def iter_positions(tokens: Iterable[Token]) -> Iterator[tuple[int, int, Token]]:
    """Yield (bar, position, token) with the bar/position in force at each token.

    Bar is 0-based and counts Bar tokens seen (a Bar token carries its own
    bar); position is 0 until the first Pos of the bar.
    """
    bar, pos = -1, 0
    for tok in tokens:
        if isinstance(tok, Bar):
            bar += 1
            pos = 0
        elif isinstance(tok, Pos):
            pos = tok.k
        yield bar, pos, tok
