"""Autoregressive accompaniment sampling."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
import torch

from ..score import ROLES, Role
from ..tokens import BAR, Bar, GrammarError, GrammarState, Note, Token, TokenSeq
from .network import AccompanimentModel
from .vocab import (
    BAR_ID,
    CHORD_BASE,
    DRUM_BASE,
    PITCH_BASE,
    V1_SIZE,
    StepTracker,
    Steps,
    is_note_id,
    note_pitch,
    pos_id,
    structural_token,
    tempo_id,
    to_steps,
    track_id,
)

MAX_RETRIES = 16


class RetryExhausted(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"{MAX_RETRIES} consecutive grammar-invalid samples at step {step}")
        self.step = step


@dataclass(frozen=True, slots=True)
class SamplingConfig:
    top_k: int = 8
    temperature: float = 1.0
    max_bars: int = 32
    grammar_mask: bool = True

    def __post_init__(self) -> None:
        if self.top_k < 1 or self.temperature < 0 or self.max_bars < 0:
            raise ValueError("top_k must be >= 1, temperature and max_bars >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def sample_index(logits: np.ndarray, top_k: int, temperature: float, rng: np.random.Generator) -> int:
    """Top-k / temperature sampling over finite logits; temperature 0 is argmax.

    Ties are broken towards the lower index so results do not depend on sort stability.
    """
    finite = np.flatnonzero(np.isfinite(logits))
    if not len(finite):
        raise ValueError("no admissible symbol")
    vals = logits[finite]
    if temperature == 0:
        return int(finite[np.argmax(vals)])
    order = np.lexsort((finite, -vals))[:top_k]
    kept = vals[order] / temperature
    p = np.exp(kept - kept.max())
    p /= p.sum()
    u = rng.random()
    j = min(int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right")), len(p) - 1)
    return int(finite[order[j]])


def admissible_v1(g: GrammarState) -> np.ndarray:
    """Boolean mask over the primary vocabulary for the next symbol."""
    ok = np.zeros(V1_SIZE, dtype=bool)
    if g.can_bar():
        ok[BAR_ID] = True
    for k in g.pos_range():
        ok[pos_id(k)] = True
    if g.can_chord():
        ok[CHORD_BASE:PITCH_BASE] = True
    for role in g.allowed_roles():
        ok[track_id(role)] = True
    role = g.note_role()
    if role is not None:
        base = DRUM_BASE if role is Role.DRUM else PITCH_BASE
        ok[base + g.min_pitch() - 1: base + 128] = True
    return ok


def _symbol(i1: int, vel: int, dur: int) -> Token:
    if is_note_id(i1):
        return Note(note_pitch(i1), vel + 1, dur + 1)
    return structural_token(i1)


def _pitch_matches_role(i1: int, role: Role | None) -> bool:
    return (i1 >= DRUM_BASE) == (role is Role.DRUM)


@torch.no_grad()
def generate(
    model: AccompanimentModel,
    condition: TokenSeq,
    sampling: SamplingConfig = SamplingConfig(),
    *,
    seed: int = 0,
    target_roles: Iterable[Role] | None = None,
) -> TokenSeq:
    """Sample target tracks for ``condition``.

    The condition is encoded in full first. Decoding starts from a Bar symbol
    and ends when the model emits the Bar that would open bar number
    ``min(max_bars, condition bars) + 1``; that Bar is not part of the output.
    With ``grammar_mask`` the primary head is restricted to symbols that keep
    the sequence canonical (no chords, target roles only); without it,
    invalid samples are redrawn up to 16 times in a row.
    """
    model.eval()
    roles = frozenset(target_roles) if target_roles is not None else frozenset(ROLES) - {Role.MELODY}
    rng = np.random.default_rng(seed)
    cap = min(sampling.max_bars, condition.n_bars)
    if cap == 0:
        return TokenSeq(condition.tempo, ())
    enc = model.encode(to_steps(condition.tokens, condition.tempo))
    state = model.start_decoding()
    g = GrammarState(strict=True, allow_chords=False, roles=roles)
    tracker = StepTracker()
    tempo = tempo_id(condition.tempo)
    out: list[Token] = [BAR]
    g.feed(BAR, 0)
    last = BAR
    while True:
        ids = tracker.ids(last)
        step = Steps(*(np.array([v]) for v in ids), tempo)
        h1, h2, h3 = (h.double().cpu().numpy() for h in model.decode_step(enc, state, step))
        retries = 0
        while True:
            logits = h1.copy()
            if sampling.grammar_mask:
                logits[~admissible_v1(g)] = -np.inf
            i1 = sample_index(logits, sampling.top_k, sampling.temperature, rng)
            vel = dur = -1
            if is_note_id(i1):
                vel = sample_index(h2, sampling.top_k, sampling.temperature, rng)
                dur = sample_index(h3, sampling.top_k, sampling.temperature, rng)
            tok = _symbol(i1, vel, dur)
            if isinstance(tok, Bar) and g.can_bar() and g.bar + 1 >= cap:
                return TokenSeq(condition.tempo, tuple(out))
            try:
                if isinstance(tok, Note) and not _pitch_matches_role(i1, g.note_role()):
                    raise GrammarError(len(out), g.expected(), tok)
                g.feed(tok, len(out))
                break
            except GrammarError:
                retries += 1
                if retries >= MAX_RETRIES:
                    raise RetryExhausted(len(out)) from None
        out.append(tok)
        last = tok
