"""Teacher-forced training and per-step scoring."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..tokens import TokenSeq
from .config import ModelConfig
from .network import AccompanimentModel
from .vocab import Steps, teacher_forcing, to_steps

log = logging.getLogger(__name__)

Pair = tuple[TokenSeq, TokenSeq]


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True, slots=True)
class TrainConfig:
    steps: int = 1000
    warmup: int = 4000
    lr_scale: float = 1.0
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    seed: int = 0
    float64: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> TrainConfig:
        obj = dict(obj)
        if "betas" in obj:
            obj["betas"] = tuple(obj["betas"])
        return cls(**obj)


def inverse_sqrt_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """Linear warmup then inverse square-root decay; ``step`` counts from 1."""
    step = max(step, 1)
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass(frozen=True)
class Example:
    cond: Steps
    tgt: Steps
    gold_tok: np.ndarray
    gold_vel: np.ndarray
    gold_dur: np.ndarray


def make_example(cond: TokenSeq, tgt: TokenSeq) -> Example:
    inputs, tok, vel, dur = teacher_forcing(tgt)
    return Example(to_steps(cond.tokens, cond.tempo), inputs, tok, vel, dur)


def step_nll(model: AccompanimentModel, ex: Example) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-step negative log-likelihoods of the three heads.

    Velocity/duration entries are 0 on steps whose gold output is not a note.
    """
    h1, h2, h3 = model(ex.cond, ex.tgt)
    dev = h1.device
    tok = torch.as_tensor(ex.gold_tok, device=dev)
    vel = torch.as_tensor(ex.gold_vel, device=dev)
    dur = torch.as_tensor(ex.gold_dur, device=dev)
    note = vel >= 0
    nll1 = F.cross_entropy(h1, tok, reduction="none")
    nll2 = torch.zeros_like(nll1)
    nll3 = torch.zeros_like(nll1)
    if note.any():
        nll2 = nll2.masked_scatter(note, F.cross_entropy(h2[note], vel[note], reduction="none"))
        nll3 = nll3.masked_scatter(note, F.cross_entropy(h3[note], dur[note], reduction="none"))
    return nll1, nll2, nll3


def example_loss(model: AccompanimentModel, ex: Example) -> torch.Tensor:
    """H1 cross entropy on every step plus H2 and H3 on note steps, averaged over steps."""
    nll1, nll2, nll3 = step_nll(model, ex)
    return (nll1 + nll2 + nll3).mean()


@dataclass
class TrainResult:
    model: AccompanimentModel
    optimizer: torch.optim.Adam
    losses: list[float] = field(default_factory=list)
    step: int = 0


def build_model(cfg: ModelConfig, seed: int = 0, float64: bool = False) -> AccompanimentModel:
    torch.manual_seed(seed)
    model = AccompanimentModel(cfg)
    return model.double() if float64 else model


def make_optimizer(model: AccompanimentModel, tc: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=0.0, betas=tc.betas, eps=tc.eps)


def piece_index(step: int, n: int, seed: int) -> int:
    """Piece trained on at ``step``: a fresh seeded permutation every epoch."""
    epoch, k = divmod(step, n)
    return int(np.random.default_rng([seed, epoch]).permutation(n)[k])


def train(
    pairs: Sequence[Pair],
    cfg: ModelConfig,
    tc: TrainConfig = TrainConfig(),
    *,
    resume: TrainResult | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """One optimizer step per piece, cycling through ``pairs`` in a seeded shuffled order.

    Piece order and dropout noise depend only on the seed and the global step,
    so resuming from a checkpoint continues the same run.
    """
    examples = [make_example(c, t) for c, t in pairs if len(t)]
    if not examples:
        raise ValueError("no non-empty training targets")
    if resume is None:
        model = build_model(cfg, tc.seed, tc.float64)
        result = TrainResult(model, make_optimizer(model, tc))
    else:
        result = resume
    model, opt = result.model, result.optimizer
    model.train()
    for _ in range(tc.steps):
        idx = piece_index(result.step, len(examples), tc.seed)
        torch.manual_seed(tc.seed * 1_000_003 + result.step)
        loss = example_loss(model, examples[idx])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss {value} at step {result.step} on piece {idx}")
        opt.zero_grad()
        loss.backward()
        for g in opt.param_groups:
            g["lr"] = inverse_sqrt_lr(result.step + 1, cfg.d_model, tc.warmup, tc.lr_scale)
        opt.step()
        result.step += 1
        result.losses.append(value)
        if on_step is not None:
            on_step(result.step, value)
    model.eval()
    return result


@torch.no_grad()
def score(model: AccompanimentModel, cond: TokenSeq, tgt: TokenSeq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forced per-step NLLs (nats) of H1, H2, H3; NaN where a head is absent."""
    was_training = model.training
    model.eval()
    ex = make_example(cond, tgt)
    nll1, nll2, nll3 = (t.double().cpu().numpy() for t in step_nll(model, ex))
    model.train(was_training)
    absent = ex.gold_vel < 0
    nll2[absent] = np.nan
    nll3[absent] = np.nan
    return nll1, nll2, nll3
