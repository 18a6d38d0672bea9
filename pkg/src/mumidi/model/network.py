"""Recurrent Transformer encoder-decoder over MuMIDI steps.

Everything works on one piece at a time, so tensors are ``[steps, d_model]``.
Both stacks are post-norm and carry per-layer segment memories in the
Transformer-XL style: the inputs a layer saw in earlier segments are cached
(detached) and prepended to its keys and values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .vocab import N_DURATION, N_POSITIONS, N_VELOCITY, V1_SIZE, Steps

Memory = list[Tensor]  # one [M, d] tensor per layer


def empty_memory(n_layers: int, d_model: int, *, dtype=None, device=None) -> Memory:
    return [torch.zeros(0, d_model, dtype=dtype, device=device) for _ in range(n_layers)]


def extend_memory(mem: Memory, inputs: list[Tensor], mem_len: int | None) -> Memory:
    """Append this segment's layer inputs, cut gradients and keep the last ``mem_len`` rows."""
    out = []
    for m, x in zip(mem, inputs):
        cat = torch.cat([m, x.detach()], dim=0)
        if mem_len is not None:
            cat = cat[max(0, len(cat) - mem_len):]
        out.append(cat)
    return out


def causal_mask(n_query: int, n_mem: int, device=None) -> Tensor:
    """True where attention is allowed: all of memory plus the causal past of the segment."""
    q = torch.arange(n_query, device=device)[:, None]
    k = torch.arange(n_mem + n_query, device=device)[None, :]
    return k <= q + n_mem


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float) -> None:
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, query: Tensor, memory: Tensor, mask: Tensor) -> Tensor:
        """query [T, d], memory [S, d], mask [T, S] (True = may attend)."""
        t, s = len(query), len(memory)
        q = self.q(query).view(t, self.heads, self.d_head).transpose(0, 1)
        k = self.k(memory).view(s, self.heads, self.d_head).transpose(0, 1)
        v = self.v(memory).view(s, self.heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask[None], float("-inf"))
        weights = self.drop(torch.softmax(scores, dim=-1))
        ctx = (weights @ v).transpose(0, 1).reshape(t, -1)
        return self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_size: int, dropout: float) -> None:
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_size)
        self.fc2 = nn.Linear(ffn_size, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.drop(torch.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_size, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, mem: Tensor) -> Tensor:
        kv = torch.cat([mem, x], dim=0)
        h = self.norm1(x + self.drop(self.self_attn(x, kv, causal_mask(len(x), len(mem), x.device))))
        return self.norm2(h + self.drop(self.ffn(h)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_size, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, mem: Tensor, context: Tensor, cross_mask: Tensor) -> Tensor:
        kv = torch.cat([mem, x], dim=0)
        h = self.norm1(x + self.drop(self.self_attn(x, kv, causal_mask(len(x), len(mem), x.device))))
        h = self.norm2(h + self.drop(self.cross_attn(h, context, cross_mask)))
        return self.norm3(h + self.drop(self.ffn(h)))


class InputModule(nn.Module):
    """Sum of token (or pitch + velocity + duration), bar, position and tempo embeddings."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        d = cfg.d_model
        self.max_bars = cfg.max_bars
        self.token = nn.Embedding(V1_SIZE, d)
        self.velocity = nn.Embedding(N_VELOCITY, d)
        self.duration = nn.Embedding(N_DURATION, d)
        self.bar = nn.Embedding(cfg.max_bars, d)
        self.position = nn.Embedding(N_POSITIONS, d)
        self.tempo = nn.Embedding(3, d)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, steps: Steps) -> Tensor:
        dev = self.token.weight.device
        tok = torch.as_tensor(steps.tok, device=dev)
        vel = torch.as_tensor(steps.vel, device=dev)
        dur = torch.as_tensor(steps.dur, device=dev)
        note = (vel >= 0)[:, None].to(self.token.weight.dtype)
        # bars past the table reuse its last row
        bar = torch.as_tensor(steps.bar, device=dev).clamp(max=self.max_bars - 1)
        x = (
            self.token(tok)
            + note * (self.velocity(vel.clamp(min=0)) + self.duration(dur.clamp(min=0)))
            + self.bar(bar)
            + self.position(torch.as_tensor(steps.pos, device=dev))
            + self.tempo.weight[steps.tempo]
        )
        return self.drop(x)


class OutputModule(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.h1 = nn.Linear(cfg.d_model, V1_SIZE)
        self.h2 = nn.Linear(cfg.d_model, N_VELOCITY)
        self.h3 = nn.Linear(cfg.d_model, N_DURATION)

    def forward(self, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        return self.h1(h), self.h2(h), self.h3(h)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.mem_len = cfg.mem_len_enc
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))

    def forward(self, x: Tensor, mem: Memory) -> tuple[Tensor, Memory]:
        """One segment: returns its outputs and the updated memory."""
        inputs = []
        for layer, m in zip(self.layers, mem):
            inputs.append(x)
            x = layer(x, m)
        return x, extend_memory(mem, inputs, self.mem_len)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.mem_len = cfg.mem_len_dec
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))

    def forward(self, y: Tensor, mem: Memory, context: Tensor, cross_mask: Tensor) -> tuple[Tensor, list[Tensor]]:
        """One segment (or a slice of one). Returns outputs and the per-layer inputs seen."""
        inputs = []
        for layer, m in zip(self.layers, mem):
            inputs.append(y)
            y = layer(y, m, context, cross_mask)
        return y, inputs


def cross_mask(query_bars: Tensor, context_bars: Tensor) -> Tensor:
    """Bar-restricted mask over ``[context ‖ sentinel]``.

    A query may see the context rows of its own bar. The trailing all-zero
    sentinel row is visible only to queries whose bar has no context.
    """
    same = query_bars[:, None] == context_bars[None, :]
    return torch.cat([same, ~same.any(dim=1, keepdim=True)], dim=1)


@dataclass
class EncodedCondition:
    context: Tensor  # [S + 1, d], last row is the zero sentinel
    bars: Tensor  # [S] bar index per context row


@dataclass
class DecodeState:
    """Incremental decoder state: finished-segment memory plus the open segment."""

    mem: Memory
    current: list[Tensor]
    bar: int


class AccompanimentModel(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.input = InputModule(cfg)
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.output = OutputModule(cfg)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                nn.init.zeros_(p)
            elif ".norm" in name:
                nn.init.ones_(p)
            else:
                nn.init.normal_(p, mean=0.0, std=0.02)

    @property
    def dtype(self) -> torch.dtype:
        return self.input.token.weight.dtype

    def _empty(self, n_layers: int) -> Memory:
        w = self.input.token.weight
        return empty_memory(n_layers, self.cfg.d_model, dtype=w.dtype, device=w.device)

    # -- encoder ---------------------------------------------------------------

    def encode(self, cond: Steps, x: Tensor | None = None) -> EncodedCondition:
        """Run the encoder bar by bar over the whole condition.

        ``x`` overrides the embedded condition (used by gradient tests).
        """
        if x is None:
            x = self.input(cond)
        mem = self._empty(len(self.encoder.layers))
        outs = []
        for lo, hi in cond.segments():
            out, mem = self.encoder(x[lo:hi], mem)
            outs.append(out)
        sentinel = x.new_zeros(1, self.cfg.d_model)
        context = torch.cat([*outs, sentinel], dim=0)
        return EncodedCondition(context, torch.as_tensor(cond.bar, device=x.device))

    # -- decoder ---------------------------------------------------------------

    def decode(self, enc: EncodedCondition, tgt: Steps, y: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """Teacher-forced decoder pass; returns (H1, H2, H3) logits per step."""
        if y is None:
            y = self.input(tgt)
        mem = self._empty(len(self.decoder.layers))
        bars = torch.as_tensor(tgt.bar, device=y.device)
        outs = []
        for lo, hi in tgt.segments():
            out, inputs = self.decoder(y[lo:hi], mem, enc.context, cross_mask(bars[lo:hi], enc.bars))
            mem = extend_memory(mem, inputs, self.decoder.mem_len)
            outs.append(out)
        h = torch.cat(outs, dim=0) if outs else y.new_zeros(0, self.cfg.d_model)
        return self.output(h)

    def forward(self, cond: Steps, tgt: Steps) -> tuple[Tensor, Tensor, Tensor]:
        return self.decode(self.encode(cond), tgt)

    def start_decoding(self) -> DecodeState:
        n = len(self.decoder.layers)
        return DecodeState(self._empty(n), self._empty(n), 0)

    def decode_step(self, enc: EncodedCondition, state: DecodeState, step: Steps) -> tuple[Tensor, Tensor, Tensor]:
        """Feed one input step; returns its (H1, H2, H3) logit rows.

        Matches :meth:`decode` on the same prefix: the open segment's earlier
        steps are visible as keys without gradient, and the segment is rolled
        into memory when a step of a new bar arrives.
        """
        bar = int(step.bar[0])
        if bar != state.bar:
            state.mem = extend_memory(state.mem, state.current, self.decoder.mem_len)
            state.current = self._empty(len(self.decoder.layers))
            state.bar = bar
        y = self.input(step)
        mask = cross_mask(torch.as_tensor(step.bar, device=y.device), enc.bars)
        inputs = []
        for k, layer in enumerate(self.decoder.layers):
            inputs.append(y)
            prev = torch.cat([state.mem[k], state.current[k]], dim=0)
            y = layer(y, prev, enc.context, mask)
        state.current = [torch.cat([c, x.detach()], dim=0) for c, x in zip(state.current, inputs)]
        h1, h2, h3 = self.output(y)
        return h1[0], h2[0], h3[0]


# ---------------------------------------------------------------------------
# parameter counting


def _linear(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form learnable-parameter count per component."""
    d = cfg.d_model
    attn = 4 * _linear(d, d)
    ffn = _linear(d, cfg.ffn_size) + _linear(cfg.ffn_size, d)
    norm = 2 * d
    return {
        "embeddings": d * (V1_SIZE + N_VELOCITY + N_DURATION + cfg.max_bars + N_POSITIONS + 3),
        "encoder": cfg.enc_layers * (attn + ffn + 2 * norm),
        "decoder": cfg.dec_layers * (2 * attn + ffn + 3 * norm),
        "heads": _linear(d, V1_SIZE) + _linear(d, N_VELOCITY) + _linear(d, N_DURATION),
    }


def param_count(cfg: ModelConfig) -> int:
    return sum(param_breakdown(cfg).values())


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
