from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from mumidi.codec import decode, encode, split_condition_target
from mumidi.model import (
    TINY,
    InvalidConfig,
    ModelConfig,
    AccompanimentModel,
    RetryExhausted,
    SamplingConfig,
    TrainConfig,
    build_model,
    count_parameters,
    example_loss,
    generate,
    load_checkpoint,
    make_example,
    param_breakdown,
    param_count,
    sample_index,
    save_checkpoint,
    score,
    train,
)
from mumidi.model.checkpoint import CheckpointError
from mumidi.model.network import cross_mask, empty_memory, extend_memory
from mumidi.model.train import inverse_sqrt_lr, step_nll
from mumidi.model.vocab import CHORD_BASE, V1_SIZE, StepTracker, teacher_forcing, to_steps
from mumidi.score import Role
from mumidi.synth import pop_piece
from mumidi.tokens import BAR, Note, Pos, Track, check_grammar

from oracles import param_count as oracle_param_count

SMALL = ModelConfig(d_model=8, enc_layers=1, dec_layers=2, heads=2, ffn_size=16, dropout=0.0,
                    max_bars=8, mem_len_enc=None, mem_len_dec=None)


def piece(seed=0, n_bars=3):
    s = pop_piece(np.random.default_rng(seed), n_bars)
    return split_condition_target(s, {Role.MELODY})


def f64(cfg=SMALL, seed=0):
    model = build_model(cfg, seed, float64=True)
    model.eval()
    return model


# -- embeddings -----------------------------------------------------------------


def test_zero_tables_give_zero_inputs():
    model = f64()
    cond, _ = piece()
    with torch.no_grad():
        for emb in (model.input.token, model.input.velocity, model.input.duration, model.input.bar,
                    model.input.position, model.input.tempo):
            emb.weight.zero_()
    assert torch.count_nonzero(model.input(to_steps(cond.tokens, cond.tempo))) == 0


def test_velocity_embedding_is_additive():
    model = f64()
    cond, _ = piece()
    steps = to_steps(cond.tokens, cond.tempo)
    i = int(np.flatnonzero(steps.is_note)[0])
    full = model.input(steps)[i]
    row = model.input.velocity.weight[steps.vel[i]].clone()
    with torch.no_grad():
        model.input.velocity.weight[steps.vel[i]] = 0
    torch.testing.assert_close(full - model.input(steps)[i], row, rtol=0, atol=1e-15)


def test_step_tracking():
    toks = (BAR, Track(Role.PIANO), Pos(3), Track(Role.PIANO), Note(61, 4, 5), BAR, Pos(1))
    tr = StepTracker()
    rows = [tr.ids(t) for t in toks]
    assert [r[3] for r in rows] == [0, 0, 0, 0, 0, 1, 1]
    assert [r[4] for r in rows] == [0, 0, 3, 3, 3, 0, 1]
    assert rows[4][1:3] == (3, 4)


def test_bars_past_table_reuse_last_row():
    model = f64(SMALL.replace(max_bars=2))
    seq = [BAR, Pos(1)] * 4
    steps = to_steps(seq, piece()[0].tempo)
    x = model.input(steps)
    torch.testing.assert_close(x[5], x[7], rtol=0, atol=0)
    assert not torch.equal(x[1], x[3])


def test_teacher_forcing_appends_bar_terminator():
    _, tgt = piece()
    inputs, tok, vel, dur = teacher_forcing(tgt)
    assert len(inputs) == len(tgt) == len(tok)
    assert tok[-1] == 0 and vel[-1] == -1
    assert ((vel >= 0) == (tok >= 123)).all()


# -- attention structure --------------------------------------------------------


def test_memory_truncation():
    mem = empty_memory(2, 4, dtype=torch.float64)
    for _ in range(2):
        mem = extend_memory(mem, [torch.ones(300, 4, dtype=torch.float64)] * 2, 512)
    assert [len(m) for m in mem] == [512, 512]
    assert len(extend_memory(mem, [torch.ones(5, 4)] * 2, None)[0]) == 517


def test_one_step_segment_attends_to_itself():
    model = f64()
    attn = model.encoder.layers[0].self_attn
    x = torch.randn(1, 8, dtype=torch.float64)
    out = attn(x, x, torch.ones(1, 1, dtype=torch.bool))
    torch.testing.assert_close(out, attn.out(attn.v(x)))


def test_encoder_full_context_equivalence():
    model = f64()
    cond, _ = piece(1, 4)
    steps = to_steps(cond.tokens, cond.tempo)
    assert len(steps.segments()) == 4
    x = model.input(steps)
    recurrent = model.encode(steps).context[:-1]
    single, _ = model.encoder(x, empty_memory(1, 8, dtype=torch.float64))
    torch.testing.assert_close(recurrent, single, rtol=0, atol=1e-5)


def test_decoder_full_context_equivalence():
    model = f64()
    cond, tgt = piece(2, 4)
    enc = model.encode(to_steps(cond.tokens, cond.tempo))
    steps = to_steps(tgt.tokens, tgt.tempo)
    h1, h2, h3 = model.decode(enc, steps)
    bars = torch.as_tensor(steps.bar)
    y, _ = model.decoder(model.input(steps), empty_memory(2, 8, dtype=torch.float64), enc.context,
                         cross_mask(bars, enc.bars))
    for a, b in zip((h1, h2, h3), model.output(y)):
        torch.testing.assert_close(a, b, rtol=0, atol=1e-5)


def test_single_bar_memory_length_is_irrelevant():
    cond, tgt = piece(3, 1)
    a = build_model(SMALL.replace(mem_len_dec=0, mem_len_enc=0), 4, float64=True).eval()
    b = build_model(SMALL.replace(mem_len_dec=512, mem_len_enc=512), 4, float64=True).eval()
    ex = make_example(cond, tgt)
    for x, y in zip(a(ex.cond, ex.tgt), b(ex.cond, ex.tgt)):
        assert torch.equal(x, y)


def test_cross_mask_sentinel():
    m = cross_mask(torch.tensor([0, 1, 2]), torch.tensor([0, 0, 2]))
    assert m.tolist() == [[True, True, False, False], [False, False, False, True], [False, False, True, False]]


def bar_split(seed=5):
    cond, tgt = piece(seed, 3)
    ex = make_example(cond, tgt)
    return ex, ex.cond.bar, ex.tgt.bar


def test_cross_attention_bar_mask_is_exact():
    model = f64()
    ex, cbar, tbar = bar_split()
    x = model.input(ex.cond).detach()
    base = model.decode(model.encode(ex.cond, x), ex.tgt)
    x2 = x.clone()
    x2[cbar == 1] += torch.randn_like(x2[cbar == 1])
    moved = model.decode(model.encode(ex.cond, x2), ex.tgt)
    early = torch.as_tensor(tbar == 0)
    for a, b in zip(base, moved):
        assert torch.equal(a[early], b[early])
        assert not torch.equal(a[~early], b[~early])


def test_bar_mask_gradient_is_zero():
    model = f64()
    ex, cbar, tbar = bar_split()
    x = model.input(ex.cond).detach().requires_grad_(True)
    h1, _, _ = model.decode(model.encode(ex.cond, x), ex.tgt)
    h1[torch.as_tensor(tbar == 0)].square().sum().backward()
    assert torch.count_nonzero(x.grad[torch.as_tensor(cbar != 0)]) == 0
    assert torch.count_nonzero(x.grad[torch.as_tensor(cbar == 0)]) > 0


def test_memories_receive_no_gradient():
    model = f64()
    ex, cbar, tbar = bar_split()
    x = model.input(ex.cond).detach().requires_grad_(True)
    y = model.input(ex.tgt).detach().requires_grad_(True)
    h1, _, _ = model.decode(model.encode(ex.cond, x), ex.tgt, y)
    h1[torch.as_tensor(tbar == 2)].sum().backward()
    assert torch.count_nonzero(x.grad[torch.as_tensor(cbar != 2)]) == 0
    assert torch.count_nonzero(y.grad[torch.as_tensor(tbar != 2)]) == 0
    assert torch.count_nonzero(y.grad[torch.as_tensor(tbar == 2)]) > 0


def test_memory_tensors_are_detached():
    model = f64()
    ex, _, _ = bar_split()
    x = model.input(ex.cond)
    _, mem = model.encoder(x, empty_memory(1, 8, dtype=torch.float64))
    assert not any(m.requires_grad for m in mem)


def test_head_gating_on_non_note_steps():
    model = f64()
    ex, _, _ = bar_split()
    nll1, nll2, nll3 = step_nll(model, ex)
    i = int(np.flatnonzero(ex.gold_vel < 0)[0])
    (nll1[i] + nll2[i] + nll3[i]).backward()
    for head in (model.output.h2, model.output.h3):
        assert torch.count_nonzero(head.weight.grad) == 0 and torch.count_nonzero(head.bias.grad) == 0
    assert torch.count_nonzero(model.output.h1.weight.grad) > 0


def finite_difference_error(seed=0, n_bars=3, n_checks=60, eps=1e-6) -> float:
    """Relative error between autodiff and central differences over sampled used entries.

    Memories are switched off: through a stop-gradient the true derivative and
    the training gradient differ on purpose.
    """
    model = f64(SMALL.replace(mem_len_enc=0, mem_len_dec=0), seed=seed)
    ex = make_example(*piece(seed, n_bars))
    model.zero_grad()
    example_loss(model, ex).backward()
    rng = np.random.default_rng(seed)
    named = [(n, p) for n, p in model.named_parameters()]
    picks = []
    for name, p in named:
        nz = torch.nonzero(p.grad.reshape(-1)).reshape(-1).numpy()
        if len(nz):
            picks += [(p, int(i)) for i in rng.choice(nz, min(3, len(nz)), replace=False)]
    picks = [picks[i] for i in rng.choice(len(picks), min(n_checks, len(picks)), replace=False)]
    analytic, numeric = [], []
    with torch.no_grad():
        for p, i in picks:
            flat = p.view(-1)
            orig = float(flat[i])
            flat[i] = orig + eps
            up = float(example_loss(model, ex))
            flat[i] = orig - eps
            down = float(example_loss(model, ex))
            flat[i] = orig
            analytic.append(float(p.grad.view(-1)[i]))
            numeric.append((up - down) / (2 * eps))
    a, n = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - n) / np.linalg.norm(n))


@pytest.mark.parametrize("n_bars", [1, 3])
def test_finite_difference_gradient(n_bars):
    assert finite_difference_error(n_bars=n_bars) < 1e-4


def test_stop_gradient_changes_the_gradient():
    # with memory on, autodiff ignores the memory path that finite differences see
    model = f64()
    ex = make_example(*piece(0, 3))
    example_loss(model, ex).backward()
    g = model.input.token.weight.grad.clone()
    eps, i = 1e-6, int(np.flatnonzero(g.reshape(-1).numpy())[0])
    with torch.no_grad():
        flat = model.input.token.weight.view(-1)
        flat[i] += eps
        up = float(example_loss(model, ex))
        flat[i] -= 2 * eps
        down = float(example_loss(model, ex))
        flat[i] += eps
    assert abs((up - down) / (2 * eps) - float(g.reshape(-1)[i])) > 1e-8


# -- parameter counting ----------------------------------------------------------


@pytest.mark.parametrize("cfg", [TINY, SMALL, ModelConfig(), ModelConfig(d_model=64, enc_layers=2, dec_layers=3,
                                                                         heads=4, ffn_size=96)])
def test_param_count_matches_model_and_oracle(cfg):
    n = param_count(cfg)
    assert n == oracle_param_count(cfg.d_model, cfg.enc_layers, cfg.dec_layers, cfg.ffn_size, cfg.max_bars)
    if cfg.d_model <= 64:
        assert count_parameters(AccompanimentModel(cfg)) == n


def test_full_config_count_and_breakdown():
    cfg = ModelConfig()
    assert param_count(cfg) == 46_730_683
    assert count_parameters(AccompanimentModel(cfg)) == 46_730_683
    assert abs(param_count(cfg) - 49.01e6) / 49.01e6 < 0.15
    assert sum(param_breakdown(cfg).values()) == param_count(cfg)


def test_ffn_doubling_delta():
    cfg = ModelConfig(d_model=64, enc_layers=2, dec_layers=3, heads=4, ffn_size=96)
    d, f = 64, 96
    per_layer = 2 * d * f + f  # extra fc1 rows and biases plus extra fc2 columns
    assert param_count(cfg.replace(ffn_size=2 * f)) - param_count(cfg) == 5 * per_layer


def test_zero_layer_count_is_embeddings_plus_heads():
    cfg = ModelConfig(d_model=16, enc_layers=0, dec_layers=0, heads=2, ffn_size=32)
    b = param_breakdown(cfg)
    assert b["encoder"] == b["decoder"] == 0
    assert count_parameters(AccompanimentModel(cfg)) == b["embeddings"] + b["heads"]


def test_invalid_configs():
    for bad in (dict(d_model=10, heads=4), dict(d_model=0), dict(dropout=1.0), dict(enc_layers=-1),
                dict(mem_len_enc=-2)):
        with pytest.raises(InvalidConfig):
            ModelConfig(**bad)
    with pytest.raises(InvalidConfig):
        ModelConfig.from_json({"d_model": 8, "layers": 2})


# -- training ---------------------------------------------------------------------


def test_lr_schedule_peak():
    w = 100
    assert inverse_sqrt_lr(w, 64, w) == pytest.approx(64 ** -0.5 * w ** -0.5)
    assert inverse_sqrt_lr(w // 2, 64, w) < inverse_sqrt_lr(w, 64, w) > inverse_sqrt_lr(2 * w, 64, w)


def test_initial_loss_is_near_uniform():
    cond, tgt = piece(6, 4)
    model = build_model(ModelConfig(d_model=64, enc_layers=2, dec_layers=2, heads=4, ffn_size=128, dropout=0.0), 0)
    ex = make_example(cond, tgt)
    notes = (ex.gold_vel >= 0).mean()
    expected = math.log(V1_SIZE) + notes * 2 * math.log(32)
    with torch.no_grad():
        loss = float(example_loss(model, ex))
    assert abs(loss - expected) / expected < 0.05


def test_training_is_deterministic():
    pairs = [piece(s, 2) for s in range(3)]
    tc = TrainConfig(steps=6, warmup=10)
    cfg = TINY.replace(dropout=0.1)
    assert train(pairs, cfg, tc).losses == train(pairs, cfg, tc).losses


def test_training_reduces_loss():
    pairs = [piece(7, 2)]
    r = train(pairs, TINY, TrainConfig(steps=40, warmup=10))
    assert r.losses[-1] < 0.7 * r.losses[0]


def test_checkpoint_roundtrip_and_resume(tmp_path):
    pairs = [piece(s, 2) for s in range(3)]
    cfg = TINY.replace(dropout=0.1)
    tc = TrainConfig(steps=4, warmup=10, seed=3)
    whole = train(pairs, cfg, TrainConfig(steps=8, warmup=10, seed=3))
    half = train(pairs, cfg, tc)
    save_checkpoint(tmp_path / "c.npz", half, tc, {"note": "x"})
    ck = load_checkpoint(tmp_path / "c.npz")
    assert ck.step == 4 and ck.meta["run_config"] == {"note": "x"} and ck.meta["format_version"] == "popmag-ckpt-1"
    ex = make_example(*pairs[0])
    half.model.eval()
    for a, b in zip(half.model(ex.cond, ex.tgt), ck.model(ex.cond, ex.tgt)):
        assert torch.equal(a, b)
    resumed = train(pairs, cfg, tc, resume=ck.as_train_result())
    assert resumed.step == 8
    np.testing.assert_allclose(resumed.losses, whole.losses[4:], rtol=1e-6)


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "x.npz"
    p.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    np.savez(p, a=np.zeros(2))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_score_marks_absent_heads():
    model = f64()
    cond, tgt = piece(8, 2)
    nll1, nll2, nll3 = score(model, cond, tgt)
    gold = teacher_forcing(tgt)[2]
    assert np.isnan(nll2[gold < 0]).all() and np.isfinite(nll2[gold >= 0]).all()
    assert np.isfinite(nll1).all() and (np.isnan(nll2) == np.isnan(nll3)).all()


# -- generation --------------------------------------------------------------------


def test_sample_index_limits():
    rng = np.random.default_rng(0)
    logits = np.array([0.0, 3.0, 3.0, -np.inf, 1.0])
    assert sample_index(logits, 5, 0.0, rng) == 1
    assert {sample_index(logits, 1, 1.0, rng) for _ in range(20)} == {1}
    draws = {sample_index(logits, 2, 1.0, rng) for _ in range(200)}
    assert draws == {1, 2}
    assert 3 not in {sample_index(logits, 5, 5.0, rng) for _ in range(500)}


@pytest.fixture(scope="module")
def tiny_model():
    pairs = [piece(s, 4) for s in range(4)]
    return train(pairs, TINY, TrainConfig(steps=30, warmup=10)).model


def test_greedy_generation_is_seed_independent(tiny_model):
    cond, _ = piece(20, 4)
    greedy = SamplingConfig(top_k=1, temperature=0.0)
    assert generate(tiny_model, cond, greedy, seed=1) == generate(tiny_model, cond, greedy, seed=2)


def test_generation_parses_and_respects_caps(tiny_model):
    cond, _ = piece(21, 6)
    for seed in range(5):
        out = generate(tiny_model, cond, SamplingConfig(max_bars=3), seed=seed)
        check_grammar(out.tokens)
        s = decode(out)
        assert s.n_bars <= 3 and Role.MELODY not in s.tracks and not s.chords
        assert encode(s) == out
    assert generate(tiny_model, cond, SamplingConfig(max_bars=3), seed=4) == \
        generate(tiny_model, cond, SamplingConfig(max_bars=3), seed=4)


def test_generation_respects_target_roles(tiny_model):
    cond, _ = piece(22, 3)
    out = generate(tiny_model, cond, seed=0, target_roles={Role.BASS})
    assert set(decode(out).tracks) <= {Role.BASS}


def test_retry_exhausted_without_mask():
    model = f64()
    with torch.no_grad():
        model.output.h1.bias[CHORD_BASE] = 1e4
    cond, _ = piece(23, 2)
    with pytest.raises(RetryExhausted):
        generate(model, cond, SamplingConfig(top_k=1, grammar_mask=False))


def test_incremental_decoding_matches_teacher_forcing():
    model = f64(SMALL.replace(mem_len_dec=6))
    cond, tgt = piece(24, 3)
    ex = make_example(cond, tgt)
    enc = model.encode(ex.cond)
    full = model.decode(enc, ex.tgt)
    state = model.start_decoding()
    with torch.no_grad():
        for i in range(len(ex.tgt)):
            rows = model.decode_step(enc, state, ex.tgt.slice(i, i + 1))
            for a, b in zip(full, rows):
                torch.testing.assert_close(a[i], b, rtol=0, atol=1e-12)


def test_zero_bar_condition_gives_empty_output(tiny_model):
    cond, _ = piece(25, 2)
    assert generate(tiny_model, cond, SamplingConfig(max_bars=0)).tokens == ()
