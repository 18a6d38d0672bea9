from __future__ import annotations

import numpy as np
import pytest

from mumidi.chords import ChordHmm, EmptyInput, infer_chords, pitch_class_histograms, viterbi
from mumidi.score import ALL_CHORDS, C_MAJOR, ChordSymbol, QNote, Quality, Role, Score, TempoClass
from mumidi.synth import random_score

from oracles import chord_emissions, chord_histograms, exhaustive_path, path_to_chords

A_MINOR = ChordSymbol(9, Quality.MINOR)


def held(pitches, bar=0, dur=32):
    return [QNote(bar * 32, p + 1, 20, dur) for p in pitches]


def test_c_triad_is_c_major_on_both_halves():
    s = Score(TempoClass.MID, 1, {Role.PIANO: held([60, 64, 67])})
    assert infer_chords(s) == (C_MAJOR, C_MAJOR)


def test_c_then_a_minor_two_states():
    s = Score(TempoClass.MID, 2, {Role.PIANO: held([60, 64, 67]) + held([57, 60, 64], bar=1)})
    hmm = ChordHmm(chords=(C_MAJOR, A_MINOR))
    assert infer_chords(s, hmm=hmm) == (C_MAJOR, C_MAJOR, A_MINOR, A_MINOR)


def test_c_then_a_minor_full_set_prefers_one_seventh_chord():
    # A-C-E-G covers both triads; four frames of template loss cost less than one switch
    s = Score(TempoClass.MID, 2, {Role.PIANO: held([60, 64, 67]) + held([57, 60, 64], bar=1)})
    assert infer_chords(s) == (ChordSymbol(9, Quality.MINOR7),) * 4


def test_silent_piece_raises():
    with pytest.raises(EmptyInput):
        infer_chords(Score(TempoClass.MID, 2, {}))
    with pytest.raises(EmptyInput):
        infer_chords(Score(TempoClass.MID, 1, {Role.DRUM: [QNote(0, 37, 5, 4)]}))


def test_silent_frames_inherit_previous_chord():
    s = Score(TempoClass.MID, 2, {Role.PIANO: [QNote(16 + 32, n + 1, 20, 16) for n in (57, 60, 64)]})
    # frames 0-2 silent: C major default, then A minor
    assert infer_chords(s) == (C_MAJOR, C_MAJOR, C_MAJOR, A_MINOR)
    s = Score(TempoClass.MID, 2, {Role.PIANO: held([57, 60, 64], dur=16)})
    assert infer_chords(s) == (A_MINOR,) * 4


def test_drums_are_ignored():
    s = Score(TempoClass.MID, 1, {Role.PIANO: held([60, 64, 67]), Role.DRUM: held([1, 3, 5, 6, 8, 10])})
    assert infer_chords(s) == (C_MAJOR, C_MAJOR)


def test_histograms_match_step_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        s = random_score(rng)
        np.testing.assert_array_equal(pitch_class_histograms(s), chord_histograms(s))


def test_emissions_match_oracle():
    rng = np.random.default_rng(9)
    hmm = ChordHmm()
    for _ in range(30):
        s = random_score(rng, max_bars=3)
        h = chord_histograms(s)
        np.testing.assert_allclose(hmm.emissions(h), chord_emissions(h, ALL_CHORDS), rtol=1e-12, atol=1e-12)


def reduced_hmm(rng) -> ChordHmm:
    idx = np.sort(rng.choice(len(ALL_CHORDS), 14, replace=False))
    return ChordHmm(chords=tuple(ALL_CHORDS[i] for i in idx))


def viterbi_fixtures(n, seed):
    """Random pitched scores of 1-3 bars over a random 14-chord state set."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        hmm = reduced_hmm(rng)
        s = random_score(rng, max_bars=3, roles=(Role.PIANO, Role.BASS, Role.DRUM))
        if chord_histograms(s).sum() == 0:
            continue
        if rng.random() < 0.3:
            # chord-tone-only material gives exact template matches and ties
            c = hmm.chords[int(rng.integers(14))]
            tones = [QNote(f * 16, pc + 49, 10, 16) for f in range(2 * s.n_bars) if rng.random() < 0.7
                     for pc in c.pitch_classes]
            s = Score(s.tempo, s.n_bars, {Role.PIANO: tones}) if tones else s
        out.append((s, hmm))
    return out


def test_viterbi_equals_exhaustive_search():
    for s, hmm in viterbi_fixtures(60, seed=10):
        em = chord_emissions(chord_histograms(s), hmm.chords)
        best = exhaustive_path(em, hmm.stay_logit, hmm.switch_logit)
        assert infer_chords(s, hmm=hmm) == tuple(path_to_chords(best, hmm.chords, C_MAJOR))


def test_viterbi_tie_breaks_to_smallest_path():
    em = np.zeros((3, 3))
    trans = np.zeros((3, 3))
    assert viterbi(em, trans) == [0, 0, 0]
    em = np.array([[0.0, -1.0], [-1.0, 0.0]])
    trans = np.array([[0.0, -1.0], [-1.0, 0.0]])
    # [0, 0], [0, 1] and [1, 1] all score -1, [1, 0] scores -3
    assert viterbi(em, trans) == [0, 0]
    assert viterbi(em[:, ::-1], trans) == [0, 0]


def test_hmm_parameters_validated():
    with pytest.raises(ValueError):
        ChordHmm(stay_logit=-3.0)
    with pytest.raises(ValueError):
        ChordHmm(smoothing=0.0)
