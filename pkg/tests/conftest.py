from __future__ import annotations

import numpy as np
import pytest
import torch

from mumidi.score import C_MAJOR, QNote, Role, Score, TempoClass

torch.set_num_threads(1)


def midi_pitch(p: int) -> int:
    """MIDI pitch -> 1-based note pitch."""
    return p + 1


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def excerpt_score() -> Score:
    """One bar of piano and bass over a C major chord: 10 piano notes, 5 bass notes."""
    piano = [
        QNote(0, midi_pitch(60), 20, 8), QNote(0, midi_pitch(64), 20, 8), QNote(0, midi_pitch(67), 20, 8),
        QNote(8, midi_pitch(64), 18, 4), QNote(8, midi_pitch(67), 18, 4),
        QNote(16, midi_pitch(60), 20, 8), QNote(16, midi_pitch(64), 20, 8), QNote(16, midi_pitch(67), 20, 8),
        QNote(24, midi_pitch(72), 18, 8), QNote(28, midi_pitch(67), 16, 4),
    ]
    bass = [
        QNote(0, midi_pitch(36), 22, 8), QNote(8, midi_pitch(43), 20, 8), QNote(16, midi_pitch(36), 22, 8),
        QNote(24, midi_pitch(43), 20, 4), QNote(28, midi_pitch(40), 20, 4),
    ]
    return Score(TempoClass.MID, 1, {Role.PIANO: piano, Role.BASS: bass}, ((0, 0, C_MAJOR),))


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    _CRITERIA[number] = (title, rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, details = _CRITERIA[number]
        terminalreporter.write_line(f"CRITERION {number} {'PASS' if passed else 'FAIL'}: {title}")
        for d in details:
            terminalreporter.write_line(f"    {d}")
