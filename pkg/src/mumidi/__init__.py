"""MuMIDI: one-token-per-note multi-track music sequences, corpus preprocessing,
objective metrics and a segment-recurrent accompaniment model."""

__version__ = "0.1.0"
