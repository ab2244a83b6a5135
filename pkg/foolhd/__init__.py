"""Adversarial attacks on speaker identification with a per-clip gated convolutional autoencoder."""

__all__ = [
    "attacks",
    "cli",
    "corpus",
    "dsp",
    "errors",
    "experiment",
    "losses",
    "metrics",
    "nets",
    "report_formatter",
    "tensorcore",
    "wavio",
]

__version__ = "0.1.0"
