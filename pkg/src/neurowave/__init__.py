"""EEG emotion recognition: DE features over five electrodes and a CNN-Transformer classifier."""

__version__ = "0.1.0"
