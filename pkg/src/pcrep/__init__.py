"""Self-supervised speech representations: future-frame prediction with a
past-reconstruction regularizer, plus a frozen-feature probing protocol."""

__version__ = "0.1.0"
