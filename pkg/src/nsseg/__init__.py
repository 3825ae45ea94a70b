"""Noisy Student self-training for binary segmentation on synthetic head phantoms."""

__version__ = "0.1.0"

NEG = 0
POS = 1
IGNORE = 255
