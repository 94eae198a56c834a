"""Monocular depth adapter: relative depth maps as normalized PFM files."""

from .core import DEFAULT_MODEL, infer_depth, normalize_external
from .pfm import PfmError, read_pfm, write_pfm

__all__ = [
    "DEFAULT_MODEL",
    "PfmError",
    "infer_depth",
    "normalize_external",
    "read_pfm",
    "write_pfm",
]
