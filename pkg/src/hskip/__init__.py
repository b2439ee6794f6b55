"""Self-stabilizing bandwidth-ordered skip graph overlay: protocol, oracle and simulator."""

from hskip.core import (
    BitStream,
    HSkipError,
    LevelOverflow,
    bandwidth_key,
    common_prefix,
    prefix,
)

__all__ = [
    "BitStream",
    "HSkipError",
    "LevelOverflow",
    "bandwidth_key",
    "common_prefix",
    "prefix",
]

__version__ = "0.1.0"
