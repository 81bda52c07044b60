"""Process-level performance knobs."""

from __future__ import annotations

import ctypes
import ctypes.util

__all__ = ["tune_allocator"]

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(trim_bytes: int = 512 << 20, mmap_bytes: int = 64 << 20) -> bool:
    """Keep freed heap memory around instead of returning it to the OS.

    The training loops allocate many short-lived multi-megabyte temporaries;
    with glibc defaults each one is a fresh mmap and the page faults dominate
    the arithmetic. Returns False (and does nothing) when glibc is absent.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_TRIM_THRESHOLD, int(trim_bytes)) == 1
    return bool(mallopt(_M_MMAP_THRESHOLD, int(mmap_bytes)) == 1 and ok)
