"""Backend switch for the hot loops.

``FRACLEVY_BACKEND=numpy`` forces the pure-numpy kernels; anything else (the
default) uses numba when it is importable. The flag is read once, at import.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

if numba is not None and "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe, which warns on older system TBB builds
    numba.config.THREADING_LAYER = "workqueue"

REQUESTED = os.environ.get("FRACLEVY_BACKEND", "numba").strip().lower()
USE_NUMBA = numba is not None and REQUESTED != "numpy"
NAME = "numba" if USE_NUMBA else "numpy"


def thread_cap() -> int | None:
    """Worker cap from ``FRACLEVY_THREADS`` (``None`` when unset or invalid)."""
    raw = os.environ.get("FRACLEVY_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    return n if n > 0 else None


def apply_thread_cap() -> None:
    cap = thread_cap()
    if USE_NUMBA and cap is not None:
        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
