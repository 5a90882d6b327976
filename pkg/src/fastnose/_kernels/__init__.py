"""Kernel backend selection: compiled extension if present, else pure Python.

Both backends implement the same functions with bit-identical results; the
compiled one is roughly two orders of magnitude faster on the tick loop
(see benchmarks/bench_kernels.py). Set FASTNOSE_KERNEL=pure to force the
fallback.
"""

import os

from . import _pure

if os.environ.get("FASTNOSE_KERNEL", "").lower() == "pure":
    _impl = _pure
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
first_order_filter = _impl.first_order_filter
simulate_channel = _impl.simulate_channel
simulate_gap = _impl.simulate_gap


def get_backend(name: str):
    """Explicit backend lookup, used by the parity tests and the benchmark."""
    if name == "pure":
        return _pure
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend {name!r}")
