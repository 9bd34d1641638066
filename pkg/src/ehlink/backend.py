"""Kernel backend selection.

The compiled Cython kernel is preferred when importable; the pure-Python
kernel is the fallback and the semantics reference.  EHLINK_BACKEND=python
forces the fallback (EHLINK_BACKEND=compiled insists on the extension).
Both produce bit-identical trajectories for a given (inputs, seed).
"""

from __future__ import annotations

import os

from . import _pykernel
from .kernelio import KernelInputs, KernelOutputs

_FORCED = os.environ.get("EHLINK_BACKEND", "").strip().lower()

_compiled = None
if _FORCED != "python":
    try:
        from . import _ckernel as _compiled
    except ImportError:
        _compiled = None
        if _FORCED == "compiled":
            raise ImportError(
                "EHLINK_BACKEND=compiled but the extension is not built; "
                "run pip install -e . --no-build-isolation")

BACKEND = "compiled" if _compiled is not None else "python"


def simulate(inputs: KernelInputs, trace: bool = False,
             decision_log: bool = False) -> KernelOutputs:
    """Run one trial on the selected backend.

    Trace and decision-log collection always use the pure kernel (identical
    trajectories make its trace valid for the compiled kernel too).
    """
    if _compiled is None or trace or decision_log:
        return _pykernel.simulate(inputs, trace=trace,
                                  decision_log=decision_log)
    return _compiled.simulate(inputs)


def simulate_with(backend: str, inputs: KernelInputs) -> KernelOutputs:
    """Run on an explicitly chosen backend (used by tests and benchmarks)."""
    if backend == "python":
        return _pykernel.simulate(inputs)
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel not available")
        return _compiled.simulate(inputs)
    raise ValueError(f"unknown backend {backend!r}")
