"""Cycle-counter timing for per-phase breakdowns inside compiled kernels.

The training loop is a single fused numba kernel; wall-clock calls are not
available there, so phase times are accumulated as cycle counts read from
the CPU's cycle counter (``llvm.readcyclecounter``, i.e. ``rdtsc`` on x86)
and converted to seconds with a calibration factor measured once per
process.  Reading the counter costs a few tens of cycles, which is noise
next to the ~10k cycles a training pair takes at K=128.
"""

from __future__ import annotations

import time

from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic


@intrinsic
def _readcyclecounter(typingctx):
    sig = types.uint64()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(64), [])
        fn = builder.module.declare_intrinsic("llvm.readcyclecounter", fnty=fnty)
        return builder.call(fn, [])

    return sig, codegen


@njit(nogil=True, cache=True)
def cycles():
    """Current CPU cycle count (monotonic on one core, unitless)."""
    return _readcyclecounter()


_cycles_per_second: float | None = None


def cycles_per_second(calibration_s: float = 0.05) -> float:
    """Cycles-to-seconds calibration factor, measured once and cached."""
    global _cycles_per_second
    if _cycles_per_second is None:
        cycles()  # force compilation outside the timed window
        t0 = time.perf_counter()
        c0 = cycles()
        while time.perf_counter() - t0 < calibration_s:
            pass
        c1 = cycles()
        t1 = time.perf_counter()
        _cycles_per_second = float(c1 - c0) / (t1 - t0)
    return _cycles_per_second
