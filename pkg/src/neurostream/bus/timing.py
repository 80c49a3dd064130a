"""Absolute-deadline pacing and inter-output interval statistics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..errors import TooFewSamples

SPIN_NS = 200_000


class PeriodicTimer:
    """Deadlines at ``start + n * period``; lateness never accumulates into later ticks."""

    def __init__(self, period_ns: int, start_ns: int | None = None, spin_ns: int = SPIN_NS,
                 clock=time.monotonic_ns, sleep=time.sleep):
        self.period_ns = int(period_ns)
        self.clock = clock
        self.sleep = sleep
        self.spin_ns = spin_ns
        self.start_ns = clock() if start_ns is None else start_ns
        self.tick = 0

    def deadline(self, n: int) -> int:
        return self.start_ns + n * self.period_ns

    def wait(self, n: int, stop=None) -> int:
        """Block until deadline ``n``; returns the wake-up time in ns.

        Sleeps until ``spin_ns`` before the deadline, then busy-waits. ``stop`` is an
        optional threading.Event that aborts the wait early.
        """
        target = self.deadline(n)
        while True:
            now = self.clock()
            remaining = target - now
            if remaining <= 0:
                return now
            if stop is not None and stop.is_set():
                return now
            if remaining > self.spin_ns:
                self.sleep(min(remaining - self.spin_ns, 50_000_000) / 1e9)

    def wait_next(self, stop=None) -> int:
        now = self.wait(self.tick, stop)
        self.tick += 1
        return now


@dataclass
class JitterRecord:
    intervals_ms: np.ndarray
    nominal_ms: float
    mean: float
    std: float
    bin_width_ms: float
    bin_centers: np.ndarray
    bin_fractions: np.ndarray
    within_1ms: float
    in_nominal_bin: float

    @property
    def count(self) -> int:
        return int(self.intervals_ms.size)

    def summary(self) -> dict:
        return {
            "count": self.count,
            "nominal_ms": self.nominal_ms,
            "mean_ms": self.mean,
            "std_ms": self.std,
            "min_ms": float(self.intervals_ms.min()),
            "max_ms": float(self.intervals_ms.max()),
            "fraction_within_1ms": self.within_1ms,
            "fraction_in_nominal_bin": self.in_nominal_bin,
        }

    def intervals_csv(self) -> str:
        return "".join(f"{v:.6f}\n" for v in self.intervals_ms)

    def histogram_csv(self) -> str:
        lines = ["bin_center_ms,fraction"]
        lines += [f"{c:.4f},{f:.6f}" for c, f in zip(self.bin_centers, self.bin_fractions)]
        lines.append("")
        lines += [f"# {k},{v:.6g}" if isinstance(v, float) else f"# {k},{v}"
                  for k, v in self.summary().items()]
        return "\n".join(lines) + "\n"


def jitter_report(timestamps, nominal_ms: float = 62.5, bin_width_ms: float = 0.1,
                  unit: str = "ns") -> JitterRecord:
    """Statistics of the gaps between consecutive output timestamps.

    Histogram bins are ``bin_width_ms`` wide with one bin centred on ``nominal_ms``.
    Standard deviation is the population value.
    """
    scale = {"ns": 1e-6, "us": 1e-3, "ms": 1.0, "s": 1e3}[unit]
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.size < 2:
        raise TooFewSamples("jitter needs at least two timestamps")
    if unit == "ns":
        # differences on the integer values keep sub-ns exactness
        iv = np.diff(np.asarray(timestamps, dtype=np.int64)).astype(np.float64) * scale
    else:
        iv = np.diff(ts) * scale
    if np.any(iv <= 0):
        raise ValueError("timestamps must be strictly increasing")
    offsets = np.round((iv - nominal_ms) / bin_width_ms).astype(np.int64)
    lo, hi = int(offsets.min()), int(offsets.max())
    counts = np.bincount(offsets - lo, minlength=hi - lo + 1)
    centers = nominal_ms + np.arange(lo, hi + 1) * bin_width_ms
    return JitterRecord(
        intervals_ms=iv,
        nominal_ms=nominal_ms,
        mean=float(iv.mean()),
        std=float(iv.std()),
        bin_width_ms=bin_width_ms,
        bin_centers=centers,
        bin_fractions=counts / iv.size,
        within_1ms=float(np.mean(np.abs(iv - nominal_ms) <= 1.0)),
        in_nominal_bin=float(np.mean(offsets == 0)),
    )
