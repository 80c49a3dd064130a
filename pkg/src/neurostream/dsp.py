"""Streaming preprocessing: 50 Hz notch, Butterworth band-pass and decimation.

All filters are causal biquad cascades (transposed direct form II) whose state
persists across frames, so filtering a stream frame by frame gives the same
output as filtering the concatenated signal in one pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import NeuroFrame
from .errors import ChannelCountChanged, InvalidFrequency, RateNotDivisible

NOTCH_HZ = 50.0
NOTCH_Q = 30.0
BANDPASS_LOW_HZ = 0.5
BANDPASS_HIGH_HZ = 60.0
BANDPASS_ORDER = 5
DECIMATION = 4
SETTLING_SECONDS = 2.0


class BiquadCascade:
    """Second-order sections plus per-channel delay registers.

    ``sections`` is an (S, 5) array of ``b0 b1 b2 a1 a2`` with ``a0 == 1``.
    """

    def __init__(self, sections, settling_seconds: float = SETTLING_SECONDS):
        sos = np.array(sections, dtype=np.float64, ndmin=2)
        if sos.shape[1] != 5:
            raise ValueError(f"sections must have 5 coefficients each, got shape {sos.shape}")
        for a1, a2 in sos[:, 3:]:
            if np.any(np.abs(np.roots([1.0, a1, a2])) >= 1.0):
                raise ValueError(f"unstable section with a1={a1!r}, a2={a2!r}")
        self.sections = sos
        self.settling_seconds = settling_seconds
        self.state: np.ndarray | None = None
        self.samples_seen = 0

    def __len__(self):
        return self.sections.shape[0]

    def reset(self):
        self.state = None
        self.samples_seen = 0

    def process(self, x) -> np.ndarray:
        """Filter a (T, C) block, carrying state to the next call."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.process(x[:, None])[:, 0]
        nch = x.shape[1]
        if self.state is None:
            self.state = np.zeros((len(self), 2, nch))
        elif self.state.shape[2] != nch:
            raise ChannelCountChanged(
                f"cascade initialised for {self.state.shape[2]} channels, frame has {nch}"
            )
        y = kernels.sosfilt(self.sections, np.ascontiguousarray(x), self.state)
        self.samples_seen += x.shape[0]
        return y

    def apply(self, frame: NeuroFrame) -> NeuroFrame:
        settling = frame.settling or self.samples_seen < self.settling_seconds * frame.sampling_rate
        y = self.process(frame.samples)
        return frame.replace(samples=y, settling=settling)

    def response(self, freqs, fs: float) -> np.ndarray:
        """Complex frequency response at ``freqs`` Hz."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
        h = np.ones_like(z1)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z1 * z1) / (1.0 + a1 * z1 + a2 * z1 * z1)
        return h

    def to_table(self) -> str:
        return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in self.sections)

    @classmethod
    def from_table(cls, text: str) -> "BiquadCascade":
        rows = [[float(v) for v in line.split()] for line in text.splitlines() if line.strip()]
        return cls(rows)

    def copy(self) -> "BiquadCascade":
        """Same coefficients, fresh state."""
        return BiquadCascade(self.sections.copy(), self.settling_seconds)


def _check_band(fs, *freqs):
    if not fs > 0:
        raise InvalidFrequency(f"sampling rate must be positive, got {fs}")
    for f in freqs:
        if not 0 < f < fs / 2:
            raise InvalidFrequency(f"{f} Hz must lie strictly between 0 and Nyquist ({fs / 2} Hz)")


def design_notch(center_hz: float = NOTCH_HZ, q: float = NOTCH_Q, fs: float = 512.0) -> BiquadCascade:
    """Single-section notch with unity gain at DC and Nyquist and a zero at ``center_hz``."""
    _check_band(fs, center_hz)
    if not q > 0:
        raise ValueError(f"quality factor must be positive, got {q}")
    w0 = 2 * math.pi * center_hz / fs
    g = 1.0 / (1.0 + math.tan(w0 / q / 2.0))
    c = math.cos(w0)
    return BiquadCascade([[g, -2.0 * g * c, g, -2.0 * g * c, 2.0 * g - 1.0]])


def design_butterworth_bandpass(
    order: int = BANDPASS_ORDER,
    low_hz: float = BANDPASS_LOW_HZ,
    high_hz: float = BANDPASS_HIGH_HZ,
    fs: float = 512.0,
) -> BiquadCascade:
    """Digital Butterworth band-pass with 2*order poles as ``order`` biquads.

    Analog prototype -> band-pass transform at pre-warped edges -> bilinear transform.
    The edges sit exactly at -3 dB.
    """
    _check_band(fs, low_hz, high_hz)
    if not low_hz < high_hz:
        raise InvalidFrequency(f"low edge {low_hz} Hz must be below high edge {high_hz} Hz")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")

    fs2 = 2.0 * fs
    w1 = fs2 * math.tan(math.pi * low_hz / fs)
    w2 = fs2 * math.tan(math.pi * high_hz / fs)
    bw = w2 - w1
    w0sq = w1 * w2

    # Prototype poles in the upper half-plane (plus the real one for odd orders).
    proto = [np.exp(1j * math.pi * (2 * k + order + 1) / (2 * order)) for k in range(order)]
    pole_pairs = []
    for p in proto:
        if p.imag < -1e-12:
            continue
        disc = np.sqrt(complex((p * bw) ** 2 - 4.0 * w0sq))
        s_a = (p * bw + disc) / 2.0
        s_b = (p * bw - disc) / 2.0
        if abs(p.imag) <= 1e-12:
            # real prototype pole -> two band-pass poles that share one section
            pole_pairs.append((s_a, s_b))
        else:
            pole_pairs.append((s_a, np.conj(s_a)))
            pole_pairs.append((s_b, np.conj(s_b)))

    def to_z(s):
        return (fs2 + s) / (fs2 - s)

    # Overall analog gain bw**order; bilinear maps the order zeros at s=0 to z=1 and
    # the order zeros at infinity to z=-1. Each section takes one of each.
    gain = bw ** order
    analog_poles = [s for pair in pole_pairs for s in pair]
    gain *= np.real(fs2 ** order / np.prod([fs2 - s for s in analog_poles]))
    per_section = abs(gain) ** (1.0 / order)
    sign = 1.0 if gain >= 0 else -1.0

    rows = []
    for i, (sa, sb) in enumerate(pole_pairs):
        za, zb = to_z(sa), to_z(sb)
        a1 = float(np.real(-(za + zb)))
        a2 = float(np.real(za * zb))
        g = per_section * (sign if i == 0 else 1.0)
        rows.append([g, 0.0, -g, a1, a2])
    # Sections with poles nearest the unit circle go last.
    rows.sort(key=lambda r: r[4])
    return BiquadCascade(rows)


@dataclass
class Decimator:
    """Keeps every ``factor``-th sample of a stream; the phase carries across frames."""

    factor: int = DECIMATION
    phase: int = 0

    def reset(self):
        self.phase = 0

    def process(self, x) -> np.ndarray:
        x = np.asarray(x)
        first = (-self.phase) % self.factor
        self.phase = (self.phase + x.shape[0]) % self.factor
        return x[first :: self.factor]

    def apply(self, frame: NeuroFrame) -> NeuroFrame | None:
        """Decimated frame, or None when no sample of ``frame`` lands on the output grid."""
        fs = frame.sampling_rate
        if fs % self.factor:
            raise RateNotDivisible(f"{fs} Hz is not divisible by {self.factor}")
        first = (-self.phase) % self.factor
        kept = self.process(frame.samples)
        if kept.shape[0] == 0:
            return None
        ts = frame.timestamp + round(first * 1e9 / fs)
        return frame.replace(samples=kept, sampling_rate=fs / self.factor, timestamp=ts)


def decimate(dec: Decimator, frame: NeuroFrame) -> NeuroFrame | None:
    return dec.apply(frame)


def filter_apply(cascade: BiquadCascade, frame: NeuroFrame) -> NeuroFrame:
    return cascade.apply(frame)


@dataclass
class PreprocessChain:
    """notch -> band-pass -> decimate, for one stream."""

    fs: float = 512.0
    notch_q: float = NOTCH_Q
    notch: BiquadCascade = field(init=False)
    bandpass: BiquadCascade = field(init=False)
    decimator: Decimator = field(init=False)

    def __post_init__(self):
        if self.fs % DECIMATION:
            raise RateNotDivisible(f"{self.fs} Hz is not divisible by {DECIMATION}")
        self.notch = design_notch(NOTCH_HZ, self.notch_q, self.fs)
        self.bandpass = design_butterworth_bandpass(BANDPASS_ORDER, BANDPASS_LOW_HZ, BANDPASS_HIGH_HZ, self.fs)
        self.decimator = Decimator(DECIMATION)

    @property
    def output_rate(self) -> float:
        return self.fs / DECIMATION

    def reset(self):
        self.notch.reset()
        self.bandpass.reset()
        self.decimator.reset()

    def apply(self, frame: NeuroFrame) -> NeuroFrame | None:
        if frame.sampling_rate != self.fs:
            raise InvalidFrequency(f"chain built for {self.fs} Hz, frame is {frame.sampling_rate} Hz")
        return self.decimator.apply(self.bandpass.apply(self.notch.apply(frame)))

    def process(self, x) -> np.ndarray:
        """Filter and decimate a raw (T, C) block; state carries to the next call."""
        return self.decimator.process(self.bandpass.process(self.notch.process(x)))

    def response(self, freqs) -> np.ndarray:
        return self.notch.response(freqs, self.fs) * self.bandpass.response(freqs, self.fs)
