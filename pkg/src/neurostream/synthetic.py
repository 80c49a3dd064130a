"""Deterministic synthetic EEG: alpha/beta rhythms, pink noise, 50 Hz line pickup, spatial mixing."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import ChannelGrid, default_grid
from .dsp import BiquadCascade

# 1/f shaping filter (three poles, three zeros) factored into two sections.
_PINK_B = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
_PINK_A = [1.0, -2.494956002, 2.017265875, -0.522189400]


def _pink_sections():
    zeros = np.roots(_PINK_B)
    poles = np.roots(_PINK_A)
    gain = _PINK_B[0]

    def split(roots):
        real = sorted(r.real for r in roots if abs(r.imag) < 1e-12)
        cplx = [r for r in roots if r.imag > 1e-12]
        quads = [np.real(np.poly([c, np.conj(c)])) for c in cplx]
        # remaining real roots paired, odd one left as first order
        while len(real) >= 2:
            quads.append(np.real(np.poly([real.pop(), real.pop()])))
        if real:
            quads.append(np.array([1.0, -real.pop(), 0.0]))
        return quads

    num, den = split(zeros), split(poles)
    rows = []
    for i, (b, a) in enumerate(zip(num, den)):
        g = gain if i == 0 else 1.0
        rows.append([g * b[0], g * b[1], g * b[2], a[1], a[2]])
    return rows


PINK_SECTIONS = _pink_sections()


class SyntheticEEG:
    """Endless multichannel EEG-like generator; ``read(n)`` returns the next n samples (n, C) in microvolts.

    Reading in any block sizes yields the same stream for a given seed.
    """

    def __init__(self, channels: Sequence[str], fs: float = 512.0, seed: int = 0,
                 grid: ChannelGrid | None = None, *, alpha_uv: float = 10.0, beta_uv: float = 4.0,
                 noise_uv: float = 6.0, line_uv: float = 15.0, line_hz: float = 50.0,
                 correlation_length: float = 1.5):
        self.channels = list(channels)
        self.fs = float(fs)
        self.seed = seed
        grid = grid or default_grid()
        n = len(self.channels)
        rng = np.random.default_rng(seed)
        self._noise_rng = np.random.default_rng([seed, 1])

        pos = np.zeros((n, 2))
        for i, name in enumerate(self.channels):
            if name in grid.placement:
                pos[i] = grid.placement[name]
            else:
                # channels without a grid cell sit far from everything else
                pos[i] = (100.0 + 10.0 * i, 100.0)
        dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        mix = np.exp(-dist / correlation_length)
        self.mixing = mix / np.sqrt((mix ** 2).sum(axis=1, keepdims=True))

        self.alpha_f = rng.uniform(8.5, 11.5, n)
        self.beta_f = rng.uniform(17.0, 23.0, n)
        self.alpha_phase = rng.uniform(0, 2 * np.pi, n)
        self.beta_phase = rng.uniform(0, 2 * np.pi, n)
        self.alpha_amp = alpha_uv * rng.uniform(0.6, 1.4, n)
        self.beta_amp = beta_uv * rng.uniform(0.6, 1.4, n)
        self.line_amp = line_uv * rng.uniform(0.5, 1.5, n)
        self.line_phase = rng.uniform(0, 2 * np.pi)
        self.line_hz = line_hz
        self.noise_uv = noise_uv
        self._pink = BiquadCascade(PINK_SECTIONS)
        # pink filter has roughly 0.1 broadband gain for unit white noise
        self._pink_gain = 10.0
        self.position = 0

    def read(self, n: int) -> np.ndarray:
        t = (self.position + np.arange(n)) / self.fs
        t = t[:, None]
        sources = (
            self.alpha_amp * np.sin(2 * np.pi * self.alpha_f * t + self.alpha_phase)
            + self.beta_amp * np.sin(2 * np.pi * self.beta_f * t + self.beta_phase)
        )
        white = self._noise_rng.standard_normal((n, len(self.channels)))
        sources = sources + self.noise_uv * self._pink_gain * self._pink.process(white)
        mixed = sources @ self.mixing.T
        mixed += self.line_amp * np.sin(2 * np.pi * self.line_hz * t + self.line_phase)
        self.position += n
        return mixed.astype(np.float32)


def synthetic_eeg(channels: Sequence[str], fs: float = 512.0, duration: float = 10.0, seed: int = 0,
                  grid: ChannelGrid | None = None, **kwargs) -> np.ndarray:
    gen = SyntheticEEG(channels, fs, seed, grid, **kwargs)
    return gen.read(int(round(duration * fs)))
