"""Sample sources for the acquisition node: container playback and synthetic EEG."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import ChannelGrid, default_grid
from ..errors import SourceExhausted
from ..io import container_read
from ..synthetic import SyntheticEEG


class PlaybackSource:
    """Replays the samples of a container file (or an in-memory array) once."""

    def __init__(self, samples, sampling_rate: float, channel_names: Sequence[str], name="playback"):
        self.samples = np.asarray(samples, dtype=np.float32)
        self.sampling_rate = float(sampling_rate)
        self.channel_names = tuple(channel_names)
        self.name = name
        self.position = 0

    @classmethod
    def from_file(cls, path) -> "PlaybackSource":
        c = container_read(path)
        return cls(c.samples(), c.sampling_rate, c.channel_names, name=str(path))

    @property
    def remaining(self) -> int:
        return self.samples.shape[0] - self.position

    def read(self, n: int) -> np.ndarray:
        if self.remaining < n:
            raise SourceExhausted(f"{self.name}: {self.remaining} samples left, {n} requested")
        block = self.samples[self.position : self.position + n]
        self.position += n
        return block


class SyntheticSource:
    def __init__(self, channel_names: Sequence[str] | None = None, sampling_rate: float = 512.0,
                 seed: int = 0, grid: ChannelGrid | None = None):
        grid = grid or default_grid()
        self.channel_names = tuple(channel_names or grid.labels)
        self.sampling_rate = float(sampling_rate)
        self.name = f"synthetic(seed={seed})"
        self._gen = SyntheticEEG(self.channel_names, sampling_rate, seed, grid)

    def read(self, n: int) -> np.ndarray:
        return self._gen.read(n)
