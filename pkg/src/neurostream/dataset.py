"""Offline preparation of training chunks from raw recordings."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import CHUNK_STEPS, ChannelGrid, default_grid, render_index
from .dsp import SETTLING_SECONDS, PreprocessChain


def preprocess_signal(samples, fs: float = 512.0) -> np.ndarray:
    """The streaming chain (notch, band-pass, decimate) run over a whole (T, C) recording."""
    return PreprocessChain(fs).process(np.asarray(samples, dtype=np.float64)).astype(np.float32)


def chunk_signal(samples, channel_names: Sequence[str], grid: ChannelGrid | None = None, *,
                 hop: int = CHUNK_STEPS, skip: int = 0, strict: bool = True) -> np.ndarray:
    """Cut a preprocessed (T, C) signal into (N, 16, rows, cols) grid chunks."""
    grid = grid or default_grid()
    x = np.asarray(samples, dtype=np.float32)[skip:]
    src, dst = render_index(grid, channel_names, strict=strict)
    starts = range(0, x.shape[0] - CHUNK_STEPS + 1, hop)
    out = np.zeros((len(starts), CHUNK_STEPS, grid.rows * grid.cols), dtype=np.float32)
    for i, s in enumerate(starts):
        out[i][:, dst] = x[s : s + CHUNK_STEPS, src]
    return out.reshape(len(starts), CHUNK_STEPS, grid.rows, grid.cols)


def chunks_from_recording(samples, channel_names: Sequence[str], fs: float = 512.0,
                          grid: ChannelGrid | None = None, *, hop: int = CHUNK_STEPS,
                          skip_settling: bool = True, strict: bool = True) -> np.ndarray:
    y = preprocess_signal(samples, fs)
    out_fs = fs / 4
    skip = int(SETTLING_SECONDS * out_fs) if skip_settling else 0
    return chunk_signal(y, channel_names, grid, hop=hop, skip=skip, strict=strict)
