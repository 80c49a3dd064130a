"""Real-time EEG compression: grid rendering, causal preprocessing, a 3D convolutional
autoencoder and a publish-subscribe streaming graph."""
from .core import (
    CHUNK_SHAPE, CHUNK_SIZE, CODE_SIZE, ChannelGrid, Chunk, LatentCode, NeuroFrame,
    default_grid, grid_from_config, grid_render,
)
from .kernels import NAME as KERNELS

__version__ = "0.1.0"

__all__ = [
    "CHUNK_SHAPE", "CHUNK_SIZE", "CODE_SIZE", "ChannelGrid", "Chunk", "LatentCode", "NeuroFrame",
    "default_grid", "grid_from_config", "grid_render", "KERNELS",
]
