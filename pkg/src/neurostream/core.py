"""Domain types shared across the pipeline: frames, the electrode grid, chunks and codes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DuplicateLabel, MissingChannel, OutOfBounds, ParseError, ShapeError

log = logging.getLogger(__name__)

GRID_ROWS = 10
GRID_COLS = 9
CHUNK_STEPS = 16
CHUNK_SHAPE = (CHUNK_STEPS, GRID_ROWS, GRID_COLS)
CHUNK_SIZE = CHUNK_STEPS * GRID_ROWS * GRID_COLS  # 1440
CODE_SIZE = 128

SAMPLE_DTYPE = np.float32


def _frozen(a, dtype=SAMPLE_DTYPE) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NeuroFrame:
    """One timestamped block of samples, shape (num_samples, num_channels), in microvolts."""

    seq: int
    timestamp: int
    sampling_rate: float
    channel_names: tuple[str, ...]
    samples: np.ndarray
    settling: bool = False

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 2:
            raise ShapeError(f"samples must be 2-D, got shape {samples.shape}")
        if samples.shape[0] < 1:
            raise ShapeError("a frame needs at least one sample")
        names = tuple(self.channel_names)
        if samples.shape[1] != len(names):
            raise ShapeError(
                f"{samples.shape[1]} sample columns for {len(names)} channel names"
            )
        if not np.all(np.isfinite(samples)):
            raise ValueError("frame samples must be finite")
        if not self.sampling_rate > 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "seq", int(self.seq))
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "sampling_rate", float(self.sampling_rate))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    def replace(self, **changes) -> "NeuroFrame":
        fields = dict(
            seq=self.seq,
            timestamp=self.timestamp,
            sampling_rate=self.sampling_rate,
            channel_names=self.channel_names,
            samples=self.samples,
            settling=self.settling,
        )
        fields.update(changes)
        return NeuroFrame(**fields)

    def __eq__(self, other):
        if not isinstance(other, NeuroFrame):
            return NotImplemented
        return (
            self.seq == other.seq
            and self.timestamp == other.timestamp
            and self.sampling_rate == other.sampling_rate
            and self.channel_names == other.channel_names
            and self.settling == other.settling
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LatentCode:
    values: np.ndarray
    source_seq: int
    timestamp: int

    def __post_init__(self):
        values = _frozen(self.values).reshape(-1)
        if values.shape[0] != CODE_SIZE:
            raise ShapeError(f"latent code must have {CODE_SIZE} values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("latent code values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source_seq", int(self.source_seq))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def __eq__(self, other):
        if not isinstance(other, LatentCode):
            return NotImplemented
        return (
            self.source_seq == other.source_seq
            and self.timestamp == other.timestamp
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Chunk:
    data: np.ndarray
    start_timestamp: int = 0

    def __post_init__(self):
        data = _frozen(self.data)
        if data.shape != CHUNK_SHAPE:
            raise ShapeError(f"chunk must have shape {CHUNK_SHAPE}, got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "start_timestamp", int(self.start_timestamp))

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class ChannelGrid:
    """Electrode label -> (row, col) placement on the rows x cols matrix."""

    placement: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    rows: int = GRID_ROWS
    cols: int = GRID_COLS

    def __post_init__(self):
        seen: dict[tuple[int, int], str] = {}
        clean = {}
        for label, (r, c) in self.placement.items():
            r, c = int(r), int(c)
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise OutOfBounds(f"{label!r} placed at ({r}, {c}) outside {self.rows}x{self.cols}")
            if (r, c) in seen:
                raise DuplicateLabel(f"{label!r} and {seen[(r, c)]!r} share cell ({r}, {c})")
            seen[(r, c)] = label
            clean[label] = (r, c)
        object.__setattr__(self, "placement", dict(clean))

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.rows, self.cols), dtype=bool)
        for r, c in self.placement.values():
            m[r, c] = True
        return m

    @property
    def labels(self) -> list[str]:
        """Placed labels in row-major cell order."""
        return [lab for lab, _ in sorted(self.placement.items(), key=lambda kv: kv[1])]

    def __len__(self):
        return len(self.placement)

    def to_config(self) -> str:
        cells = [["-"] * self.cols for _ in range(self.rows)]
        for label, (r, c) in self.placement.items():
            cells[r][c] = label
        return "\n".join(" ".join(row) for row in cells) + "\n"


# Rows as printed in the electrode layout table, top to bottom; None marks a blank cell.
_DEFAULT_LAYOUT = [
    [None, None, "F3", "F1", "Fz", "F2", "F4", None, None],
    [None, "FFC5", "FFC3", "FFC1", None, "FFC2", "FFC4", "FFC6", None],
    [None, "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", None],
    ["FTT7", "FCC5", "FCC3", "FCC1", None, "FCC2", "FCC4", "FCC6", "FTT8"],
    [None, "C5", "C3", "C1", "Cz", "C2", "C4", "C6", None],
    ["TTP7", "CCP5", "CCP3", "CCP1", None, "CCP2", "CCP4", "CCP6", "TTP8"],
    [None, "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", None],
    [None, "CPP5", "CPP3", "CPP1", None, "CPP2", "CPP4", "CPP6", None],
    [None, None, "P3", "P1", "Pz", "P2", "P4", None, None],
    [None, None, None, "PPO1", None, "PPO2", None, None, None],
]


def default_grid() -> ChannelGrid:
    placement = {
        label: (r, c)
        for r, row in enumerate(_DEFAULT_LAYOUT)
        for c, label in enumerate(row)
        if label is not None
    }
    return ChannelGrid(placement)


def grid_from_config(text: str) -> ChannelGrid:
    """Parse a grid document: one line per row, whitespace separated labels, ``-`` for blanks.

    A document with no rows yields an empty grid. Otherwise exactly 10 rows are required.
    ``#`` starts a comment.
    """
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        return ChannelGrid({})
    if len(lines) != GRID_ROWS:
        raise ParseError(f"grid document needs {GRID_ROWS} rows, found {len(lines)}")
    placement: dict[str, tuple[int, int]] = {}
    for r, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) > GRID_COLS:
            raise OutOfBounds(f"row {r} has {len(tokens)} cells, at most {GRID_COLS} allowed")
        for c, tok in enumerate(tokens):
            if tok == "-":
                continue
            if tok in placement:
                raise DuplicateLabel(f"label {tok!r} appears at {placement[tok]} and ({r}, {c})")
            placement[tok] = (r, c)
    return ChannelGrid(placement)


def grid_render(
    grid: ChannelGrid,
    frame_rows,
    channel_names: Sequence[str],
    *,
    strict: bool = True,
    start_timestamp: int = 0,
) -> Chunk:
    """Place a (16, num_channels) block of samples onto the grid, giving a (16, 10, 9) chunk.

    With ``strict=False`` placed labels missing from the stream are zero-filled.
    """
    rows = np.asarray(frame_rows, dtype=SAMPLE_DTYPE)
    if rows.ndim != 2 or rows.shape[0] != CHUNK_STEPS:
        raise ShapeError(f"expected {CHUNK_STEPS} rows of samples, got shape {rows.shape}")
    if rows.shape[1] != len(channel_names):
        raise ShapeError(f"{rows.shape[1]} columns for {len(channel_names)} channel names")
    src, dst = render_index(grid, channel_names, strict=strict)
    out = np.zeros((CHUNK_STEPS, grid.rows * grid.cols), dtype=SAMPLE_DTYPE)
    out[:, dst] = rows[:, src]
    return Chunk(out.reshape(CHUNK_STEPS, grid.rows, grid.cols), start_timestamp)


def render_index(grid: ChannelGrid, channel_names: Sequence[str], *, strict: bool = True):
    """Column indices into the stream and flat cell indices into the grid, aligned."""
    position = {name: i for i, name in enumerate(channel_names)}
    src, dst, missing = [], [], []
    for label, (r, c) in grid.placement.items():
        i = position.get(label)
        if i is None:
            missing.append(label)
            continue
        src.append(i)
        dst.append(r * grid.cols + c)
    if missing:
        if strict:
            raise MissingChannel(f"channels missing from stream: {', '.join(sorted(missing))}")
        log.warning("zero-filling %d grid channels absent from stream: %s",
                    len(missing), ", ".join(sorted(missing)))
    return np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp)


def grid_extract(grid: ChannelGrid, chunk: Chunk, channel_names: Sequence[str]) -> np.ndarray:
    """Inverse of grid_render for the placed cells: (16, len(channel_names)) samples."""
    out = np.zeros((chunk.data.shape[0], len(channel_names)), dtype=SAMPLE_DTYPE)
    for i, name in enumerate(channel_names):
        if name in grid.placement:
            r, c = grid.placement[name]
            out[:, i] = chunk.data[:, r, c]
    return out
