"""Signal container files, CSV ingestion and the wire encoding for bus messages.

Byte layouts are documented in ``docs/formats.md``; all numbers are little-endian.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .core import CODE_SIZE, LatentCode, NeuroFrame
from .errors import (
    CorruptFile, MalformedMessage, NonNumericCell, RaggedRows, TruncatedMessage,
    UnknownSchema, VersionMismatch,
)

CONTAINER_MAGIC = b"NSIG"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<dqH")            # sampling rate, start time ns, channel count
_RECORD = struct.Struct("<QqqBI")          # seq, timestamp, receive timestamp, flags, sample count
_STR_LEN = struct.Struct("<H")
FLAG_SETTLING = 0x01


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError(f"label too long: {s[:20]!r}...")
    return _STR_LEN.pack(len(b)) + b


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# -- container ----------------------------------------------------------------

@dataclass
class SignalContainer:
    sampling_rate: float
    channel_names: tuple
    start_time: int = 0
    frames: list = field(default_factory=list)
    receive_times: list = field(default_factory=list)

    @property
    def num_channels(self) -> int:
        return len(self.channel_names)

    def samples(self) -> np.ndarray:
        """All frames stacked into one (T, C) float32 array."""
        if not self.frames:
            return np.zeros((0, self.num_channels), dtype=np.float32)
        return np.vstack([f.samples for f in self.frames])


def _write_header(fh: BinaryIO, sampling_rate, channel_names, start_time):
    fh.write(CONTAINER_MAGIC + bytes([CONTAINER_VERSION]))
    fh.write(_HEADER.pack(float(sampling_rate), int(start_time), len(channel_names)))
    for name in channel_names:
        fh.write(_pack_str(name))


class ContainerWriter:
    """Append frames to a container file; used directly by the recorder node."""

    def __init__(self, path, sampling_rate: float, channel_names: Sequence[str], start_time: int = 0):
        self.path = path
        self.sampling_rate = float(sampling_rate)
        self.channel_names = tuple(channel_names)
        self._last_seq = None
        self._fh = open(path, "wb")
        _write_header(self._fh, self.sampling_rate, self.channel_names, start_time)
        self.records = 0

    def append(self, frame: NeuroFrame, receive_time: int | None = None):
        if frame.channel_names != self.channel_names:
            raise ValueError(
                f"frame has {frame.num_channels} channels {frame.channel_names[:3]}..., "
                f"container expects {len(self.channel_names)}"
            )
        if frame.sampling_rate != self.sampling_rate:
            raise ValueError(f"frame rate {frame.sampling_rate} Hz differs from container rate {self.sampling_rate} Hz")
        if self._last_seq is not None and frame.seq <= self._last_seq:
            raise ValueError(f"records must be ordered by seq: {frame.seq} after {self._last_seq}")
        flags = FLAG_SETTLING if frame.settling else 0
        rt = frame.timestamp if receive_time is None else int(receive_time)
        self._fh.write(_RECORD.pack(frame.seq, frame.timestamp, rt, flags, frame.num_samples))
        self._fh.write(_f32(frame.samples))
        self._last_seq = frame.seq
        self.records += 1

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def container_write(path, frames: Iterable[NeuroFrame], sampling_rate: float | None = None,
                    channel_names: Sequence[str] | None = None, start_time: int = 0,
                    receive_times: Sequence[int] | None = None):
    frames = list(frames)
    if frames:
        sampling_rate = frames[0].sampling_rate if sampling_rate is None else sampling_rate
        channel_names = frames[0].channel_names if channel_names is None else channel_names
    sampling_rate = 512.0 if sampling_rate is None else sampling_rate
    channel_names = () if channel_names is None else channel_names
    with ContainerWriter(path, sampling_rate, channel_names, start_time) as w:
        for i, f in enumerate(frames):
            w.append(f, None if receive_times is None else receive_times[i])


def _read_exact(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise CorruptFile(f"truncated {what}: wanted {n} bytes, got {len(b)}")
    return b


def _read_header(fh):
    magic = fh.read(5)
    if len(magic) < 5 or magic[:4] != CONTAINER_MAGIC:
        raise CorruptFile(f"not a signal container (magic {magic[:4]!r})")
    if magic[4] != CONTAINER_VERSION:
        raise VersionMismatch(f"container version {magic[4]} unsupported (expected {CONTAINER_VERSION})")
    fs, start, nch = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
    names = []
    for _ in range(nch):
        (n,) = _STR_LEN.unpack(_read_exact(fh, 2, "channel label"))
        try:
            names.append(_read_exact(fh, n, "channel label").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptFile(f"channel label is not UTF-8: {exc}") from None
    if not (math.isfinite(fs) and fs > 0):
        raise CorruptFile(f"invalid sampling rate {fs}")
    return fs, start, tuple(names)


def container_iter(path) -> Iterator[tuple[NeuroFrame, int]]:
    """Yield (frame, receive_time) records lazily."""
    with open(path, "rb") as fh:
        fs, start, names = _read_header(fh)
        nch = len(names)
        last = None
        while True:
            head = fh.read(_RECORD.size)
            if not head:
                return
            if len(head) < _RECORD.size:
                raise CorruptFile("truncated record header")
            seq, ts, rt, flags, ns = _RECORD.unpack(head)
            payload = _read_exact(fh, ns * nch * 4, "record payload")
            if last is not None and seq <= last:
                raise CorruptFile(f"records out of order: seq {seq} after {last}")
            last = seq
            samples = np.frombuffer(payload, dtype="<f4").reshape(ns, nch)
            try:
                frame = NeuroFrame(seq, ts, fs, names, samples, bool(flags & FLAG_SETTLING))
            except ValueError as exc:
                raise CorruptFile(f"record {seq}: {exc}") from None
            yield frame, rt


def container_read(path) -> SignalContainer:
    with open(path, "rb") as fh:
        fs, start, names = _read_header(fh)
    c = SignalContainer(fs, names, start)
    for frame, rt in container_iter(path):
        c.frames.append(frame)
        c.receive_times.append(rt)
    return c


def frames_from_samples(samples, sampling_rate: float, channel_names: Sequence[str],
                        frame_size: int = 32, start_seq: int = 0) -> list[NeuroFrame]:
    """Split a (T, C) array into consecutive frames; the last frame may be short."""
    samples = np.asarray(samples, dtype=np.float32)
    frames = []
    for k, s in enumerate(range(0, samples.shape[0], frame_size)):
        ts = round(s * 1e9 / sampling_rate)
        frames.append(NeuroFrame(start_seq + k, ts, sampling_rate, channel_names, samples[s : s + frame_size]))
    return frames


def csv_import(path, fs: float, labels: Sequence[str] | None = None, header: bool | None = None,
               frame_size: int = 32) -> SignalContainer:
    """Read a comma-separated table (one column per channel) into a container.

    ``header=None`` detects a label row: the first row is a header if any cell is not a number.
    Explicit ``labels`` override the header; without either, channels are named ch0, ch1, ...
    """
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and any(cell.strip() for cell in row):
                rows.append([cell.strip() for cell in row])
    head = None
    if rows:
        if header is None:
            header = any(not _is_number(c) for c in rows[0])
        if header:
            head, rows = rows[0], rows[1:]
    width = len(head) if head is not None else (len(rows[0]) if rows else len(labels or ()))
    data = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        lineno = i + 1 + (1 if head is not None else 0)
        if len(row) != width:
            raise RaggedRows(f"line {lineno} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise NonNumericCell(f"line {lineno}, column {j + 1}: {cell!r} is not a finite number")
            data[i, j] = v
    if labels is not None:
        names = tuple(labels)
    elif head is not None:
        names = tuple(head)
    else:
        names = tuple(f"ch{j}" for j in range(width))
    if len(names) != width:
        raise RaggedRows(f"{len(names)} labels for {width} columns")
    c = SignalContainer(float(fs), names)
    c.frames = frames_from_samples(data, fs, names, frame_size)
    c.receive_times = [f.timestamp for f in c.frames]
    return c


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


# -- message wire format ------------------------------------------------------

MESSAGE_MAGIC = b"NM"
MESSAGE_VERSION = 1
SCHEMA_FRAME = 1
SCHEMA_CODE = 2
SCHEMA_HEARTBEAT = 3
_MSG_HEAD = struct.Struct("<2sBB")
_FRAME_HEAD = struct.Struct("<QqdBHI")   # seq, timestamp, fs, flags, channels, samples
_CODE_HEAD = struct.Struct("<QqI")       # source seq, timestamp, length
_HEARTBEAT = struct.Struct("<qQ")        # timestamp, counter


@dataclass(frozen=True)
class Heartbeat:
    timestamp: int
    counter: int = 0


def message_encode(msg) -> bytes:
    if isinstance(msg, NeuroFrame):
        parts = [
            _MSG_HEAD.pack(MESSAGE_MAGIC, MESSAGE_VERSION, SCHEMA_FRAME),
            _FRAME_HEAD.pack(msg.seq, msg.timestamp, msg.sampling_rate,
                             FLAG_SETTLING if msg.settling else 0, msg.num_channels, msg.num_samples),
        ]
        parts.extend(_pack_str(n) for n in msg.channel_names)
        parts.append(_f32(msg.samples))
        return b"".join(parts)
    if isinstance(msg, LatentCode):
        return (_MSG_HEAD.pack(MESSAGE_MAGIC, MESSAGE_VERSION, SCHEMA_CODE)
                + _CODE_HEAD.pack(msg.source_seq, msg.timestamp, msg.values.size)
                + _f32(msg.values))
    if isinstance(msg, Heartbeat):
        return (_MSG_HEAD.pack(MESSAGE_MAGIC, MESSAGE_VERSION, SCHEMA_HEARTBEAT)
                + _HEARTBEAT.pack(msg.timestamp, msg.counter))
    raise UnknownSchema(f"no wire schema for {type(msg).__name__}")


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedMessage(f"message truncated in {what}: need {n} bytes at offset {self.pos}, "
                                   f"{len(self.buf) - self.pos} left")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))


def message_decode(data: bytes):
    r = _Reader(data)
    magic, version, schema = r.unpack(_MSG_HEAD, "header")
    if magic != MESSAGE_MAGIC:
        raise MalformedMessage(f"bad message magic {magic!r}")
    if version != MESSAGE_VERSION:
        raise UnknownSchema(f"message version {version} unsupported")
    if schema == SCHEMA_FRAME:
        seq, ts, fs, flags, nch, ns = r.unpack(_FRAME_HEAD, "frame header")
        names = []
        for _ in range(nch):
            (n,) = r.unpack(_STR_LEN, "channel label")
            names.append(bytes(r.take(n, "channel label")).decode("utf-8"))
        samples = np.frombuffer(r.take(ns * nch * 4, "samples"), dtype="<f4").reshape(ns, nch)
        msg = NeuroFrame(seq, ts, fs, names, samples, bool(flags & FLAG_SETTLING))
    elif schema == SCHEMA_CODE:
        seq, ts, n = r.unpack(_CODE_HEAD, "code header")
        values = np.frombuffer(r.take(n * 4, "code values"), dtype="<f4")
        msg = LatentCode(values, seq, ts)
    elif schema == SCHEMA_HEARTBEAT:
        ts, counter = r.unpack(_HEARTBEAT, "heartbeat")
        msg = Heartbeat(ts, counter)
    else:
        raise UnknownSchema(f"unknown message schema tag {schema}")
    if r.pos != len(r.buf):
        raise MalformedMessage(f"{len(r.buf) - r.pos} unexpected trailing bytes")
    return msg


# -- codes stored as frames ---------------------------------------------------

CODE_RATE = 16.0


def code_channel_names(n: int = CODE_SIZE) -> tuple:
    return tuple(f"z{i:03d}" for i in range(n))


def code_to_frame(code: LatentCode, rate: float = CODE_RATE) -> NeuroFrame:
    return NeuroFrame(code.source_seq, code.timestamp, rate, code_channel_names(code.values.size),
                      code.values[None, :])


def frame_to_code(frame: NeuroFrame) -> LatentCode:
    return LatentCode(frame.samples[0], frame.seq, frame.timestamp)
