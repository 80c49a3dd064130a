"""Acquisition, encoder and recorder nodes plus the graph that runs them."""
from __future__ import annotations

import gc
import logging
import sys
import threading
import time

import numpy as np

from ..autoencoder import AutoencoderModel
from ..core import CHUNK_STEPS, ChannelGrid, LatentCode, NeuroFrame, default_grid, render_index
from ..dsp import PreprocessChain
from ..errors import ConfigError, SchemaMismatch, SourceExhausted
from ..io import ContainerWriter, code_channel_names, code_to_frame
from .broker import DEFAULT_DEPTH, DROP_OLDEST, Broker, Closed
from .timing import PeriodicTimer

log = logging.getLogger(__name__)

NEURODATA = "/neurodata"
ENCODED = "/encoded"
FRAME_RATE = 16.0


class Node:
    """A thread with a name, a stop flag and a captured error."""

    publishes: dict = {}
    subscribes: dict = {}

    def __init__(self, name: str, broker: Broker):
        self.name = name
        self.broker = broker
        self.error: BaseException | None = None
        self.finished = threading.Event()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self):
        self._thread = threading.Thread(target=self._main, name=self.name, daemon=True)
        self._thread.start()
        return self

    def _main(self):
        try:
            self.run()
        except BaseException as exc:
            self.error = exc
            log.error("%s stopped: %s", self.name, exc)
        finally:
            self.cleanup()
            self.finished.set()

    def run(self):
        raise NotImplementedError

    def cleanup(self):
        pass

    def stop(self):
        self._stop.set()

    def join(self, timeout=None):
        if self._thread is not None:
            self._thread.join(timeout)

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()


class AcquisitionNode(Node):
    """Reads ``sampling_rate / frame_rate`` samples per tick and publishes NeuroFrames on an absolute-deadline schedule."""

    def __init__(self, broker: Broker, source, frame_rate: float = FRAME_RATE, topic: str = NEURODATA,
                 max_frames: int | None = None, name: str = "acquisition", clock=time.monotonic_ns,
                 start_ns: int | None = None, sleep=time.sleep):
        super().__init__(name, broker)
        fs = source.sampling_rate
        spf = fs / frame_rate
        if frame_rate <= 0 or abs(spf - round(spf)) > 1e-9 or round(spf) < 1:
            raise ConfigError(f"source rate {fs} Hz is not divisible by frame rate {frame_rate} Hz")
        self.source = source
        self.frame_rate = frame_rate
        self.samples_per_frame = int(round(spf))
        self.topic = topic
        self.max_frames = max_frames
        self.clock = clock
        self.sleep = sleep
        self.start_ns = start_ns
        self.published = 0
        self.publish_times: list[int] = []
        self.exhausted = False
        self.publishes = {topic: NeuroFrame}
        broker.topic(topic, NeuroFrame)

    def run(self):
        period = round(1e9 / self.frame_rate)
        timer = PeriodicTimer(period, self.start_ns, clock=self.clock, sleep=self.sleep)
        names = tuple(self.source.channel_names)
        fs = self.source.sampling_rate
        seq = 0
        while not self.stopping and (self.max_frames is None or seq < self.max_frames):
            try:
                block = self.source.read(self.samples_per_frame)
            except SourceExhausted as exc:
                self.exhausted = True
                log.info("%s: %s", self.name, exc)
                break
            now = timer.wait(seq + 1, self._stop)
            if self.stopping:
                break
            frame = NeuroFrame(seq, now - timer.start_ns, fs, names, block)
            self.broker.publish(self.topic, frame)
            self.publish_times.append(now)
            # hand the GIL to subscribers before preparing the next frame
            time.sleep(0)
            seq += 1
            self.published = seq


class EncoderNode(Node):
    """Filters incoming frames, slides a 16-sample window with hop 8 over the decimated
    stream, and publishes one LatentCode per hop."""

    def __init__(self, broker: Broker, model: AutoencoderModel, grid: ChannelGrid | None = None,
                 in_topic: str = NEURODATA, out_topic: str = ENCODED, hop: int = 8,
                 depth: int = DEFAULT_DEPTH, policy: str = DROP_OLDEST, strict: bool = True,
                 name: str = "encoder", clock=time.monotonic_ns, poll: float = 0.05):
        super().__init__(name, broker)
        if not 1 <= hop <= CHUNK_STEPS:
            raise ConfigError(f"hop must be between 1 and {CHUNK_STEPS}")
        self.model = model.eval()
        self.grid = grid or default_grid()
        self.in_topic, self.out_topic = in_topic, out_topic
        self.hop = hop
        self.strict = strict
        self.clock = clock
        self.poll = poll
        self.sub = broker.subscribe(in_topic, NeuroFrame, depth=depth, policy=policy)
        broker.topic(out_topic, LatentCode)
        self.publishes = {out_topic: LatentCode}
        self.subscribes = {in_topic: NeuroFrame}
        self.output_times: list[int] = []
        self.codes_published = 0
        self.frames_seen = 0
        self._chain = None
        self._names = None

    def _setup(self, frame: NeuroFrame):
        self._names = frame.channel_names
        self._chain = PreprocessChain(frame.sampling_rate)
        self._src, self._dst = render_index(self.grid, frame.channel_names, strict=self.strict)
        # preallocated: decimated history long enough for one window plus one frame
        self._history = np.zeros((CHUNK_STEPS + 4 * frame.num_samples, len(self._names)), dtype=np.float32)
        self._filled = 0
        self._since_emit = 0
        self._chunk = np.zeros((1, CHUNK_STEPS, self.grid.rows * self.grid.cols), dtype=np.float32)

    def handle(self, frame: NeuroFrame) -> list[LatentCode]:
        """Process one frame synchronously; returns the codes it produced (also published)."""
        if self._chain is None:
            self._setup(frame)
        elif frame.channel_names != self._names:
            raise SchemaMismatch("channel layout changed mid-stream")
        self.frames_seen += 1
        dec = self._chain.process(frame.samples)
        out = []
        for row in dec:
            if self._filled == self._history.shape[0]:
                self._history[:CHUNK_STEPS - 1] = self._history[self._filled - CHUNK_STEPS + 1 : self._filled]
                self._filled = CHUNK_STEPS - 1
            self._history[self._filled] = row
            self._filled += 1
            self._since_emit += 1
            if self._filled >= CHUNK_STEPS and self._since_emit >= self.hop:
                self._since_emit = 0
                window = self._history[self._filled - CHUNK_STEPS : self._filled]
                self._chunk[0][:, self._dst] = window[:, self._src]
                z, _ = self.model.encode_batch(
                    self._chunk.reshape(1, CHUNK_STEPS, self.grid.rows, self.grid.cols))
                now = self.clock()
                code = LatentCode(z[0], frame.seq, now)
                self.broker.publish(self.out_topic, code)
                self.output_times.append(now)
                self.codes_published += 1
                out.append(code)
        return out

    def run(self):
        while not self.stopping:
            try:
                frame = self.sub.get(self.poll)
            except Closed:
                break
            if frame is not None:
                self.handle(frame)

    def cleanup(self):
        self.sub.close()

    @property
    def dropped(self) -> int:
        return self.sub.dropped


class RecorderNode(Node):
    """Appends every message of one topic to a container file with receive timestamps."""

    def __init__(self, broker: Broker, topic: str, path, name: str | None = None,
                 depth: int = 64, clock=time.monotonic_ns, writer_factory=ContainerWriter,
                 poll: float = 0.05, code_rate: float = FRAME_RATE):
        super().__init__(name or f"recorder{topic.replace('/', ':')}", broker)
        self.topic = topic
        self.path = path
        self.clock = clock
        self.poll = poll
        self.code_rate = code_rate
        self.writer_factory = writer_factory
        self.sub = broker.subscribe(topic, depth=depth)
        self.subscribes = {topic: None}
        self.writer = None
        self.records = 0

    def _write(self, msg):
        recv = self.clock()
        if isinstance(msg, LatentCode):
            msg = code_to_frame(msg, self.code_rate)
        if self.writer is None:
            self.writer = self.writer_factory(self.path, msg.sampling_rate, msg.channel_names)
        self.writer.append(msg, recv)
        self.records += 1

    def run(self):
        while True:
            try:
                msg = self.sub.get(self.poll)
            except Closed:
                break
            if msg is not None:
                # OSError (disk full, permissions) ends the node; the error is kept on self.error
                self._write(msg)
            elif self.stopping:
                break

    def cleanup(self):
        self.sub.close()
        # drain what arrived before stop so the file holds everything delivered
        if self.error is None:
            try:
                while (msg := self.sub.get_nowait()) is not None:
                    self._write(msg)
            except OSError as exc:
                self.error = exc
        if self.writer is None and self.error is None:
            try:
                self.writer = self.writer_factory(self.path, self.code_rate, code_channel_names())
            except OSError as exc:
                self.error = exc
        if self.writer is not None:
            try:
                self.writer.close()
            except OSError as exc:
                self.error = self.error or exc


class NodeGraph:
    """A broker plus nodes; checks schemas and runs each node on its own thread."""

    def __init__(self, broker: Broker | None = None):
        self.broker = broker or Broker()
        self.nodes: list[Node] = []

    def add(self, node: Node) -> Node:
        for topic, schema in node.subscribes.items():
            t = self.broker.topics.get(topic)
            if schema is not None and t is not None and t.schema not in (None, schema):
                raise SchemaMismatch(f"{node.name} expects {schema.__name__} on {topic}")
        self.nodes.append(node)
        return node

    def start(self):
        # start consumers before producers so nothing published early is missed
        for node in reversed(self.nodes):
            node.start()
        return self

    def stop(self, timeout: float = 5.0):
        for node in self.nodes:
            node.stop()
            node.join(timeout)

    def errors(self):
        return {n.name: n.error for n in self.nodes if n.error is not None}


def run_stream(source, model: AutoencoderModel, *, duration: float | None = None,
               grid: ChannelGrid | None = None, frame_rate: float = FRAME_RATE,
               record_path=None, record_topic: str = ENCODED, drain: float = 0.5,
               freeze_gc: bool = True, switch_interval: float = 0.0005):
    """Run acquisition -> encoder (-> recorder) in real time; returns the graph after it stops.

    The acquisition stops after ``duration`` seconds worth of frames or when the source
    runs out.
    """
    graph = NodeGraph()
    max_frames = None if duration is None else int(round(duration * frame_rate))
    acq = AcquisitionNode(graph.broker, source, frame_rate, max_frames=max_frames)
    enc = EncoderNode(graph.broker, model, grid)
    graph.add(acq)
    graph.add(enc)
    rec = None
    if record_path is not None:
        rec = graph.add(RecorderNode(graph.broker, record_topic, record_path))
    if freeze_gc:
        gc.collect()
        gc.freeze()
        gc.disable()
    switch = sys.getswitchinterval()
    sys.setswitchinterval(switch_interval)
    try:
        graph.start()
        acq.finished.wait()
        # let the encoder consume what is still queued
        deadline = time.monotonic() + drain
        while len(enc.sub) and time.monotonic() < deadline and enc.error is None:
            time.sleep(0.005)
        time.sleep(0.01)
    finally:
        graph.stop()
        sys.setswitchinterval(switch)
        if freeze_gc:
            gc.enable()
            gc.unfreeze()
    graph.acquisition, graph.encoder, graph.recorder = acq, enc, rec
    return graph
