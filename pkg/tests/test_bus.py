import errno
import socket
import threading
import time

import numpy as np
import pytest
from scipy import signal

from neurostream.autoencoder import AutoencoderModel
from neurostream.bus import (
    AcquisitionNode, Broker, Closed, EncoderNode, NodeGraph, PeriodicTimer, PlaybackSource, RecorderNode,
    SyntheticSource, TcpPublisher, TcpSubscriber, jitter_report, recv_message, run_stream, send_message,
)
from neurostream.core import LatentCode, NeuroFrame, default_grid
from neurostream.dataset import preprocess_signal
from neurostream.errors import (
    ConfigError, MissingChannel, QueueOverflow, SchemaMismatch, TooFewSamples,
)
from neurostream.io import container_read, frame_to_code
from neurostream.synthetic import synthetic_eeg

from generators import random_code, random_frame, random_message

LABELS = default_grid().labels


class FakeClock:
    """Monotonic nanosecond clock that only moves when slept on, plus 1 us per reading."""

    def __init__(self, t=1_000_000_000):
        self.t = t

    def __call__(self):
        self.t += 1_000
        return self.t

    def sleep(self, seconds):
        self.t += int(seconds * 1e9)


@pytest.fixture(scope="module")
def model():
    return AutoencoderModel(seed=5)


def frames_of(samples, fs=512.0, size=32, names=LABELS):
    return [NeuroFrame(i, i * 62_500_000, fs, names, samples[s : s + size])
            for i, s in enumerate(range(0, len(samples) - size + 1, size))]


# -- broker ---------------------------------------------------------------------

def test_in_order_delivery(rng):
    b = Broker()
    sub = b.subscribe("/neurodata", NeuroFrame, depth=200)
    frames = [random_frame(rng, seq=i) for i in range(100)]
    for f in frames:
        assert b.publish("/neurodata", f) == 1
    got = [sub.get_nowait() for _ in range(100)]
    assert [g.seq for g in got] == list(range(100))
    assert sub.get_nowait() is None


def test_publish_without_subscribers(rng):
    assert Broker().publish("/neurodata", random_frame(rng)) == 0


def test_two_subscribers_same_sequence(rng):
    b = Broker()
    s1, s2 = b.subscribe("/x", depth=50), b.subscribe("/x", depth=50)
    for i in range(20):
        b.publish("/x", random_code(rng))
    a = [s1.get_nowait() for _ in range(20)]
    c = [s2.get_nowait() for _ in range(20)]
    assert all(x is y for x, y in zip(a, c))


def test_threaded_order():
    b = Broker()
    sub = b.subscribe("/x", depth=10_000)
    n = 2000

    def produce():
        for i in range(n):
            b.publish("/x", LatentCode(np.zeros(128, np.float32), i, i))

    t = threading.Thread(target=produce)
    t.start()
    seen = []
    while len(seen) < n:
        m = sub.get(1.0)
        assert m is not None
        seen.append(m.source_seq)
    t.join()
    assert seen == list(range(n))


@pytest.mark.parametrize("policy,expected", [("drop-oldest", [2, 3, 4]), ("drop-newest", [0, 1, 2])])
def test_overflow_policies(policy, expected):
    b = Broker()
    sub = b.subscribe("/x", depth=3, policy=policy)
    for i in range(5):
        b.publish("/x", LatentCode(np.zeros(128, np.float32), i, 0))
    assert [sub.get_nowait().source_seq for _ in range(3)] == expected
    assert sub.dropped == 2


def test_overflow_error_policy():
    b = Broker()
    b.subscribe("/x", depth=1, policy="error")
    b.publish("/x", 1)
    with pytest.raises(QueueOverflow):
        b.publish("/x", 2)


def test_schema_fixed_after_first_publish(rng):
    b = Broker()
    b.publish("/x", random_code(rng))
    with pytest.raises(SchemaMismatch):
        b.publish("/x", random_frame(rng))
    with pytest.raises(SchemaMismatch):
        b.subscribe("/x", NeuroFrame)


def test_close_drains_then_raises():
    b = Broker()
    sub = b.subscribe("/x")
    b.publish("/x", "a")
    sub.close()
    assert sub.get(0.01) == "a"
    with pytest.raises(Closed):
        sub.get(0.01)
    assert b.publish("/x", "b") == 0


def test_get_timeout_returns_none():
    assert Broker().subscribe("/x").get(0.01) is None


def test_topic_names_validated():
    with pytest.raises(ValueError):
        Broker().topic("neurodata")


def test_graph_rejects_schema_mismatch(model):
    b = Broker()
    b.topic("/neurodata", LatentCode)
    with pytest.raises(SchemaMismatch):
        NodeGraph(b).add(EncoderNode(b, model))


# -- timing ----------------------------------------------------------------------

def test_timer_deadlines_absolute():
    clock = FakeClock()
    timer = PeriodicTimer(62_500_000, start_ns=0, clock=clock, sleep=clock.sleep)
    clock.t = 0
    # a late wake-up for tick 1 does not move tick 2
    clock.t = 100_000_000
    assert timer.wait(1) >= timer.deadline(1)
    woke = timer.wait(2)
    assert timer.deadline(2) <= woke < timer.deadline(2) + 10_000


def test_timer_sleeps_then_spins():
    clock = FakeClock(0)
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        clock.sleep(s)

    timer = PeriodicTimer(62_500_000, start_ns=0, clock=clock, sleep=sleep)
    timer.wait(1)
    assert sleeps and sum(sleeps) * 1e9 <= 62_500_000 - 200_000 + 1


# -- acquisition -------------------------------------------------------------------

@pytest.mark.parametrize("fs,size", [(512.0, 32), (128.0, 8)])
def test_frame_sizes(fs, size):
    b = Broker()
    sub = b.subscribe("/neurodata", depth=100)
    clock = FakeClock()
    src = SyntheticSource(sampling_rate=fs)
    node = AcquisitionNode(b, src, max_frames=5, clock=clock, sleep=clock.sleep)
    node.run()
    frames = [sub.get_nowait() for _ in range(5)]
    assert all(f.num_samples == size for f in frames)
    assert [f.seq for f in frames] == list(range(5))


def test_ten_second_playback_gives_160_frames(rng):
    b = Broker()
    sub = b.subscribe("/neurodata", depth=1000)
    x = rng.standard_normal((5120, 3)).astype(np.float32)
    clock = FakeClock()
    node = AcquisitionNode(b, PlaybackSource(x, 512.0, ["a", "b", "c"]), clock=clock, sleep=clock.sleep)
    node.run()
    assert node.published == 160 and node.exhausted
    got = [sub.get_nowait() for _ in range(160)]
    np.testing.assert_array_equal(np.vstack([f.samples for f in got]), x)


def test_pacing_has_no_drift(rng):
    clock = FakeClock()

    class SlowSource(SyntheticSource):
        def read(self, n):
            clock.t += int(rng.uniform(0, 60e6))  # up to 60 ms of work per frame
            return super().read(n)

    node = AcquisitionNode(Broker(), SlowSource(), max_frames=160, clock=clock, sleep=clock.sleep, start_ns=0)
    clock.t = 0
    node.run()
    lateness = np.array(node.publish_times) - 62_500_000 * np.arange(1, 161)
    assert lateness.min() >= 0
    assert lateness.max() < 100_000


def test_rate_must_divide():
    with pytest.raises(ConfigError):
        AcquisitionNode(Broker(), SyntheticSource(sampling_rate=500.0))


# -- synthetic source --------------------------------------------------------------

def test_synthetic_same_seed_identical():
    a = synthetic_eeg(LABELS, 512.0, 2.0, seed=4)
    np.testing.assert_array_equal(a, synthetic_eeg(LABELS, 512.0, 2.0, seed=4))
    assert not np.array_equal(a, synthetic_eeg(LABELS, 512.0, 2.0, seed=5))


def test_synthetic_line_noise_removed_40db():
    raw = synthetic_eeg(LABELS, 512.0, 14.0, seed=2)
    out = preprocess_signal(raw, 512.0)
    # compare the same 10 s span after settling; 0.1 Hz bins put 50 Hz on a bin
    f_raw, p_raw = signal.periodogram(raw[4 * 512 :].astype(np.float64), fs=512.0, axis=0)
    f_out, p_out = signal.periodogram(out[4 * 128 :], fs=128.0, axis=0)
    i_raw, i_out = np.argmin(np.abs(f_raw - 50)), np.argmin(np.abs(f_out - 50))
    assert f_raw[i_raw] == 50.0 and f_out[i_out] == 50.0
    drop = 10 * np.log10(p_raw[i_raw].sum() / p_out[i_out].sum())
    assert drop >= 40.0


def test_synthetic_spatial_correlation():
    grid = default_grid()
    x = synthetic_eeg(LABELS, 512.0, 10.0, seed=3)
    r = np.corrcoef(x.T)
    pos = np.array([grid.placement[n] for n in LABELS])
    d = np.sqrt(((pos[:, None] - pos[None]) ** 2).sum(-1))
    near = r[(d > 0) & (d <= 1)].mean()
    far = r[d >= 5].mean()
    assert near > far


# -- encoder -------------------------------------------------------------------

@pytest.fixture(scope="module")
def stream_frames():
    return frames_of(synthetic_eeg(LABELS, 512.0, 4.0, seed=6))


def test_encoder_warmup_then_one_code_per_frame(model, stream_frames):
    b = Broker()
    sub = b.subscribe("/encoded", depth=1000)
    enc = EncoderNode(b, model)
    counts = [len(enc.handle(f)) for f in stream_frames]
    assert counts[0] == 0
    assert counts[1:] == [1] * (len(stream_frames) - 1)
    code = sub.get_nowait()
    assert code.values.shape == (128,)


def test_encoder_matches_offline_pipeline(model, stream_frames):
    enc = EncoderNode(Broker(), model)
    streamed = [c for f in stream_frames for c in enc.handle(f)]
    raw = np.vstack([f.samples for f in stream_frames])
    dec = preprocess_signal(raw, 512.0).astype(np.float32)
    grid = default_grid()
    from neurostream.core import grid_render
    chunks = np.stack([grid_render(grid, dec[e - 16 : e], LABELS).data for e in range(16, len(dec) + 1, 8)])
    offline, _ = model.encode_batch(chunks)
    assert len(streamed) == len(offline)
    np.testing.assert_allclose(np.stack([c.values for c in streamed]), offline, atol=1e-4, rtol=1e-5)


def test_encoder_missing_channel(model, rng):
    enc = EncoderNode(Broker(), model)
    names = LABELS[:-1]
    with pytest.raises(MissingChannel):
        enc.handle(NeuroFrame(0, 0, 512.0, names, rng.standard_normal((32, len(names)))))


def test_encoder_survives_input_gap(model, stream_frames):
    b = Broker()
    enc = EncoderNode(b, model, poll=0.01).start()
    for f in stream_frames[:5]:
        b.publish("/neurodata", f)
    time.sleep(0.3)
    assert enc.codes_published == 4
    for f in stream_frames[5:10]:
        b.publish("/neurodata", f)
    deadline = time.monotonic() + 5
    while enc.codes_published < 9 and time.monotonic() < deadline:
        time.sleep(0.01)
    enc.stop()
    enc.join(2)
    assert enc.error is None
    assert enc.codes_published == 9


# -- recorder -------------------------------------------------------------------

def test_record_then_playback(tmp_path, rng):
    b = Broker()
    path = tmp_path / "codes.nsig"
    rec = RecorderNode(b, "/encoded", path, poll=0.01).start()
    codes = [LatentCode(rng.standard_normal(128).astype(np.float32), i, 1000 * i) for i in range(16)]
    for c in codes:
        b.publish("/encoded", c)
    rec.stop()
    rec.join(2)
    assert rec.error is None
    c = container_read(path)
    assert len(c.frames) == 16
    assert [frame_to_code(f) for f in c.frames] == codes


def test_record_frames_round_trip(tmp_path, stream_frames):
    b = Broker()
    path = tmp_path / "raw.nsig"
    rec = RecorderNode(b, "/neurodata", path, poll=0.01).start()
    for f in stream_frames[:10]:
        b.publish("/neurodata", f)
    rec.stop()
    rec.join(2)
    back = PlaybackSource.from_file(path)
    np.testing.assert_array_equal(back.samples, np.vstack([f.samples for f in stream_frames[:10]]))


def test_disk_full_stops_gracefully(tmp_path, rng):
    class FullDisk:
        def __init__(self, *a, **k):
            self.n = 0

        def append(self, frame, receive_time=None):
            self.n += 1
            if self.n > 2:
                raise OSError(errno.ENOSPC, "No space left on device")

        def close(self):
            pass

    b = Broker()
    rec = RecorderNode(b, "/encoded", tmp_path / "x", writer_factory=FullDisk, poll=0.01).start()
    for i in range(5):
        b.publish("/encoded", random_code(rng))
    assert rec.finished.wait(2)
    assert isinstance(rec.error, OSError) and rec.error.errno == errno.ENOSPC
    assert rec.records == 2


# -- jitter ---------------------------------------------------------------------

def test_exact_spacing():
    r = jitter_report(np.arange(20) * 62_500_000)
    assert r.mean == 62.5 and r.std == 0.0
    assert r.count == 19
    assert r.within_1ms == 1.0 and r.in_nominal_bin == 1.0


def test_jitter_needs_two_timestamps():
    with pytest.raises(TooFewSamples):
        jitter_report([5])


def test_histogram_bins_centred_on_nominal():
    r = jitter_report(np.cumsum([0.0, 62.5, 62.54, 62.56, 61.0]), unit="ms")
    centers = dict(zip(np.round(r.bin_centers, 4), r.bin_fractions))
    assert centers[62.5] == 0.5
    assert centers[62.6] == 0.25
    assert centers[61.0] == 0.25
    assert r.bin_fractions.sum() == pytest.approx(1.0)
    assert r.histogram_csv().startswith("bin_center_ms,fraction\n")


def test_reported_statistics_reproduced():
    # a run shaped like the published one: 60% of intervals exactly nominal,
    # the rest split above and below so that mean and population std match
    n, k = 1000, 200
    mean_target, std_target = 62.499, 0.227
    shift = (mean_target - 62.5) * n / k  # a - b with a above and b below nominal
    # solve k(a^2 + b^2)/n - (mean - nominal)^2 = std^2 with a - b = shift
    s2 = (std_target ** 2 + (mean_target - 62.5) ** 2) * n / k
    a = (shift + np.sqrt(2 * s2 - shift ** 2)) / 2
    b = a - shift
    iv = np.r_[np.full(n - 2 * k, 62.5), np.full(k, 62.5 + a), np.full(k, 62.5 - b)]
    np.random.default_rng(0).shuffle(iv)
    r = jitter_report(np.r_[0.0, np.cumsum(iv)], unit="ms")
    assert r.mean == pytest.approx(62.499, abs=1e-9)
    assert r.std == pytest.approx(0.227, abs=1e-9)
    assert r.in_nominal_bin > 0.5
    assert r.within_1ms > 0.5


# -- TCP bridge -------------------------------------------------------------------

def test_socket_framing_survives_split_writes(rng):
    a, b = socket.socketpair()
    b.settimeout(0.05)
    msgs = [random_message(rng) for _ in range(30)]
    from neurostream.bus.tcp import _LEN
    from neurostream.io import message_encode

    def slow_send():
        for m in msgs:
            data = message_encode(m)
            blob = _LEN.pack(len(data)) + data
            cut = len(blob) // 2
            a.sendall(blob[:cut])
            time.sleep(0.002 if rng.random() < 0.7 else 0.08)  # sometimes longer than the read timeout
            a.sendall(blob[cut:])

    t = threading.Thread(target=slow_send)
    t.start()
    got = []
    while len(got) < len(msgs):
        try:
            got.append(recv_message(b))
        except socket.timeout:
            continue
    t.join()
    a.close()
    b.close()
    assert got == msgs


def test_tcp_bridge(rng):
    src, dst = Broker(), Broker()
    pub = TcpPublisher(src, "/encoded", heartbeat=0.1).start()
    sub_b = dst.subscribe("/encoded", depth=100)
    client = TcpSubscriber(dst, "127.0.0.1", pub.port, "/encoded").start()
    deadline = time.monotonic() + 2
    while not pub._clients and time.monotonic() < deadline:
        time.sleep(0.01)
    codes = [random_code(rng) for _ in range(20)]
    for c in codes:
        src.publish("/encoded", c)
    got = []
    while len(got) < 20 and time.monotonic() < deadline + 3:
        m = sub_b.get(0.1)
        if m is not None:
            got.append(m)
    time.sleep(0.35)
    client.close()
    pub.close()
    assert got == codes
    assert client.heartbeats >= 2
    assert client.error is None


def test_send_recv_helpers(rng):
    a, b = socket.socketpair()
    m = random_frame(rng)
    send_message(a, m)
    assert recv_message(b) == m
    a.close()
    b.close()


# -- live pipeline ----------------------------------------------------------------

def test_run_stream_short(model, tmp_path):
    path = tmp_path / "enc.nsig"
    g = run_stream(SyntheticSource(seed=1), model, duration=1.0, record_path=path)
    assert g.errors() == {}
    assert g.acquisition.published == 16
    assert g.encoder.codes_published == 15
    assert len(container_read(path).frames) == 15
