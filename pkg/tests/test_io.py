import numpy as np
import pytest

from neurostream.core import LatentCode, NeuroFrame
from neurostream.errors import (
    CorruptFile, MalformedMessage, NonNumericCell, RaggedRows, TruncatedMessage, UnknownSchema, VersionMismatch,
)
from neurostream.io import (
    ContainerWriter, Heartbeat, code_to_frame, container_iter, container_read, container_write, csv_import,
    frame_to_code, frames_from_samples, message_decode, message_encode,
)

from generators import random_code, random_frame, random_message


def same_frames(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x == y  # bitwise equality of samples and metadata


# -- container ---------------------------------------------------------------------

def test_container_round_trip_1000_frames(tmp_path, rng):
    names = ["Fz", "Cz", "Pz"]
    frames = [random_frame(rng, seq=i, channels=3, names=names).replace(sampling_rate=250.0) for i in range(1000)]
    path = tmp_path / "rec.nsig"
    container_write(path, frames, start_time=123)
    c = container_read(path)
    assert c.channel_names == tuple(names)
    assert c.start_time == 123
    same_frames(c.frames, frames)


def test_receive_times_stored(tmp_path, rng):
    path = tmp_path / "rec.nsig"
    frames = [random_frame(rng, seq=i, channels=2, names=["a", "b"]) for i in range(3)]
    frames = [f.replace(sampling_rate=512.0) for f in frames]
    with ContainerWriter(path, 512.0, ["a", "b"]) as w:
        for i, f in enumerate(frames):
            w.append(f, receive_time=1000 + i)
    assert [r for _, r in container_iter(path)] == [1000, 1001, 1002]


def test_empty_container(tmp_path):
    path = tmp_path / "empty.nsig"
    container_write(path, [])
    c = container_read(path)
    assert c.frames == []
    assert c.samples().shape == (0, 0)


def test_flipped_magic(tmp_path, rng):
    path = tmp_path / "rec.nsig"
    container_write(path, [random_frame(rng, seq=0)])
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFile):
        container_read(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "rec.nsig"
    container_write(path, [])
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        container_read(path)


def test_truncated_record(tmp_path, rng):
    path = tmp_path / "rec.nsig"
    container_write(path, [random_frame(rng, seq=0)])
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CorruptFile):
        container_read(path)


def test_foreign_file(tmp_path):
    path = tmp_path / "x.nsig"
    path.write_bytes(b"")
    with pytest.raises(CorruptFile):
        container_read(path)


def test_records_must_be_ordered(tmp_path, rng):
    frames = [random_frame(rng, seq=s, channels=1, names=["a"]) for s in (5, 4)]
    frames = [f.replace(sampling_rate=512.0) for f in frames]
    with pytest.raises(ValueError):
        container_write(tmp_path / "x.nsig", frames)


def test_sampling_rate_enforced(tmp_path, rng):
    a = random_frame(rng, seq=0, channels=1, names=["a"]).replace(sampling_rate=512.0)
    with pytest.raises(ValueError):
        container_write(tmp_path / "x.nsig", [a, a.replace(seq=1, sampling_rate=256.0)])


def test_channel_width_enforced(tmp_path, rng):
    a = random_frame(rng, seq=0, channels=2, names=["a", "b"]).replace(sampling_rate=512.0)
    b = random_frame(rng, seq=1, channels=3, names=["a", "b", "c"]).replace(sampling_rate=512.0)
    with pytest.raises(ValueError):
        container_write(tmp_path / "x.nsig", [a, b])


def test_frames_from_samples(rng):
    x = rng.standard_normal((100, 2)).astype(np.float32)
    frames = frames_from_samples(x, 512.0, ["a", "b"], frame_size=32)
    assert [f.num_samples for f in frames] == [32, 32, 32, 4]
    assert frames[1].timestamp == 62_500_000
    np.testing.assert_array_equal(np.vstack([f.samples for f in frames]), x)


# -- csv -------------------------------------------------------------------------

def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(c) for c in r) for r in rows) + "\n")


def test_csv_frames(tmp_path, rng):
    data = rng.standard_normal((512, 3))
    path = tmp_path / "d.csv"
    write_csv(path, [["C3", "Cz", "C4"]] + data.tolist())
    c = csv_import(path, 512.0, frame_size=32)
    assert len(c.frames) == 16
    assert c.channel_names == ("C3", "Cz", "C4")
    np.testing.assert_array_equal(c.samples(), data.astype(np.float32))


def test_csv_labels_verbatim(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(" FC z ,Cz-ref,é\n1,2,3\n")
    c = csv_import(path, 256.0)
    assert c.channel_names == ("FC z", "Cz-ref", "é")


def test_csv_nan_names_position(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(path, [["a", "b"], [1, 2], [3, "NaN"]])
    with pytest.raises(NonNumericCell, match="line 3, column 2"):
        csv_import(path, 512.0)


def test_csv_text_cell(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(path, [[1, 2], [3, "x"]])
    with pytest.raises(NonNumericCell, match="line 2, column 2"):
        csv_import(path, 512.0, header=False)


def test_csv_ragged(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(path, [["a", "b"], [1, 2], [3]])
    with pytest.raises(RaggedRows):
        csv_import(path, 512.0)


def test_csv_explicit_labels(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(path, [[1, 2], [3, 4]])
    c = csv_import(path, 512.0, labels=["x", "y"])
    assert c.channel_names == ("x", "y")
    assert c.samples().tolist() == [[1, 2], [3, 4]]


# -- messages -------------------------------------------------------------------

def test_message_round_trip(rng):
    for _ in range(300):
        m = random_message(rng)
        assert message_decode(message_encode(m)) == m


def test_code_message_size(rng):
    assert len(message_encode(random_code(rng))) == 128 * 4 + 24


def test_truncated_message(rng):
    for m in (random_frame(rng), random_code(rng), Heartbeat(1, 2)):
        data = message_encode(m)
        with pytest.raises(TruncatedMessage):
            message_decode(data[:-1])


def test_unknown_schema(rng):
    data = bytearray(message_encode(random_code(rng)))
    data[3] = 99
    with pytest.raises(UnknownSchema):
        message_decode(bytes(data))
    with pytest.raises(UnknownSchema):
        message_encode("not a message")


def test_bad_magic_and_trailing_bytes(rng):
    data = message_encode(random_code(rng))
    with pytest.raises(MalformedMessage):
        message_decode(b"XX" + data[2:])
    with pytest.raises(MalformedMessage):
        message_decode(data + b"\0")


def test_encoding_is_canonical(rng):
    m = random_frame(rng)
    assert message_encode(m) == message_encode(m)
    same = NeuroFrame(m.seq, m.timestamp, m.sampling_rate, list(m.channel_names), m.samples.copy(), m.settling)
    assert message_encode(same) == message_encode(m)


def test_little_endian_payload():
    code = LatentCode(np.arange(128, dtype=np.float32), 1, 2)
    data = message_encode(code)
    np.testing.assert_array_equal(np.frombuffer(data[-512:], dtype="<f4"), np.arange(128))


def test_code_frame_conversion(rng):
    code = random_code(rng)
    f = code_to_frame(code)
    assert f.samples.shape == (1, 128)
    assert frame_to_code(f) == code
