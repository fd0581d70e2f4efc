import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octcodec import checkpoint
from octcodec.container import HEADER_SIZE, Container, ContainerError, Stream
from octcodec.model import STREAMS
from octcodec.report import bit_allocation_report, ratio_string

streams_st = st.fixed_dictionaries(
    {name: st.builds(lambda lo, span, data: Stream(lo, lo + span, data), st.integers(-1000, 1000), st.integers(0, 100), st.binary(min_size=4, max_size=64)) for name in STREAMS}
)


@settings(max_examples=60, deadline=None)
@given(w=st.integers(1, 5000), h=st.integers(1, 5000), scheme=st.sampled_from([1, 2]), n=st.integers(2, 512), streams=streams_st)
def test_serialize_parse_round_trip(w, h, scheme, n, streams):
    c = Container(w, h, scheme, n, streams)
    blob = c.serialize()
    assert len(blob) == HEADER_SIZE + sum(len(s.data) for s in streams.values())
    assert Container.parse(blob) == c


def sample():
    return Container(10, 12, 1, 8, {name: Stream(-2, 3, bytes([i] * (4 + i))) for i, name in enumerate(STREAMS)})


def test_header_layout():
    blob = sample().serialize()
    assert blob[:4] == b"OCMC" and blob[4] == 1
    assert int.from_bytes(blob[5:9], "little") == 10
    assert int.from_bytes(blob[9:13], "little") == 12
    assert HEADER_SIZE == 4 + 1 + 4 + 4 + 1 + 2 + 6 * 12
    # streams stored in decode order
    pos = HEADER_SIZE
    for i, _ in enumerate(STREAMS):
        assert blob[pos : pos + 4 + i] == bytes([i] * (4 + i))
        pos += 4 + i


def test_corrupt_magic():
    blob = bytearray(sample().serialize())
    blob[0] ^= 0xFF
    with pytest.raises(ContainerError, match="magic"):
        Container.parse(bytes(blob))


def test_truncated_and_oversized():
    blob = sample().serialize()
    for cut in (3, 20, len(blob) - 1):
        with pytest.raises(ContainerError):
            Container.parse(blob[:cut])
    with pytest.raises(ContainerError, match="oversized"):
        Container.parse(blob + b"\0")


def test_bad_version():
    blob = bytearray(sample().serialize())
    blob[4] = 9
    with pytest.raises(ContainerError, match="version"):
        Container.parse(bytes(blob))


def test_missing_stream_rejected():
    c = sample()
    del c.streams["yH"]
    with pytest.raises(ContainerError):
        c.serialize()


def test_ratio_strings():
    assert ratio_string(0.0169, 0.1620) == "1:9.5858"
    # the published 1:0.9658 was computed from unrounded rates; the rounded inputs land within 1e-4
    assert abs(float(ratio_string(0.0908, 0.0877)[2:]) - 0.9658) <= 1e-4
    assert ratio_string(0.05, 0.05) == "1:1.0000"


def test_bit_allocation_uses_true_pixels():
    c = sample()
    r = bit_allocation_report(c)
    low = 8 * sum(len(c.streams[s].data) for s in ("zL", "y1L", "yL")) / 120
    high = 8 * sum(len(c.streams[s].data) for s in ("zH", "y1H", "yH")) / 120
    assert r["bpp_L"] == pytest.approx(low) and r["bpp_H"] == pytest.approx(high)
    assert r["bpp_total"] == pytest.approx(8 * len(c.serialize()) / 120)


def test_weight_file_round_trip_and_errors(tmp_path):
    params = {"a.w": np.arange(24, dtype=float).reshape(2, 3, 2, 2), "b": np.array([1.5])}
    checkpoint.save(tmp_path / "w.ocw", params)
    back = checkpoint.load(tmp_path / "w.ocw")
    np.testing.assert_array_equal(back["a.w"], params["a.w"])
    assert back["b"].reshape(-1)[0] == 1.5
    blob = checkpoint.dumps(params)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-5])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob + b"1")
