import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geomaml.checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    UnsupportedVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from geomaml.core import ParamSet, Tensor
from geomaml.models import CnnConfig, build_cnn


@pytest.fixture
def cp():
    return Checkpoint(build_cnn(CnnConfig(input_size=4, depth=2, width=3), seed=1), "maml", 17)


def test_roundtrip_is_byte_identical(cp, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(cp, a)
    back = load_checkpoint(a)
    save_checkpoint(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert back.provenance == "maml" and back.iteration == 17
    assert back.params.names == cp.params.names
    for n in cp.params:
        assert back.params[n].shape == cp.params[n].shape
        assert back.params[n].data.tobytes() == cp.params[n].data.tobytes()


def test_header_layout(cp):
    raw = encode_checkpoint(cp)
    assert raw[:8] == b"MAMLCKPT"
    version, prov, iteration, count = struct.unpack_from("<IBQI", raw, 8)
    assert (version, prov, iteration, count) == (1, 2, 17, len(cp.params))
    (nlen,) = struct.unpack_from("<H", raw, 25)
    assert raw[27:27 + nlen].decode() == cp.params.names[0]


@pytest.mark.parametrize("prov,code", [("random", 0), ("pretrained", 1), ("maml", 2)])
def test_provenance_codes(prov, code):
    raw = encode_checkpoint(Checkpoint(ParamSet([("w", Tensor([1.0]))]), prov))
    assert raw[12] == code


def test_bad_magic(cp):
    raw = bytearray(encode_checkpoint(cp))
    raw[0:1] = b"X"
    with pytest.raises(CheckpointFormatError, match="byte 0"):
        decode_checkpoint(bytes(raw))


def test_unsupported_version(cp):
    raw = bytearray(encode_checkpoint(cp))
    raw[8:12] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError, match="version 2"):
        decode_checkpoint(bytes(raw))


def test_truncation_reports_offset(cp):
    raw = encode_checkpoint(cp)
    with pytest.raises(CheckpointFormatError, match=r"byte \d+: truncated"):
        decode_checkpoint(raw[:-5])
    with pytest.raises(CheckpointFormatError, match="trailing"):
        decode_checkpoint(raw + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.ckpt")


_shapes = st.lists(st.lists(st.integers(1, 4), min_size=1, max_size=3), min_size=1, max_size=4)


@settings(max_examples=50, deadline=None)
@given(_shapes, st.integers(0, 2 ** 32), st.sampled_from(["random", "pretrained", "maml"]))
def test_roundtrip_property(shapes, seed, prov):
    rng = np.random.default_rng(seed)
    params = ParamSet([(f"t{i}.é", Tensor(rng.normal(size=tuple(s)))) for i, s in enumerate(shapes)])
    back = decode_checkpoint(encode_checkpoint(Checkpoint(params, prov, seed)))
    assert back.iteration == seed and back.provenance == prov
    assert back.params.flatten().tobytes() == params.flatten().tobytes()
    assert [t.shape for t in back.params.tensors] == [tuple(s) for s in shapes]


# ---------------------------------------------------------------- ParamSet

def test_paramset_order_and_uniqueness():
    p = ParamSet([("b", Tensor([1.0])), ("a", Tensor([2.0, 3.0]))])
    assert p.names == ["b", "a"] and p.flatten().tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError, match="duplicate"):
        ParamSet([("a", Tensor([1.0])), ("a", Tensor([2.0]))])


def test_unflatten_roundtrip_bit_exact():
    p = build_cnn(CnnConfig(input_size=4, depth=2, width=3), seed=2)
    q = p.unflatten(p.flatten())
    assert q.names == p.names and q.flatten().tobytes() == p.flatten().tobytes()
    assert p.numel == p.flatten().size
    with pytest.raises(ValueError):
        p.unflatten(np.zeros(3))
