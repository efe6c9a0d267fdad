import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcthisto import checkpoint as C
from dcthisto.errors import FormatError
from dcthisto.model import init_params, micro_config
from dcthisto.rng import RngState
from dcthisto.tensor import Tensor


def test_empty_checkpoint_is_12_bytes(tmp_path):
    p = C.save_checkpoint(tmp_path / "e.dcth", {})
    assert p.read_bytes() == b"DCTH" + struct.pack("<II", 1, 0)


def test_layout_by_hand():
    buf = C.encode({"ab": np.array([[1.0, 2.0]])})
    expected = (
        b"DCTH"
        + struct.pack("<II", 1, 1)
        + struct.pack("<H", 2)
        + b"ab"
        + struct.pack("<B", 2)
        + struct.pack("<QQ", 1, 2)
        + struct.pack("<B", 1)
        + struct.pack("<2d", 1.0, 2.0)
    )
    assert buf == expected


def test_float32_tag():
    buf = C.encode({"x": np.array([1.5], dtype=np.float32)})
    assert buf[4 + 8 + 2 + 1 + 1 + 8] == 0
    assert C.decode(buf).tensors["x"].dtype == np.float32


def test_model_round_trip_bit_exact(tmp_path):
    params = init_params(micro_config(), RngState(0))
    p = C.save_checkpoint(tmp_path / "m.dcth", params)
    ck = C.load_checkpoint(p)
    assert list(ck.tensors) == list(params)
    assert all(np.array_equal(ck.tensors[k], params[k].data) for k in params)
    again = C.save_checkpoint(tmp_path / "m2.dcth", ck.tensors)
    assert again.read_bytes() == p.read_bytes()
    assert all(isinstance(t, Tensor) for t in ck.params().values())


@given(
    st.dictionaries(
        st.text(min_size=1, max_size=12),
        arrays(np.float64, st.tuples(st.integers(0, 3), st.integers(1, 3)), elements=st.floats(allow_nan=False)),
        max_size=4,
    )
)
def test_bytes_round_trip(tensors):
    buf = C.encode(tensors)
    assert C.encode(C.decode(buf).tensors) == buf


def test_nan_and_inf_preserved():
    x = np.array([np.nan, np.inf, -0.0])
    back = C.decode(C.encode({"x": x})).tensors["x"]
    assert back.tobytes() == x.tobytes()


def test_optimizer_state_split(tmp_path):
    from dcthisto.train import AdamWState, adamw_step

    w = {"a": Tensor(np.ones(2))}
    _, st_ = adamw_step(w, {"a": np.ones(2)}, AdamWState())
    ck = C.load_checkpoint(C.save_checkpoint(tmp_path / "s.dcth", w, st_))
    assert set(ck.params()) == {"a"}
    assert set(ck.optimizer_tensors()) == {"optim.step", "optim.m/a", "optim.v/a"}


def test_bad_magic():
    with pytest.raises(FormatError, match="offset 0"):
        C.decode(b"XXXX" + bytes(8))


def test_bad_version():
    with pytest.raises(FormatError, match="offset 4"):
        C.decode(b"DCTH" + struct.pack("<II", 9, 0))


def test_truncation_names_offset():
    buf = C.encode({"weights": np.arange(4.0)})
    with pytest.raises(FormatError, match=r"offset \d+"):
        C.decode(buf[:-5])
    with pytest.raises(FormatError, match="offset"):
        C.decode(buf[:6])


def test_bad_dtype_tag():
    buf = bytearray(C.encode({"x": np.array([1.0])}))
    buf[4 + 8 + 2 + 1 + 1 + 8] = 7
    with pytest.raises(FormatError, match="dtype"):
        C.decode(bytes(buf))


def test_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        C.decode(C.encode({}) + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match="nope"):
        C.load_checkpoint(tmp_path / "nope.dcth")
