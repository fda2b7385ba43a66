import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from perflow.flow import TrainConfig
from perflow.io import (
    FormatError,
    append_csv_row,
    decode_tensor,
    dumps_json,
    encode_tensor,
    read_csv,
    read_json,
    read_tensor,
    write_csv,
    write_json,
    write_tensor,
)
from perflow.problems import DataConfig
from perflow.sampler import SamplerConfig

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), shapes,
                  elements=st.floats(allow_nan=False, width=32)))
def test_tensor_round_trip(x):
    y = decode_tensor(encode_tensor(x))
    assert y.dtype == x.dtype and y.shape == x.shape
    assert np.array_equal(y, x)


def test_tensor_header_layout():
    buf = encode_tensor(np.zeros((2, 3)))
    assert buf[:4] == b"PFLW"
    assert struct.unpack_from("<III", buf, 4) == (1, 2, 2)
    assert struct.unpack_from("<2Q", buf, 16) == (2, 3)
    assert len(buf) == 16 + 16 + 6 * 8


def test_integer_input_is_stored_as_float64():
    assert decode_tensor(encode_tensor(np.arange(4))).dtype == np.float64


def test_bad_magic_version_and_length():
    good = encode_tensor(np.ones(3))
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + good[4:])
    with pytest.raises(FormatError):
        decode_tensor(good[:4] + struct.pack("<I", 9) + good[8:])
    with pytest.raises(FormatError):
        decode_tensor(good[:8] + struct.pack("<I", 7) + good[12:])
    with pytest.raises(FormatError):
        decode_tensor(good[:-1])
    with pytest.raises(FormatError):
        decode_tensor(good + b"\0")
    with pytest.raises(FormatError):
        decode_tensor(b"PF")


def test_write_tensor_atomic_and_byte_stable(tmp_path):
    x = np.random.default_rng(0).standard_normal((3, 4))
    write_tensor(tmp_path / "a" / "x.pflw", x)
    first = (tmp_path / "a" / "x.pflw").read_bytes()
    write_tensor(tmp_path / "a" / "x.pflw", x)
    assert (tmp_path / "a" / "x.pflw").read_bytes() == first
    assert np.array_equal(read_tensor(tmp_path / "a" / "x.pflw"), x)
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.pflw"]  # no temp files left


def test_json_sorted_and_numpy_aware(tmp_path):
    obj = {"b": np.float64(1.5), "a": np.arange(3), "c": (1, 2)}
    text = dumps_json(obj)
    assert text.index('"a"') < text.index('"b"')
    write_json(tmp_path / "m.json", obj)
    assert read_json(tmp_path / "m.json") == {"a": [0, 1, 2], "b": 1.5, "c": [1, 2]}
    with pytest.raises(TypeError):
        dumps_json({"x": object()})
    json.loads(text)


def test_csv_write_and_append(tmp_path):
    path = tmp_path / "eval.csv"
    for i in range(5):
        append_csv_row(path, ["i", "value"], [i, i * 0.5])
    header, rows = read_csv(path)
    assert header == ["i", "value"]
    assert len(rows) == 5 and rows[-1] == ["4", "2.0"]
    with pytest.raises(FormatError):
        append_csv_row(path, ["i", "other"], [0, 0])
    write_csv(tmp_path / "t.csv", ["a"], [[1], [2]])
    assert (tmp_path / "t.csv").read_text() == "a\n1\n2\n"


@pytest.mark.parametrize("cls,base", [
    (DataConfig, {"kind": "poisson"}),
    (TrainConfig, {}),
    (SamplerConfig, {}),
])
def test_configs_reject_unknown_keys(cls, base):
    with pytest.raises(ValueError, match="unknown"):
        cls.from_dict({**base, "bogus": 1})
    cfg = cls.from_dict(base)
    assert cls.from_dict(cfg.to_dict()) == cfg


def test_config_value_validation():
    with pytest.raises(ValueError):
        DataConfig.from_dict({"kind": "heat"})
    with pytest.raises(ValueError):
        SamplerConfig(steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(integrator="rk4")
    with pytest.raises(ValueError):
        SamplerConfig(prior="laplace")
