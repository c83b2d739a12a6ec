import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srkd import io as sio


class TestEmbeddingFile:
    def test_header_layout(self):
        data = sio.encode_embeddings(np.ones((2, 3)), [0, 1])
        assert data[:4] == b"RKDE"
        assert struct.unpack_from("<IQIB", data, 4) == (1, 2, 3, 1)
        assert len(data) == 21 + 4 * 6 + 4 * 2

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 20), st.integers(1, 8), st.booleans(), st.integers(0, 2**31))
    def test_round_trip(self, n, d, with_labels, seed):
        r = np.random.default_rng(seed)
        v = r.normal(size=(n, d)).astype(np.float32)
        labels = r.integers(0, 9, n) if with_labels else None
        data = sio.encode_embeddings(v, labels)
        values, lab = sio.decode_embeddings(data)
        assert np.array_equal(values, v)
        assert sio.encode_embeddings(values, lab) == data

    def test_file_round_trip(self, tmp_path, rng):
        p = tmp_path / "e.rkde"
        sio.write_embeddings(p, rng.normal(size=(4, 3)), [1, 2, 3, 0])
        v, lab = sio.read_embeddings(p)
        q = tmp_path / "f.rkde"
        sio.write_embeddings(q, v, lab)
        assert p.read_bytes() == q.read_bytes()

    def test_truncated(self):
        data = sio.encode_embeddings(np.ones((5, 4)))
        with pytest.raises(sio.FormatError, match="length mismatch"):
            sio.decode_embeddings(data[:-4])
        with pytest.raises(sio.FormatError):
            sio.decode_embeddings(data[:10])

    def test_bad_magic_and_version(self):
        data = bytearray(sio.encode_embeddings(np.ones((1, 1))))
        with pytest.raises(sio.FormatError, match="magic"):
            sio.decode_embeddings(b"XXXX" + bytes(data[4:]))
        data[4] = 9
        with pytest.raises(sio.FormatError, match="version"):
            sio.decode_embeddings(bytes(data))

    def test_bad_labels(self):
        with pytest.raises(sio.FormatError):
            sio.encode_embeddings(np.ones((2, 2)), [1])


class TestJson:
    @settings(max_examples=300, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        s = sio.dumps_exact({"v": x})
        back = json.loads(s)["v"]
        assert back == x and sio.dumps_exact({"v": back}) == s

    def test_ordering_and_types(self):
        s = sio.dumps_exact({"b": 1, "a": [True, None, "x", 2.0]})
        assert s == '{"b":1,"a":[true,null,"x",2.0]}'

    def test_non_finite(self):
        with pytest.raises(ValueError):
            sio.dumps_exact(float("nan"))

    def test_metric_log(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rows = [{"epoch": 0, "x": 0.1}, {"epoch": 1, "x": 1e-300}]
        with sio.MetricLogWriter(p) as w:
            for r in rows:
                w(r)
        assert sio.read_metric_log(p) == rows


class TestConfig:
    allowed = {"train": {"mode", "beta0"}, "corpus": {"seed"}}

    def test_dotted_and_sections(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('# comment\ntrain.mode = "selective"\nbeta0 = 2.0\n[corpus]\nseed = 3\n')
        flat = sio.load_config_file(p)
        out = sio.split_sections(flat, self.allowed)
        assert out == {"train": {"mode": "selective", "beta0": 2.0}, "corpus": {"seed": 3}}

    @pytest.mark.parametrize("key", ["bete0", "train.bete0", "model.beta0"])
    def test_unknown_key(self, key):
        with pytest.raises(sio.ConfigFileError, match=key.split(".")[-1]):
            sio.split_sections({key: 1}, self.allowed)

    def test_unparsable(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("train.mode = \n")
        with pytest.raises(sio.ConfigFileError):
            sio.load_config_file(p)
        with pytest.raises(sio.ConfigFileError):
            sio.load_config_file(tmp_path / "missing.toml")
