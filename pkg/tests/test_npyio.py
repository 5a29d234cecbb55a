import io
import json
from pathlib import Path

import numpy as np
import pytest

from semvid.errors import FormatError, ValidationError
from semvid.graph import AttentionStack, MetricReport
from semvid.npyio import (
    MAGIC,
    decode_tensor,
    emit_report,
    encode_tensor,
    load_attention,
    read_tensor,
    write_manifest,
    write_tensor,
)
from semvid.synth import ScenarioSpec, generate_scenario

DATA = Path(__file__).parent / "data"


class TestCodec:
    def test_round_trip_with_signed_zero(self):
        x = np.array([[0.0, -0.0], [1.5, -2.25]], dtype=np.float32)
        y = decode_tensor(encode_tensor(x))
        assert y.tobytes() == x.tobytes()
        assert np.signbit(y[0, 1]) and not np.signbit(y[0, 0])

    def test_header_aligned(self):
        blob = encode_tensor(np.zeros((3, 7), dtype=np.float32))
        hlen = int.from_bytes(blob[8:10], "little")
        assert (10 + hlen) % 64 == 0
        assert blob[: len(MAGIC)] == MAGIC

    def test_scalar_and_empty(self):
        for x in (np.float32(3.5), np.zeros((0, 4), dtype=np.float32)):
            y = decode_tensor(encode_tensor(x))
            assert y.shape == np.shape(x) and y.tobytes() == np.asarray(x).tobytes()

    def test_numpy_reads_ours(self):
        x = np.random.default_rng(1).standard_normal((2, 3, 5)).astype(np.float32)
        y = np.load(io.BytesIO(encode_tensor(x)))
        assert y.dtype == np.float32 and y.tobytes() == x.tobytes()

    def test_reads_numpy_file(self):
        x = read_tensor(DATA / "cross_tool_f4.npy")
        ref = np.load(DATA / "cross_tool_f4.npy")
        assert x.shape == (4, 5, 8)
        assert x.tobytes() == ref.tobytes()
        assert np.signbit(x[0, 0, 0])

    def test_bad_magic(self):
        blob = bytearray(encode_tensor(np.zeros(2, dtype=np.float32)))
        blob[0:1] = b"X"
        with pytest.raises(FormatError, match="magic"):
            decode_tensor(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(encode_tensor(np.zeros(2, dtype=np.float32)))
        blob[6] = 2
        with pytest.raises(FormatError, match="version"):
            decode_tensor(bytes(blob))

    def test_float64_rejected(self):
        with pytest.raises(FormatError, match="descr"):
            read_tensor(DATA / "cross_tool_f8.npy")

    def test_truncated_body(self):
        blob = encode_tensor(np.zeros(4, dtype=np.float32))
        with pytest.raises(FormatError, match="bytes"):
            decode_tensor(blob[:-3])

    def test_fortran_rejected(self):
        buf = io.BytesIO()
        np.save(buf, np.asfortranarray(np.zeros((2, 3), dtype=np.float32)))
        with pytest.raises(FormatError, match="fortran"):
            decode_tensor(buf.getvalue())

    def test_file_round_trip(self, tmp_path):
        x = np.arange(12, dtype=np.float32).reshape(3, 4)
        write_tensor(tmp_path / "x.npy", x)
        np.testing.assert_array_equal(read_tensor(tmp_path / "x.npy"), x)


class TestManifest:
    def test_round_trip(self, tmp_path):
        sc = generate_scenario(ScenarioSpec(seed=1, T=4, P=6, L=2, evidence_frames=(1,), boundary_frames=(2,)))
        path = write_manifest(tmp_path, sc.attention, 6)
        stack, manifest = load_attention(path)
        assert manifest["T"] == 4 and manifest["P"] == 6
        np.testing.assert_allclose(stack.layers, sc.attention.layers, atol=1e-6)
        assert abs(stack.injection.sum() - 1) < 1e-12

    def test_shape_mismatch(self, tmp_path):
        stack = AttentionStack.full(np.full((1, 4, 4), 0.25), np.full(4, 0.25), 2, 2)
        path = write_manifest(tmp_path, stack, 2)
        write_tensor(tmp_path / "layer_00.npy", np.full((3, 3), 1 / 3, dtype=np.float32))
        with pytest.raises(ValidationError, match="layer_00"):
            load_attention(path)

    def test_missing_key(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"T": 1}))
        with pytest.raises(FormatError, match="missing key"):
            load_attention(tmp_path / "m.json")


class TestReport:
    def _report(self):
        return MetricReport(er_raw=0.5, er_rel=0.75, rho=0.9, cs=1.25, per_boundary=[0.5, 0.75], mode="reweighted")

    def test_header_only_csv(self, tmp_path):
        emit_report(tmp_path / "r.csv", metrics=[], fmt="csv", columns=["er_rel", "cs"])
        assert (tmp_path / "r.csv").read_text() == "er_rel,cs\n"

    def test_deterministic_bytes(self, tmp_path):
        for name in ("a.json", "b.json"):
            emit_report(tmp_path / name, metrics=[self._report()], config={"seed": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_json_round_trip(self, tmp_path):
        emit_report(tmp_path / "r.json", metrics=[self._report()], config={"ratio": 0.125})
        doc = json.loads((tmp_path / "r.json").read_text())
        assert list(doc) == ["config", "metrics"]
        assert doc["metrics"][0]["er_rel"] == 0.75
        assert doc["metrics"][0]["per_boundary"] == [0.5, 0.75]

    def test_nan_written_as_null(self, tmp_path):
        emit_report(tmp_path / "r.json", metrics=[{"er_rel": float("nan")}])
        assert json.loads((tmp_path / "r.json").read_text())["metrics"][0]["er_rel"] is None

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_report(tmp_path / "r.txt", fmt="yaml")
