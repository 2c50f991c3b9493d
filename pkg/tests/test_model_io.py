import json
import struct

import numpy as np
import pytest

from flashipa.bench import fit_polynomial, fit_records
from flashipa.ipa_reference import IpaConfig, init_weights
from flashipa.model_io import (CSV_COLUMNS, BenchConfig, CheckResult, RunReport, ScalingRecord, WeightsFormatError,
                               WeightsVersionError, emit_report, load_config, load_report_json, load_weights,
                               read_records_csv, read_weight_table, save_config, save_weights, weights_precision)
from flashipa.pair_features import DistogramSpec

CFG = IpaConfig(d_in=6, d_z=3, n_heads=2, c=4, n_query=2, n_value=3, rank=2)


@pytest.fixture
def weights(rng):
    return init_weights(CFG, rng)


def records():
    return [ScalingRecord("flash", L, 7, "f32", 4608 * L + 100, 1e-4 * L) for L in (128, 256, 512)] + \
           [ScalingRecord("reference", L, 7, "f32", 40 * L * L + 3000 * L, 1e-6 * L * L) for L in (128, 256, 512)]


class TestWeights:
    def test_round_trip_bit_exact(self, weights, tmp_path):
        save_weights(weights, tmp_path / "w.fipa")
        back = load_weights(tmp_path / "w.fipa")
        for name, arr in weights.arrays().items():
            got = getattr(back, name)
            assert got.dtype == arr.dtype and got.shape == arr.shape
            assert got.tobytes() == arr.tobytes()
        assert back.w_L == weights.w_L and back.w_C == weights.w_C

    def test_header_bytes(self, weights, tmp_path):
        save_weights(weights, tmp_path / "w.fipa")
        raw = (tmp_path / "w.fipa").read_bytes()
        assert raw[:4] == b"FIPA"
        assert struct.unpack("<HI", raw[4:10]) == (1, len(weights.arrays()) + 2)
        (name_len,) = struct.unpack("<H", raw[10:12])
        assert raw[12:12 + name_len] == b"w_q"
        assert struct.unpack("<BB", raw[12 + name_len:14 + name_len]) == (8, 2)

    def test_bad_magic(self, weights, tmp_path):
        path = tmp_path / "w.fipa"
        save_weights(weights, path)
        path.write_bytes(b"XIPA" + path.read_bytes()[4:])
        with pytest.raises(WeightsFormatError):
            load_weights(path)

    def test_version_mismatch(self, weights, tmp_path):
        path = tmp_path / "w.fipa"
        save_weights(weights, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:4] + struct.pack("<H", 2) + raw[6:])
        with pytest.raises(WeightsVersionError):
            load_weights(path)

    @pytest.mark.parametrize("cut", [3, 9, 40, -1])
    def test_truncated(self, weights, tmp_path, cut):
        path = tmp_path / "w.fipa"
        save_weights(weights, path)
        path.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(WeightsFormatError):
            load_weights(path)

    def test_trailing_bytes(self, weights, tmp_path):
        path = tmp_path / "w.fipa"
        save_weights(weights, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(WeightsFormatError):
            read_weight_table(path)

    def test_float32_precision(self, weights, tmp_path):
        save_weights(weights.astype(np.float32), tmp_path / "w32.fipa")
        back = load_weights(tmp_path / "w32.fipa")
        assert weights_precision(back) == "f32" and back.w_out.dtype == np.float32
        assert weights_precision(weights) == "f64"
        # the payload really is 4 bytes per element
        size32 = (tmp_path / "w32.fipa").stat().st_size
        save_weights(weights, tmp_path / "w64.fipa")
        n_elems = sum(a.size for a in weights.arrays().values())
        assert (tmp_path / "w64.fipa").stat().st_size - size32 == 4 * n_elems


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = BenchConfig(ipa=CFG, distogram=DistogramSpec(k=5, pe_dim=4))
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    def test_partial_config_uses_defaults(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"ipa": {"n_heads": 2}}))
        cfg = load_config(tmp_path / "c.json")
        assert cfg.ipa.n_heads == 2 and cfg.distogram == DistogramSpec()

    def test_unknown_section(self):
        with pytest.raises(ValueError):
            BenchConfig.from_dict({"ipa": {}, "optimizer": {}})

    def test_unknown_field(self):
        with pytest.raises(TypeError):
            BenchConfig.from_dict({"ipa": {"heads": 2}})


class TestReports:
    def test_empty_csv_is_header_only(self, tmp_path):
        emit_report(RunReport("scaling", {}), "csv", tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_bytes() == (",".join(CSV_COLUMNS) + "\r\n").encode()

    def test_csv_round_trip(self, tmp_path):
        emit_report(RunReport("scaling", {}, records=records()), "csv", tmp_path / "r.csv")
        assert read_records_csv(tmp_path / "r.csv") == records()

    def test_csv_rejects_other_columns(self, tmp_path):
        (tmp_path / "r.csv").write_text("L,arm\n1,flash\n")
        with pytest.raises(ValueError):
            read_records_csv(tmp_path / "r.csv")

    def test_json_round_trip(self, tmp_path):
        report = RunReport("scaling", BenchConfig().to_dict(), records=records()[:1],
                           checks=[CheckResult("x", 0.5, 1.0, True, 7, "f32")], notes=["hello"])
        emit_report(report, "json", tmp_path / "r.json")
        assert load_report_json(tmp_path / "r.json") == report

    def test_fits_match_refit(self, tmp_path):
        report = RunReport("scaling", {}, records=records())
        report.fits = fit_records(report.records)
        emit_report(report, "json", tmp_path / "r.json")
        back = load_report_json(tmp_path / "r.json")
        for arm in ("flash", "reference"):
            rows = [r for r in back.records if r.arm == arm]
            a, b, _ = fit_polynomial([(r.L, r.peak_bytes / 1e6) for r in rows])
            assert back.fits[arm]["memory_mb"]["a"] == a and back.fits[arm]["memory_mb"]["b"] == b

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(RunReport("x", {}), "xml", tmp_path / "r")

    def test_passed(self):
        ok = CheckResult("a", 0, 1, True)
        bad = CheckResult("b", 2, 1, False)
        assert RunReport("x", {}, checks=[ok]).passed
        assert not RunReport("x", {}, checks=[ok, bad]).passed
