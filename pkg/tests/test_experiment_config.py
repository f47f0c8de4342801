"""Config validation, canonical serialization and builders."""

import dataclasses
import json

import pytest

import config
from src.services.experiment_config import (
    ConfigError, UnknownPresetError, canonical_json, content_hash, load_config, validate_config,
)


def violations(overrides):
    cfg, errors = validate_config(json.dumps(overrides))
    assert cfg is None
    return errors


class TestValidation:
    def test_defaults_are_valid(self):
        cfg, errors = validate_config("")
        assert errors == []
        assert cfg.seed == config.DEFAULT_SEED
        assert cfg.grid.n_points == 2 ** 14

    def test_full_default_document(self):
        cfg, errors = validate_config(json.dumps(config.default_config()))
        assert errors == []
        assert cfg.detection.snr_photon_numbers == (2.5, 5.0, 11.2)

    def test_partial_override(self):
        cfg, errors = validate_config('{"comb": {"afc_delay_us": 8.0}, "seed": 7}')
        assert errors == []
        assert cfg.comb.afc_delay_us == 8.0
        assert cfg.comb.peak_depth == config.COMB_PEAK_DEPTH
        assert cfg.seed == 7

    def test_transfer_efficiency_range(self):
        errors = violations({"spin": {"transfer_efficiency": 1.3}})
        assert any("transfer efficiency outside [0,1]" in e for e in errors)

    def test_grid_resolution(self):
        errors = violations({"grid": {"n_points": 2 ** 10}})
        assert any("grid resolution 19.531 kHz exceeds comb period/10 = 16.667 kHz" in e for e in errors)

    def test_power_of_two(self):
        errors = violations({"grid": {"n_points": 1000}})
        assert any("power of two" in e for e in errors)

    def test_unknown_key(self):
        errors = violations({"comb": {"teeth": 12}, "colour": "blue"})
        assert "unknown key 'comb.teeth'" in errors
        assert "unknown key 'colour'" in errors

    def test_type_errors(self):
        errors = violations({"grid": {"n_points": "big"}, "filters": {"use_fp": 1}, "detection": {"snr_photon_numbers": "2.5"}})
        assert any("'grid.n_points' must be an integer" in e for e in errors)
        assert any("'filters.use_fp' must be true or false" in e for e in errors)
        assert any("'detection.snr_photon_numbers' must be a list of numbers" in e for e in errors)

    def test_collects_every_violation(self):
        errors = violations({
            "spin": {"transfer_efficiency": -0.1},
            "detector": {"quantum_efficiency": 2.0},
            "timeline": {"c1_offset_us": 9.0},
            "comb": {"finesse": 0.5},
        })
        assert len(errors) >= 4

    def test_depth_limit(self):
        errors = violations({"comb": {"peak_depth": 2.0}})
        assert any("exceeds the maximum optical depth" in e for e in errors)

    def test_timebin_separation(self):
        errors = violations({"timebin": {"bin_separation_us": 4.5}})
        assert any("time-bin separation" in e for e in errors)

    def test_bandwidth_covers_pulse(self):
        errors = violations({"input": {"fwhm_us": 0.5}})
        assert any("does not cover the input pulse" in e for e in errors)

    def test_tooth_resolution(self):
        errors = violations({"comb": {"finesse": 60.0}})
        assert "grid resolution 1.221 kHz exceeds tooth FWHM/5 = 0.556 kHz" in errors

    def test_optimal_finesse_needs_depth(self):
        errors = violations({"comb": {"finesse": None, "peak_depth": 0.0}})
        assert any("needs a positive comb.peak_depth" in e for e in errors)

    def test_timebin_delay_exceeds_c1_offset(self):
        errors = violations({"timeline": {"c1_offset_us": 5.0}, "timebin": {"afc_delay_us": 5.0}})
        assert "C1 offset 5 us must be shorter than the time-bin AFC delay 5 us" in errors

    def test_malformed_json(self):
        cfg, errors = validate_config("{not json")
        assert cfg is None
        assert errors[0].startswith("config is not valid JSON")

    def test_non_object_root(self):
        assert validate_config("[1, 2]") == (None, ["config root must be a JSON object"])

    def test_unknown_preset(self):
        errors = violations({"preset": "fig9"})
        assert "unknown preset 'fig9'" in errors


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            load_config(str(tmp_path / "missing.json"))
        assert "cannot read config file" in excinfo.value.violations[0]

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"spin": {"transfer_efficiency": 1.3}}))
        with pytest.raises(ConfigError) as excinfo:
            load_config(str(path))
        assert any("transfer efficiency" in v for v in excinfo.value.violations)

    def test_unknown_preset_error(self):
        error = UnknownPresetError("fig9")
        assert isinstance(error, ConfigError)
        assert "fig2d-snr" in error.violations[0]


class TestCanonical:
    def test_sorted_and_compact(self):
        assert canonical_json({"b": 1, "a": [1.5, True, None]}) == '{"a":[1.5,true,null],"b":1}'

    def test_floats_keep_full_precision(self):
        assert canonical_json({"x": 0.1 + 0.2}) == '{"x":0.30000000000000004}'
        assert canonical_json({"x": 1.0 / 3.0}) == '{"x":0.3333333333333333}'

    def test_precise_config_reproduces_exactly(self):
        cfg, errors = validate_config(json.dumps({"spin": {"linewidth_khz": 8.123456789012345}}))
        assert errors == []
        reloaded, errors = validate_config(cfg.canonical())
        assert errors == []
        assert reloaded.spin.linewidth_khz == 8.123456789012345
        assert reloaded.content_hash() == cfg.content_hash()

    def test_empty_blob_hash(self):
        assert content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"

    def test_hash_is_stable(self, cfg):
        assert cfg.content_hash() == load_config(None).content_hash()
        assert cfg.with_seed(9).content_hash() != cfg.content_hash()

    def test_round_trip_through_json(self, cfg):
        reloaded, errors = validate_config(cfg.canonical())
        assert errors == []
        assert reloaded.content_hash() == cfg.content_hash()


class TestBuilders:
    def test_config_is_frozen(self, cfg):
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.comb.peak_depth = 3.0

    def test_default_config_is_a_copy(self):
        tree = config.default_config()
        tree["comb"]["peak_depth"] = 99.0
        assert config.default_config()["comb"]["peak_depth"] == config.COMB_PEAK_DEPTH

    def test_null_finesse_uses_optimum(self, cfg):
        comb = cfg.comb_params()
        assert comb.finesse == pytest.approx(2.6, abs=0.1)
        assert comb.afc_delay == pytest.approx(6.0)
        assert cfg.comb_params(afc_delay=8.0).afc_delay == pytest.approx(8.0)

    def test_protocol_timeline(self, cfg):
        timeline = cfg.protocol_timeline()
        assert (timeline.t_c1, timeline.t_c2, timeline.t_echo, timeline.t_oreo) == (4.0, 25.0, 27.0, 31.0)

    def test_filter_params_gate(self, cfg):
        params = cfg.filter_params(cfg.protocol_timeline())
        assert params.aom_window == (25.5, 40.5)
        assert params.use_fp

    def test_detector_params_seed(self, cfg):
        assert cfg.with_seed(42).detector_params().seed == 42
        assert cfg.detector_params().histogram_range == (-5.0, 45.0)

    def test_max_depth_per_pass(self, cfg):
        assert cfg.max_depth_per_pass == pytest.approx(1.2)
