import io
import json

import numpy as np
import pytest

from vldistill.checkpoint import load_checkpoint, save_checkpoint
from vldistill.config import RunConfig, config_from_dict, load_config
from vldistill.errors import CheckpointError, ConfigError
from vldistill.metrics import log_metrics


class TestConfig:
    def test_empty_object_gives_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        cfg = load_config(path)
        assert cfg == RunConfig()
        assert cfg.concepts == 10 and cfg.beta == 1.0 and cfg.tau == 1.0

    def test_negative_beta_names_the_key(self):
        with pytest.raises(ConfigError, match="beta"):
            config_from_dict({"beta": -1})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="not_a_key"):
            config_from_dict({"not_a_key": 3})

    def test_type_errors_named(self):
        with pytest.raises(ConfigError, match="image_epochs"):
            config_from_dict({"image_epochs": 2.5})
        with pytest.raises(ConfigError, match="out_dir"):
            config_from_dict({"out_dir": 7})

    def test_hash_stable_across_loads(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 5, "beta": 0.5}))
        assert load_config(path).config_hash() == load_config(path).config_hash()

    def test_hash_sensitive_to_values(self):
        assert (config_from_dict({"seed": 1}).config_hash()
                != config_from_dict({"seed": 2}).config_hash())

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_dimension_coupling_validated(self):
        with pytest.raises(ConfigError, match="d_img"):
            config_from_dict({"concepts": 40, "d_img": 32, "eval_per_language": 40})


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        tensors = {"a.w": rng.normal(size=(3, 4)),
                   "b": rng.normal(size=(1, 7)),
                   "flat": rng.normal(size=5)}
        meta = {"stage": "test", "seed": 3, "config_hash": "abc"}
        path = tmp_path / "x.dckp"
        save_checkpoint(path, tensors, meta)
        ck = load_checkpoint(path)
        assert ck.version == 1
        assert ck.meta == meta
        assert set(ck.tensors) == set(tensors)
        for name in tensors:
            assert ck.tensors[name].tobytes() == np.ascontiguousarray(
                tensors[name], dtype="<f8").tobytes()

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "x.dckp"
        save_checkpoint(path, {"w": np.zeros((1, 1))}, {})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "x.dckp"
        save_checkpoint(path, {}, {})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "x.dckp"
        save_checkpoint(path, {"w": np.ones((4, 4))}, {"k": 1})
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "x.dckp"
        save_checkpoint(path, {}, {})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_empty_container(self, tmp_path):
        path = tmp_path / "x.dckp"
        save_checkpoint(path, {}, {"stage": "empty"})
        ck = load_checkpoint(path)
        assert ck.tensors == {}
        assert ck.meta["stage"] == "empty"


class TestMetrics:
    def _record(self, **extra):
        return {"stage": "s", "step": 1, "seed": 0, "wall_ms": 1.5, **extra}

    def test_identical_records_identical_lines(self):
        stream = io.StringIO()
        log_metrics(stream, self._record())
        log_metrics(stream, self._record())
        lines = stream.getvalue().splitlines()
        assert len(lines) == 2 and lines[0] == lines[1]

    def test_keys_sorted(self):
        stream = io.StringIO()
        log_metrics(stream, self._record(zeta=1, alpha=2))
        keys = list(json.loads(stream.getvalue()).keys())
        assert keys == sorted(keys)

    def test_missing_mandatory_key(self):
        with pytest.raises(ValueError, match="wall_ms"):
            log_metrics(io.StringIO(), {"stage": "s", "step": 1, "seed": 0})

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="bad"):
            log_metrics(io.StringIO(), self._record(bad=[1, 2]))
