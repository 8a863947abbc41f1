import json

import pytest

from planewarp.config import RunConfig
from planewarp.errors import IngestionError
from planewarp.estimator import PlanarStitcher


class TestDefaults:
    def test_reference_defaults(self):
        cfg = RunConfig()
        assert cfg.grid_size == 40.0
        assert cfg.pyramid_scale == 1.5
        assert (cfg.lambda_sd, cfg.lambda_sa) == (5.0, 10.0)
        assert cfg.lambda_l == 5.0
        assert (cfg.lambda_gh, cfg.lambda_ov, cfg.lambda_nv) == (50.0, 50.0, 100.0)
        assert (cfg.lambda_ll, cfg.lambda_gl) == (30.0, 70.0)
        assert cfg.global_line_ratio == 2.0 / 3.0
        assert cfg.seed == 42

    def test_estimator_defaults_match_config(self):
        cfg = RunConfig()
        est = PlanarStitcher()
        for name, value in cfg.estimator_kwargs().items():
            assert getattr(est, name) == value, name


class TestPrecedence:
    def test_flag_beats_file_beats_default(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"grid_size": 30.0, "lambda_l": 9.0, "seed": 5}))
        # flag set for grid_size only; file covers lambda_l and seed;
        # lambda_sd untouched -> default.
        cfg = RunConfig.from_sources(path, grid_size=20.0, lambda_l=None,
                                     lambda_sd=None)
        assert cfg.grid_size == 20.0  # flag wins
        assert cfg.lambda_l == 9.0  # file wins over default
        assert cfg.seed == 5
        assert cfg.lambda_sd == 5.0  # default

    def test_precedence_matrix(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lambda_sa": 1.0, "lambda_gh": 2.0}))
        cases = [
            # (flag value, file has key, expected)
            (3.0, True, 3.0),  # flag > file
            (None, True, 1.0),  # file > default
            (3.0, False, 3.0),  # flag > default
            (None, False, 10.0),  # default
        ]
        for flag, in_file, expected in cases:
            cfg = RunConfig.from_sources(path if in_file else None, lambda_sa=flag)
            assert cfg.lambda_sa == expected, (flag, in_file)

    def test_unknown_file_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(IngestionError, match="unknown config keys"):
            RunConfig.from_sources(path)

    def test_unknown_flag_rejected(self):
        with pytest.raises(IngestionError):
            RunConfig.from_sources(None, bogus=1.0)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{oops")
        with pytest.raises(IngestionError, match="line 1"):
            RunConfig.from_sources(path)
