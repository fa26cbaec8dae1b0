import pytest

from snlw.config import FORMAT_CONFIG, ConfigError, ExperimentConfig, default_config, load_config, parse_config


class TestParse:
    def test_empty_text_gives_defaults(self):
        cfg = parse_config("")
        assert cfg == default_config() == ExperimentConfig()
        assert cfg.dt == pytest.approx(16.0 / 128 / 4)

    def test_minimal_config_fills_defaults(self):
        cfg = parse_config("[grid]\nn = 64\n[noise]\nseed = 7  # comment\n")
        assert cfg.grid.n == 64 and cfg.grid.L == 16.0
        assert cfg.noise.seed == 7 and cfg.noise.N == 4.0
        assert cfg.schedule.alpha == 0.6

    def test_types_and_bools(self):
        cfg = parse_config("[run]\ndump_fields = yes\nT = 0.5\n[solver]\ndt = 0.01\n")
        assert cfg.run.dump_fields is True
        assert cfg.run.T == 0.5 and cfg.dt == 0.01

    def test_resolved_carries_format_and_dt(self):
        d = default_config().resolved()
        assert d["format"] == FORMAT_CONFIG
        assert d["solver"]["dt"] == pytest.approx(0.03125)
        assert d["grid"] == {"L": 16.0, "n": 128}

    def test_overrides(self):
        cfg = default_config().with_seed(11).with_out("elsewhere")
        assert cfg.noise.seed == 11 and cfg.run.out == "elsewhere"

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[cutoff]\nR = 1.5\n")
        assert load_config(path).cutoff.R == 1.5


class TestViolations:
    def errors(self, text):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        return info.value.violations

    def test_infeasible_schedule_diagnostic(self):
        (msg,) = self.errors("[schedule]\ns = 0.7\n")
        assert "InfeasibleSchedule" in msg and "4/5" in msg

    def test_boundary_is_infeasible(self):
        (msg,) = self.errors("[schedule]\ns = 0.8\n")
        assert "InfeasibleSchedule" in msg

    def test_pair_outside_window(self):
        (msg,) = self.errors("[schedule]\nalpha = 0.3\nbeta = 0.6\n")
        assert "beta" in msg and "alpha" in msg

    def test_cone_wrap_named(self):
        (msg,) = self.errors("[grid]\nL = 8\nn = 64\n")
        assert "cone wrap" in msg and "4 (T + R + 1)" in msg

    def test_unknown_keys_and_sections(self):
        errs = self.errors("[grid]\nLL = 3\n[gird]\nn = 4\n")
        assert any("unknown key grid.LL" in e for e in errs)
        assert any("unknown section [gird]" in e for e in errs)

    def test_keys_are_case_sensitive(self):
        errs = self.errors("[grid]\nl = 16\n")
        assert any("grid.l" in e for e in errs)

    def test_all_violations_reported(self):
        text = "[grid]\nn = 7\n[noise]\namplitude = -1\nbogus = 1\n[solver]\npicard_tol = 0\n[schedule]\ns = 0.7\n[run]\nT = abc\n"
        errs = self.errors(text)
        assert len(errs) >= 5
        joined = "\n".join(errs)
        for fragment in ("grid.n", "noise.amplitude", "noise.bogus", "picard_tol", "InfeasibleSchedule", "run.T"):
            assert fragment in joined
        assert str(ConfigError(errs)).count("\n  - ") == len(errs)

    def test_cutoff_and_step_limits(self):
        errs = self.errors("[noise]\nN = 1000\n[solver]\ndt = 1.0\n")
        assert any("noise.N" in e for e in errs) and any("solver.dt" in e for e in errs)

    def test_nonfinite_rejected(self):
        assert any("cannot read" in e for e in self.errors("[run]\nT = nan\n"))

    def test_syntax_error(self):
        errs = self.errors("no section header\n")
        assert errs[0].startswith("syntax")
