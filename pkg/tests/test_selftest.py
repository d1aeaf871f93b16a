from dataclasses import replace

from cli import main
from selftest import (SUITES, CheckResult, check_constants, check_focal_gradient, check_long_backward,
                      check_long_oracle, check_short_backward, check_short_oracle, check_window_global,
                      format_table, run_selftest)
from settings import get_settings, reset_settings


class TestSelftest:
    def test_constants(self):
        result = check_constants()
        assert result.passed, result.detail

    def test_oracles_small(self):
        assert check_short_oracle(instances=5).passed
        assert check_long_oracle(instances=5).passed

    def test_window_covering_image(self):
        assert check_window_global().passed

    def test_backward_passes(self):
        for result in (check_short_backward(), check_long_backward()):
            assert result.passed, result.detail

    def test_focal_gradient_uses_configured_loss(self):
        reset_settings(replace(get_settings(), gamma=0.0, alpha=0.5))
        result = check_focal_gradient()
        assert result.passed, result.detail

    def test_full_run(self):
        results = run_selftest()
        assert len(results) == len(SUITES)
        assert all(r.passed for r in results), format_table(results)

    def test_command_exits_zero(self, capsys):
        assert main(["selftest"]) == 0
        assert "7/7 checks passed" in capsys.readouterr().out

    def test_table(self):
        table = format_table([CheckResult("a", True, "ok", 0.1), CheckResult("longer name", False, "bad")])
        assert "FAIL" in table and "PASS" in table
        assert table.endswith("1/2 checks passed")
