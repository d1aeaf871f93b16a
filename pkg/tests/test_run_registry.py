import pytest

import run_registry
from run_registry import RunRegistry, get_registry

STAGES = {"shared": {"mean_ms": 12.5, "calls": 5}, "per_object": {"mean_ms": 3.0, "calls": 8}}


@pytest.fixture
def registry(tmp_path):
    return RunRegistry(str(tmp_path / "reg" / "runs.db"))


class TestRunRegistry:
    def test_record_and_fetch(self, registry):
        run_id = registry.record_run("segment", "squares", {"k": 2}, {"frames": 5},
                                     frames=5, fps=4.2, stages=STAGES)
        run = registry.get_run(run_id)
        assert run.kind == "segment" and run.name == "squares"
        assert run.config == {"k": 2} and run.payload == {"frames": 5}
        assert run.fps == pytest.approx(4.2)
        assert run.jf_mean is None
        assert run.stages == STAGES

    def test_unknown_kind_rejected(self, registry):
        with pytest.raises(ValueError):
            registry.record_run("train", "x", {}, {})

    def test_missing_run(self, registry):
        assert registry.get_run(999) is None

    def test_list_newest_first_and_filtered(self, registry):
        registry.record_run("eval", "a", {}, {}, jf_mean=0.5)
        registry.record_run("bench", "b", {}, {}, fps=10.0)
        registry.record_run("eval", "c", {}, {}, jf_mean=0.7)
        assert [r.name for r in registry.list_runs()] == ["c", "b", "a"]
        assert [r.name for r in registry.list_runs("eval")] == ["c", "a"]
        assert len(registry.list_runs(limit=1)) == 1

    def test_fps_history_oldest_first(self, registry):
        for fps in (5.0, 6.0, 7.0):
            registry.record_run("bench", "tiny", {}, {}, frames=3, fps=fps)
        registry.record_run("bench", "other", {}, {}, fps=1.0)
        registry.record_run("segment", "tiny", {}, {}, fps=99.0)
        history = registry.fps_history("tiny")
        assert [h["fps"] for h in history] == [5.0, 6.0, 7.0]
        assert [h["fps"] for h in registry.fps_history("tiny", limit=2)] == [6.0, 7.0]

    def test_singleton_uses_settings_path(self, tmp_path):
        reg = get_registry()
        assert reg is get_registry()
        assert reg.db_path == str(tmp_path / "runs.db")
        assert run_registry._registry is reg
