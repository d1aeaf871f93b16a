import pytest
import yaml

from settings import get_settings, load_settings, reset_settings


class TestSettings:
    def test_repository_config(self):
        s = load_settings()
        assert (s.k, s.n, s.similarity) == (8, 256, "cosine")
        assert s.ablation == "full"
        assert s.source.endswith("lsmvos.yaml")

    def test_env_overrides_yaml(self, monkeypatch, tmp_path):
        monkeypatch.setenv("LSMVOS_THREADS", "7")
        monkeypatch.setenv("LSMVOS_LOG_LEVEL", "debug")
        s = load_settings()
        assert s.threads == 7
        assert s.log_level == "DEBUG"
        assert s.db_path == str(tmp_path / "runs.db")

    def test_missing_file_uses_defaults(self, tmp_path):
        s = load_settings(str(tmp_path / "absent.yaml"))
        assert s.source == "defaults"
        assert s.n == 256

    def test_partial_file(self, tmp_path):
        path = tmp_path / "partial.yaml"
        path.write_text(yaml.safe_dump({"matching": {"k": 3}, "pipeline": {"theta": 0.4}}))
        s = load_settings(str(path))
        assert (s.k, s.n, s.theta) == (3, 256, 0.4)

    @pytest.mark.parametrize("section, key", [("runtime", "object_workers"), ("runtime", "row_block")])
    def test_non_positive_runtime_rejected(self, tmp_path, section, key):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({section: {key: 0}}))
        with pytest.raises(ValueError):
            load_settings(str(path))

    def test_reset_replaces_singleton(self, tmp_path):
        custom = load_settings(str(tmp_path / "absent.yaml"))
        reset_settings(custom)
        assert get_settings() is custom
