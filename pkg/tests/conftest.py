import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "scripts"))

import run_registry  # noqa: E402
from dataio import seeded_init  # noqa: E402
from matching import MatchConfig  # noqa: E402
from network import full_layout  # noqa: E402
from pipeline import PipelineConfig  # noqa: E402
from settings import load_settings, reset_settings  # noqa: E402
from synthetic import make_clip, write_davis_fixture  # noqa: E402

SMALL_N = 16


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Registry in tmp, small worker pool; restored after each test."""
    monkeypatch.setenv("LSMVOS_DB_PATH", str(tmp_path / "runs.db"))
    monkeypatch.setenv("LSMVOS_THREADS", "2")
    monkeypatch.delenv("LSMVOS_CONFIG", raising=False)
    reset_settings(load_settings())
    run_registry._registry = None
    yield
    reset_settings(None)
    run_registry._registry = None


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_weights():
    return seeded_init(0, full_layout(SMALL_N))


@pytest.fixture
def small_config():
    return PipelineConfig(match=MatchConfig(k=2, n=SMALL_N), threads=2, object_workers=2)


@pytest.fixture(scope="session")
def clip():
    return make_clip(width=40, height=32, frames=5, objects=2, seed=0)


@pytest.fixture
def davis_root(tmp_path, clip):
    root = tmp_path / "davis"
    write_davis_fixture(str(root), clip, name="squares")
    return root


def unit_features(rng, c, h, w):
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    return x / np.linalg.norm(x, axis=0, keepdims=True)
