#!/usr/bin/env python3
"""
LSMVOS - Settings
Loads config/lsmvos.yaml and applies environment overrides
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Optional
import logging

import yaml
from dotenv import load_dotenv

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("settings")

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'config')
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, 'lsmvos.yaml')


@dataclass
class Settings:
    k: int = 8
    n: int = 256
    similarity: str = "cosine"
    theta: float = 0.5
    ablation: str = "full"
    gamma: float = 2.0
    alpha: float = 0.25
    boundary_ratio: float = 0.008
    threads: int = 4
    row_block: int = 8
    object_workers: int = 2
    db_path: str = "~/.lsmvos/runs.db"
    host: str = "127.0.0.1"
    port: int = 8101
    log_level: str = "INFO"
    source: str = field(default="defaults")


def _read_yaml(path: str) -> Dict:
    with open(path, 'r') as f:
        return yaml.safe_load(f) or {}


def load_settings(path: Optional[str] = None) -> Settings:
    """
    Build Settings from YAML, then environment.
    Precedence: LSMVOS_* env vars > YAML file > dataclass defaults.
    """
    load_dotenv()
    path = path or os.getenv("LSMVOS_CONFIG") or DEFAULT_CONFIG

    s = Settings()
    if os.path.exists(path):
        cfg = _read_yaml(path)
        m = cfg.get('matching', {})
        p = cfg.get('pipeline', {})
        lo = cfg.get('loss', {})
        rt = cfg.get('runtime', {})
        s.k = int(m.get('k', s.k))
        s.n = int(m.get('n', s.n))
        s.similarity = m.get('similarity', s.similarity)
        s.theta = float(p.get('theta', s.theta))
        s.ablation = p.get('ablation', s.ablation)
        s.gamma = float(lo.get('gamma', s.gamma))
        s.alpha = float(lo.get('alpha', s.alpha))
        s.boundary_ratio = float(cfg.get('metrics', {}).get('boundary_ratio', s.boundary_ratio))
        s.threads = int(rt.get('threads', s.threads))
        s.row_block = int(rt.get('row_block', s.row_block))
        s.object_workers = int(rt.get('object_workers', s.object_workers))
        s.db_path = cfg.get('storage', {}).get('db_path', s.db_path)
        s.host = cfg.get('server', {}).get('host', s.host)
        s.port = int(cfg.get('server', {}).get('port', s.port))
        s.source = os.path.abspath(path)
    else:
        logger.warning(f"Config not found at {path}, using defaults")

    if os.getenv("LSMVOS_THREADS"):
        s.threads = int(os.environ["LSMVOS_THREADS"])
    if os.getenv("LSMVOS_DB_PATH"):
        s.db_path = os.environ["LSMVOS_DB_PATH"]
    if os.getenv("LSMVOS_LOG_LEVEL"):
        s.log_level = os.environ["LSMVOS_LOG_LEVEL"].upper()

    if s.threads < 1:
        raise ValueError(f"threads must be >= 1, got {s.threads}")
    if s.object_workers < 1:
        raise ValueError(f"object_workers must be >= 1, got {s.object_workers}")
    if s.row_block < 1:
        raise ValueError(f"row_block must be >= 1, got {s.row_block}")
    s.db_path = os.path.expanduser(s.db_path)
    return s


_settings = None

def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = load_settings()
    return _settings


def reset_settings(settings: Optional[Settings] = None):
    """Replace the process-wide settings (CLI flags, tests)."""
    global _settings
    _settings = settings


if __name__ == "__main__":
    s = get_settings()
    print(f"\nSettings from {s.source}")
    print(f"  k={s.k} n={s.n} similarity={s.similarity} theta={s.theta}")
    print(f"  threads={s.threads} row_block={s.row_block} db={s.db_path}")
