#!/usr/bin/env python3
"""
LSMVOS - Run Registry
SQLite history of segment, eval and bench runs for regression tracking
"""

import json
import sqlite3
import os
from datetime import datetime, timezone
from typing import Dict, List, Optional
from dataclasses import dataclass
import logging

UTC = timezone.utc

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("run_registry")

RUN_KINDS = ("segment", "eval", "bench")


@dataclass
class RunRecord:
    id: int
    kind: str
    name: str
    config: Dict
    frames: int
    fps: Optional[float]
    jf_mean: Optional[float]
    payload: Dict
    stages: Dict[str, Dict]
    created_at: str


class RunRegistry:
    def __init__(self, db_path: Optional[str] = None):
        if db_path is None:
            from settings import get_settings
            db_path = get_settings().db_path
        self.db_path = os.path.expanduser(db_path)
        self._ensure_db()

    def _ensure_db(self):
        os.makedirs(os.path.dirname(os.path.abspath(self.db_path)), exist_ok=True)
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                kind TEXT NOT NULL,
                name TEXT NOT NULL,
                config TEXT,
                frames INTEGER DEFAULT 0,
                fps REAL,
                jf_mean REAL,
                payload TEXT,
                created_at TEXT NOT NULL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS stage_timings (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL REFERENCES runs(id),
                stage TEXT NOT NULL,
                mean_ms REAL NOT NULL,
                calls INTEGER NOT NULL
            )
        """)

        cursor.execute("CREATE INDEX IF NOT EXISTS idx_runs_kind_name ON runs(kind, name)")
        conn.commit()
        conn.close()
        logger.debug(f"Run registry ready at {self.db_path}")

    def _get_db(self):
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def record_run(self, kind: str, name: str, config: Dict, payload: Dict,
                   frames: int = 0, fps: Optional[float] = None, jf_mean: Optional[float] = None,
                   stages: Optional[Dict[str, Dict]] = None) -> int:
        if kind not in RUN_KINDS:
            raise ValueError(f"Unknown run kind {kind!r}; expected one of {RUN_KINDS}")
        conn = self._get_db()
        cursor = conn.cursor()
        try:
            cursor.execute("""
                INSERT INTO runs (kind, name, config, frames, fps, jf_mean, payload, created_at)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """, (kind, name, json.dumps(config), frames, fps, jf_mean,
                  json.dumps(payload), datetime.now(UTC).isoformat()))
            run_id = cursor.lastrowid
            for stage, t in (stages or {}).items():
                cursor.execute("""
                    INSERT INTO stage_timings (run_id, stage, mean_ms, calls)
                    VALUES (?, ?, ?, ?)
                """, (run_id, stage, float(t["mean_ms"]), int(t["calls"])))
            conn.commit()
        finally:
            conn.close()
        logger.info(f"Run recorded | id={run_id} | {kind} | {name}")
        return run_id

    def _to_record(self, cursor, row) -> RunRecord:
        cursor.execute("SELECT stage, mean_ms, calls FROM stage_timings WHERE run_id = ? ORDER BY id",
                       (row["id"],))
        stages = {r["stage"]: {"mean_ms": r["mean_ms"], "calls": r["calls"]} for r in cursor.fetchall()}
        return RunRecord(
            id=row["id"], kind=row["kind"], name=row["name"],
            config=json.loads(row["config"]) if row["config"] else {},
            frames=row["frames"], fps=row["fps"], jf_mean=row["jf_mean"],
            payload=json.loads(row["payload"]) if row["payload"] else {},
            stages=stages, created_at=row["created_at"],
        )

    def get_run(self, run_id: int) -> Optional[RunRecord]:
        conn = self._get_db()
        cursor = conn.cursor()
        try:
            cursor.execute("SELECT * FROM runs WHERE id = ?", (run_id,))
            row = cursor.fetchone()
            return self._to_record(cursor, row) if row else None
        finally:
            conn.close()

    def list_runs(self, kind: Optional[str] = None, limit: int = 20) -> List[RunRecord]:
        conn = self._get_db()
        cursor = conn.cursor()
        try:
            if kind:
                cursor.execute("SELECT * FROM runs WHERE kind = ? ORDER BY id DESC LIMIT ?", (kind, limit))
            else:
                cursor.execute("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))
            rows = cursor.fetchall()
            return [self._to_record(cursor, row) for row in rows]
        finally:
            conn.close()

    def fps_history(self, name: str, limit: int = 50) -> List[Dict]:
        """Benchmark FPS of runs named `name`, oldest first."""
        conn = self._get_db()
        cursor = conn.cursor()
        try:
            cursor.execute("""
                SELECT id, fps, frames, created_at FROM runs
                WHERE kind = 'bench' AND name = ? AND fps IS NOT NULL
                ORDER BY id DESC LIMIT ?
            """, (name, limit))
            rows = [dict(r) for r in cursor.fetchall()]
        finally:
            conn.close()
        return list(reversed(rows))


_registry = None

def get_registry() -> RunRegistry:
    global _registry
    if _registry is None:
        _registry = RunRegistry()
    return _registry


if __name__ == "__main__":
    reg = get_registry()
    print(f"\nRun registry at {reg.db_path}")
    for run in reg.list_runs(limit=10):
        print(f"  #{run.id} {run.kind:<8} {run.name:<24} frames={run.frames} fps={run.fps}")
