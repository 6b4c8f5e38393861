"""Run registry: train/eval/ablation runs indexed in SQLite"""

import json
import sqlite3
import uuid
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional


class RunStore:
    """Store and look up finished runs"""

    def __init__(self, db_path):
        self.db_path = Path(db_path)
        self._init_db()

    def _init_db(self):
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        with self._get_connection() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id TEXT PRIMARY KEY,
                    kind TEXT NOT NULL,
                    ablation TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    out_dir TEXT NOT NULL,
                    summary TEXT NOT NULL,
                    created_at TIMESTAMP NOT NULL
                )
            """)
            conn.execute("""
                CREATE INDEX IF NOT EXISTS idx_kind_created
                ON runs(kind, created_at DESC)
            """)
            conn.commit()

    @contextmanager
    def _get_connection(self):
        """Context manager for database connections"""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def save_run(self, kind: str, ablation: str, seed: int, out_dir: str, summary: Dict) -> str:
        """
        Register a run

        Args:
            kind: "train", "eval", "ablation" or "replay"
            ablation: Ablation name the run used
            seed: Run seed
            out_dir: Directory holding the run's files
            summary: JSON-serializable summary (metrics tail, success rates, ...)

        Returns:
            run_id
        """
        run_id = str(uuid.uuid4())
        now = datetime.now(timezone.utc).isoformat()
        with self._get_connection() as conn:
            conn.execute(
                """INSERT INTO runs (id, kind, ablation, seed, out_dir, summary, created_at)
                   VALUES (?, ?, ?, ?, ?, ?, ?)""",
                (run_id, kind, ablation, seed, str(out_dir), json.dumps(summary), now)
            )
            conn.commit()
        return run_id

    def _row(self, row) -> Dict:
        return {
            'id': row['id'],
            'kind': row['kind'],
            'ablation': row['ablation'],
            'seed': row['seed'],
            'out_dir': row['out_dir'],
            'summary': json.loads(row['summary']),
            'created_at': row['created_at'],
        }

    def get_run(self, run_id: str) -> Optional[Dict]:
        with self._get_connection() as conn:
            row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
            return self._row(row) if row else None

    def list_runs(self, kind: Optional[str] = None, limit: int = 50, offset: int = 0) -> List[Dict]:
        """Newest first, optionally filtered by kind"""
        with self._get_connection() as conn:
            if kind:
                cursor = conn.execute(
                    "SELECT * FROM runs WHERE kind = ? ORDER BY created_at DESC LIMIT ? OFFSET ?",
                    (kind, limit, offset)
                )
            else:
                cursor = conn.execute(
                    "SELECT * FROM runs ORDER BY created_at DESC LIMIT ? OFFSET ?",
                    (limit, offset)
                )
            return [self._row(row) for row in cursor.fetchall()]

    def count_runs(self, kind: Optional[str] = None) -> int:
        with self._get_connection() as conn:
            if kind:
                row = conn.execute("SELECT COUNT(*) AS count FROM runs WHERE kind = ?", (kind,)).fetchone()
            else:
                row = conn.execute("SELECT COUNT(*) AS count FROM runs").fetchone()
            return row['count'] if row else 0

    def delete_run(self, run_id: str) -> bool:
        """Remove the registry entry; the run's files are left alone"""
        with self._get_connection() as conn:
            cursor = conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))
            conn.commit()
            return cursor.rowcount > 0
