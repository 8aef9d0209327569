"""
Run ledger: SQLite via aiosqlite.

Disabled unless a path is given (--db or RESHARD_DB_PATH). Writes happen after
the command has produced its output, so the ledger never changes what a
command prints.

Tables:
  runs             one row per run / ablate / campaign / scale invocation
  campaign_trials  one row per campaign trial
"""

import logging
import os
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import AsyncGenerator, Iterable, List, Optional, Union

import aiosqlite

logger = logging.getLogger(__name__)

DB_PATH = os.getenv("RESHARD_DB_PATH")
HISTORY_LIMIT = 20


def resolve_db_path(path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    chosen = path or DB_PATH
    return Path(chosen) if chosen else None


@asynccontextmanager
async def get_db(path: Union[str, Path]) -> AsyncGenerator[aiosqlite.Connection, None]:
    """Async context manager for a ledger connection. Use as: async with get_db(path) as db."""
    async with aiosqlite.connect(path) as db:
        db.row_factory = aiosqlite.Row
        yield db


async def init_db(path: Union[str, Path]) -> None:
    """Create the ledger tables if they don't exist."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    async with get_db(path) as db:
        await db.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id           INTEGER PRIMARY KEY AUTOINCREMENT,
                command      TEXT NOT NULL,
                scenario     TEXT NOT NULL,
                mode         TEXT,
                status       TEXT NOT NULL,      -- 'ok' | 'fail' | 'error'
                sim_time     REAL,
                bytes_moved  INTEGER,
                messages     INTEGER,
                created_at   TEXT NOT NULL
            );

            CREATE TABLE IF NOT EXISTS campaign_trials (
                id           INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id       INTEGER NOT NULL REFERENCES runs(id),
                trial        INTEGER NOT NULL,
                src          TEXT NOT NULL,
                dst          TEXT NOT NULL,
                status       TEXT NOT NULL,
                detail       TEXT
            );

            CREATE INDEX IF NOT EXISTS idx_trials_run ON campaign_trials(run_id);
        """)
        await db.commit()
    logger.debug("Ledger ready at %s", path)


async def insert_run(
    path: Union[str, Path],
    command: str,
    scenario: str,
    status: str,
    mode: Optional[str] = None,
    sim_time: Optional[float] = None,
    bytes_moved: Optional[int] = None,
    messages: Optional[int] = None,
) -> int:
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    async with get_db(path) as db:
        cursor = await db.execute(
            """
            INSERT INTO runs (command, scenario, mode, status, sim_time, bytes_moved, messages, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (command, scenario, mode, status, sim_time, bytes_moved, messages, now),
        )
        await db.commit()
        return cursor.lastrowid


async def insert_trials(path: Union[str, Path], run_id: int, trials: Iterable) -> None:
    async with get_db(path) as db:
        await db.executemany(
            "INSERT INTO campaign_trials (run_id, trial, src, dst, status, detail) VALUES (?, ?, ?, ?, ?, ?)",
            [(run_id, t.index, t.src, t.dst, t.status, t.detail) for t in trials],
        )
        await db.commit()


async def list_runs(path: Union[str, Path], limit: int = HISTORY_LIMIT) -> List[dict]:
    async with get_db(path) as db:
        rows = await (await db.execute(
            "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
        )).fetchall()
    return [dict(r) for r in rows]


async def list_trials(path: Union[str, Path], run_id: int) -> List[dict]:
    async with get_db(path) as db:
        rows = await (await db.execute(
            "SELECT * FROM campaign_trials WHERE run_id = ? ORDER BY trial", (run_id,)
        )).fetchall()
    return [dict(r) for r in rows]
