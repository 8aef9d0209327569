"""
history — the last 20 rows of the run ledger (--db or RESHARD_DB_PATH).
"""

import asyncio
import logging

from ..database import HISTORY_LIMIT, init_db, list_runs, resolve_db_path
from ..errors import ConfigError
from ..reports import render_history
from .common import emit

logger = logging.getLogger(__name__)


def cmd_history(args) -> int:
    path = resolve_db_path(args.db)
    if path is None:
        raise ConfigError("no ledger configured; pass --db or set RESHARD_DB_PATH", ("db",))

    async def _load():
        await init_db(path)
        return await list_runs(path, args.limit)

    emit(render_history(asyncio.run(_load())))
    return 0


def register(subparsers) -> None:
    history = subparsers.add_parser("history", help="List recent ledger rows")
    history.add_argument("--limit", type=int, default=HISTORY_LIMIT)
    history.set_defaults(func=cmd_history)
