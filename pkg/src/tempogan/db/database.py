import logging
import sqlite3
from pathlib import Path
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

DB_NAME = "metrics.db"

LOSS_COLUMNS = (
    "l_ds",
    "l_dt",
    "g_adv_s",
    "g_adv_t",
    "g_feature",
    "g_l1",
    "g_temporal",
    "g_total",
    "ds_real",
    "ds_fake",
    "dt_real",
    "dt_fake",
    "lr",
)


def get_connection(db_path: str | Path) -> sqlite3.Connection:
    """Establishes a connection to the SQLite metrics database."""
    try:
        conn = sqlite3.connect(db_path)
        conn.row_factory = sqlite3.Row
        return conn
    except sqlite3.Error as e:
        logger.error(f"Error connecting to database: {e}")
        raise


def init_db(db_path: str | Path) -> None:
    """Initialize the metrics database with required tables."""
    conn = get_connection(db_path)
    try:
        cursor = conn.cursor()

        loss_cols = ",\n".join(f"                {c} REAL" for c in LOSS_COLUMNS)
        cursor.execute(f"""
            CREATE TABLE IF NOT EXISTS losses (
                iteration INTEGER NOT NULL,
                run TEXT NOT NULL,
{loss_cols},
                PRIMARY KEY (run, iteration)
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS evaluations (
                run TEXT NOT NULL,
                frame INTEGER,
                metric TEXT NOT NULL,
                value REAL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS ablation (
                suite TEXT NOT NULL,
                config TEXT NOT NULL,
                metric TEXT NOT NULL,
                value REAL,
                complete INTEGER NOT NULL DEFAULT 1
            )
        """)

        conn.commit()
    except sqlite3.Error as e:
        logger.error(f"Error initializing database: {e}")
        raise
    finally:
        conn.close()


def _insert(db_path: str | Path, sql: str, rows: Iterable[tuple]) -> None:
    conn = get_connection(db_path)
    try:
        conn.executemany(sql, list(rows))
        conn.commit()
    except sqlite3.Error as e:
        logger.error(f"Error writing to database {db_path}: {e}")
        raise
    finally:
        conn.close()


def record_losses(db_path: str | Path, run: str, rows: Iterable[Mapping[str, Any]]) -> None:
    """Stores per-iteration loss rows; re-running an iteration replaces its row."""
    cols = ", ".join(LOSS_COLUMNS)
    marks = ", ".join("?" for _ in LOSS_COLUMNS)
    _insert(
        db_path,
        f"INSERT OR REPLACE INTO losses (iteration, run, {cols}) VALUES (?, ?, {marks})",
        (
            (int(r["iteration"]), run, *(_opt(r.get(c)) for c in LOSS_COLUMNS))
            for r in rows
        ),
    )


def record_evaluation(
    db_path: str | Path, run: str, rows: Iterable[tuple[int | None, str, float]]
) -> None:
    _insert(
        db_path,
        "INSERT INTO evaluations (run, frame, metric, value) VALUES (?, ?, ?, ?)",
        ((run, frame, metric, _opt(value)) for frame, metric, value in rows),
    )


def record_ablation(
    db_path: str | Path,
    suite: str,
    rows: Iterable[tuple[str, str, float | None]],
    complete: bool = True,
) -> None:
    _insert(
        db_path,
        "INSERT INTO ablation (suite, config, metric, value, complete) VALUES (?, ?, ?, ?, ?)",
        ((suite, config, metric, _opt(value), int(complete)) for config, metric, value in rows),
    )


def fetch_losses(db_path: str | Path, run: str | None = None) -> list[dict[str, Any]]:
    """Loss rows ordered by run and iteration."""
    conn = get_connection(db_path)
    try:
        if run is None:
            cur = conn.execute("SELECT * FROM losses ORDER BY run, iteration")
        else:
            cur = conn.execute(
                "SELECT * FROM losses WHERE run = ? ORDER BY iteration", (run,)
            )
        return [dict(row) for row in cur.fetchall()]
    except sqlite3.Error as e:
        logger.error(f"Error reading losses from {db_path}: {e}")
        raise
    finally:
        conn.close()


def fetch_rows(db_path: str | Path, table: str) -> list[dict[str, Any]]:
    if table not in ("evaluations", "ablation"):
        raise ValueError(f"unknown table '{table}'")
    conn = get_connection(db_path)
    try:
        return [dict(row) for row in conn.execute(f"SELECT * FROM {table}").fetchall()]
    except sqlite3.Error as e:
        logger.error(f"Error reading {table} from {db_path}: {e}")
        raise
    finally:
        conn.close()


def _opt(value: Any) -> float | None:
    return None if value is None else float(value)
