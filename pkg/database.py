# database.py
import sqlite3
from datetime import datetime, timezone

import pandas as pd

DATABASE_NAME = "cbnn_results.db"


def get_db_connection(path=None):
    conn = sqlite3.connect(path or DATABASE_NAME)
    conn.row_factory = sqlite3.Row  # columns by name
    return conn


def create_tables(path=None):
    conn = get_db_connection(path)
    cursor = conn.cursor()

    cursor.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            seed INTEGER,
            config TEXT,
            started TEXT NOT NULL
        )
    """)
    # one row per slice set of a sensitivity report
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS sensitivity_rows (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL,
            mode TEXT NOT NULL,
            slice_spec TEXT NOT NULL,
            mean_err REAL,
            delta_err REAL,
            FOREIGN KEY (run_id) REFERENCES runs (id)
        )
    """)
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS compression_rows (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL,
            arch TEXT NOT NULL,
            err REAL,
            delta_err REAL,
            size_mb REAL,
            size_ratio REAL,
            gops REAL,
            gops_ratio REAL,
            FOREIGN KEY (run_id) REFERENCES runs (id)
        )
    """)

    conn.commit()
    conn.close()


def record_run(command, seed, config_text, path=None):
    """Insert a run and return its id."""
    conn = get_db_connection(path)
    cursor = conn.cursor()
    cursor.execute(
        "INSERT INTO runs (command, seed, config, started) VALUES (?, ?, ?, ?)",
        (command, seed, config_text, datetime.now(timezone.utc).isoformat()),
    )
    run_id = cursor.lastrowid
    conn.commit()
    conn.close()
    return run_id


def store_sensitivity(run_id, report, path=None):
    df = report.to_frame()
    df.insert(0, "mode", report.mode)
    df.insert(0, "run_id", run_id)
    conn = get_db_connection(path)
    df.to_sql("sensitivity_rows", conn, if_exists="append", index=False)
    conn.commit()
    conn.close()
    return len(df)


def store_compression(run_id, df, path=None):
    """Append compression rows (a CompressionReport frame or a sweep frame)."""
    columns = ["arch", "err", "delta_err", "size_mb", "size_ratio", "gops", "gops_ratio"]
    df = df[columns].copy()
    df.insert(0, "run_id", run_id)
    conn = get_db_connection(path)
    df.to_sql("compression_rows", conn, if_exists="append", index=False)
    conn.commit()
    conn.close()
    return len(df)


def get_runs(path=None):
    conn = get_db_connection(path)
    runs_df = pd.read_sql_query("SELECT * FROM runs ORDER BY id", conn)
    conn.close()
    return runs_df


def get_sensitivity(run_id, path=None):
    conn = get_db_connection(path)
    query = "SELECT mode, slice_spec, mean_err, delta_err FROM sensitivity_rows WHERE run_id = ? ORDER BY id"
    rows_df = pd.read_sql_query(query, conn, params=(run_id,))
    conn.close()
    return rows_df


def get_compression(run_id, path=None):
    conn = get_db_connection(path)
    query = ("SELECT arch, err, delta_err, size_mb, size_ratio, gops, gops_ratio "
             "FROM compression_rows WHERE run_id = ? ORDER BY id")
    rows_df = pd.read_sql_query(query, conn, params=(run_id,))
    conn.close()
    return rows_df

