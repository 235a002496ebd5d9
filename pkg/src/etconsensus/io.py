"""CSV outputs of a run.  Formatting is fixed so identical runs give byte-identical files."""

from __future__ import annotations

import csv
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .simulator import RunRecord

FLOAT_FMT = "%.10g"
LEADER_ID = 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _vec_cols(name: str, n: int) -> list[str]:
    return [name] if n == 1 else [f"{name}_{k}" for k in range(n)]


def write_trajectory(path: Path, rec: RunRecord, stride: int = 1) -> None:
    """Long format; followers carry ids 1..N, the leader id 0 with empty w, c, d, u."""
    N, n = rec.n_agents, rec.x.shape[2]
    header = ["t", "agent_id", *_vec_cols("x", n), *_vec_cols("v", n), *_vec_cols("w", n), "c", "d", *_vec_cols("u", n)]
    idx = list(range(0, len(rec.times), stride))
    if idx[-1] != len(rec.times) - 1:
        idx.append(len(rec.times) - 1)

    def rows():
        blank = [None] * n
        for k in idx:
            t = rec.times[k]
            yield [t, LEADER_ID, *rec.x0[k], *rec.v0[k], *blank, None, None, *blank]
            for i in range(N):
                yield [t, i + 1, *rec.x[k, i], *rec.v[k, i], *rec.w[k, i], rec.c[k, i], rec.d[k, i], *rec.u[k, i]]

    _write(path, header, rows())


def write_events(path: Path, rec: RunRecord) -> None:
    n = rec.x.shape[2]
    header = ["t", "agent_id", *_vec_cols("x_broadcast", n), "d_value"]
    _write(path, header, ([e.t, e.agent_id + 1, *e.x_broadcast, e.d_value] for e in rec.events))


SUMMARY_FIELDS = [
    "agent_id",
    "tail_position_error",
    "tail_velocity_error",
    "event_count",
    "triggered_fraction",
    "min_inter_event_gap",
    "max_consecutive_fires",
    "final_gain",
    "gain_bound",
    "tail_gain_rate",
    "final_threshold",
]


def write_summary(path: Path, rows: list[dict]) -> None:
    _write(path, SUMMARY_FIELDS, ([r[k] for k in SUMMARY_FIELDS] for r in rows))


def write_lyapunov(path: Path, times: np.ndarray, V: np.ndarray) -> None:
    _write(path, ["t", "V"], zip(times, V))


def write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0])
    _write(path, header, ([r.get(k) for k in header] for r in rows))


def read_csv(path: Path) -> dict[str, np.ndarray]:
    """Columns as float arrays; empty cells become NaN."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(c) if c != "" else np.nan for c in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, j] for j, name in enumerate(header)}


@contextmanager
def atomic_dir(target: Path):
    """Yield a scratch directory that replaces ``target`` only if the block succeeds."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)
    os.chmod(target, 0o755)
