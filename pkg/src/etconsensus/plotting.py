"""SVG figures rendered from the CSV outputs alone."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import LEADER_ID, read_csv  # noqa: E402

STYLE = {
    "svg.hashsalt": "etconsensus",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
    "figure.figsize": (7.0, 3.6),
}


@dataclass(frozen=True)
class PlotSpec:
    name: str
    column: str
    ylabel: str
    title: str
    with_leader: bool = False
    relative: bool = False  # plot follower minus leader


DEFAULT_PLOTS = (
    PlotSpec("positions", "x", "position x", "Positions of leader and followers", with_leader=True),
    PlotSpec("velocities", "v", "velocity v", "Velocities of leader and followers", with_leader=True),
    PlotSpec("position_errors", "x", r"$x_i - x_0$", "Position tracking errors", relative=True),
    PlotSpec("velocity_errors", "v", r"$v_i - v_0$", "Velocity tracking errors", relative=True),
    PlotSpec("gains", "c", r"$c_i(t)$", "Adaptive coupling gains"),
    PlotSpec("thresholds", "d", r"$d_i(t)$", "Adaptive trigger thresholds"),
    PlotSpec("estimators", "w", r"$w_i(t)$", "Estimator states"),
)


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def split_agents(traj: dict[str, np.ndarray]) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Row indices of the leader and of every follower in a long-format trajectory."""
    ids = traj["agent_id"].astype(int)
    leader = np.flatnonzero(ids == LEADER_ID)
    followers = {int(i): np.flatnonzero(ids == i) for i in np.unique(ids) if i != LEADER_ID}
    return leader, followers


def plot_series(traj: dict[str, np.ndarray], spec: PlotSpec, path: Path) -> None:
    leader, followers = split_agents(traj)
    t = traj["t"]
    col = spec.column if spec.column in traj else f"{spec.column}_0"  # first axis when n > 1
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, rows in followers.items():
            y = traj[col][rows]
            if spec.relative:
                y = y - traj[col][leader]
            ax.plot(t[rows], y, label=f"agent {i}")
        if spec.with_leader:
            ax.plot(t[leader], traj[col][leader], "k--", linewidth=1.6, label="leader")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(spec.ylabel)
        ax.set_title(spec.title)
        ax.legend(loc="upper right", ncol=4, fontsize=7)
        _save(fig, path)


def plot_event_raster(events: dict[str, np.ndarray], t_end: float, n_agents: int, path: Path) -> None:
    """One row per agent, a tick at every broadcast; blank stretches are silent intervals."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 0.5 * n_agents + 1.2))
        agents = events["agent_id"].astype(int)
        for i in range(1, n_agents + 1):
            ts = events["t"][agents == i]
            ax.vlines(ts, i - 0.4, i + 0.4, color="tab:blue", linewidth=0.6)
        if t_end > 0:
            ax.set_xlim(0.0, t_end)
        ax.set_ylim(0.4, n_agents + 0.6)
        ax.set_yticks(range(1, n_agents + 1))
        ax.set_ylabel("agent")
        ax.set_xlabel("time [s]")
        ax.set_title("Broadcast events")
        ax.grid(False)
        _save(fig, path)


def plot_lyapunov(lyap: dict[str, np.ndarray], path: Path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(lyap["t"], lyap["V"], color="tab:purple")
        ax.set_yscale("symlog")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("V(t)")
        ax.set_title("Lyapunov candidate along the run")
        _save(fig, path)


def plot_agent_comparison(
    trajs: dict[str, dict[str, np.ndarray]], column: str, agent: int, ylabel: str, title: str, path: Path
) -> None:
    """One agent's series across several runs, e.g. d_1(t) under two graphs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, traj in trajs.items():
            rows = np.flatnonzero(traj["agent_id"].astype(int) == agent)
            ax.plot(traj["t"][rows], traj[column][rows], label=label)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(fontsize=7)
        _save(fig, path)


def render_run(outdir: Path, specs=DEFAULT_PLOTS) -> list[Path]:
    """(Re)build every figure of a run directory from its CSV files."""
    outdir = Path(outdir)
    traj = read_csv(outdir / "trajectory.csv")
    written = []
    for spec in specs:
        p = outdir / f"{spec.name}.svg"
        plot_series(traj, spec, p)
        written.append(p)
    events = read_csv(outdir / "events.csv")
    _, followers = split_agents(traj)
    p = outdir / "events.svg"
    plot_event_raster(events, float(np.nanmax(traj["t"])), len(followers), p)
    written.append(p)
    if (outdir / "lyapunov.csv").exists():
        p = outdir / "lyapunov.svg"
        plot_lyapunov(read_csv(outdir / "lyapunov.csv"), p)
        written.append(p)
    return written
