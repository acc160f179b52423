"""Readers and writers for run artifacts: trajectory CSV, monitor JSON, symbolic
trace and env scripts."""

import csv
import json
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .sim import MonitorReport, TrajectoryLog
from .types import Cell

PathLike = Union[str, Path]


def trajectory_columns(r: int) -> list[str]:
    return (["t"] + [f"{a}{i + 1}" for i in range(r) for a in "xy"]
            + [f"u{i + 1}{a}" for i in range(r) for a in "xy"]
            + ["target_cell", "formation_id", "delta1", "delta2", "qp_status"])


def write_trajectory_csv(log: TrajectoryLog, r: int, path: PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_columns(r))
        for s in log.samples:
            ix, iy = s.target_cell
            writer.writerow([repr(s.t), *map(repr, s.positions.reshape(-1).tolist()),
                             *map(repr, s.inputs.reshape(-1).tolist()),
                             f"{ix},{iy}", s.formation, repr(s.delta1), repr(s.delta2),
                             s.qp_status])


@dataclass(frozen=True, eq=False)
class TrajectoryTable:
    """Trajectory CSV contents as arrays."""

    t: NDArray[np.float64]
    # (samples, robots, 2)
    positions: NDArray[np.float64]
    inputs: NDArray[np.float64]
    target_cells: tuple[Cell, ...]
    formations: tuple[str, ...]
    delta1: NDArray[np.float64]
    delta2: NDArray[np.float64]
    qp_status: tuple[str, ...]

    @property
    def r(self) -> int:
        return int(self.positions.shape[1])

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def step_starts(self) -> list[int]:
        """Sample indices at which a new target became active."""
        return [k for k in range(len(self))
                if k == 0 or (self.target_cells[k], self.formations[k])
                != (self.target_cells[k - 1], self.formations[k - 1])]


def read_trajectory_csv(path: PathLike) -> TrajectoryTable:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    header = rows[0]
    r = (len(header) - 6) // 4
    if r < 1 or header != trajectory_columns(r):
        raise ValueError(f"{path}: unexpected trajectory header")

    t, pos, inputs, cells, formations, d1, d2, status = [], [], [], [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[:1 + 4 * r]]
            ix, iy = (int(c) for c in row[1 + 4 * r].split(","))
            d1.append(float(row[-3]))
            d2.append(float(row[-2]))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
        t.append(values[0])
        pos.append(values[1:1 + 2 * r])
        inputs.append(values[1 + 2 * r:])
        cells.append((ix, iy))
        formations.append(row[-4])
        status.append(row[-1])

    n = len(t)
    return TrajectoryTable(
        t=np.array(t, dtype=float), positions=np.array(pos, dtype=float).reshape(n, r, 2),
        inputs=np.array(inputs, dtype=float).reshape(n, r, 2), target_cells=tuple(cells),
        formations=tuple(formations), delta1=np.array(d1), delta2=np.array(d2),
        qp_status=tuple(status))


def write_monitor_json(report: MonitorReport, path: PathLike) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def format_trace(log: TrajectoryLog, env_vars: Sequence[str]) -> str:
    """One line per symbolic step: step, cell, formation, env bits, action."""
    lines = []
    for entry in log.symbolic_trace:
        ix, iy = entry.state.cell
        bits = "".join("1" if v in entry.env else "0" for v in env_vars) or "-"
        lines.append(f"{entry.step} {ix},{iy} {entry.state.formation} {bits} {entry.action}")
    return "".join(line + "\n" for line in lines)


def write_trace(log: TrajectoryLog, env_vars: Sequence[str], path: PathLike) -> None:
    Path(path).write_text(format_trace(log, env_vars))


_ASSIGN_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(\S+)")
_BOOLS = {"true": True, "1": True, "false": False, "0": False}


def parse_env_script(text: str) -> dict[int, dict[str, bool]]:
    """Parse lines of ``step=K var=value ...``; '#' starts a comment."""
    script: dict[int, dict[str, bool]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        pairs = [_ASSIGN_RE.fullmatch(f) for f in fields]
        if not all(pairs):
            raise ValueError(f"line {lineno}: expected name=value pairs: {raw!r}")
        values = dict(m.groups() for m in pairs if m)  # type: ignore[misc]
        if "step" not in values:
            raise ValueError(f"line {lineno}: missing step=K: {raw!r}")
        try:
            step = int(values.pop("step"))
        except ValueError:
            raise ValueError(f"line {lineno}: step must be an integer: {raw!r}") from None
        if step < 0:
            raise ValueError(f"line {lineno}: step must not be negative")
        entry = script.setdefault(step, {})
        for name, value in values.items():
            if value.lower() not in _BOOLS:
                raise ValueError(f"line {lineno}: {name} must be true or false, got {value!r}")
            entry[name] = _BOOLS[value.lower()]
    return script


def load_env_script(path: PathLike) -> dict[int, dict[str, bool]]:
    return parse_env_script(Path(path).read_text())
