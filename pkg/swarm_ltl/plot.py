"""Planar SVG view of a world and a recorded trajectory."""

import logging
import math
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.axes import Axes  # noqa: E402
from matplotlib.patches import Ellipse, Polygon, Rectangle  # noqa: E402

from .io import TrajectoryTable  # noqa: E402
from .world import GridWorld, ObstacleEllipse  # noqa: E402

logger = logging.getLogger(__name__)

CELL_COLOURS = {"freespace": "#ffffff", "home": "#b7e4c7", "goal": "#ffd6a5",
                "obstacle": "#adb5bd"}
ROBOT_COLOURS = ("#1d3557", "#e63946", "#2a9d8f", "#f4a261", "#6a4c93", "#8d99ae")


def _ellipse_patch(o: ObstacleEllipse) -> Ellipse:
    # Semi-axes are 1/sqrt(eigenvalue) along the eigenvectors of P.
    eigvals, eigvecs = np.linalg.eigh(o.P)
    width, height = 2 / np.sqrt(eigvals)
    angle = math.degrees(math.atan2(eigvecs[1, 0], eigvecs[0, 0]))
    return Ellipse(tuple(o.eta), width, height, angle=angle, facecolor="#495057",
                   alpha=0.5, edgecolor="#212529")


def draw_world(ax: Axes, world: GridWorld) -> None:
    s = world.cell_size
    for ix, iy in world.cells():
        labels = world.cell_labels[(ix, iy)]
        region = next(iter(labels & CELL_COLOURS.keys()))
        x0, y0 = world.origin + s * np.array((ix, iy))
        rect = Rectangle((x0, y0), s, s, facecolor=CELL_COLOURS[region], edgecolor="#6c757d",
                         linewidth=0.5)
        rect.set_gid(f"cell-{ix}-{iy}")
        ax.add_patch(rect)
        if region in ("home", "goal"):
            cx, cy = world.cell_centre((ix, iy))
            ax.text(cx, cy, region, ha="center", va="center", fontsize=7)
    for k, o in enumerate(world.obstacles):
        patch = _ellipse_patch(o)
        patch.set_gid(f"obstacle-{k}")
        ax.add_patch(patch)
    xmin, xmax, ymin, ymax = world.bounds()
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_aspect("equal")


def draw_trajectory(ax: Axes, table: TrajectoryTable) -> None:
    for i in range(table.r):
        (line,) = ax.plot(table.positions[:, i, 0], table.positions[:, i, 1],
                          color=ROBOT_COLOURS[i % len(ROBOT_COLOURS)], linewidth=1.0)
        line.set_gid(f"robot-{i}")
    for n, k in enumerate(table.step_starts()):
        snapshot = Polygon(table.positions[k], closed=True, fill=False, linestyle="--",
                           linewidth=0.6, edgecolor="#343a40")
        snapshot.set_gid(f"formation-{n}")
        ax.add_patch(snapshot)


def plot_svg(world: GridWorld, table: Optional[TrajectoryTable],
             path: Union[str, Path]) -> None:
    """Write the world, and the trajectory if given, as a reproducible SVG."""
    with plt.rc_context({"svg.hashsalt": "swarm-ltl", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 6))
        try:
            draw_world(ax, world)
            if table is not None and len(table):
                draw_trajectory(ax, table)
            ax.set_xlabel("x [m]")
            ax.set_ylabel("y [m]")
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.info("Wrote %s", path)
