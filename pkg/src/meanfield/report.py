"""Snapshot CSVs, manifest and density heatmaps for a finished run."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CellRole, Grid2D


def snapshot_label(t: float) -> str:
    """File-name form of a time: ``15.0 -> '15'``, ``0.5 -> '0.5'``."""
    return format(float(t), "g")


@dataclass
class SnapshotStats:
    time: float
    mass: float
    m_min: float
    m_max: float
    entropy: float


def snapshot_stats(grid: Grid2D, m: np.ndarray, t: float, length_unit: float = 1.0) -> SnapshotStats:
    """Statistics of one density slice, in reporting units.

    The mass is ``area * sum(values)`` over Free cells in row-major order,
    which is exactly what a reader of the CSV recomputes.
    """
    values = grid.restrict(m)
    area = grid.cell_area * length_unit ** 2
    pos = values[values > 0]
    return SnapshotStats(time=float(t), mass=float(area * np.sum(values)),
                         m_min=float(values.min()), m_max=float(values.max()),
                         entropy=float(area * np.sum(pos * np.log(pos))))


def snapshot_csv(grid: Grid2D, field: np.ndarray, length_unit: float = 1.0) -> str:
    """``x,y,value`` rows for Free cells, row-major, coordinates at cell centres."""
    x, y = grid.cell_centers()
    free = grid.free_mask
    xs = (x * length_unit)[free]
    ys = (y * length_unit)[free]
    vals = np.asarray(field, dtype=float)[free]
    buf = io.StringIO()
    buf.write("x,y,value\n")
    for a, b, v in zip(xs.tolist(), ys.tolist(), vals.tolist()):
        buf.write(f"{a!r},{b!r},{v!r}\n")
    return buf.getvalue()


def read_snapshot_csv(path: str | Path) -> np.ndarray:
    """Load a snapshot back as an ``(n, 3)`` array of ``x, y, value``."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _series(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def manifest_text(entries: list[tuple[str, str]], stats: list[SnapshotStats],
                  residuals: list[float]) -> str:
    lines = [f"{k}={v}" for k, v in entries]
    lines.append(f"residual_history={_series(residuals)}")
    lines.append(f"times={_series(s.time for s in stats)}")
    lines.append(f"mass={_series(s.mass for s in stats)}")
    lines.append(f"min={_series(s.m_min for s in stats)}")
    lines.append(f"max={_series(s.m_max for s in stats)}")
    lines.append(f"entropy={_series(s.entropy for s in stats)}")
    return "\n".join(lines) + "\n"


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def density_heatmap(grid: Grid2D, m: np.ndarray, path: str | Path, title: str, vmax: float,
                    length_unit: float = 1.0) -> None:
    """Render a density slice with obstacles grey and exits green."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap

    ext = grid.side_length * length_unit
    extent = (0.0, ext, 0.0, grid.h * grid.ny * length_unit)
    fig, ax = plt.subplots(figsize=(5.0, 4.2), dpi=100)
    shown = np.ma.masked_where(~grid.free_mask, m)
    img = ax.imshow(shown, cmap="viridis", vmin=0.0, vmax=vmax, extent=extent,
                    origin="upper", interpolation="nearest")
    roles = np.ma.masked_where(grid.roles == CellRole.FREE, grid.roles)
    ax.imshow(roles, cmap=ListedColormap(["0.55", "tab:green"]), vmin=CellRole.OBSTACLE, vmax=CellRole.EXIT,
              extent=extent, origin="upper", interpolation="nearest")
    fig.colorbar(img, ax=ax, label="density")
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
