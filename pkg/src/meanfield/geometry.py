"""Cell-centred lattices: the periodic torus and walled halls with obstacles and exits.

Fields are plain ``(ny, nx)`` float arrays indexed ``[row, column]``. Only Free
cells carry unknowns; Obstacle and Exit cells are ghost-value providers.

Row index ``j`` of the array is row ``j`` of the geometry text (top line first),
so a cell's centre sits at ``x = (i + 0.5) h`` and ``y = (ny - j - 0.5) h``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Topology(enum.Enum):
    PERIODIC = "periodic"
    WALLED = "walled"


class CellRole(enum.IntEnum):
    FREE = 0
    OBSTACLE = 1
    EXIT = 2


class FaceKind(enum.Enum):
    INTERIOR = "interior"
    WALL_MIRROR = "wall_mirror"
    EXIT_GHOST = "exit_ghost"
    PERIODIC_WRAP = "periodic_wrap"


class GeometryError(ValueError):
    """Base class for geometry parse and validation errors."""


class RaggedRowsError(GeometryError):
    pass


class UnknownCharacterError(GeometryError):
    pass


class NoFreeCellError(GeometryError):
    pass


class UnreachableExitError(GeometryError):
    pass


_CHAR_TO_ROLE = {".": CellRole.FREE, "#": CellRole.OBSTACLE, "E": CellRole.EXIT}
_ROLE_TO_CHAR = {v: k for k, v in _CHAR_TO_ROLE.items()}

# Stencil slots, in the order used for one-sided differences everywhere:
# (D+x, D-x, D+y, D-y) with x along columns and y along rows.
DIRECTIONS: tuple[tuple[int, int], ...] = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Square-cell lattice with per-cell roles.

    Build with :func:`parse_geometry` or :meth:`Grid2D.torus` rather than directly.
    """

    nx: int
    ny: int
    h: float
    topology: Topology
    roles: np.ndarray
    side_length: float = field(init=False)

    # derived stencil tables, filled in __post_init__
    free_index: np.ndarray = field(init=False, repr=False)
    free_flat: np.ndarray = field(init=False, repr=False)
    neighbor: np.ndarray = field(init=False, repr=False)
    is_exit_face: np.ndarray = field(init=False, repr=False)
    is_wall_face: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("node counts must be positive")
        if not self.h > 0:
            raise GeometryError("spacing must be positive")
        roles = np.asarray(self.roles, dtype=np.int8)
        if roles.shape != (self.ny, self.nx):
            raise GeometryError(f"roles shape {roles.shape} != ({self.ny}, {self.nx})")
        roles.setflags(write=False)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "side_length", self.h * self.nx)
        if self.topology is Topology.PERIODIC and np.any(roles != CellRole.FREE):
            raise GeometryError("periodic grids cannot hold obstacle or exit cells")
        self._build_tables()

    @classmethod
    def torus(cls, n: int, side: float = 1.0, ny: int | None = None) -> Grid2D:
        ny = n if ny is None else ny
        return cls(nx=n, ny=ny, h=side / n, topology=Topology.PERIODIC,
                   roles=np.zeros((ny, n), dtype=np.int8))

    def _build_tables(self):
        ny, nx = self.ny, self.nx
        free_mask = self.roles == CellRole.FREE
        free_flat = np.flatnonzero(free_mask.ravel())
        index = np.full(ny * nx, -1, dtype=np.int64)
        index[free_flat] = np.arange(free_flat.size)
        rows, cols = np.divmod(free_flat, nx)

        n_free = free_flat.size
        neighbor = np.full((4, n_free), -1, dtype=np.int64)
        exit_face = np.zeros((4, n_free), dtype=bool)
        wall_face = np.zeros((4, n_free), dtype=bool)
        periodic = self.topology is Topology.PERIODIC
        for k, (dj, di) in enumerate(DIRECTIONS):
            r, c = rows + dj, cols + di
            if periodic:
                r %= ny
                c %= nx
                neighbor[k] = index[r * nx + c]
                continue
            inside = (r >= 0) & (r < ny) & (c >= 0) & (c < nx)
            role = np.full(n_free, CellRole.OBSTACLE, dtype=np.int8)
            role[inside] = self.roles[r[inside], c[inside]]
            free_nb = inside & (role == CellRole.FREE)
            neighbor[k, free_nb] = index[r[free_nb] * nx + c[free_nb]]
            exit_face[k] = role == CellRole.EXIT
            wall_face[k] = role == CellRole.OBSTACLE

        for name, arr in (("free_index", index), ("free_flat", free_flat),
                          ("neighbor", neighbor), ("is_exit_face", exit_face),
                          ("is_wall_face", wall_face)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_free(self) -> int:
        return int(self.free_flat.size)

    @property
    def free_mask(self) -> np.ndarray:
        return self.roles == CellRole.FREE

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` arrays of shape ``(ny, nx)`` in meters."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        x = (i + 0.5) * self.h
        y = (self.ny - j - 0.5) * self.h
        return np.meshgrid(x, y)

    def restrict(self, field_: np.ndarray) -> np.ndarray:
        """Full ``(ny, nx)`` field -> vector over Free cells."""
        field_ = np.asarray(field_, dtype=float)
        if field_.shape != (self.ny, self.nx):
            raise ValueError(f"field shape {field_.shape} != ({self.ny}, {self.nx})")
        return field_.ravel()[self.free_flat]

    def prolong(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Vector over Free cells -> full ``(ny, nx)`` field, ``fill`` elsewhere."""
        out = np.full(self.ny * self.nx, fill, dtype=float)
        out[self.free_flat] = values
        return out.reshape(self.ny, self.nx)

    def to_text(self) -> str:
        return "\n".join("".join(_ROLE_TO_CHAR[CellRole(v)] for v in row)
                         for row in self.roles)

    def __repr__(self):
        return (f"Grid2D(nx={self.nx}, ny={self.ny}, h={self.h:g}, "
                f"topology={self.topology.value}, free={self.n_free})")


def parse_geometry(text: str, side_length: float = 50.0) -> Grid2D:
    """Parse a character map of '.', '#' and 'E' into a walled grid.

    A leading line starting with ';' is a comment. The spacing is
    ``side_length / ncols``. Raises a :class:`GeometryError` subclass on
    ragged rows, unknown characters, no free cell, or an exit that no free
    cell can reach.
    """
    lines = text.splitlines()
    if lines and lines[0].startswith(";"):
        lines = lines[1:]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise NoFreeCellError("empty geometry")

    width = len(lines[0])
    for lineno, line in enumerate(lines, 1):
        if len(line) != width:
            raise RaggedRowsError(f"row {lineno} has {len(line)} columns, expected {width}")
        for col, ch in enumerate(line, 1):
            if ch not in _CHAR_TO_ROLE:
                raise UnknownCharacterError(f"unknown character {ch!r} at row {lineno}, column {col}")

    roles = np.array([[_CHAR_TO_ROLE[ch] for ch in line] for line in lines], dtype=np.int8)
    ny, nx = roles.shape
    if not np.any(roles == CellRole.FREE):
        raise NoFreeCellError("geometry has no free cell")
    exits = np.argwhere(roles == CellRole.EXIT)
    for j, i in exits:
        if 0 < j < ny - 1 and 0 < i < nx - 1:
            raise GeometryError(f"exit at row {j + 1}, column {i + 1} is not on the outer boundary")
    if exits.size == 0:
        raise UnreachableExitError("unreachable exit: geometry has no exit cell")
    _check_connectivity(roles)
    return Grid2D(nx=nx, ny=ny, h=side_length / nx, topology=Topology.WALLED, roles=roles)


def _check_connectivity(roles: np.ndarray):
    ny, nx = roles.shape
    free = np.argwhere(roles == CellRole.FREE)
    start = tuple(free[0])
    seen = np.zeros_like(roles, dtype=bool)
    seen[start] = True
    queue = deque([start])
    touches_exit = False
    while queue:
        j, i = queue.popleft()
        for dj, di in DIRECTIONS:
            r, c = j + dj, i + di
            if not (0 <= r < ny and 0 <= c < nx) or seen[r, c]:
                continue
            if roles[r, c] == CellRole.EXIT:
                touches_exit = True
            elif roles[r, c] == CellRole.FREE:
                seen[r, c] = True
                queue.append((r, c))
    if not touches_exit:
        raise UnreachableExitError("unreachable exit: no exit cell is adjacent to the free region")
    if seen.sum() != len(free):
        raise GeometryError("free cells do not form a single connected region")


def load_geometry(path: str | Path, side_length: float = 50.0) -> Grid2D:
    return parse_geometry(Path(path).read_text(encoding="utf-8"), side_length=side_length)


def face_kind(grid: Grid2D, node: tuple[int, int], direction: int) -> FaceKind:
    """Classify the face of Free ``node`` (row, col) in stencil slot ``direction``."""
    j, i = node
    if grid.roles[j, i] != CellRole.FREE:
        raise ValueError(f"node {node} is not a free cell")
    if grid.topology is Topology.PERIODIC:
        return FaceKind.PERIODIC_WRAP
    k = grid.free_index[j * grid.nx + i]
    if grid.is_exit_face[direction, k]:
        return FaceKind.EXIT_GHOST
    if grid.is_wall_face[direction, k]:
        return FaceKind.WALL_MIRROR
    return FaceKind.INTERIOR


def check_field(grid: Grid2D, values: np.ndarray, name: str = "field") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.ny, grid.nx):
        raise ValueError(f"{name} has shape {values.shape}, expected ({grid.ny}, {grid.nx})")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} has nonfinite values")
    return values
