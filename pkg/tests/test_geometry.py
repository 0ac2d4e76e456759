from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield.geometry import (
    CellRole,
    FaceKind,
    Grid2D,
    RaggedRowsError,
    UnknownCharacterError,
    NoFreeCellError,
    UnreachableExitError,
    face_kind,
    parse_geometry,
)


def flood_reaches_exit(text):
    """Independent oracle: BFS over '.' cells from the first one, looking for an 'E'."""
    rows = text.splitlines()
    ny, nx = len(rows), len(rows[0])
    start = next((j, i) for j in range(ny) for i in range(nx) if rows[j][i] == ".")
    seen = {start}
    queue = deque([start])
    while queue:
        j, i = queue.popleft()
        for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            r, c = j + dj, i + di
            if 0 <= r < ny and 0 <= c < nx and (r, c) not in seen:
                if rows[r][c] == "E":
                    return True
                if rows[r][c] == ".":
                    seen.add((r, c))
                    queue.append((r, c))
    return False


def test_three_by_three_with_one_exit():
    grid = parse_geometry("...\n..E\n...")
    assert grid.n_free == 8
    assert int(np.sum(grid.roles == CellRole.EXIT)) == 1
    assert grid.nx == grid.ny == 3


def test_row_roles():
    grid = parse_geometry("..#E\n....", side_length=4.0)
    assert list(grid.roles[0]) == [CellRole.FREE, CellRole.FREE, CellRole.OBSTACLE, CellRole.EXIT]
    assert grid.h == 1.0


def test_sealed_exit_is_rejected():
    text = "...#E\n...##\n....."
    assert not flood_reaches_exit(text)
    with pytest.raises(UnreachableExitError, match="unreachable exit"):
        parse_geometry(text)


def test_reachable_exit_matches_flood_fill():
    text = "..#E\n...."
    assert flood_reaches_exit(text)
    parse_geometry(text)


@pytest.mark.parametrize("text,err", [
    ("...\n..\n..E", RaggedRowsError),
    ("..x\n..E", UnknownCharacterError),
    ("##E\n###", NoFreeCellError),
    ("...\n...", UnreachableExitError),
])
def test_parse_errors_are_distinct(text, err):
    with pytest.raises(err):
        parse_geometry(text)


def test_comment_line_and_spacing():
    grid = parse_geometry("; a hall\n....\n...E", side_length=2.0)
    assert grid.ny == 2 and grid.nx == 4
    assert grid.h == 0.5
    assert grid.side_length == 2.0


def test_periodic_grid_rejects_obstacles():
    roles = np.zeros((3, 3), dtype=np.int8)
    roles[1, 1] = CellRole.OBSTACLE
    with pytest.raises(ValueError):
        Grid2D(nx=3, ny=3, h=1.0, topology=Grid2D.torus(3).topology, roles=roles)


def test_face_kinds():
    torus = Grid2D.torus(4)
    assert all(face_kind(torus, (j, i), k) is FaceKind.PERIODIC_WRAP
               for j in range(4) for i in range(4) for k in range(4))
    grid = parse_geometry(".#..\n...E\n....")
    # slot order: +x, -x, +y(row+1), -y(row-1)
    assert face_kind(grid, (0, 0), 0) is FaceKind.WALL_MIRROR      # '#'
    assert face_kind(grid, (0, 0), 1) is FaceKind.WALL_MIRROR      # outside
    assert face_kind(grid, (0, 0), 2) is FaceKind.INTERIOR
    assert face_kind(grid, (1, 2), 0) is FaceKind.EXIT_GHOST
    assert face_kind(grid, (0, 3), 2) is FaceKind.EXIT_GHOST
    with pytest.raises(ValueError):
        face_kind(grid, (0, 1), 0)


def test_exit_off_boundary_rejected():
    with pytest.raises(ValueError, match="outer boundary"):
        parse_geometry("....\n.E..\n...E")


@st.composite
def walled_texts(draw):
    ny = draw(st.integers(2, 7))
    nx = draw(st.integers(2, 7))
    cells = draw(st.lists(st.sampled_from(".#"), min_size=nx * ny, max_size=nx * ny))
    rows = ["".join(cells[j * nx:(j + 1) * nx]) for j in range(ny)]
    # always put a free cell with an exit next to it in the first column
    rows[0] = "E" + rows[0][1:]
    rows[1] = "." + rows[1][1:]
    return "\n".join(rows)


def _parse_or_none(text):
    try:
        return parse_geometry(text)
    except ValueError:
        return None


@settings(max_examples=60, deadline=None)
@given(walled_texts())
def test_round_trip_serialization(text):
    grid = _parse_or_none(text)
    if grid is not None:
        assert grid.to_text() == text


@settings(max_examples=60, deadline=None)
@given(walled_texts())
def test_face_kinds_transpose(text):
    grid = _parse_or_none(text)
    rows = text.splitlines()
    transposed = "\n".join("".join(r[i] for r in rows) for i in range(len(rows[0])))
    tgrid = _parse_or_none(transposed)
    if grid is None or tgrid is None:
        return
    swap = {0: 2, 1: 3, 2: 0, 3: 1}
    for j, i in zip(*np.nonzero(grid.roles == CellRole.FREE)):
        for k in range(4):
            assert face_kind(grid, (j, i), k) is face_kind(tgrid, (i, j), swap[k])
