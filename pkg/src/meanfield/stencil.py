"""Ghost-closed 5-point stencils on the Free cells of a :class:`Grid2D`.

Wall faces mirror the cell value (zero normal derivative), exit faces read a
prescribed ghost value, periodic faces wrap. Vectors here are indexed by Free
cell, in the order of ``grid.free_flat``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import Grid2D

# +1 for forward slots (D+ = (w_nb - w)/h), -1 for backward slots (D- = (w - w_nb)/h)
SLOT_SIGN = np.array([1.0, -1.0, 1.0, -1.0])


def neighbor_values(grid: Grid2D, w: np.ndarray, exit_value: float = 0.0) -> np.ndarray:
    """Neighbour value in each of the four slots, shape ``(4, n_free)``."""
    out = np.empty((4, w.size))
    for k in range(4):
        nb = grid.neighbor[k]
        vals = np.where(nb >= 0, w[np.maximum(nb, 0)], w)
        out[k] = np.where(grid.is_exit_face[k], exit_value, vals)
    return out


def one_sided_differences(grid: Grid2D, w: np.ndarray, exit_value: float = 0.0) -> np.ndarray:
    """``(D+x w, D-x w, D+y w, D-y w)`` at every Free cell, shape ``(4, n_free)``."""
    nbv = neighbor_values(grid, w, exit_value)
    return SLOT_SIGN[:, None] * (nbv - w[None, :]) / grid.h


def laplacian_matrix(grid: Grid2D) -> sp.csr_matrix:
    """5-point Laplacian on Free cells with zero ghost values at exits.

    A nonzero exit ghost ``g`` adds ``g * exit_face_count / h**2`` to ``L @ w``.
    """
    n = grid.n_free
    inv_h2 = 1.0 / (grid.h * grid.h)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    idx = np.arange(n)
    for k in range(4):
        nb = grid.neighbor[k]
        has = nb >= 0
        rows.append(idx[has])
        cols.append(nb[has])
        vals.append(np.full(has.sum(), inv_h2))
        diag -= inv_h2 * (has | grid.is_exit_face[k])
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    return mat.tocsr()


def exit_face_count(grid: Grid2D) -> np.ndarray:
    return grid.is_exit_face.sum(axis=0).astype(float)


class ImplicitDiffusion:
    """Factorized ``I - dt * nu * L``; shared by the backward and forward sweeps.

    The matrix is symmetric and an M-matrix for ``nu >= 0``, ``dt > 0``.
    """

    def __init__(self, grid: Grid2D, nu: float, dt: float):
        if dt <= 0 or nu < 0:
            raise ValueError("need dt > 0 and nu >= 0")
        self.grid, self.nu, self.dt = grid, nu, dt
        self.lap = laplacian_matrix(grid)
        self.exit_count = exit_face_count(grid)
        mat = sp.identity(grid.n_free, format="csc") - (dt * nu) * self.lap.tocsc()
        self.matrix = mat
        self._lu = splu(mat.tocsc()) if nu > 0 else None

    def matches(self, grid: Grid2D, nu: float, dt: float) -> bool:
        return self.grid is grid and self.nu == nu and self.dt == dt

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.array(rhs, dtype=float)
        out = self._lu.solve(np.asarray(rhs, dtype=float))
        assert np.all(np.isfinite(out)), "implicit diffusion solve produced nonfinite values"
        return out


def get_diffusion(cache: ImplicitDiffusion | None, grid: Grid2D, nu: float, dt: float) -> ImplicitDiffusion:
    if cache is not None and cache.matches(grid, nu, dt):
        return cache
    return ImplicitDiffusion(grid, nu, dt)
