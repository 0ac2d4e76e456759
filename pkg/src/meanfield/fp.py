"""Forward Fokker-Planck steps built as the transpose of the linearized HJB drift.

The transport operator is never discretized on its own. With ``c`` the four
slot derivatives of the numerical Hamiltonian, the HJB drift acting on a test
function ``w`` is ``(B w)_i = sum_k c_k,i (D_k w)_i`` and the density is moved by
``B^T``. This gives exact discrete mass balance and duality.
"""

from __future__ import annotations

import numpy as np

from . import stencil
from .geometry import Grid2D, check_field
from .hamiltonian import HamiltonianSpec, NonlocalHamiltonian, numerical_hamiltonian_grad


class CFLError(ValueError):
    """Explicit transport step too large to keep the density nonnegative."""

    def __init__(self, message: str, node: tuple[int, int], dt_max: float):
        super().__init__(message)
        self.node = node
        self.dt_max = dt_max


def transport_coefficients_free(spec: HamiltonianSpec, u: np.ndarray, m: np.ndarray, grid: Grid2D,
                                exit_cost: float = 0.0) -> np.ndarray:
    """Slot derivatives ``dH/dq_k`` on Free cells, shape ``(4, n_free)``."""
    q = stencil.one_sided_differences(grid, u, exit_cost)
    if isinstance(spec, NonlocalHamiltonian):
        spec.check_grid(grid)
        congestion = grid.restrict(spec.congestion(grid.prolong(m)))
    else:
        congestion = m
    coeffs = numerical_hamiltonian_grad(spec, q, congestion)
    coeffs[grid.is_wall_face] = 0.0
    return coeffs


def transport_coefficients(spec: HamiltonianSpec, u: np.ndarray, m: np.ndarray, grid: Grid2D,
                           exit_cost: float = 0.0) -> np.ndarray:
    """Slot derivatives of the numerical Hamiltonian at ``(D u, m)``.

    Returns an array of shape ``(4, ny, nx)`` in slot order (D+x, D-x, D+y, D-y);
    non-Free cells hold 0. Forward-slot entries are >= 0 and backward-slot
    entries <= 0. Wall faces carry 0 (no normal flux); exit faces keep theirs.
    """
    u = check_field(grid, u, "u")
    m = check_field(grid, m, "m")
    coeffs = transport_coefficients_free(spec, grid.restrict(u), grid.restrict(m), grid, exit_cost)
    return np.stack([grid.prolong(c) for c in coeffs])


def drift_apply(coeffs: np.ndarray, w: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``B w``: the linearized HJB drift on Free-cell vectors (exit ghosts 0)."""
    D = stencil.one_sided_differences(grid, w, 0.0)
    return np.sum(coeffs * D, axis=0)


def drift_transpose_apply(coeffs: np.ndarray, m: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``B^T m`` on Free-cell vectors.

    Slot ``k`` moves mass from a cell to its neighbour at rate
    ``sign_k c_k / h >= 0``; mass sent through an exit face leaves the domain.
    """
    n = m.size
    rate = stencil.SLOT_SIGN[:, None] * coeffs / grid.h
    flux = rate * m[None, :]
    out = -flux.sum(axis=0)
    for k in range(4):
        nb = grid.neighbor[k]
        has = nb >= 0
        out += np.bincount(nb[has], weights=flux[k, has], minlength=n)
    return out


def check_cfl(coeffs: np.ndarray, dt: float, grid: Grid2D) -> None:
    load = dt * np.abs(coeffs).sum(axis=0) / grid.h
    worst = int(np.argmax(load)) if load.size else 0
    if load.size and load[worst] > 1.0:
        flat = int(grid.free_flat[worst])
        node = divmod(flat, grid.nx)
        dt_max = dt / load[worst]
        raise CFLError(f"CFL violated at node (row, col)={node}: dt={dt:.6g} exceeds admissible {dt_max:.6g}",
                       node=node, dt_max=dt_max)


def forward_step_free(m_prev: np.ndarray, coeffs: np.ndarray, grid: Grid2D,
                      diffusion: stencil.ImplicitDiffusion) -> np.ndarray:
    dt = diffusion.dt
    check_cfl(coeffs, dt, grid)
    rhs = m_prev + dt * drift_transpose_apply(coeffs, m_prev, grid)
    m = diffusion.solve(rhs)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("FP step produced nonfinite values")
    if m.size and m.min() < -1e-12:
        raise ArithmeticError(f"FP step produced negative density {m.min():.3e} despite the CFL bound")
    return m


def fp_forward_step(m_prev: np.ndarray, coeffs: np.ndarray, nu: float, dt: float, grid: Grid2D,
                    diffusion: stencil.ImplicitDiffusion | None = None) -> np.ndarray:
    """Advance the density one step: ``(m - m_prev)/dt = nu Lap_h m + B^T m_prev``.

    ``coeffs`` is the ``(4, ny, nx)`` output of :func:`transport_coefficients`.
    Raises :class:`CFLError` if ``dt * sum_k |c_k| / h > 1`` anywhere.
    """
    m_prev = check_field(grid, m_prev, "m_prev")
    mv = grid.restrict(m_prev)
    if np.any(mv < -1e-12):
        raise ValueError("m_prev must be nonnegative")
    coeffs = np.asarray(coeffs, dtype=float)
    cv = np.stack([grid.restrict(c) for c in coeffs])
    diffusion = stencil.get_diffusion(diffusion, grid, nu, dt)
    return grid.prolong(forward_step_free(mv, cv, grid, diffusion))
