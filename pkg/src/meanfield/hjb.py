"""Backward HJB time steps and terminal conditions for both game and control modes."""

from __future__ import annotations

import enum
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import stencil
from .geometry import CellRole, Grid2D, check_field
from .hamiltonian import (
    HamiltonianSpec,
    NonlocalHamiltonian,
    nonlocal_G,
    numerical_hamiltonian,
    upwind_gradsq,
)


class Mode(enum.Enum):
    MFG = "mfg"
    MFTC = "mftc"

    @classmethod
    def parse(cls, text: str | Mode) -> Mode:
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"mode must be 'mfg' or 'mftc', got {text!r}") from None


@dataclass
class HjbStepInput:
    u_next: np.ndarray
    m_now: np.ndarray
    nu: float
    dt: float
    mode: Mode
    spec: HamiltonianSpec
    grid: Grid2D
    exit_cost: float = 0.0
    forcing: np.ndarray | None = None   # extra explicit source, e.g. for manufactured solutions

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        self.mode = Mode.parse(self.mode)
        self.u_next = check_field(self.grid, self.u_next, "u_next")
        self.m_now = check_field(self.grid, self.m_now, "m_now")
        if np.any(self.grid.restrict(self.m_now) < 0):
            raise ValueError("m_now must be nonnegative on free cells")


def hjb_source(spec: HamiltonianSpec, grid: Grid2D, u_next: np.ndarray, m_now: np.ndarray,
               mode: Mode, exit_cost: float = 0.0) -> np.ndarray:
    """Explicit source on Free cells: the numerical Hamiltonian plus, in control mode,
    the coupling term ``m dH/dm`` (local) or ``G`` (nonlocal)."""
    q = stencil.one_sided_differences(grid, u_next, exit_cost)
    if isinstance(spec, NonlocalHamiltonian):
        spec.check_grid(grid)
        m_full = grid.prolong(m_now)
        congestion = grid.restrict(spec.congestion(m_full))
    else:
        congestion = m_now
    source = numerical_hamiltonian(spec, q, congestion)
    if mode is Mode.MFTC:
        gradpow = upwind_gradsq(q) ** (spec.beta / 2.0)
        if isinstance(spec, NonlocalHamiltonian):
            source = source + grid.restrict(nonlocal_G(spec, grid.prolong(m_now), grid.prolong(gradpow)))
        else:
            dHdm = (spec.alpha * spec.cH * gradpow / (spec.offset + m_now) ** (spec.alpha + 1.0)
                    + spec.F.deriv(m_now))
            source = source + m_now * dHdm
    return source


def backward_step_free(u_next: np.ndarray, m_now: np.ndarray, spec: HamiltonianSpec, grid: Grid2D,
                       diffusion: stencil.ImplicitDiffusion, mode: Mode, exit_cost: float = 0.0,
                       forcing: np.ndarray | None = None) -> np.ndarray:
    """Vector form of :func:`hjb_backward_step` on Free cells, with a prebuilt factorization."""
    dt = diffusion.dt
    source = hjb_source(spec, grid, u_next, m_now, mode, exit_cost)
    if forcing is not None:
        source = source + forcing
    # solve for the increment: A u = u_next + dt S + b  <=>  A (u - u_next) = dt S + b + dt nu L u_next,
    # which keeps constant states exact
    rhs = dt * source
    if diffusion.nu > 0:
        rhs = rhs + (dt * diffusion.nu) * (diffusion.lap @ u_next)
        if exit_cost != 0.0:
            rhs = rhs + dt * diffusion.nu * exit_cost * diffusion.exit_count / grid.h**2
    u = u_next + diffusion.solve(rhs)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("HJB step produced nonfinite values")
    return u


def hjb_backward_step(inp: HjbStepInput, diffusion: stencil.ImplicitDiffusion | None = None) -> np.ndarray:
    """Advance ``u`` from ``t + dt`` to ``t``.

    Solves ``(u - u_next)/dt = nu Lap_h u + S`` with the diffusion implicit and
    the source ``S`` evaluated on ``u_next``. Returns a full field; non-Free
    cells hold 0 (exit cost at exits).
    """
    grid = inp.grid
    diffusion = stencil.get_diffusion(diffusion, grid, inp.nu, inp.dt)
    forcing = None if inp.forcing is None else grid.restrict(inp.forcing)
    u = backward_step_free(grid.restrict(inp.u_next), grid.restrict(inp.m_now), inp.spec, grid,
                           diffusion, inp.mode, inp.exit_cost, forcing)
    out = grid.prolong(u)
    out[grid.roles == CellRole.EXIT] = inp.exit_cost
    return out


@dataclass(frozen=True)
class IndependentTerminal:
    """Terminal cost independent of the density."""

    u_T: np.ndarray | float = 0.0


@dataclass(frozen=True)
class LocalTerminal:
    """Terminal cost ``h(x, m(T, x))`` with its m-derivative; both take ``(x, y, m)`` arrays."""

    h: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dh_dm: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


TerminalSpec = IndependentTerminal | LocalTerminal


def terminal_condition(h_spec: TerminalSpec, m_T: np.ndarray, mode: Mode, grid: Grid2D) -> np.ndarray:
    """``u(T) = h`` for the game and ``h + m dh/dm`` for the control problem."""
    mode = Mode.parse(mode)
    m_T = np.asarray(m_T, dtype=float)
    if np.any(m_T < 0):
        raise ValueError("terminal density must be nonnegative")
    if isinstance(h_spec, IndependentTerminal):
        return np.broadcast_to(np.asarray(h_spec.u_T, dtype=float), m_T.shape).copy()
    x, y = grid.cell_centers()
    out = np.asarray(h_spec.h(x, y, m_T), dtype=float)
    if mode is Mode.MFTC:
        out = out + m_T * np.asarray(h_spec.dh_dm(x, y, m_T), dtype=float)
    return np.broadcast_to(out, m_T.shape).copy()
