"""Damped forward-backward fixed point for the coupled HJB / Fokker-Planck system."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fp, hjb, stencil
from .geometry import CellRole, Grid2D, check_field
from .hamiltonian import HamiltonianSpec, NonlocalHamiltonian
from .hjb import IndependentTerminal, Mode, TerminalSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    nu: float = 0.012
    T: float = 50.0
    Nt: int = 500
    mode: Mode = Mode.MFG
    delta: float = 0.5
    tol: float = 1e-5
    max_iters: int = 200
    exit_cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.Nt < 1:
            raise ValueError("Nt must be at least 1")
        if not 0 < self.delta <= 1:
            raise ValueError("damping delta must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.T <= 0 or self.nu < 0:
            raise ValueError("need T > 0 and nu >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)


@dataclass
class Solution:
    """Trajectories of ``u`` and ``m`` as ``(Nt + 1, ny, nx)`` arrays."""

    grid: Grid2D
    config: SolverConfig
    spec: HamiltonianSpec
    u_traj: np.ndarray
    m_traj: np.ndarray
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.residual_history)

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    def step_at(self, t: float) -> int:
        """Index of the time slice nearest to ``t``."""
        return int(np.clip(round(t / self.config.dt), 0, self.config.Nt))


def residual(m_old: np.ndarray, m_new: np.ndarray) -> float:
    """Largest node-wise change over all time slices."""
    m_old = np.asarray(m_old)
    m_new = np.asarray(m_new)
    if m_old.shape != m_new.shape:
        raise ValueError(f"shape mismatch {m_old.shape} vs {m_new.shape}")
    if m_old.size == 0:
        return 0.0
    return float(np.max(np.abs(m_new - m_old)))


class _Sweeps:
    """Backward and forward sweeps on Free-cell vectors with a shared factorization."""

    def __init__(self, grid, m0, h_spec, spec, config):
        self.grid, self.h_spec, self.spec, self.config = grid, h_spec, spec, config
        self.m0 = grid.restrict(m0)
        self.diffusion = stencil.ImplicitDiffusion(grid, config.nu, config.dt)

    def terminal(self, m_T):
        full = hjb.terminal_condition(self.h_spec, self.grid.prolong(np.maximum(m_T, 0.0)),
                                      self.config.mode, self.grid)
        return self.grid.restrict(full)

    def backward(self, m_traj):
        cfg = self.config
        u = np.empty_like(m_traj)
        u[-1] = self.terminal(m_traj[-1])
        for n in range(cfg.Nt - 1, -1, -1):
            u[n] = hjb.backward_step_free(u[n + 1], np.maximum(m_traj[n], 0.0), self.spec, self.grid,
                                          self.diffusion, cfg.mode, cfg.exit_cost)
        return u

    def forward(self, u_traj):
        cfg = self.config
        m = np.empty_like(u_traj)
        m[0] = self.m0
        for n in range(cfg.Nt):
            coeffs = fp.transport_coefficients_free(self.spec, u_traj[n + 1], np.maximum(m[n], 0.0),
                                                    self.grid, cfg.exit_cost)
            m[n + 1] = fp.forward_step_free(m[n], coeffs, self.grid, self.diffusion)
        return m


def solve(grid: Grid2D, m0: np.ndarray, h_spec: TerminalSpec | None, spec: HamiltonianSpec,
          config: SolverConfig, m_init: np.ndarray | None = None) -> Solution:
    """Damped Picard iteration on the density trajectory.

    Each iteration solves HJB backward from the terminal condition with the
    current densities, then FP forward from ``m0`` with the new value
    function, and blends ``m <- (1 - delta) m + delta m_forward``. Stops when
    the blend changes ``m`` by less than ``tol`` everywhere. Non-convergence
    is reported through ``Solution.converged``, not raised.

    ``m_init`` optionally seeds the trajectory (``(Nt + 1, ny, nx)``); by
    default ``m0`` is frozen in time.
    """
    m0 = check_field(grid, m0, "m0")
    if np.any(grid.restrict(m0) < 0):
        raise ValueError("m0 must be nonnegative")
    if isinstance(spec, NonlocalHamiltonian):
        spec.check_grid(grid)
    h_spec = IndependentTerminal() if h_spec is None else h_spec
    sweeps = _Sweeps(grid, m0, h_spec, spec, config)

    if m_init is None:
        m_traj = np.tile(sweeps.m0, (config.Nt + 1, 1))
    else:
        m_traj = np.stack([grid.restrict(s) for s in m_init])
        m_traj[0] = sweeps.m0
    history: list[float] = []
    converged = False
    u_traj = None
    for it in range(config.max_iters):
        u_traj = sweeps.backward(m_traj)
        m_fwd = sweeps.forward(u_traj)
        m_next = (1.0 - config.delta) * m_traj + config.delta * m_fwd
        m_next[0] = sweeps.m0
        res = residual(m_traj, m_next)
        history.append(res)
        m_traj = m_next
        log.debug("iteration %d residual %.3e", it + 1, res)
        if not np.isfinite(res):
            raise FloatingPointError("nonfinite density during fixed-point iteration")
        if res < config.tol:
            converged = True
            break

    # report u consistent with the returned densities
    u_traj = sweeps.backward(m_traj)
    exit_mask = grid.roles == CellRole.EXIT
    u_full = np.stack([grid.prolong(s) for s in u_traj])
    u_full[:, exit_mask] = config.exit_cost
    m_full = np.stack([grid.prolong(s) for s in m_traj])
    m_full[0] = np.where(grid.free_mask, m0, 0.0)
    if not (np.all(np.isfinite(u_full)) and np.all(np.isfinite(m_full))):
        raise FloatingPointError("nonfinite field in solution")
    if not converged:
        log.warning("fixed point not reached after %d iterations (residual %.3e)",
                    config.max_iters, history[-1])
    return Solution(grid=grid, config=config, spec=spec, u_traj=u_full, m_traj=m_full,
                    residual_history=history, converged=converged)
