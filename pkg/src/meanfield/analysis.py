"""Uniqueness certificates and runtime diagnostics.

The convexity conditions for uniqueness quantify over every ``(x, p, m)``;
here they are checked on sampled boxes, so a pass is evidence, not proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fp, hjb, stencil
from .geometry import Grid2D
from .hamiltonian import (
    LocalHamiltonian,
    ham_cross_mp,
    ham_deriv_m,
    ham_deriv_mm,
    ham_grad_p,
    ham_hess_p,
    legendre_cost,
)

PD_RELATIVE_PIVOT = 1e-10


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``f(v, m)`` obtained from a local Hamiltonian by Legendre transform.

    With ``beta == 2`` everything is closed form:
    ``f = |v|^2 (offset + m)^alpha / (4 cH) + F(m)``. Other exponents fall
    back to finite differences of the numerically maximized transform.
    """

    spec: LocalHamiltonian
    fd_step: float = 1e-4

    @property
    def analytic(self) -> bool:
        return self.spec.beta == 2.0

    def _k(self):
        return 1.0 / (4.0 * self.spec.cH)

    def value(self, v, m) -> float:
        return legendre_cost(self.spec, v, m)

    def deriv_m(self, v, m) -> float:
        sp = self.spec
        if self.analytic:
            v = np.asarray(v, dtype=float)
            s = sp.offset + m
            return float(self._k() * sp.alpha * (v @ v) * s ** (sp.alpha - 1.0) + sp.F.deriv(m))
        e = self.fd_step * max(1.0, m)
        return (self.value(v, m + e) - self.value(v, m - e)) / (2 * e)

    def deriv_mm(self, v, m) -> float:
        sp = self.spec
        if self.analytic:
            v = np.asarray(v, dtype=float)
            s = sp.offset + m
            return float(self._k() * sp.alpha * (sp.alpha - 1.0) * (v @ v) * s ** (sp.alpha - 2.0)
                         + sp.F.deriv2(m))
        e = self.fd_step * max(1.0, m)
        return (self.value(v, m + e) - 2 * self.value(v, m) + self.value(v, m - e)) / (e * e)

    def cross_mv(self, v, m) -> np.ndarray:
        """``d/dm grad_v f``."""
        sp = self.spec
        v = np.asarray(v, dtype=float)
        if self.analytic:
            return 2.0 * self._k() * sp.alpha * v * (sp.offset + m) ** (sp.alpha - 1.0)
        e = self.fd_step * max(1.0, m)
        return (self.grad_v(v, m + e) - self.grad_v(v, m - e)) / (2 * e)

    def grad_v(self, v, m) -> np.ndarray:
        sp = self.spec
        v = np.asarray(v, dtype=float)
        if self.analytic:
            return 2.0 * self._k() * v * (sp.offset + m) ** sp.alpha
        e = self.fd_step * max(1.0, float(np.abs(v).max()))
        out = np.empty(2)
        for i in range(2):
            d = np.zeros(2)
            d[i] = e
            out[i] = (self.value(v + d, m) - self.value(v - d, m)) / (2 * e)
        return out

    def hess_vv(self, v, m) -> np.ndarray:
        sp = self.spec
        v = np.asarray(v, dtype=float)
        if self.analytic:
            return 2.0 * self._k() * (sp.offset + m) ** sp.alpha * np.eye(2)
        e = self.fd_step * max(1.0, float(np.abs(v).max()))
        out = np.empty((2, 2))
        for i in range(2):
            d = np.zeros(2)
            d[i] = e
            out[:, i] = (self.grad_v(v + d, m) - self.grad_v(v - d, m)) / (2 * e)
        return 0.5 * (out + out.T)


def theta_matrix(cost: CostSpec, v, m: float) -> np.ndarray:
    """Hessian of ``m f(v, m)`` in the ``(m, v)`` variables, with the v-rows scaled by ``m``.

    ``[[d2/dm2 (m f), m d/dm grad_v f^T], [m d/dm grad_v f, m D2_vv f]]``.
    """
    if not m > 0:
        raise ValueError("theta_matrix needs m > 0")
    v = np.asarray(v, dtype=float)
    out = np.empty((3, 3))
    out[0, 0] = 2.0 * cost.deriv_m(v, m) + m * cost.deriv_mm(v, m)
    cross = m * cost.cross_mv(v, m)
    out[0, 1:] = cross
    out[1:, 0] = cross
    out[1:, 1:] = m * cost.hess_vv(v, m)
    return out


def schur_complement(mat: np.ndarray) -> float:
    """Schur complement of the lower-right block in the leading entry."""
    mat = np.asarray(mat, dtype=float)
    b = mat[0, 1:]
    return float(mat[0, 0] - b @ np.linalg.solve(mat[1:, 1:], b))


def theta_schur_factor(cost: CostSpec, v, m: float) -> float:
    """Schur complement of Theta divided by ``k alpha |v|^2 (c + m)^(alpha - 2)``, with k = 1/(4 cH).

    For constant F this is ``2 c + m (1 - alpha)``, which fixes the sign of the
    complement; needs ``beta == 2``, ``alpha > 0`` and ``v != 0``.
    """
    sp = cost.spec
    v = np.asarray(v, dtype=float)
    if not cost.analytic or sp.alpha <= 0 or not np.any(v):
        raise ValueError("Schur factor needs beta == 2, alpha > 0 and v != 0")
    scale = sp.alpha * (v @ v) * (sp.offset + m) ** (sp.alpha - 2.0) / (4.0 * sp.cH)
    return schur_complement(theta_matrix(cost, v, m)) / scale


def mfg_condition_matrix(spec: LocalHamiltonian, p, m: float) -> np.ndarray:
    """``[[2 dH/dm, -d/dm grad_p H^T], [-d/dm grad_p H, -2 D2_pp H]]`` at ``(p, m)``."""
    if not m > 0:
        raise ValueError("mfg_condition_matrix needs m > 0")
    p = np.asarray(p, dtype=float)
    out = np.empty((3, 3))
    out[0, 0] = 2.0 * ham_deriv_m(spec, p, m)
    cross = -ham_cross_mp(spec, p, m)
    out[0, 1:] = cross
    out[1:, 0] = cross
    out[1:, 1:] = -2.0 * ham_hess_p(spec, p, m)
    return out


def is_positive_definite(mat: np.ndarray) -> bool:
    """Symmetric elimination without pivoting; every pivot must exceed
    ``1e-10 * max|a_ij|``."""
    a = np.array(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = float(np.abs(a).max()) if a.size else 0.0
    if np.abs(a - a.T).max(initial=0.0) > 1e-12 * max(1.0, scale):
        raise ValueError("matrix is not symmetric")
    if scale == 0.0:
        return False
    threshold = PD_RELATIVE_PIVOT * scale
    n = a.shape[0]
    for k in range(n):
        pivot = a[k, k]
        if not pivot > threshold:
            return False
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:]) / pivot
    return True


def mH_second_m_derivative(spec: LocalHamiltonian, p, m):
    """``d2/dm2 (m H(p, m)) = 2 dH/dm + m d2H/dm2``."""
    return 2.0 * ham_deriv_m(spec, p, m) + np.asarray(m) * ham_deriv_mm(spec, p, m)


def quadratic_form_Q(spec: LocalHamiltonian, m: np.ndarray, p: np.ndarray, mu: np.ndarray,
                     pi: np.ndarray, h: float = 1.0) -> float:
    """Second variation ``D2_mm(int m H)(mu, mu) - D2_pp(int m H)(pi, pi)`` by midpoint quadrature.

    ``m``, ``mu`` have shape ``(ny, nx)``; ``p``, ``pi`` have shape ``(ny, nx, 2)``.
    """
    if not isinstance(spec, LocalHamiltonian):
        raise TypeError("quadratic_form_Q is defined for local Hamiltonians only")
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise ValueError("quadratic_form_Q needs m > 0 everywhere")
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    d2m = mH_second_m_derivative(spec, p, m)
    hess = ham_hess_p(spec, p, m)
    pHp = np.einsum("...i,...ij,...j->...", pi, hess, pi)
    return float(h * h * np.sum(d2m * mu * mu - m * pHp))


# ---------------------------------------------------------------- certificates


@dataclass
class SamplingBox:
    samples: int = 2000
    seed: int = 0
    m_min: float = 1e-3
    m_max: float = 10.0
    v_min: float = 0.1
    v_max: float = 10.0

    def draw(self):
        rng = np.random.default_rng(self.seed)
        m = rng.uniform(self.m_min, self.m_max, self.samples)
        r = rng.uniform(self.v_min, self.v_max, self.samples)
        ang = rng.uniform(0.0, 2.0 * np.pi, self.samples)
        vec = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        return vec, m


@dataclass
class Certificate:
    name: str
    checked: int
    violations: int
    worst: tuple | None = None

    @property
    def holds(self) -> bool:
        return self.violations == 0


def _certify(name, pairs, predicate):
    bad = 0
    first = None
    for vec, m in pairs:
        if not predicate(vec, m):
            bad += 1
            if first is None:
                first = (tuple(float(x) for x in vec), float(m))
    return Certificate(name, len(pairs), bad, first)


def uniqueness_certificates(spec: LocalHamiltonian, box: SamplingBox) -> list[Certificate]:
    """Sampled checks of the sufficient uniqueness conditions for a local Hamiltonian."""
    vecs, ms = box.draw()
    pairs = list(zip(vecs, ms))
    certs = [
        _certify("strict concavity of H in p", pairs,
                 lambda p, m: is_positive_definite(-ham_hess_p(spec, p, m))),
        _certify("strict convexity of m -> m H in m", pairs,
                 lambda p, m: float(mH_second_m_derivative(spec, p, m)) > 0),
        _certify("mean field game condition matrix positive definite", pairs,
                 lambda p, m: is_positive_definite(mfg_condition_matrix(spec, p, m))),
    ]
    if spec.cH > 0:
        cost = CostSpec(spec)
        certs.append(_certify("Theta(v, m) positive definite", pairs,
                              lambda v, m: is_positive_definite(theta_matrix(cost, v, m))))
    return certs


# ---------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticsReport:
    times: np.ndarray
    mass: np.ndarray
    m_min: np.ndarray
    m_max: np.ndarray
    entropy: np.ndarray
    energy_pairing: float | None = None
    extra: dict = field(default_factory=dict)


def _entropy(m):
    pos = m > 0
    out = np.zeros_like(m)
    out[pos] = m[pos] * np.log(m[pos])
    return out


def run_diagnostics(sol, grid: Grid2D | None = None, other=None) -> DiagnosticsReport:
    """Mass, extrema and entropy per time slice; with ``other``, the energy pairing of two solutions."""
    grid = sol.grid if grid is None else grid
    free = grid.free_mask
    m = sol.m_traj[:, free]
    area = grid.cell_area
    report = DiagnosticsReport(
        times=sol.times,
        mass=area * m.sum(axis=1),
        m_min=m.min(axis=1),
        m_max=m.max(axis=1),
        entropy=area * _entropy(m).sum(axis=1),
    )
    if other is not None:
        report.energy_pairing = energy_pairing(sol, other, grid)
    return report


def energy_pairing(sol1, sol2, grid: Grid2D, spec=None) -> float:
    """Discrete counterpart of the two-solution energy identity.

    With ``A = I - dt nu Lap_h`` the scheme gives, summed over time steps,

        <du_T, dm_T> - <du_0, dm_0>
            + dt sum_n [ <A^-1 dS_n, dm_n> - sum_k <d(m c_k)_n, D_k A^-1 du_{n+1}> ] = 0

    where ``d`` is the difference between the two solutions, ``S`` the HJB
    source (Hamiltonian plus coupling term) and ``c`` the transport
    coefficients. The returned value is the left side times the cell area; it
    vanishes when both solutions are fixed points of the same scheme, up to the
    fixed-point tolerance, and is exactly 0 for identical solutions.
    """
    spec = sol1.spec if spec is None else spec
    cfg = sol1.config
    exit_cost = cfg.exit_cost
    area = grid.cell_area
    r = grid.restrict
    diffusion = stencil.ImplicitDiffusion(grid, cfg.nu, cfg.dt)

    def slice_terms(sol, n):
        u_next = r(sol.u_traj[n + 1])
        mn = np.maximum(r(sol.m_traj[n]), 0.0)
        S = hjb.hjb_source(spec, grid, u_next, mn, cfg.mode, exit_cost)
        c = fp.transport_coefficients_free(spec, u_next, mn, grid, exit_cost)
        return u_next, mn, S, mn * c

    total = 0.0
    for n in range(cfg.Nt):
        u1, m1, S1, f1 = slice_terms(sol1, n)
        u2, m2, S2, f2 = slice_terms(sol2, n)
        w = diffusion.solve(u1 - u2)
        Dw = stencil.one_sided_differences(grid, w, 0.0)
        E = diffusion.solve(S1 - S2) @ (m1 - m2) - np.sum((f1 - f2) * Dw)
        total += cfg.dt * E
    du_T = r(sol1.u_traj[-1]) - r(sol2.u_traj[-1])
    dm_T = r(sol1.m_traj[-1]) - r(sol2.m_traj[-1])
    du_0 = r(sol1.u_traj[0]) - r(sol2.u_traj[0])
    dm_0 = r(sol1.m_traj[0]) - r(sol2.m_traj[0])
    return float(area * (du_T @ dm_T - du_0 @ dm_0 + total))


def legendre_pair(spec: LocalHamiltonian, p, m):
    """Velocity ``v* = grad_p H`` paired with ``p`` by the Legendre transform."""
    return ham_grad_p(spec, p, m)
