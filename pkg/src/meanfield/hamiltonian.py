"""Congestion Hamiltonians, their derivatives, and the upwind numerical Hamiltonian.

Two families share one evaluation path:

* :class:`LocalHamiltonian` ``H(p, m) = -cH |p|**beta / (offset + m)**alpha + F(m)``
* :class:`NonlocalHamiltonian`, the same formula evaluated at the smoothed
  density ``rho * m`` (periodic grids only).

All point-wise functions broadcast over leading axes: ``p`` has shape ``(..., 2)``,
``m`` has shape ``(...)`` and one-sided differences ``q`` have shape ``(4, ...)``
ordered ``(D+x, D-x, D+y, D-y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .geometry import Grid2D, Topology


@dataclass(frozen=True)
class ConstantCost:
    value: float = 0.0

    def __call__(self, m):
        return np.full_like(np.asarray(m, dtype=float), self.value)

    def deriv(self, m):
        return np.zeros_like(np.asarray(m, dtype=float))

    def deriv2(self, m):
        return np.zeros_like(np.asarray(m, dtype=float))

    def __str__(self):
        return f"const:{self.value!r}"


@dataclass(frozen=True)
class QuadraticCost:
    """``F(m) = a m**2 + b``."""

    a: float
    b: float = 0.0

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        return self.a * m * m + self.b

    def deriv(self, m):
        return 2.0 * self.a * np.asarray(m, dtype=float)

    def deriv2(self, m):
        return np.full_like(np.asarray(m, dtype=float), 2.0 * self.a)

    def __str__(self):
        return f"quad:{self.a!r},{self.b!r}"


def parse_running_cost(text: str) -> ConstantCost | QuadraticCost:
    """Parse ``const:<v>`` or ``quad:<a>,<b>``."""
    kind, _, rest = text.strip().partition(":")
    try:
        if kind == "const":
            return ConstantCost(float(rest))
        if kind == "quad":
            a, b = (float(s) for s in rest.split(","))
            return QuadraticCost(a, b)
    except ValueError:
        pass
    raise ValueError(f"running cost must be const:<v> or quad:<a>,<b>, got {text!r}")


@dataclass(frozen=True)
class LocalHamiltonian:
    cH: float = 8.0
    alpha: float = 0.75
    beta: float = 2.0
    offset: float = 1.0
    F: ConstantCost | QuadraticCost = field(default_factory=lambda: ConstantCost(1.0 / 3200.0))

    def __post_init__(self):
        if not 1.0 < self.beta <= 2.0:
            raise ValueError(f"beta must lie in (1, 2], got {self.beta}")
        if self.alpha < 0 or self.cH < 0:
            raise ValueError("alpha and cH must be nonnegative")
        if not self.offset > 0:
            raise ValueError("offset must be positive")

    def congestion(self, m: np.ndarray) -> np.ndarray:
        return m


def pedestrian_hamiltonian() -> LocalHamiltonian:
    """The crowd-evacuation Hamiltonian ``-8|p|^2/(1+m)^(3/4) + 1/3200``."""
    return LocalHamiltonian(cH=8.0, alpha=0.75, beta=2.0, offset=1.0, F=ConstantCost(1.0 / 3200.0))


@dataclass(frozen=True, eq=False)
class NonlocalHamiltonian:
    """Congestion through a periodic convolution ``rho * m``.

    ``kernel[a, b]`` is the kernel value at displacement ``(a h, b h)`` (rows,
    columns), wrapped periodically; quadrature weight is ``h**2`` per node.
    """

    kernel: np.ndarray
    h: float
    alpha: float = 1.0
    beta: float = 2.0
    offset: float = 1.0
    cH: float = 1.0
    F: ConstantCost | QuadraticCost = field(default_factory=ConstantCost)
    method: str = "direct"

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        if kernel.ndim != 2:
            raise ValueError("kernel must be a 2-D grid function")
        if np.any(kernel < 0) or not np.all(np.isfinite(kernel)):
            raise ValueError("kernel must be finite and nonnegative")
        if not 1.0 < self.beta <= 2.0:
            raise ValueError(f"beta must lie in (1, 2], got {self.beta}")
        if self.method not in ("direct", "fft"):
            raise ValueError(f"unknown convolution method {self.method!r}")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    @property
    def flipped_kernel(self) -> np.ndarray:
        """``rho~(x) = rho(-x)`` on the periodic lattice."""
        return np.roll(self.kernel[::-1, ::-1], (1, 1), axis=(0, 1))

    @property
    def kernel_mass(self) -> float:
        return self.h * self.h * float(self.kernel.sum())

    def congestion(self, m: np.ndarray) -> np.ndarray:
        return periodic_convolve(self.kernel, m, self.h, method=self.method)

    def check_grid(self, grid: Grid2D):
        if grid.topology is not Topology.PERIODIC:
            raise ValueError("nonlocal Hamiltonians are defined on periodic grids only")
        if self.kernel.shape != (grid.ny, grid.nx):
            raise ValueError(f"kernel shape {self.kernel.shape} does not match grid ({grid.ny}, {grid.nx})")
        if not np.isclose(self.h, grid.h, rtol=1e-12):
            raise ValueError("kernel spacing does not match grid spacing")


HamiltonianSpec = LocalHamiltonian | NonlocalHamiltonian


def periodic_convolve(kernel: np.ndarray, f: np.ndarray, h: float, method: str = "direct") -> np.ndarray:
    """``(kernel * f)[j, i] = h**2 * sum_{a,b} kernel[a, b] f[j - a, i - b]`` with periodic wrap.

    ``method="direct"`` sums over the kernel support exactly; ``"fft"`` is the
    fast path for large dense kernels.
    """
    f = np.asarray(f, dtype=float)
    if kernel.shape != f.shape:
        raise ValueError(f"kernel shape {kernel.shape} != field shape {f.shape}")
    if method == "fft":
        return h * h * np.real(np.fft.ifft2(np.fft.fft2(kernel) * np.fft.fft2(f)))
    out = np.zeros_like(f)
    for a, b in zip(*np.nonzero(kernel)):
        out += kernel[a, b] * np.roll(f, (a, b), axis=(0, 1))
    return h * h * out


def _check_m(m):
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("density must be nonnegative")
    return m


def _norm(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError(f"p must have trailing dimension 2, got shape {p.shape}")
    return p, np.hypot(p[..., 0], p[..., 1])


def _pow_beta_minus_2(norm, beta):
    """``|p|**(beta-2)`` with the value at ``p = 0`` set to 0 when beta < 2."""
    if beta == 2.0:
        return np.ones_like(norm)
    out = np.zeros_like(norm)
    nz = norm > 0
    out[nz] = norm[nz] ** (beta - 2.0)
    return out


def ham_value(spec: HamiltonianSpec, p, m):
    """``-cH |p|^beta / (offset + m)^alpha + F(m)``.

    For a nonlocal spec, ``m`` is the already-smoothed density ``rho * m``.
    """
    m = _check_m(m)
    _, norm = _norm(p)
    return -spec.cH * norm**spec.beta / (spec.offset + m) ** spec.alpha + spec.F(m)


def ham_grad_p(spec: HamiltonianSpec, p, m):
    """Gradient in ``p``; returns 0 at ``p = 0`` (where it is singular when beta < 2)."""
    m = _check_m(m)
    p, norm = _norm(p)
    scale = -spec.cH * spec.beta * _pow_beta_minus_2(norm, spec.beta) / (spec.offset + m) ** spec.alpha
    return scale[..., None] * p


def ham_deriv_m(spec: HamiltonianSpec, p, m):
    m = _check_m(m)
    _, norm = _norm(p)
    return (spec.alpha * spec.cH * norm**spec.beta / (spec.offset + m) ** (spec.alpha + 1.0)
            + spec.F.deriv(m))


def ham_deriv_mm(spec: HamiltonianSpec, p, m):
    m = _check_m(m)
    _, norm = _norm(p)
    a = spec.alpha
    return (-a * (a + 1.0) * spec.cH * norm**spec.beta / (spec.offset + m) ** (a + 2.0)
            + spec.F.deriv2(m))


def ham_hess_p(spec: HamiltonianSpec, p, m):
    """``D^2_pp H``, shape ``(..., 2, 2)``."""
    m = _check_m(m)
    p, norm = _norm(p)
    beta = spec.beta
    scale = -spec.cH * beta * _pow_beta_minus_2(norm, beta) / (spec.offset + m) ** spec.alpha
    eye = np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2))
    if beta == 2.0:
        return scale[..., None, None] * eye
    safe = np.where(norm > 0, norm, 1.0)
    phat = p / safe[..., None]
    outer = phat[..., :, None] * phat[..., None, :]
    return scale[..., None, None] * (eye + (beta - 2.0) * outer)


def ham_cross_mp(spec: HamiltonianSpec, p, m):
    """``d/dm grad_p H``, shape ``(..., 2)``."""
    m = _check_m(m)
    p, norm = _norm(p)
    scale = (spec.alpha * spec.cH * spec.beta * _pow_beta_minus_2(norm, spec.beta)
             / (spec.offset + m) ** (spec.alpha + 1.0))
    return scale[..., None] * p


def mftc_effective_hamiltonian(spec: HamiltonianSpec, p, m):
    """``H + m dH/dm``: the Hamiltonian seen by the HJB equation of the control problem."""
    m = _check_m(m)
    return ham_value(spec, p, m) + m * ham_deriv_m(spec, p, m)


def legendre_cost(spec: LocalHamiltonian, v, m, method: str = "auto") -> float:
    """Running cost ``f(v, m) = max_q (H(q, m) - q.v)`` at a single point.

    ``method="auto"`` uses the closed form when beta == 2 and a bounded
    numerical maximization otherwise; ``"numerical"`` forces the latter.
    """
    if spec.cH <= 0 or spec.beta <= 1:
        raise ValueError("legendre_cost needs a Hamiltonian strictly concave in p (cH > 0, beta > 1)")
    m = float(_check_m(m))
    v = np.asarray(v, dtype=float)
    if method not in ("auto", "analytic", "numerical"):
        raise ValueError(f"unknown method {method!r}")
    if method == "analytic" or (method == "auto" and spec.beta == 2.0):
        if spec.beta != 2.0:
            raise ValueError("closed-form Legendre cost only for beta == 2")
        s = (spec.offset + m) ** spec.alpha
        return float(v @ v * s / (4.0 * spec.cH) + spec.F(m))
    return _legendre_numerical(spec, v, m)


def _legendre_numerical(spec, v, m):
    def neg(q):
        return -(ham_value(spec, q, m) - q @ v)

    def neg_grad(q):
        return -(ham_grad_p(spec, q, m) - v)

    radius = 1.0 + float(np.abs(v).max())
    q0 = np.zeros(2)
    for _ in range(40):
        res = optimize.minimize(neg, q0, jac=neg_grad, method="L-BFGS-B",
                                bounds=[(-radius, radius)] * 2,
                                options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 10_000})
        if np.all(np.abs(res.x) < 0.999 * radius):
            # polish on the unconstrained concave problem
            res = optimize.minimize(neg, res.x, jac=neg_grad, method="BFGS", options={"gtol": 1e-12})
            return float(-res.fun)
        q0 = res.x
        radius *= 4.0
    raise RuntimeError("Legendre maximization did not localize its maximizer")


def upwind_gradsq(q) -> np.ndarray:
    """Godunov selector ``P(q)`` approximating ``|grad u|^2``."""
    q = np.asarray(q, dtype=float)
    return (np.minimum(q[0], 0.0) ** 2 + np.maximum(q[1], 0.0) ** 2
            + np.minimum(q[2], 0.0) ** 2 + np.maximum(q[3], 0.0) ** 2)


def numerical_hamiltonian(spec: HamiltonianSpec, q, m):
    """``-cH P(q)^(beta/2) / (offset + m)^alpha + F(m)``, monotone in the stencil values."""
    m = _check_m(m)
    P = upwind_gradsq(q)
    return -spec.cH * P ** (spec.beta / 2.0) / (spec.offset + m) ** spec.alpha + spec.F(m)


def numerical_hamiltonian_grad(spec: HamiltonianSpec, q, m):
    """Partial derivatives of :func:`numerical_hamiltonian` in its four slots, shape ``(4, ...)``.

    Derivatives at a kink (a one-sided difference exactly 0) are taken as 0.
    """
    m = _check_m(m)
    q = np.asarray(q, dtype=float)
    P = upwind_gradsq(q)
    if spec.beta == 2.0:
        outer = np.ones_like(P)
    else:
        outer = np.zeros_like(P)
        nz = P > 0
        outer[nz] = (spec.beta / 2.0) * P[nz] ** (spec.beta / 2.0 - 1.0)
    scale = -spec.cH * outer / (spec.offset + m) ** spec.alpha
    dP = np.stack([2.0 * np.minimum(q[0], 0.0), 2.0 * np.maximum(q[1], 0.0),
                   2.0 * np.minimum(q[2], 0.0), 2.0 * np.maximum(q[3], 0.0)])
    return scale * dP


def nonlocal_G(spec: NonlocalHamiltonian, m: np.ndarray, gradsq: np.ndarray, grid: Grid2D | None = None):
    """Coupling term ``G = rho~ * (m dH/dm)`` of the control problem for the convolution family.

    ``gradsq`` holds ``|q|^beta`` node-wise (typically the upwind selector
    raised to ``beta/2``).
    """
    if grid is not None:
        spec.check_grid(grid)
    m = _check_m(m)
    smoothed = spec.congestion(m)
    integrand = m * (spec.alpha * spec.cH * np.asarray(gradsq, dtype=float)
                     / (spec.offset + smoothed) ** (spec.alpha + 1.0)
                     + spec.F.deriv(smoothed))
    return periodic_convolve(spec.flipped_kernel, integrand, spec.h, method=spec.method)


def kernel_condition(spec: NonlocalHamiltonian, m0_max: float) -> bool:
    """Strict kernel-mass bound ``||rho||_1 < (beta - 1) / (alpha m0_max)``."""
    if not (spec.beta > 1 and spec.alpha > 0 and m0_max > 0):
        raise ValueError("kernel_condition needs beta > 1, alpha > 0 and m0_max > 0")
    return spec.kernel_mass < (spec.beta - 1.0) / (spec.alpha * m0_max)
