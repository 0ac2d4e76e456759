"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment, keys are dotted. Relative paths
are resolved against the directory of the config file. Every key, its type
and its default is listed in :data:`KEYS`; keys with default ``REQUIRED``
must be present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupler import SolverConfig
from .geometry import Grid2D, load_geometry
from .hamiltonian import (
    HamiltonianSpec,
    LocalHamiltonian,
    NonlocalHamiltonian,
    parse_running_cost,
)
from .hjb import IndependentTerminal, Mode

REQUIRED = object()


class ConfigError(ValueError):
    """Bad configuration text; ``line`` is 1-based when the error points at one."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _mode(text: str) -> Mode:
    return Mode.parse(text)


# key -> (parser, default)
KEYS: dict[str, tuple] = {
    "run.mode": (_mode, Mode.MFG),
    "run.out": (str, "out"),
    "run.snapshots": (_floats, None),    # default: 0 and T
    "run.plots": (lambda s: _bool(s), True),
    "grid.geometry": (str, None),
    "grid.n": (int, None),
    "grid.side": (float, 1.0),
    "grid.length_unit": (float, 1.0),
    "solver.nu": (float, REQUIRED),
    "solver.T": (float, REQUIRED),
    "solver.Nt": (int, REQUIRED),
    "solver.delta": (float, 0.5),
    "solver.tol": (float, 1e-5),
    "solver.max_iters": (int, 200),
    "solver.exit_cost": (float, 0.0),
    "terminal.u_T": (float, 0.0),
    "hamiltonian.family": (str, REQUIRED),
    "hamiltonian.cH": (float, None),
    "hamiltonian.alpha": (float, None),
    "hamiltonian.beta": (float, 2.0),
    "hamiltonian.offset": (float, 1.0),
    "hamiltonian.F": (parse_running_cost, None),
    "hamiltonian.kernel": (str, None),
    "hamiltonian.convolution": (str, "direct"),
    "initial.density": (str, REQUIRED),
    "initial.blocks": (str, None),
    "initial.block_value": (float, 4.0),
    "check.samples": (int, 2000),
    "check.seed": (int, 0),
    "check.m_min": (float, 1e-3),
    "check.m_max": (float, 10.0),
    "check.v_min": (float, 0.1),
    "check.v_max": (float, 10.0),
}

# family -> (cH, alpha, F) used when the keys are absent
FAMILY_DEFAULTS = {
    "local": (8.0, 0.75, "const:0.0003125"),
    "nonlocal": (1.0, 1.0, "const:0"),
}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_pairs(text: str) -> dict[str, tuple[str, int]]:
    """Split config text into ``{key: (raw value, line number)}``."""
    pairs: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in pairs:
            raise ConfigError(f"duplicate key {key!r} (first set on line {pairs[key][1]}, again on line {lineno})",
                              lineno)
        pairs[key] = (value, lineno)
    return pairs


@dataclass
class RunConfig:
    """Resolved run settings. ``values`` holds every key after defaults, for the manifest."""

    solver: SolverConfig
    spec: HamiltonianSpec
    grid: Grid2D
    m0: np.ndarray
    terminal: IndependentTerminal
    out_dir: Path
    snapshots: tuple[float, ...]
    length_unit: float = 1.0
    plots: bool = True
    values: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


def _typed(pairs):
    values = {}
    for key, (parser, default) in KEYS.items():
        if key in pairs:
            raw, lineno = pairs[key]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default
    return values


def _line(pairs, key):
    return pairs[key][1] if key in pairs else None


def _resolve(base: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def build_grid(values, pairs, base: Path) -> Grid2D:
    geom, n = values["grid.geometry"], values["grid.n"]
    if (geom is None) == (n is None):
        raise ConfigError("set exactly one of 'grid.geometry' and 'grid.n'")
    side = values["grid.side"]
    if side <= 0:
        raise ConfigError("grid.side must be positive", _line(pairs, "grid.side"))
    if n is not None:
        if n < 1:
            raise ConfigError("grid.n must be positive", _line(pairs, "grid.n"))
        return Grid2D.torus(n, side=side)
    path = _resolve(base, geom)
    if not path.is_file():
        raise ConfigError(f"geometry file not found: {path}", _line(pairs, "grid.geometry"))
    return load_geometry(path, side_length=side)


def _kernel(text: str, grid: Grid2D, lineno) -> np.ndarray:
    """``gaussian:<width>,<mass>`` (width in grid.side units) or ``file:<csv>``."""
    kind, _, arg = text.partition(":")
    if kind == "gaussian":
        try:
            width, mass = _floats(arg)
        except ValueError:
            raise ConfigError("gaussian kernel takes '<width>,<mass>'", lineno) from None
        if width <= 0 or mass < 0:
            raise ConfigError("gaussian kernel needs width > 0 and mass >= 0", lineno)
        # periodic distance from the origin node
        dj = np.minimum(np.arange(grid.ny), grid.ny - np.arange(grid.ny)) * grid.h
        di = np.minimum(np.arange(grid.nx), grid.nx - np.arange(grid.nx)) * grid.h
        r2 = dj[:, None] ** 2 + di[None, :] ** 2
        k = np.exp(-r2 / (2 * width * width))
        k[k < 1e-12] = 0.0    # keeps the direct sum local
        return k * mass / (grid.cell_area * k.sum())
    if kind == "file":
        return np.loadtxt(arg, delimiter=",", ndmin=2)
    raise ConfigError(f"unknown kernel form {text!r}", lineno)


def build_spec(values, pairs, grid: Grid2D, base: Path) -> HamiltonianSpec:
    family = values["hamiltonian.family"]
    if family not in FAMILY_DEFAULTS:
        raise ConfigError(f"hamiltonian.family must be 'local' or 'nonlocal', got {family!r}",
                          _line(pairs, "hamiltonian.family"))
    cH, alpha, F = FAMILY_DEFAULTS[family]
    for key, fallback in (("hamiltonian.cH", cH), ("hamiltonian.alpha", alpha)):
        if values[key] is None:
            values[key] = fallback
    if values["hamiltonian.F"] is None:
        values["hamiltonian.F"] = parse_running_cost(F)
    common = dict(cH=values["hamiltonian.cH"], alpha=values["hamiltonian.alpha"],
                  beta=values["hamiltonian.beta"], offset=values["hamiltonian.offset"],
                  F=values["hamiltonian.F"])
    try:
        if family == "local":
            if values["hamiltonian.kernel"] is not None:
                raise ConfigError("hamiltonian.kernel is only valid for the nonlocal family",
                                  _line(pairs, "hamiltonian.kernel"))
            return LocalHamiltonian(**common)
        text = values["hamiltonian.kernel"]
        if text is None:
            raise ConfigError("nonlocal family needs 'hamiltonian.kernel'")
        if text.startswith("file:"):
            text = "file:" + str(_resolve(base, text[5:]))
        kernel = _kernel(text, grid, _line(pairs, "hamiltonian.kernel"))
        spec = NonlocalHamiltonian(kernel=kernel, h=grid.h, method=values["hamiltonian.convolution"], **common)
        spec.check_grid(grid)
        return spec
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid Hamiltonian: {exc}", _line(pairs, "hamiltonian.family")) from None


def _parse_blocks(text: str, lineno) -> list[tuple[int, int, int, int]]:
    """``r0:r1,c0:c1; ...`` half-open cell-index rectangles."""
    rects = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        try:
            rows, cols = chunk.split(",")
            r0, r1 = (int(x) for x in rows.split(":"))
            c0, c1 = (int(x) for x in cols.split(":"))
        except ValueError:
            raise ConfigError(f"bad block {chunk.strip()!r}, expected 'r0:r1,c0:c1'", lineno) from None
        rects.append((r0, r1, c0, c1))
    return rects


def build_initial(values, pairs, grid: Grid2D, base: Path) -> np.ndarray:
    source = values["initial.density"]
    lineno = _line(pairs, "initial.density")
    kind, _, arg = source.partition(":")
    if kind == "uniform":
        try:
            m0 = np.full((grid.ny, grid.nx), float(arg))
        except ValueError:
            raise ConfigError(f"bad uniform density {arg!r}", lineno) from None
    elif kind == "file":
        path = _resolve(base, arg)
        if not path.is_file():
            raise ConfigError(f"initial density file not found: {path}", lineno)
        m0 = np.loadtxt(path, delimiter=",", ndmin=2)
        if m0.shape != (grid.ny, grid.nx):
            raise ConfigError(f"initial density shape {m0.shape} does not match grid ({grid.ny}, {grid.nx})",
                              lineno)
    elif kind == "blocks":
        text = values["initial.blocks"]
        if text is None:
            raise ConfigError("initial.density = blocks needs 'initial.blocks'", lineno)
        m0 = np.zeros((grid.ny, grid.nx))
        bl = _line(pairs, "initial.blocks")
        for r0, r1, c0, c1 in _parse_blocks(text, bl):
            if not (0 <= r0 < r1 <= grid.ny and 0 <= c0 < c1 <= grid.nx):
                raise ConfigError(f"block {r0}:{r1},{c0}:{c1} lies outside the grid", bl)
            m0[r0:r1, c0:c1] = values["initial.block_value"]
    else:
        raise ConfigError(f"initial.density must be uniform:<v>, file:<csv> or blocks, got {source!r}", lineno)
    if np.any(m0 < 0) or not np.all(np.isfinite(m0)):
        raise ConfigError("initial density must be finite and nonnegative", lineno)
    return np.where(grid.free_mask, m0, 0.0)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read, validate and resolve a run configuration.

    ``overrides`` maps keys to raw string values (e.g. from the command line)
    and replaces anything set in the file.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    pairs = parse_pairs(text)
    for key, raw in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        pairs[key] = (raw, None)
    values = _typed(pairs)
    base = path.resolve().parent

    grid = build_grid(values, pairs, base)
    spec = build_spec(values, pairs, grid, base)
    try:
        solver = SolverConfig(nu=values["solver.nu"], T=values["solver.T"], Nt=values["solver.Nt"],
                              mode=values["run.mode"], delta=values["solver.delta"], tol=values["solver.tol"],
                              max_iters=values["solver.max_iters"], exit_cost=values["solver.exit_cost"])
    except ValueError as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from None
    if values["run.snapshots"] is None:
        values["run.snapshots"] = (0.0, solver.T)
    snapshots = tuple(sorted(set(values["run.snapshots"])))
    if not snapshots:
        raise ConfigError("run.snapshots is empty", _line(pairs, "run.snapshots"))
    if any(not 0.0 <= t <= solver.T for t in snapshots):
        raise ConfigError(f"snapshot times must lie in [0, {solver.T}]", _line(pairs, "run.snapshots"))
    if values["grid.length_unit"] <= 0:
        raise ConfigError("grid.length_unit must be positive", _line(pairs, "grid.length_unit"))
    m0 = build_initial(values, pairs, grid, base)
    return RunConfig(solver=solver, spec=spec, grid=grid, m0=m0,
                     terminal=IndependentTerminal(values["terminal.u_T"]),
                     out_dir=_resolve(base, values["run.out"]).resolve(), snapshots=snapshots,
                     length_unit=values["grid.length_unit"], plots=values["run.plots"],
                     values=values, base_dir=base)


def format_value(value) -> str:
    """Render a resolved config value for the manifest."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Mode):
        return value.value
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)
