"""Grids, sampled fields, spectral calculus and wavefunction states.

Everything lives on a uniform tensor grid.  A ``torus`` grid samples
``[0, 2*pi)^d``; a ``line`` grid samples the box ``[-L, L)^d`` and treats it
periodically, so the whole of R^d is only represented as long as states keep
negligible mass near the box edge (see :func:`boundary_mass`).

Arrays are stored row-major with shape ``grid.shape``.  Spectral helpers act
on the trailing ``d`` axes, so a leading batch axis is allowed.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.optimize import least_squares

MAX_POINTS = 2**20
BOUNDARY_TOL = 1e-8
SNAPSHOT_MAGIC = b"MSWF1"

_KINDS = ("torus", "line")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the torus or on a truncated line box."""

    kind: str
    d: int
    n: tuple[int, ...]
    half_width: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"domain kind must be one of {_KINDS}, got {self.kind!r}")
        if not 1 <= self.d <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if len(self.n) != self.d:
            raise ValueError("need one point count per axis")
        for m in self.n:
            if m < 2 or m & (m - 1):
                raise ValueError(f"points per axis must be a power of two, got {m}")
        if int(np.prod(self.n)) > MAX_POINTS:
            raise ValueError(f"grid has {int(np.prod(self.n))} points, cap is {MAX_POINTS}")
        if self.kind == "line":
            if self.half_width is None or not self.half_width > 0:
                raise ValueError("line grids need half_width > 0")
        elif self.half_width is not None:
            raise ValueError("torus grids take no half_width")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def period(self) -> float:
        return 2 * np.pi if self.kind == "torus" else 2 * self.half_width

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(self.period / m for m in self.n)

    @property
    def dv(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes_fft(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        start = 0.0 if self.kind == "torus" else -self.half_width
        return tuple(start + h * np.arange(m) for h, m in zip(self.spacing, self.n))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def r2(self) -> np.ndarray:
        return sum(c**2 for c in self.coords)

    @cached_property
    def freq_lattice(self) -> tuple[np.ndarray, ...]:
        """Integer frequency indices per axis, standard FFT ordering."""
        return tuple(np.rint(np.fft.fftfreq(m, 1.0 / m)).astype(int) for m in self.n)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers per axis with the Nyquist mode set to zero.

        Zeroing Nyquist keeps first derivatives of real fields real and makes
        the Laplacian multiplier exactly the square of the gradient one.
        """
        out = []
        for m, idx in zip(self.n, self.freq_lattice):
            k = idx * (2 * np.pi / self.period)
            k = k.astype(float)
            k[m // 2] = 0.0
            out.append(k)
        return tuple(out)

    def k_along(self, j: int) -> np.ndarray:
        """Wavenumbers of axis ``j`` shaped to broadcast over ``self.shape``."""
        shape = [1] * self.d
        shape[j] = self.n[j]
        return self.wavenumbers[j].reshape(shape)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(self.k_along(j) ** 2 for j in range(self.d))

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d, "n": list(self.n), "half_width": self.half_width}


def make_grid(domain_kind: str, d: int, n_per_axis, half_width: float | None = None) -> Grid:
    """Build a grid; ``n_per_axis`` is an int or one int per axis."""
    kind = str(domain_kind).lower()
    if isinstance(n_per_axis, (int, np.integer)):
        n = (int(n_per_axis),) * d
    else:
        n = tuple(int(m) for m in n_per_axis)
    if kind == "line" and half_width is None:
        raise ValueError("line grids need half_width")
    hw = None if kind == "torus" else float(half_width)
    return Grid(kind, d, n, hw)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    real: bool = True

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite samples")
        if self.real:
            if np.iscomplexobj(vals):
                if np.any(vals.imag != 0):
                    raise ValueError("real-tagged field has a nonzero imaginary part")
                vals = vals.real
            vals = vals.astype(float)
        else:
            vals = vals.astype(complex)
        object.__setattr__(self, "values", _frozen(vals))

    def __add__(self, other):
        other_vals = other.values if isinstance(other, ScalarField) else other
        real = self.real and (other.real if isinstance(other, ScalarField) else np.isrealobj(other))
        return ScalarField(self.grid, self.values + other_vals, real)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c, self.real and np.isrealobj(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.real)


@dataclass(frozen=True, eq=False)
class VectorField:
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("vector field needs components")
        g = comps[0].grid
        if len(comps) != g.d:
            raise ValueError("vector field needs one component per axis")
        if any(c.grid != g for c in comps):
            raise GridMismatchError("components live on different grids")
        if not all(c.real for c in comps):
            raise ValueError("vector field components must be real")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> Grid:
        return self.components[0].grid

    @property
    def arrays(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(tuple(ScalarField(grid, np.zeros(grid.shape)) for _ in range(grid.d)))

    @classmethod
    def from_arrays(cls, grid: Grid, arrays) -> "VectorField":
        return cls(tuple(ScalarField(grid, np.asarray(a).real) for a in arrays))

    def is_zero(self) -> bool:
        return all(not np.any(c.values) for c in self.components)


def sample(f, grid: Grid, real: bool = True) -> ScalarField:
    """Sample a closed-form function on ``grid``.

    ``f`` may be a number, an expression string (see :mod:`magctl.expr`) or a
    callable taking the ``d`` coordinate arrays.
    """
    if isinstance(f, str):
        from . import expr

        vals = expr.to_callable(f, grid.d)(*grid.coords)
    elif callable(f):
        vals = np.asarray(f(*grid.coords))
    else:
        vals = np.full(grid.shape, f)
    vals = np.broadcast_to(vals, grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite at every grid point")
    if real:
        vals = np.real_if_close(vals, tol=1000)
        if np.iscomplexobj(vals):
            raise ValueError("real field requested but samples are complex")
    return ScalarField(grid, vals, real)


# --------------------------------------------------------------------------
# spectral calculus on raw arrays (trailing d axes)
# --------------------------------------------------------------------------


def derivative(grid: Grid, a: np.ndarray, j: int) -> np.ndarray:
    axis = j - grid.d
    k = grid.wavenumbers[j].reshape((-1,) + (1,) * (grid.d - 1 - j))
    out = sfft.ifft(1j * k * sfft.fft(a, axis=axis), axis=axis)
    return out.real if np.isrealobj(a) else out


def gradient_array(grid: Grid, a: np.ndarray) -> list[np.ndarray]:
    return [derivative(grid, a, j) for j in range(grid.d)]


def divergence_array(grid: Grid, comps) -> np.ndarray:
    return sum(derivative(grid, c, j) for j, c in enumerate(comps))


def laplacian_array(grid: Grid, a: np.ndarray) -> np.ndarray:
    out = sfft.ifftn(-grid.k2 * sfft.fftn(a, axes=grid.axes_fft), axes=grid.axes_fft)
    return out.real if np.isrealobj(a) else out


def spectral_gradient(f: ScalarField) -> VectorField:
    comps = gradient_array(f.grid, f.values)
    if f.real:
        return VectorField(tuple(ScalarField(f.grid, c) for c in comps))
    raise ValueError("gradient of a complex field is not a VectorField; use gradient_array")


def spectral_divergence(F: VectorField) -> ScalarField:
    return ScalarField(F.grid, divergence_array(F.grid, [c.values for c in F.components]))


def spectral_laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, laplacian_array(f.grid, f.values), f.real)


def trig_interpolate(grid: Grid, a: np.ndarray, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``a`` at arbitrary points.

    ``points`` has shape ``(d, M)``.  Cost is ``M * prod(N)`` so this is meant
    for desk-scale grids.  The Nyquist coefficient is split symmetrically.
    """
    coeffs = sfft.fftn(a, axes=grid.axes_fft) / grid.size
    origin = 0.0 if grid.kind == "torus" else -grid.half_width
    scale = 2 * np.pi / grid.period
    mats = []
    for j in range(grid.d):
        m = grid.n[j]
        idx = grid.freq_lattice[j].astype(float)
        # split Nyquist between +N/2 and -N/2
        half = np.ones(m)
        half[m // 2] = 0.5
        mats.append((idx, half, m))
    pts = np.atleast_2d(points)
    out = np.empty(pts.shape[1], dtype=complex)
    for start in range(0, pts.shape[1], chunk):
        sl = slice(start, start + chunk)
        theta = [(pts[j, sl] - origin) * scale for j in range(grid.d)]
        res = coeffs
        # contract the last axis first to keep intermediate shapes (chunk, ...)
        E = []
        for j, (idx, half, m) in enumerate(mats):
            e = np.exp(1j * np.outer(theta[j], idx)) * half
            nyq = m // 2
            e[:, nyq] += 0.5 * np.exp(-1j * theta[j] * idx[nyq])
            E.append(e)
        if grid.d == 1:
            out[sl] = E[0] @ res
        elif grid.d == 2:
            out[sl] = np.einsum("pk,pk->p", E[0] @ res, E[1])
        else:
            tmp = np.einsum("pa,abc->pbc", E[0], res)
            tmp = np.einsum("pbc,pb->pc", tmp, E[1])
            out[sl] = np.einsum("pc,pc->p", tmp, E[2])
    return out.real if np.isrealobj(a) else out


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------


def l2_norm(grid: Grid, a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2) * grid.dv))


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: Grid
    values: np.ndarray
    norm_tol: float = 1e-8

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise ValueError(f"state shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("state has non-finite samples")
        nrm = l2_norm(self.grid, vals)
        if abs(nrm - 1.0) > self.norm_tol:
            raise ValueError(f"state norm {nrm!r} deviates from 1 by more than {self.norm_tol}")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def normalized(cls, grid: Grid, values, norm_tol: float = 1e-8) -> "WaveFunction":
        vals = np.asarray(values, dtype=complex)
        nrm = l2_norm(grid, vals)
        if nrm == 0:
            raise ValueError("cannot normalise the zero state")
        return cls(grid, vals / nrm, norm_tol)

    @property
    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.values, real=False)

    def norm(self) -> float:
        return l2_norm(self.grid, self.values)

    def with_values(self, values, norm_tol: float | None = None) -> "WaveFunction":
        return WaveFunction(self.grid, values, self.norm_tol if norm_tol is None else norm_tol)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def inner_product(psi, chi) -> complex:
    """``<psi, chi>``, antilinear in the first slot."""
    _check_same_grid(psi, chi)
    return complex(np.vdot(psi.values, chi.values) * psi.grid.dv)


def projective_distance(psi, chi) -> float:
    """``min_theta ||psi - exp(i theta) chi||`` for unit states.

    Evaluated as a norm at the optimal phase rather than through
    ``sqrt(2 - 2|<psi, chi>|)``, which loses half the digits near zero.
    """
    _check_same_grid(psi, chi)
    ov = np.vdot(chi.values, psi.values)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    dist = l2_norm(psi.grid, psi.values - phase * chi.values)
    return float(min(max(dist, 0.0), 2.0))


def boundary_mass(psi) -> float:
    """Fraction of the L2 mass lying in the outer 10% shell of the line box."""
    grid = psi.grid
    if grid.kind != "line":
        raise ValueError("boundary mass is only defined on line grids")
    shell = np.zeros(grid.shape, dtype=bool)
    for c in grid.coords:
        shell |= np.abs(c) >= 0.9 * grid.half_width
    dens = np.abs(np.asarray(psi.values)) ** 2
    total = dens.sum()
    return float(dens[shell].sum() / total) if total > 0 else 0.0


@dataclass(frozen=True)
class GaussianParams:
    theta: float
    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("Gaussian width parameter a must be positive")
        object.__setattr__(self, "theta", float(self.theta) % (2 * np.pi))


def _gaussian_values(grid: Grid, a: float, b: float, theta: float) -> np.ndarray:
    vals = np.exp(1j * theta - (a + 1j * b) * grid.r2)
    return vals / l2_norm(grid, vals)


def gaussian_state(grid: Grid, a: float, b: float = 0.0, theta: float = 0.0,
                   tol: float = BOUNDARY_TOL) -> WaveFunction:
    """Centred Gaussian ``exp(i theta) exp(-(a + i b)|x|^2)``, normalised on the grid."""
    if grid.kind != "line":
        raise ValueError("Gaussian states need a line grid")
    if not a > 0:
        raise ValueError("a must be positive")
    psi = WaveFunction(grid, _gaussian_values(grid, a, b, theta))
    bm = boundary_mass(psi)
    if bm > tol:
        raise ValueError(f"Gaussian leaks {bm:.2e} of its mass into the box shell (tol {tol:g})")
    return psi


def fit_gaussian(psi: WaveFunction, max_iter: int = 200, xtol: float = 1e-12):
    """Project ``psi`` onto the centred Gaussian family.

    Returns ``(GaussianParams, residual)`` where ``residual`` is the
    projective distance from ``psi`` to the fitted Gaussian.  Non-convergence
    is reported through a ``RuntimeWarning``.
    """
    grid = psi.grid
    if grid.kind != "line":
        raise ValueError("Gaussian fitting needs a line grid")
    vals = np.asarray(psi.values)
    r2 = grid.r2
    dens = np.abs(vals) ** 2
    m2 = float(np.sum(r2 * dens) / np.sum(dens))
    a0 = grid.d / (4 * m2) if m2 > 0 else 1.0
    grad = gradient_array(grid, vals)
    x_dot_grad = sum(c * g for c, g in zip(grid.coords, grad))
    b0 = -float(np.sum(np.imag(np.conj(vals) * x_dot_grad)) / (2 * np.sum(r2 * dens)))
    g0 = _gaussian_values(grid, a0, b0, 0.0)
    theta0 = float(np.angle(np.vdot(g0, vals)))
    w = np.sqrt(grid.dv)

    def model(p):
        a = np.exp(p[0])
        raw = np.exp(1j * p[2] - (a + 1j * p[1]) * r2)
        s = np.sum(np.exp(-2 * a * r2)) * grid.dv
        nrm = s ** -0.5
        return a, raw * nrm, s

    def resid(p):
        _, g, _ = model(p)
        diff = (vals - g).ravel() * w
        return np.concatenate([diff.real, diff.imag])

    def jac(p):
        a, g, s = model(p)
        # d/d(log a) of the normalised Gaussian
        ds_da = -2 * np.sum(r2 * np.exp(-2 * a * r2)) * grid.dv
        dn_over_n = -0.5 * ds_da / s
        dg = [a * (dn_over_n - r2) * g, -1j * r2 * g, 1j * g]
        cols = [-(c.ravel() * w) for c in dg]
        return np.column_stack([np.concatenate([c.real, c.imag]) for c in cols])

    sol = least_squares(resid, x0=[np.log(a0), b0, theta0], jac=jac, method="lm",
                        xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter)
    if sol.status <= 0:
        warnings.warn(f"Gaussian fit did not converge: {sol.message}", RuntimeWarning, stacklevel=2)
    a, b, theta = float(np.exp(sol.x[0])), float(sol.x[1]), float(sol.x[2])
    params = GaussianParams(theta, a, b)
    fitted = WaveFunction(grid, _gaussian_values(grid, a, b, theta), norm_tol=1e-6)
    return params, projective_distance(psi, fitted)


# --------------------------------------------------------------------------
# snapshot files
# --------------------------------------------------------------------------


def write_snapshot(path, psi: WaveFunction) -> None:
    """Write ``psi`` in the MSWF1 binary layout."""
    grid = psi.grid
    header = SNAPSHOT_MAGIC + struct.pack("<BB", _KINDS.index(grid.kind), grid.d)
    header += struct.pack(f"<{grid.d}I", *grid.n)
    header += struct.pack("<d", grid.half_width or 0.0)
    body = np.ascontiguousarray(psi.values, dtype="<c16").tobytes()
    Path(path).write_bytes(header + body)


def read_snapshot(path, norm_tol: float = 1e-8) -> WaveFunction:
    raw = Path(path).read_bytes()
    if raw[:5] != SNAPSHOT_MAGIC:
        raise ValueError("not an MSWF1 snapshot")
    kind_idx, d = struct.unpack_from("<BB", raw, 5)
    off = 7
    n = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    (hw,) = struct.unpack_from("<d", raw, off)
    off += 8
    kind = _KINDS[kind_idx]
    grid = Grid(kind, d, tuple(n), hw if kind == "line" else None)
    count = grid.size
    if len(raw) - off != 16 * count:
        raise ValueError("snapshot payload has the wrong length")
    vals = np.frombuffer(raw, dtype="<c16", count=count, offset=off).reshape(grid.shape)
    return WaveFunction(grid, vals.astype(complex), norm_tol)
