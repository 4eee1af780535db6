"""Direct implementations of the target unitaries, used as ground truth.

None of these go through controls: they apply the operator itself
(phase multiplication, Fourier multipliers, trigonometric interpolation or
characteristics), so synthesized schedules can be scored against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .core import (
    BOUNDARY_TOL,
    Grid,
    ScalarField,
    VectorField,
    WaveFunction,
    boundary_mass,
    derivative,
    gradient_array,
    laplacian_array,
    sample,
    trig_interpolate,
)
from .hamiltonian import DENSE_CAP, custom_system
from .propagator import EIG_CACHE


class BoundaryError(ValueError):
    """The state (or a characteristic) reaches the edge of the line box."""


def _as_state(psi) -> WaveFunction:
    if not isinstance(psi, WaveFunction):
        raise TypeError("oracles act on WaveFunction instances")
    return psi


def _real_array(grid: Grid, phi) -> np.ndarray:
    if isinstance(phi, ScalarField):
        if phi.grid != grid:
            raise ValueError("phase lives on a different grid")
        if not phi.real:
            raise ValueError("phase field must be real")
        return np.asarray(phi.values, dtype=float)
    if isinstance(phi, np.ndarray):
        if np.iscomplexobj(phi):
            if np.max(np.abs(phi.imag)) > 0:
                raise ValueError("phase field must be real")
            phi = phi.real
        return np.broadcast_to(phi.astype(float), grid.shape)
    return np.asarray(sample(phi, grid).values, dtype=float)


def _check_boundary(psi: WaveFunction, tol: float, what: str):
    if psi.grid.kind == "line":
        bm = boundary_mass(psi)
        if bm > tol:
            raise BoundaryError(f"{what}: {bm:.2e} of the mass reaches the box shell (tol {tol:g})")


# --------------------------------------------------------------------------
# phases and Fourier multipliers
# --------------------------------------------------------------------------


def apply_phase(psi: WaveFunction, phi) -> WaveFunction:
    """Pointwise ``exp(i phi) psi`` for a real phase ``phi``."""
    psi = _as_state(psi)
    return psi.with_values(psi.values * np.exp(1j * _real_array(psi.grid, phi)))


def apply_free_evolution(psi: WaveFunction, sigma: float) -> WaveFunction:
    """``exp(i sigma Lap) psi`` as the Fourier multiplier ``exp(-i sigma |k|^2)``."""
    psi = _as_state(psi)
    g = psi.grid
    spec = sfft.fftn(psi.values, axes=g.axes_fft)
    return psi.with_values(sfft.ifftn(np.exp(-1j * sigma * g.k2) * spec, axes=g.axes_fft))


def apply_translation(psi: WaveFunction, j: int, u: float, tol: float = BOUNDARY_TOL) -> WaveFunction:
    """``psi(x + u e_j)`` (axis ``j`` is zero-based) via a Fourier phase ramp."""
    psi = _as_state(psi)
    g = psi.grid
    k = g.k_along(j)
    spec = sfft.fft(psi.values, axis=j)
    out = psi.with_values(sfft.ifft(np.exp(1j * u * k) * spec, axis=j))
    _check_boundary(out, tol, "translation")
    return out


def _axis_integral(grid: Grid, a: np.ndarray, j: int, u: float) -> np.ndarray:
    """``int_0^u a(x + s e_j) ds`` evaluated exactly on the trigonometric interpolant."""
    k = grid.k_along(j)
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.where(k == 0, u, (np.exp(1j * k * u) - 1) / (1j * np.where(k == 0, 1, k)))
    out = sfft.ifft(mult * sfft.fft(a, axis=j), axis=j)
    return out.real if np.isrealobj(a) else out


def apply_magnetic_translation(psi: WaveFunction, j: int, u: float, A: VectorField,
                               tol: float = BOUNDARY_TOL) -> WaveFunction:
    """``exp(u (d_j - i A_j)) psi``.

    Closed form: ``exp(-i int_0^u A_j(x + s e_j) ds) psi(x + u e_j)``.
    """
    shifted = apply_translation(psi, j, u, tol)
    phase = _axis_integral(psi.grid, np.asarray(A.components[j].values, dtype=float), j, u)
    return shifted.with_values(shifted.values * np.exp(-1j * phase))


def _interp_matrix(grid: Grid, j: int, pts: np.ndarray) -> np.ndarray:
    """Matrix mapping samples along axis ``j`` to interpolant values at ``pts``."""
    m = grid.n[j]
    eye = np.eye(m)
    cols = trig_interpolate_1d(grid, j, eye, pts)
    return cols


def trig_interpolate_1d(grid: Grid, j: int, a: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Interpolate along axis ``j`` of a 1D profile (or stack of profiles, axis 0)."""
    m = grid.n[j]
    origin = 0.0 if grid.kind == "torus" else -grid.half_width
    scale = 2 * np.pi / grid.period
    coeffs = sfft.fft(a, axis=0) / m
    idx = grid.freq_lattice[j].astype(float)
    theta = (np.asarray(pts) - origin) * scale
    E = np.exp(1j * np.outer(theta, idx))
    nyq = m // 2
    E[:, nyq] = np.cos(theta * idx[nyq])
    return E @ coeffs


def dilate_array(grid: Grid, a: np.ndarray, alpha: float) -> np.ndarray:
    """``alpha^{d/2} a(alpha x)`` for samples ``a``; points leaving the box get 0."""
    vals = np.asarray(a, dtype=complex)
    for j in range(grid.d):
        pts = alpha * grid.axes[j]
        M = _interp_matrix(grid, j, pts)
        M[np.abs(pts) >= grid.half_width] = 0.0
        vals = np.moveaxis(np.tensordot(M, np.moveaxis(vals, j, 0), axes=(1, 0)), 0, j)
    return vals * alpha ** (grid.d / 2)


def apply_dilation(psi: WaveFunction, alpha: float, tol: float = BOUNDARY_TOL) -> WaveFunction:
    """``(D_alpha psi)(x) = alpha^{d/2} psi(alpha x)`` by trigonometric interpolation.

    Raises :class:`BoundaryError` when either the input or the dilated state
    carries mass in the box shell, since the sample points ``alpha x`` then
    see the periodic images.
    """
    psi = _as_state(psi)
    g = psi.grid
    if g.kind != "line":
        raise ValueError("dilations need a line grid")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha == 1:
        return psi
    _check_boundary(psi, tol, "dilation input")
    vals = dilate_array(g, psi.values, alpha)
    # boundary first: an escaping state also fails the norm check, with a less useful message
    _check_boundary(WaveFunction(g, vals, norm_tol=np.inf), tol, "dilation output")
    return WaveFunction(g, vals, norm_tol=max(psi.norm_tol, 1e-6))


@lru_cache(maxsize=8)
def _harmonic_system(grid: Grid):
    return custom_system(grid, V="r2")


def apply_harmonic_evolution(psi: WaveFunction, sigma: float) -> WaveFunction:
    """``exp(i sigma (Lap - |x|^2)) psi`` from the eigendecomposition of the assembled operator."""
    psi = _as_state(psi)
    g = psi.grid
    if g.kind != "line":
        raise ValueError("harmonic evolution needs a line grid")
    if g.size > DENSE_CAP:
        raise ValueError(f"harmonic oracle limited to {DENSE_CAP} points")
    evals, evecs = EIG_CACHE.get(_harmonic_system(g), [])
    flat = psi.values.ravel()
    out = evecs @ (np.exp(-1j * sigma * evals) * (evecs.conj().T @ flat))
    return psi.with_values(out.reshape(g.shape))


# --------------------------------------------------------------------------
# transport along gradient flows
# --------------------------------------------------------------------------


def _support(coeffs: np.ndarray, rtol: float) -> np.ndarray:
    return np.abs(coeffs) > rtol * max(float(np.max(np.abs(coeffs))), 1e-300)


class _SmoothEval:
    """Evaluate band-limited fields at scattered points from their active modes.

    ``coeffs`` holds normalised FFT coefficients (one slab per field) and
    ``mask`` the modes to keep.  Real output is assumed.
    """

    def __init__(self, grid: Grid, coeffs: np.ndarray, mask: np.ndarray):
        self.grid = grid
        idx = np.nonzero(mask)
        lattice = np.stack([grid.freq_lattice[j][idx[j]] for j in range(grid.d)]).astype(float)
        coeffs = np.array(coeffs[(slice(None),) + idx])
        self.lattice = lattice
        self.coeffs = coeffs
        self.nyq = np.stack([lattice[j] == -(grid.n[j] // 2) for j in range(grid.d)]).any(axis=0)
        self.origin = 0.0 if grid.kind == "torus" else -grid.half_width
        self.scale = 2 * np.pi / grid.period

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        theta = (pts - self.origin) * self.scale
        arg = self.lattice.T @ theta
        E = np.exp(1j * arg)
        if np.any(self.nyq):
            # a Nyquist mode is shared by +-N/2; the real interpolant uses a cosine
            E[self.nyq] = np.cos(arg[self.nyq])
        return (self.coeffs @ E).real


@dataclass(frozen=True, eq=False)
class TransportSpec:
    """Gradient-flow transport data: ``f = 2 grad(phi) + 2 linear``, flow time ``t``.

    ``linear`` is an optional constant vector added to ``grad(phi)``, which
    represents potentials ``phi + <linear, x>`` that are not periodic.
    """

    phi: ScalarField
    t: float = 1.0
    substeps: int | None = None
    linear: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.phi.real:
            raise ValueError("transport potential must be real")
        lin = self.linear
        if lin is not None:
            if len(lin) != self.phi.grid.d:
                raise ValueError("linear part needs one entry per axis")
            object.__setattr__(self, "linear", tuple(float(c) for c in lin))
        grad = self.grad_arrays()
        for g in grad:
            if not np.all(np.isfinite(g)):
                raise ValueError("grad(phi) is not finite on the grid")

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def grad_arrays(self) -> list[np.ndarray]:
        grad = gradient_array(self.grid, np.asarray(self.phi.values, dtype=float))
        if self.linear is not None:
            grad = [g + c for g, c in zip(grad, self.linear)]
        return grad

    def max_speed(self) -> float:
        return float(np.max(np.sqrt(sum((2 * g) ** 2 for g in self.grad_arrays()))))

    def n_steps(self) -> int:
        if self.substeps is not None:
            return max(1, int(self.substeps))
        h = min(self.grid.spacing)
        return max(1, math.ceil(64 * abs(self.t) * self.max_speed() / h))


def _characteristics(spec: TransportSpec, A: VectorField | None):
    """Integrate ``X' = f(X)`` with the log-Jacobian and twist phase along it (RK4)."""
    g = spec.grid
    phi = np.asarray(spec.phi.values, dtype=float)
    phi_hat = sfft.fftn(phi, axes=g.axes_fft) / g.size
    mask = _support(phi_hat, 1e-13)
    ks = [g.wavenumbers[j] for j in range(g.d)]
    # f = 2 grad(phi); div(f)/2 = lap(phi), both from exact multipliers on phi's modes
    fields = [2j * k * phi_hat for k in ks] + [-g.k2 * phi_hat]
    if A is not None:
        grad = gradient_array(g, phi)
        twist = sum(a.values * gj for a, gj in zip(A.components, grad))
        if spec.linear is not None:
            twist = twist + sum(a.values * c for a, c in zip(A.components, spec.linear))
        tw_hat = -2 * sfft.fftn(twist, axes=g.axes_fft) / g.size
        fields.append(tw_hat)
        mask = mask | _support(tw_hat, 1e-13)
    ev = _SmoothEval(g, np.stack(fields), mask)
    lin = np.zeros(g.d) if spec.linear is None else 2 * np.asarray(spec.linear)
    d = g.d

    def rhs(X):
        vals = ev(X)
        return vals[:d] + lin[:, None], vals[d:]

    X = np.stack([c.ravel() for c in g.coords]).astype(float)
    acc = np.zeros((len(fields) - d, X.shape[1]))
    n = spec.n_steps()
    h = spec.t / n
    for _ in range(n):
        k1, q1 = rhs(X)
        k2, q2 = rhs(X + 0.5 * h * k1)
        k3, q3 = rhs(X + 0.5 * h * k2)
        k4, q4 = rhs(X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        acc = acc + h / 6 * (q1 + 2 * q2 + 2 * q3 + q4)
    return X, acc


def _transport(psi: WaveFunction, spec: TransportSpec, A: VectorField | None, tol: float) -> WaveFunction:
    psi = _as_state(psi)
    g = psi.grid
    if spec.grid != g:
        raise ValueError("transport potential lives on a different grid")
    if spec.t == 0:
        return psi
    X, acc = _characteristics(spec, A)
    if g.kind == "line":
        dens = np.abs(psi.values.ravel()) ** 2
        heavy = dens > tol * dens.max()
        if np.any(np.abs(X[:, heavy]) >= g.half_width):
            raise BoundaryError("characteristics leave the box")
    vals = trig_interpolate(g, np.asarray(psi.values, dtype=complex), X)
    weight = np.exp(acc[0])
    if A is not None:
        weight = weight * np.exp(1j * acc[1])
    out = (vals * weight).reshape(g.shape)
    return WaveFunction(g, out, norm_tol=max(psi.norm_tol, 1e-6))


def apply_transport(psi: WaveFunction, spec: TransportSpec, tol: float = BOUNDARY_TOL) -> WaveFunction:
    """``psi(X_t(x)) exp(1/2 int_0^t div f(X_s(x)) ds)`` with ``X' = f(X)``, ``f = 2 grad(phi)``."""
    return _transport(psi, spec, None, tol)


def apply_twisted_transport(psi: WaveFunction, spec: TransportSpec, A: VectorField,
                            tol: float = BOUNDARY_TOL) -> WaveFunction:
    """Transport with the extra factor ``exp(-2i int_0^t <A, grad phi>(X_s(x)) ds)``.

    This is the flow generated by ``<f, grad> + div(f)/2 - 2i<A, grad phi>``.
    With ``A = 0`` it coincides with :func:`apply_transport`.
    """
    if A is None or A.is_zero():
        return _transport(psi, spec, None, tol)
    if A.grid != spec.grid:
        raise ValueError("magnetic potential lives on a different grid")
    return _transport(psi, spec, A, tol)
