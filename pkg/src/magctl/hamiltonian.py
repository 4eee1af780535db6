"""Controlled magnetic Schrödinger Hamiltonians ``(-i grad - A)^2 + V + sum_j u_j W_j``."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr
from .core import (
    Grid,
    GridMismatchError,
    ScalarField,
    VectorField,
    derivative,
    divergence_array,
    laplacian_array,
    make_grid,
    sample,
)

KINDS = ("quadratic", "torus_trig", "line_dipole", "custom")
DENSE_CAP = 4096

_tokens = itertools.count()


def trig_frequencies(d: int) -> list[np.ndarray]:
    """Frequencies b_1..b_d: unit vectors e_1..e_{d-1} followed by (1, ..., 1)."""
    out = [np.eye(d, dtype=int)[j] for j in range(d - 1)]
    out.append(np.ones(d, dtype=int))
    return out


@dataclass(frozen=True, eq=False)
class ControlSystem:
    kind: str
    grid: Grid
    A: VectorField
    V: ScalarField
    W: tuple[ScalarField, ...]
    div_A: ScalarField | None = None
    labels: tuple[str, ...] = ()
    descriptor: dict | None = None
    token: int = field(default_factory=lambda: next(_tokens))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        g = self.grid
        if self.A.grid != g or self.V.grid != g or any(w.grid != g for w in self.W):
            raise GridMismatchError("system fields must share the system grid")
        if not self.V.real:
            raise ValueError("V must be real")
        object.__setattr__(self, "W", tuple(self.W))
        if self.div_A is None:
            div = divergence_array(g, [c.values for c in self.A.components])
            object.__setattr__(self, "div_A", ScalarField(g, div))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"W{j + 1}" for j in range(self.m)))
        if self.kind == "quadratic":
            if g.kind != "line" or self.m != 2:
                raise ValueError("quadratic systems need a line grid and two controls")
        elif self.kind == "torus_trig":
            if g.kind != "torus" or self.m != 2 * g.d:
                raise ValueError("trigonometric systems need a torus grid and 2d controls")
        elif self.kind == "line_dipole":
            if g.kind != "line" or self.m != g.d + 1:
                raise ValueError("dipole systems need a line grid and d+1 controls")

    @property
    def m(self) -> int:
        return len(self.W)

    @property
    def has_field(self) -> bool:
        return not self.A.is_zero()

    def potential(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.m:
            raise ValueError(f"expected {self.m} controls, got {u.size}")
        pot = self.V.values.copy()
        for uj, w in zip(u, self.W):
            if uj:
                pot = pot + uj * w.values
        return pot

    def control_span(self) -> np.ndarray:
        """Matrix whose columns are ``1, W_1, ..., W_m`` flattened."""
        cols = [np.ones(self.grid.size)] + [w.values.ravel() for w in self.W]
        return np.column_stack(cols)


def _vector_field(grid: Grid, A) -> tuple[VectorField, ScalarField | None]:
    if A is None:
        return VectorField.zeros(grid), None
    if isinstance(A, VectorField):
        return A, None
    comps = list(A)
    if len(comps) != grid.d:
        raise ValueError("magnetic potential needs one component per axis")
    if all(isinstance(c, (str, int, float)) for c in comps):
        texts = [str(c) for c in comps]
        vf = VectorField(tuple(sample(t, grid) for t in texts))
        div = sample(str(_expr.divergence_expr(texts, grid.d)), grid)
        return vf, div
    return VectorField.from_arrays(grid, comps), None


def _scalar(grid: Grid, f) -> ScalarField:
    if f is None:
        return ScalarField(grid, np.zeros(grid.shape))
    if isinstance(f, ScalarField):
        return f
    if isinstance(f, np.ndarray):
        return ScalarField(grid, f)
    return sample(f, grid)


def quadratic_system(grid: Grid, A=None, V=None, W2=None, descriptor=None) -> ControlSystem:
    """``u1 |x|^2 + u2 W2`` controls on a line grid (W2 = 0 when absent)."""
    vf, div = _vector_field(grid, A)
    W = (ScalarField(grid, grid.r2), _scalar(grid, W2))
    return ControlSystem("quadratic", grid, vf, _scalar(grid, V), W, div, ("|x|^2", "W2"), descriptor)


def torus_trig_system(grid: Grid, A=None, V=None, descriptor=None) -> ControlSystem:
    """Controls ``sin<b_j, x>, cos<b_j, x>`` on the torus."""
    vf, div = _vector_field(grid, A)
    W, labels = [], []
    for j, b in enumerate(trig_frequencies(grid.d)):
        phase = sum(int(bk) * c for bk, c in zip(b, grid.coords))
        W += [ScalarField(grid, np.sin(phase)), ScalarField(grid, np.cos(phase))]
        labels += [f"sin<b{j + 1},x>", f"cos<b{j + 1},x>"]
    return ControlSystem("torus_trig", grid, vf, _scalar(grid, V), tuple(W), div, tuple(labels), descriptor)


def line_dipole_system(grid: Grid, A=None, V=None, descriptor=None) -> ControlSystem:
    """Controls ``x_1, ..., x_d, exp(-|x|^2/2)`` on a line grid."""
    vf, div = _vector_field(grid, A)
    W = [ScalarField(grid, c) for c in grid.coords] + [ScalarField(grid, np.exp(-grid.r2 / 2))]
    labels = [f"x{j + 1}" for j in range(grid.d)] + ["exp(-|x|^2/2)"]
    return ControlSystem("line_dipole", grid, vf, _scalar(grid, V), tuple(W), div, tuple(labels), descriptor)


def custom_system(grid: Grid, A=None, V=None, W=(), descriptor=None) -> ControlSystem:
    vf, div = _vector_field(grid, A)
    return ControlSystem("custom", grid, vf, _scalar(grid, V), tuple(_scalar(grid, w) for w in W), div,
                         descriptor=descriptor)


_DESCRIPTOR_KEYS = {"kind", "d", "n", "L", "A", "V", "W2", "W"}


def system_from_descriptor(desc: dict) -> ControlSystem:
    """Build a system from a config mapping.

    Keys: ``kind``, ``d``, ``n``, ``L`` (line grids), ``A`` (list of
    expression strings), ``V`` and, for quadratic systems, ``W2``;
    custom systems take ``W`` as a list of expressions.
    """
    unknown = set(desc) - _DESCRIPTOR_KEYS
    if unknown:
        raise ValueError(f"unknown system keys: {sorted(unknown)}")
    kind = desc["kind"]
    d = int(desc.get("d", 1))
    domain = "torus" if kind == "torus_trig" else "line"
    if kind == "custom":
        domain = "line" if "L" in desc else "torus"
    grid = make_grid(domain, d, desc["n"], desc.get("L"))
    A = desc.get("A")
    V = desc.get("V")
    if kind == "quadratic":
        return quadratic_system(grid, A, V, desc.get("W2"), descriptor=dict(desc))
    if kind == "torus_trig":
        return torus_trig_system(grid, A, V, descriptor=dict(desc))
    if kind == "line_dipole":
        return line_dipole_system(grid, A, V, descriptor=dict(desc))
    if kind == "custom":
        return custom_system(grid, A, V, desc.get("W", ()), descriptor=dict(desc))
    raise ValueError(f"unknown system kind {kind!r}")


# --------------------------------------------------------------------------
# operator application
# --------------------------------------------------------------------------


def _values(psi) -> np.ndarray:
    return np.asarray(getattr(psi, "values", psi))


def _check_grid(sys: ControlSystem, psi):
    g = getattr(psi, "grid", None)
    if g is not None and g != sys.grid:
        raise GridMismatchError("state and system live on different grids")
    vals = _values(psi)
    if vals.shape[-sys.grid.d:] != sys.grid.shape:
        raise GridMismatchError("array does not match the system grid")
    return vals


def magnetic_laplacian_apply(sys: ControlSystem, psi) -> np.ndarray:
    """``(-i grad - A)^2 psi`` computed in minimal-coupling form."""
    vals = _check_grid(sys, psi)
    grid = sys.grid
    if not sys.has_field:
        return -laplacian_array(grid, vals.astype(complex))
    out = np.zeros(vals.shape, dtype=complex)
    for j, a in enumerate(sys.A.components):
        p = -1j * derivative(grid, vals, j) - a.values * vals
        out += -1j * derivative(grid, p, j) - a.values * p
    return out


def magnetic_laplacian_expanded(sys: ControlSystem, psi) -> np.ndarray:
    """``-Lap psi + |A|^2 psi + i div(A) psi + 2i <A, grad psi>`` (cross-check path)."""
    vals = _check_grid(sys, psi).astype(complex)
    grid = sys.grid
    A = [c.values for c in sys.A.components]
    out = -laplacian_array(grid, vals) + sum(a**2 for a in A) * vals + 1j * sys.div_A.values * vals
    for j, a in enumerate(A):
        out = out + 2j * a * derivative(grid, vals, j)
    return out


def apply_hamiltonian(sys: ControlSystem, u, psi) -> np.ndarray:
    vals = _check_grid(sys, psi)
    return magnetic_laplacian_apply(sys, vals) + sys.potential(u) * vals


def drift_apply(sys: ControlSystem, psi) -> np.ndarray:
    return apply_hamiltonian(sys, np.zeros(sys.m), psi)


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    matrix: np.ndarray
    u: np.ndarray
    defect: float
    meta: dict


def assemble(sys: ControlSystem, u, chunk: int = 256) -> HamiltonianMatrix:
    """Dense ``H_u`` from its action on basis vectors, then symmetrised."""
    M = sys.grid.size
    if M > DENSE_CAP:
        raise ValueError(f"dense assembly limited to {DENSE_CAP} points, grid has {M}")
    u = np.asarray(u, dtype=float).ravel()
    H = np.empty((M, M), dtype=complex)
    for start in range(0, M, chunk):
        stop = min(start + chunk, M)
        basis = np.zeros((stop - start, M), dtype=complex)
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        cols = apply_hamiltonian(sys, u, basis.reshape((stop - start,) + sys.grid.shape))
        H[:, start:stop] = cols.reshape(stop - start, M).T
    defect = float(np.max(np.abs(H - H.conj().T)))
    H = 0.5 * (H + H.conj().T)
    return HamiltonianMatrix(H, u, defect, {"grid": sys.grid.describe(), "kind": sys.kind})


def validate_tangency(A: VectorField, grid: Grid | None = None, tol: float = 1e-12) -> bool:
    """True when ``max |<A(x), x>| <= tol`` over the grid points."""
    grid = grid or A.grid
    if grid.kind != "line":
        raise ValueError("tangency is defined on line grids")
    dot = sum(c.values * x for c, x in zip(A.components, grid.coords))
    return bool(np.max(np.abs(dot)) <= tol)


def check_potential_bound(V: ScalarField, a: float, b: float) -> bool:
    """Check ``V(x) >= -a|x|^2 - b`` on the samples; warns when it fails."""
    ok = bool(np.all(V.values + a * V.grid.r2 + b >= 0))
    if not ok:
        warnings.warn("V violates the lower bound -a|x|^2 - b on the grid", RuntimeWarning, stacklevel=2)
    return ok
