"""Compile target operators into piecewise-constant control schedules.

Every ``synth_*`` function returns a :class:`Schedule` in time order (first
segment acts first).  Operator products are read right to left, so the
product ``L1 L2`` compiles to ``S(L2) + S(L1)``.

Approximation parameters live in :class:`SynthParams`; nested constructions
(a kick that itself has to be synthesized, a dilation inside a free
evolution, ...) run with ``tau`` multiplied by ``split`` at each level.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .core import Grid, ScalarField, WaveFunction, gradient_array, sample
from .hamiltonian import ControlSystem, validate_tangency
from .oracles import (
    TransportSpec,
    apply_dilation,
    apply_free_evolution,
    apply_harmonic_evolution,
    apply_phase,
    apply_transport,
    apply_translation,
    apply_twisted_transport,
)
from .propagator import KickMode, Schedule, Segment
from .symbolic import (
    Base,
    DEGREE_CAP,
    Derivation,
    GaussHermite,
    GradSq,
    Partial,
    Span,
    TrigPoly,
    d_partial,
    evaluate_node,
    grad_square,
    saturate_hermite,
    saturate_trig,
)

SPAN_RTOL = 1e-10


class SynthesisError(ValueError):
    pass


class InadmissibleTarget(SynthesisError):
    pass


@dataclass(frozen=True)
class SynthParams:
    """Approximation parameters.

    tau : base small time.
    n : Trotter count of product constructions.
    eps_kick : pulse length when kicks are realized as pulses.
    split : factor applied to ``tau`` at each nesting level.
    kick_mode : ``ideal`` or ``pulsed:<eps>`` (execution default recorded in meta).
    n_strip : outer Trotter count for stripping magnetic twists.
    truncation : relative cutoff used to truncate sampled phases.
    kick_realization : ``field`` (phases outside the control span become
        exact phase kicks) or ``derive`` (they are synthesized recursively
        from a saturation certificate).
    exact_drift : when the drift is ``-Lap`` (``A = 0``, ``V = 0``), realize
        ``exp(i sigma Lap)`` directly as drift evolution.
    """

    tau: float = 1e-2
    n: int = 1
    eps_kick: float = 1e-3
    split: float = 0.1
    kick_mode: str = "ideal"
    n_strip: int = 1
    truncation: float = 1e-10
    kick_realization: str = "field"
    exact_drift: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n < 1 or self.n_strip < 1:
            raise ValueError("Trotter counts must be >= 1")
        if not self.eps_kick > 0:
            raise ValueError("eps_kick must be positive")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.kick_realization not in ("field", "derive"):
            raise ValueError("kick_realization must be 'field' or 'derive'")
        KickMode.parse(self.kick_mode)

    def nested(self) -> "SynthParams":
        return replace(self, tau=self.tau * self.split)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "n": self.n, "eps_kick": self.eps_kick, "split": self.split,
                "kick_mode": self.kick_mode, "n_strip": self.n_strip, "truncation": self.truncation,
                "kick_realization": self.kick_realization, "exact_drift": self.exact_drift}


def _require(sys: ControlSystem, *kinds: str, what: str):
    if sys.kind not in kinds:
        raise InadmissibleTarget(f"{what} needs a {' or '.join(kinds)} system, got {sys.kind}")


def _window(grid: Grid, edge: float = 0.95, width: float = 0.1) -> np.ndarray:
    """Smooth cutoff equal to 1 inside ``(edge - width) L`` and 0 beyond ``edge L`` per axis."""
    if grid.kind != "line":
        return np.ones(grid.shape)
    out = np.ones(grid.shape)
    L = grid.half_width
    for x in grid.coords:
        s = (np.abs(x) - (edge - width) * L) / (width * L)
        s = np.clip(s, 0.0, 1.0)
        # C-infinity step built from exp(-1/t)
        with np.errstate(divide="ignore", over="ignore"):
            a = np.where(s < 1, np.exp(-1.0 / np.maximum(1 - s, 1e-300)), 0.0)
            b = np.where(s > 0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        out = out * a / (a + b)
    return out


def _empty(op: str, **meta) -> Schedule:
    return Schedule((), {"op": op, **meta})


def _phase_array(sys: ControlSystem, phi) -> np.ndarray:
    if isinstance(phi, (TrigPoly, GaussHermite)):
        return phi.evaluate(sys.grid)
    if isinstance(phi, ScalarField):
        return np.asarray(phi.values, dtype=float)
    if isinstance(phi, np.ndarray):
        return np.asarray(phi, dtype=float)
    return np.asarray(sample(phi, sys.grid).values, dtype=float)


def span_coefficients(sys: ControlSystem, phase: np.ndarray, rtol: float = SPAN_RTOL):
    """``(constant, coeffs)`` when ``phase = constant + sum coeffs_j W_j`` on the grid, else ``None``."""
    M = sys.control_span()
    b = np.asarray(phase, dtype=float).ravel()
    sol, *_ = np.linalg.lstsq(M, b, rcond=None)
    resid = np.max(np.abs(M @ sol - b))
    if resid > rtol * max(1.0, float(np.max(np.abs(b)))):
        return None
    return float(sol[0]), sol[1:]


def phase_kick(sys: ControlSystem, phi, p: SynthParams, scale: float = 1.0, label: str = "") -> Schedule:
    """Kick ``exp(i scale phi)``.

    Coefficient kicks when the phase lies in the control span (the constant
    part goes to the global phase); otherwise a sampled-field kick, or with
    ``kick_realization='derive'`` a recursively synthesized phase.
    """
    arr = scale * _phase_array(sys, phi)
    if not np.any(arr):
        return _empty("kick", label=label)
    hit = span_coefficients(sys, arr)
    if hit is not None:
        const, coeffs = hit
        segs = [Segment.kick(coeffs, label=label)]
        if const:
            segs.append(Segment.global_phase(const, label=label))
        return Schedule(tuple(segs), {"op": "kick", "label": label, "span": True})
    if p.kick_realization == "derive" and isinstance(phi, (TrigPoly, GaussHermite)):
        sched = compile(Phase(phi, scale), sys, p.nested())
        return sched.with_meta(op="kick", label=label, span=False, derived=True)
    return Schedule((Segment.field_kick(arr, label=label),), {"op": "kick", "label": label, "span": False})


# --------------------------------------------------------------------------
# primitive constructions
# --------------------------------------------------------------------------


def synth_quadratic_phase(sys: ControlSystem, delta: float, p: SynthParams) -> Schedule:
    """``exp(i delta |x|^2)`` by the constant control ``u_1 = -delta / tau`` for time ``tau``."""
    _require(sys, "quadratic", what="quadratic phase")
    if delta == 0:
        return _empty("qphase", delta=0.0)
    seg = Segment.evolve(p.tau, (-delta / p.tau, 0.0), label="qphase")
    return Schedule((seg,), {"op": "qphase", "delta": delta, "tau": p.tau})


def synth_base_phase(sys: ControlSystem, coeffs, p: SynthParams) -> Schedule:
    """``exp(i sum c_j W_j)`` by the constant control ``u = -c / tau`` for time ``tau``."""
    _require(sys, "torus_trig", "line_dipole", what="base phase")
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size != sys.m:
        raise SynthesisError(f"need {sys.m} coefficients, got {c.size}")
    seg = Segment.evolve(p.tau, -c / p.tau, label="base")
    return Schedule((seg,), {"op": "base", "coeffs": c.tolist(), "tau": p.tau})


def _check_tangent(sys: ControlSystem, force: bool):
    scale = max(1.0, max(float(np.max(np.abs(c.values))) for c in sys.A.components))
    if not force and not validate_tangency(sys.A, sys.grid, tol=1e-10 * scale * sys.grid.half_width):
        raise InadmissibleTarget("dilations need a magnetic potential tangent to spheres (<A(x), x> = 0)")


def synth_dilation(sys: ControlSystem, alpha: float, p: SynthParams, force: bool = False) -> Schedule:
    """``D_alpha`` as ``exp(i b|x|^2) exp(i tau (Lap_A - V + log^2(alpha)|x|^2/(4 tau^2))) exp(-i b|x|^2)``.

    ``b = log(alpha) / (4 tau)``.  In time order: kick ``-b|x|^2``, evolve
    for ``tau`` with ``u_1 = -log^2(alpha)/(4 tau^2)``, kick ``+b|x|^2``.
    ``force`` skips the tangency check (for witnessing its necessity).
    """
    _require(sys, "quadratic", what="dilation")
    if not alpha > 0:
        raise SynthesisError("alpha must be positive")
    _check_tangent(sys, force)
    tau = p.tau
    la = math.log(alpha)
    beta = la / (4 * tau)
    segs = []
    if la:
        segs.append(Segment.kick((-beta, 0.0), label="dil-in"))
    segs.append(Segment.evolve(tau, (-la * la / (4 * tau * tau), 0.0), label="dil"))
    if la:
        segs.append(Segment.kick((beta, 0.0), label="dil-out"))
    return Schedule(tuple(segs), {"op": "dilation", "alpha": alpha, "tau": tau})


def _flat_drift(sys: ControlSystem) -> bool:
    return sys.A.is_zero() and not np.any(sys.V.values)


def synth_free_evolution(sys: ControlSystem, sigma: float, p: SynthParams, force: bool = False) -> Schedule:
    """``exp(i sigma Lap)`` as ``D_{sqrt t} exp(i sigma t (Lap_A - V)) D_{1/sqrt t}`` with ``t = tau``.

    Time order: dilation by ``1/sqrt t``, drift for ``sigma t``, dilation by
    ``sqrt t``; the dilations use ``tau * split``.
    """
    _require(sys, "quadratic", what="free evolution")
    if sigma < 0:
        raise InadmissibleTarget("only sigma >= 0 is reachable")
    if p.exact_drift and _flat_drift(sys):
        return Schedule((Segment.evolve(sigma, np.zeros(sys.m), label="free"),),
                        {"op": "freeevo", "sigma": sigma, "exact_drift": True})
    t = p.tau
    inner = p.nested()
    a = math.sqrt(t)
    sched = synth_dilation(sys, 1 / a, inner, force).then(
        Schedule((Segment.evolve(sigma * t, np.zeros(sys.m), label="free"),)),
        synth_dilation(sys, a, inner, force))
    return sched.with_meta(op="freeevo", sigma=sigma, t=t)


def synth_harmonic(sys: ControlSystem, sigma: float, p: SynthParams) -> Schedule:
    """``exp(i sigma (Lap - |x|^2))`` as ``(exp(i sigma Lap / n) exp(-i sigma |x|^2 / n))^n``."""
    _require(sys, "quadratic", what="harmonic evolution")
    if sigma < 0:
        raise InadmissibleTarget("only sigma >= 0 is reachable")
    if sigma == 0:
        return _empty("harmonic", sigma=0.0)
    n = p.n
    step = replace(p, n=1)
    from .propagator import trotter_pair

    sched = trotter_pair(synth_quadratic_phase(sys, -sigma / n, step), synth_free_evolution(sys, sigma / n, step), n)
    return sched.with_meta(op="harmonic", sigma=sigma, n=n, tau=p.tau)


def synth_grad_square(sys: ControlSystem, phi, p: SynthParams) -> Schedule:
    """``exp(-i |grad phi|^2)`` as ``exp(i phi/sqrt tau) exp(i tau (Lap_A - V)) exp(-i phi/sqrt tau)``."""
    _require(sys, "torus_trig", "custom", what="grad-square phase")
    tau = p.tau
    s = 1 / math.sqrt(tau)
    sched = phase_kick(sys, phi, p, -s, "gs-in").then(
        Schedule((Segment.evolve(tau, np.zeros(sys.m), label="gs"),)),
        phase_kick(sys, phi, p, s, "gs-out"))
    return sched.with_meta(op="gradsq", tau=tau)


def _translation_core(sys: ControlSystem, j: int, u: float, tau: float) -> Schedule:
    """``exp(u (d_j - i A_j))`` up to ``O(tau)``: conjugated drift by ``exp(+-i u x_j / (2 tau))``.

    The dynamics picks up the global phase ``exp(-i u^2/(4 tau))``, which is
    compensated by a phase segment.
    """
    c = np.zeros(sys.m)
    c[j] = u / (2 * tau)
    return Schedule((Segment.kick(-c, label="tr-in"),
                     Segment.evolve(tau, np.zeros(sys.m), label="tr"),
                     Segment.kick(c, label="tr-out"),
                     Segment.global_phase(u * u / (4 * tau), label="tr-phase")),
                    {"op": "translation-core", "axis": j, "u": u, "tau": tau})


def synth_translation(sys: ControlSystem, j: int, u: float, p: SynthParams) -> Schedule:
    """``exp(u d_j)`` = ``lim (exp(i (u/n) A_j) exp((u/n)(d_j - i A_j)))^n``; ``n = p.n``.

    Without a magnetic potential a single conjugation block is used.
    """
    _require(sys, "line_dipole", what="translation")
    if not 0 <= j < sys.grid.d:
        raise SynthesisError("axis out of range")
    if u == 0:
        return _empty("translation", axis=j, u=0.0)
    Aj = np.asarray(sys.A.components[j].values, dtype=float)
    if not np.any(Aj):
        return _translation_core(sys, j, u, p.tau).with_meta(op="translation", axis=j, u=u, n=1, tau=p.tau)
    n = p.n
    step = u / n
    strip = phase_kick(sys, Aj * _window(sys.grid), p, step, "strip")
    one = _translation_core(sys, j, step, p.tau / n).then(strip)
    return one.repeat(n).with_meta(op="translation", axis=j, u=u, n=n, tau=p.tau)


def synth_partial_phase(sys: ControlSystem, j: int, phi, p: SynthParams) -> Schedule:
    """``exp(-i d_j phi)`` as ``exp(i phi/tau) exp(tau (d_j - i A_j)) exp(-i phi/tau)``.

    The small translation is the conjugation block with inner time
    ``split * tau^2``: its leftover drift acts on a state carrying momentum
    ``grad(phi)/tau`` and contributes a phase of order ``inner |grad phi|^2 / tau^2``.
    The grid must resolve momenta up to ``1/(2 split tau) + max|grad phi|/tau``.
    """
    _require(sys, "line_dipole", what="partial phase")
    tau = p.tau
    sched = phase_kick(sys, phi, p, -1 / tau, "pp-in").then(
        _translation_core(sys, j, tau, p.split * tau * tau),
        phase_kick(sys, phi, p, 1 / tau, "pp-out"))
    return sched.with_meta(op="partial", axis=j, tau=tau)


def _grad_sq_array(sys: ControlSystem, phi) -> np.ndarray:
    if isinstance(phi, TrigPoly):
        return grad_square(phi).evaluate(sys.grid)
    grad = gradient_array(sys.grid, _phase_array(sys, phi))
    return sum(g**2 for g in grad)


def _twist_array(sys: ControlSystem, phi) -> np.ndarray:
    grad = gradient_array(sys.grid, _phase_array(sys, phi))
    return sum(a.values * g for a, g in zip(sys.A.components, grad)) * _window(sys.grid)


def twisted_flow_product(sys: ControlSystem, phi, p: SynthParams, scale: float = 1.0) -> Schedule:
    """``(exp(i|grad phi|^2/(n tau)) exp(i phi/tau) exp(i (tau/n)(Lap_A - V)) exp(-i phi/tau))^n``.

    Adjacent ``exp(+-i phi/tau)`` cancel, so in time order this is
    kick ``-phi/tau``, then ``n`` times (evolve ``tau/n``, kick
    ``|grad phi|^2/(n tau)``), then kick ``phi/tau``.  The product tends to
    ``exp(T_f - 2i<A, grad phi>)`` with ``f = 2 grad phi`` (``phi`` scaled by ``scale``).
    """
    tau, n = p.tau, p.n
    gs = (scale**2) * _grad_sq_array(sys, phi)
    body = Schedule((Segment.evolve(tau / n, np.zeros(sys.m), label="flow"),)).then(
        phase_kick(sys, gs, p, 1 / (n * tau), "flow-gs"))
    sched = phase_kick(sys, phi, p, -scale / tau, "flow-in").then(
        body.repeat(n), phase_kick(sys, phi, p, scale / tau, "flow-out"))
    return sched.with_meta(op="twisted-flow", tau=tau, n=n)


def synth_gradient_flow(sys: ControlSystem, phi, t: float, p: SynthParams, strip: bool = True) -> Schedule:
    """Transport along the flow of ``f = 2 t grad(phi)`` for unit time.

    The twisted product is stripped with ``n_strip`` outer Trotter factors
    ``exp(2i <A, grad phi>/n_strip)`` (each after a twisted product with
    ``phi/n_strip`` and ``tau/n_strip``).  ``strip=False`` returns the twisted
    product alone.
    """
    _require(sys, "torus_trig", "line_dipole", "custom", what="gradient flow")
    if t == 0 or not np.any(_phase_array(sys, phi)):
        return _empty("gradflow", t=t)
    if not strip or sys.A.is_zero():
        return twisted_flow_product(sys, phi, p, t).with_meta(op="gradflow", t=t, stripped=False)
    ns = p.n_strip
    inner = replace(p, tau=p.tau / ns)
    twist = _twist_array(sys, phi) * t
    one = twisted_flow_product(sys, phi, inner, t / ns).then(phase_kick(sys, twist, p, 2.0 / ns, "strip"))
    return one.repeat(ns).with_meta(op="gradflow", t=t, n_strip=ns, stripped=True, tau=p.tau, n=p.n)


# --------------------------------------------------------------------------
# target operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TargetOp:
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True, eq=False)
class Phase(TargetOp):
    """``exp(i scale phi)``; ``phi`` is a TrigPoly, GaussHermite, expression or sampled field."""

    phi: object
    scale: float = 1.0
    family: str = "auto"


@dataclass(frozen=True, eq=False)
class QuadraticPhase(TargetOp):
    delta: float


@dataclass(frozen=True, eq=False)
class Dilation(TargetOp):
    alpha: float


@dataclass(frozen=True, eq=False)
class FreeEvo(TargetOp):
    sigma: float


@dataclass(frozen=True, eq=False)
class HarmonicEvo(TargetOp):
    sigma: float


@dataclass(frozen=True, eq=False)
class Translation(TargetOp):
    axis: int
    u: float


@dataclass(frozen=True, eq=False)
class GradSquarePhase(TargetOp):
    """``exp(-i |grad phi|^2)``."""

    phi: object
    family: str = "auto"


@dataclass(frozen=True, eq=False)
class PartialPhase(TargetOp):
    """``exp(-i d_axis phi)``."""

    axis: int
    phi: object
    family: str = "auto"


@dataclass(frozen=True, eq=False)
class GradientFlow(TargetOp):
    phi: object
    t: float = 1.0
    family: str = "auto"


@dataclass(frozen=True, eq=False)
class TwistedGradientFlow(TargetOp):
    phi: object
    t: float = 1.0
    family: str = "auto"


@dataclass(frozen=True, eq=False)
class Compose(TargetOp):
    """Operator product ``ops[0] ops[1] ...``; the last factor acts first."""

    ops: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    def children(self) -> tuple:
        return self.ops


ADMISSIBLE = {
    Phase: ("torus_trig", "line_dipole", "quadratic"),
    QuadraticPhase: ("quadratic",),
    Dilation: ("quadratic",),
    FreeEvo: ("quadratic",),
    HarmonicEvo: ("quadratic",),
    Translation: ("line_dipole",),
    GradSquarePhase: ("torus_trig",),
    PartialPhase: ("line_dipole",),
    GradientFlow: ("torus_trig", "line_dipole"),
    TwistedGradientFlow: ("torus_trig", "line_dipole"),
    Compose: ("torus_trig", "line_dipole", "quadratic", "custom"),
}


def resolve_phase(sys: ControlSystem, phi, family: str = "auto", truncation: float = 1e-10):
    """Turn a phase description into a TrigPoly (torus) or GaussHermite (line dipole) when possible.

    Strings are read as closed-form expressions; sampled fields are
    truncated (Fourier on the torus, Hermite functions on the line).
    Returns the input unchanged when no symbolic form applies.
    """
    if isinstance(phi, (TrigPoly, GaussHermite)):
        return phi
    if family == "auto":
        family = {"torus_trig": "trig", "line_dipole": "hermite"}.get(sys.kind, "field")
    if family == "field":
        return phi
    arr = _phase_array(sys, phi)
    if family == "trig":
        return TrigPoly.from_samples(sys.grid, arr, rtol=truncation)
    if family == "hermite":
        return hermite_from_samples(sys.grid, arr, rtol=truncation)
    raise ValueError(f"unknown phase family {family!r}")


def hermite_from_samples(grid: Grid, values, degree: int = DEGREE_CAP, rtol: float = 1e-10) -> GaussHermite:
    """Least-squares projection on ``{1, x_j, He_alpha(x) exp(-|x|^2/2)}`` (``|alpha| <= degree``)."""
    from .symbolic import _monomials

    d = grid.d
    cols = [np.ones(grid.size)] + [x.ravel() for x in grid.coords]
    alphas = list(_monomials(d, degree))
    for a in alphas:
        cols.append(GaussHermite.hermite(a).evaluate(grid).ravel())
    M = np.column_stack(cols)
    b = np.asarray(values, dtype=float).ravel()
    sol, *_ = np.linalg.lstsq(M, b, rcond=None)
    scale = max(float(np.max(np.abs(sol))), 1e-300)
    sol = np.where(np.abs(sol) > rtol * scale, sol, 0.0)
    out = GaussHermite(d, [float(v) for v in sol[1:1 + d]], const=float(sol[0]))
    for a, c in zip(alphas, sol[1 + d:]):
        if c:
            out = out + GaussHermite.hermite(a, float(c))
    return out


def derive(sys: ControlSystem, phi) -> Derivation:
    if isinstance(phi, TrigPoly):
        _require(sys, "torus_trig", what="trigonometric saturation")
        return saturate_trig(phi, sys.grid.d)
    if isinstance(phi, GaussHermite):
        _require(sys, "line_dipole", what="Hermite saturation")
        return saturate_hermite(phi)
    raise SynthesisError("phase has no symbolic form to saturate")


def compile_derivation(sys: ControlSystem, deriv: Derivation, p: SynthParams) -> Schedule:
    """Realize a certificate: base terms by one constant-control segment, brackets recursively."""
    root = deriv.root
    pairs = list(zip(root.coeffs, root.children)) if isinstance(root, Span) else [(1, root)]
    coeffs = np.zeros(sys.m)
    parts = []
    for c, node in pairs:
        if isinstance(node, Base):
            coeffs[node.index] += float(c)
        elif isinstance(node, GradSq):
            if c < 0:
                raise SynthesisError("a bracket with a negative weight is not realizable")
            child = evaluate_node(node.child, deriv.algebra, deriv.d)
            parts.append(synth_grad_square(sys, child.scale(math.sqrt(float(c))), p.nested()))
        elif isinstance(node, Partial):
            child = evaluate_node(node.child, deriv.algebra, deriv.d)
            parts.append(synth_partial_phase(sys, node.axis, child.scale(float(c)), p.nested()))
        else:
            raise SynthesisError(f"unexpected node {node!r} in a certificate")
    sched = Schedule()
    if np.any(coeffs):
        sched = synth_base_phase(sys, coeffs, p)
    sched = sched.then(*parts)
    const = _constant(deriv.value)
    if const:
        # the realized phase is target + const; remove the constant from the global phase
        sched = sched.then(Schedule((Segment.global_phase(-float(const), label="const"),)))
    return sched.with_meta(op="derivation", depth=deriv.depth, tau=p.tau)


def _compile_phase(node: Phase, sys: ControlSystem, p: SynthParams) -> Schedule:
    if sys.kind == "quadratic":
        arr = node.scale * _phase_array(sys, node.phi)
        hit = span_coefficients(sys, arr)
        if hit is None:
            raise InadmissibleTarget("quadratic systems only synthesize phases in span{1, |x|^2, W2}")
        const, c = hit
        if c[1]:
            raise InadmissibleTarget("W2 phases are not synthesized on quadratic systems")
        sched = synth_quadratic_phase(sys, c[0], p)
        return sched.then(Schedule((Segment.global_phase(const),))) if const else sched
    phi = resolve_phase(sys, node.phi, node.family, p.truncation)
    if not isinstance(phi, (TrigPoly, GaussHermite)):
        raise InadmissibleTarget("phase could not be put in symbolic form")
    phi = phi.scale(node.scale) if node.scale != 1 else phi
    hit = span_coefficients(sys, phi.evaluate(sys.grid))
    if hit is not None:
        const, c = hit
        sched = synth_base_phase(sys, c, p)
    else:
        const = _constant(phi)
        sched = compile_derivation(sys, derive(sys, phi.drop_constant()), p)
    return sched.then(Schedule((Segment.global_phase(float(const)),))) if const else sched


def _constant(phi) -> float:
    return float(phi.constant if isinstance(phi, TrigPoly) else phi.const)


def compile(target: TargetOp, sys: ControlSystem, p: SynthParams | None = None, force: bool = False) -> Schedule:
    """Recursive dispatch from a target operator to a schedule.

    ``Compose([X, Y])`` compiles to ``S(Y) + S(X)``.  The returned meta
    records the parameters, the ideal-mode control time ``T`` and the ratio
    ``C = T / tau``.  ``force`` skips the tangency check of dilations.
    """
    p = p or SynthParams()
    kinds = ADMISSIBLE.get(type(target))
    if kinds is None:
        raise InadmissibleTarget(f"unknown target {target!r}")
    if sys.kind not in kinds:
        raise InadmissibleTarget(f"{type(target).__name__} is not admissible on {sys.kind} systems")
    sched = _compile(target, sys, p, force)
    T = sched.total_duration("ideal")
    return sched.with_meta(target=describe(target), params=p.to_dict(), T=T, C=T / p.tau)


def _compile(t: TargetOp, sys: ControlSystem, p: SynthParams, force: bool = False) -> Schedule:
    if isinstance(t, Compose):
        out = Schedule((), {"op": "compose"})
        for op in reversed(t.ops):
            out = out.then(_compile(op, sys, p, force))
        return out.with_meta(op="compose", n_ops=len(t.ops))
    if isinstance(t, Phase):
        return _compile_phase(t, sys, p)
    if isinstance(t, QuadraticPhase):
        return synth_quadratic_phase(sys, t.delta, p)
    if isinstance(t, Dilation):
        return synth_dilation(sys, t.alpha, p, force)
    if isinstance(t, FreeEvo):
        return synth_free_evolution(sys, t.sigma, p, force)
    if isinstance(t, HarmonicEvo):
        return synth_harmonic(sys, t.sigma, p)
    if isinstance(t, Translation):
        return synth_translation(sys, t.axis, t.u, p)
    if isinstance(t, GradSquarePhase):
        return synth_grad_square(sys, resolve_phase(sys, t.phi, t.family, p.truncation), p)
    if isinstance(t, PartialPhase):
        return synth_partial_phase(sys, t.axis, resolve_phase(sys, t.phi, t.family, p.truncation), p)
    if isinstance(t, GradientFlow):
        return synth_gradient_flow(sys, _phase_input(sys, t), t.t, p)
    if isinstance(t, TwistedGradientFlow):
        return synth_gradient_flow(sys, _phase_input(sys, t), t.t, p, strip=False)
    raise InadmissibleTarget(f"unknown target {t!r}")


def _phase_input(sys, t):
    return resolve_phase(sys, t.phi, t.family) if t.family != "auto" else t.phi


# --------------------------------------------------------------------------
# oracle dispatch
# --------------------------------------------------------------------------


def _field(sys: ControlSystem, phi) -> ScalarField:
    return ScalarField(sys.grid, _phase_array(sys, phi))


def apply_target(target: TargetOp, psi: WaveFunction, sys: ControlSystem) -> WaveFunction:
    """Exact action of ``target`` on ``psi`` through the oracles."""
    t = target
    if isinstance(t, Compose):
        for op in reversed(t.ops):
            psi = apply_target(op, psi, sys)
        return psi
    if isinstance(t, Phase):
        return apply_phase(psi, t.scale * _phase_array(sys, t.phi))
    if isinstance(t, QuadraticPhase):
        return apply_phase(psi, t.delta * sys.grid.r2)
    if isinstance(t, Dilation):
        return apply_dilation(psi, t.alpha)
    if isinstance(t, FreeEvo):
        return apply_free_evolution(psi, t.sigma)
    if isinstance(t, HarmonicEvo):
        return apply_harmonic_evolution(psi, t.sigma)
    if isinstance(t, Translation):
        return apply_translation(psi, t.axis, t.u)
    if isinstance(t, GradSquarePhase):
        return apply_phase(psi, -_grad_sq_array(sys, t.phi))
    if isinstance(t, PartialPhase):
        phi = t.phi
        if isinstance(phi, GaussHermite):
            return apply_phase(psi, -d_partial(phi, t.axis).evaluate(sys.grid))
        grad = gradient_array(sys.grid, _phase_array(sys, phi))
        return apply_phase(psi, -grad[t.axis])
    if isinstance(t, GradientFlow):
        return apply_transport(psi, TransportSpec(_field(sys, t.phi), t.t))
    if isinstance(t, TwistedGradientFlow):
        return apply_twisted_transport(psi, TransportSpec(_field(sys, t.phi), t.t), sys.A)
    raise InadmissibleTarget(f"no oracle for {t!r}")


# --------------------------------------------------------------------------
# textual syntax
# --------------------------------------------------------------------------

GRAMMAR = """\
target    := call
call      := NAME "(" [arg ("," arg)*] ")"
arg       := value | NAME ":" value | NAME "=" value
value     := NUMBER | STRING | call

phase(expr [, scale])            exp(i scale phi); keyword trig:/hermite:/expr: selects the family
qphase(delta)                    exp(i delta |x|^2)
dilation(alpha)                  D_alpha
freeevo(sigma)                   exp(i sigma Lap), sigma >= 0
harmonic(sigma)                  exp(i sigma (Lap - |x|^2)), sigma >= 0
translation(axis, u)             psi(x + u e_axis), axis zero-based
gradsq(expr)                     exp(-i |grad phi|^2)
partial(axis, expr)              exp(-i d_axis phi)
gradflow(expr [, t])             transport along f = 2 t grad(phi)
twistedflow(expr [, t])          same with the factor exp(-2i int <A, grad phi>)
compose(op, op, ...)             operator product, last factor acts first
identity()                       compose() with no factors
"""


def _literal(node):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _literal(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call):
        return _build(node)
    raise SyntaxError(f"unsupported value {ast.dump(node)}")


_PHASE_KW = {"trig": "trig", "hermite": "hermite", "expr": "field", "phi": "auto"}


def _phase_args(args, kwargs, name):
    fam = "auto"
    phi = None
    for k in list(kwargs):
        if k in _PHASE_KW:
            phi = kwargs.pop(k)
            fam = _PHASE_KW[k]
    if phi is None:
        if not args:
            raise SyntaxError(f"{name} needs a phase expression")
        phi = args.pop(0)
    if not isinstance(phi, str):
        phi = str(phi)
    return phi, fam


def _build(node: ast.Call):
    if not isinstance(node.func, ast.Name):
        raise SyntaxError("targets are plain function calls")
    name = node.func.id
    args = [_literal(a) for a in node.args]
    kwargs = {kw.arg: _literal(kw.value) for kw in node.keywords}
    if name == "compose":
        return Compose(tuple(args))
    if name == "identity":
        return Compose(())
    if name == "phase":
        phi, fam = _phase_args(args, kwargs, name)
        scale = kwargs.pop("scale", args[0] if args else 1.0)
        return Phase(phi, float(scale), fam)
    if name in ("gradsq", "gradflow", "twistedflow"):
        phi, fam = _phase_args(args, kwargs, name)
        if name == "gradsq":
            return GradSquarePhase(phi, fam)
        t = float(kwargs.pop("t", args[0] if args else 1.0))
        return (GradientFlow if name == "gradflow" else TwistedGradientFlow)(phi, t, fam)
    if name == "partial":
        axis = int(kwargs.pop("axis", args.pop(0) if args else 0))
        phi, fam = _phase_args(args, kwargs, name)
        return PartialPhase(axis, phi, fam)
    simple = {"qphase": (QuadraticPhase, "delta"), "dilation": (Dilation, "alpha"),
              "freeevo": (FreeEvo, "sigma"), "harmonic": (HarmonicEvo, "sigma")}
    if name in simple:
        cls, key = simple[name]
        val = kwargs.pop(key, args[0] if args else None)
        if val is None:
            raise SyntaxError(f"{name} needs {key}")
        return cls(float(val))
    if name == "translation":
        axis = int(kwargs.pop("axis", args[0] if args else 0))
        u = float(kwargs.pop("u", args[1] if len(args) > 1 else 0.0))
        return Translation(axis, u)
    raise SyntaxError(f"unknown target {name!r}")


def parse_target(text: str) -> TargetOp:
    """Parse the textual target syntax (see ``GRAMMAR``)."""
    import re

    src = re.sub(r"\b([A-Za-z_]\w*)\s*:(?!=)", r"\1=", text.strip())
    tree = ast.parse(src, mode="eval")
    if not isinstance(tree.body, ast.Call):
        raise SyntaxError("a target is a call such as dilation(2.0)")
    return _build(tree.body)


def describe(t: TargetOp) -> str:
    """Inverse of :func:`parse_target` for textual phases."""
    def phase_text(phi, fam):
        if isinstance(phi, str):
            key = {"trig": "trig", "hermite": "hermite", "field": "expr"}.get(fam)
            return f'{key}: "{phi}"' if key else f'"{phi}"'
        return f'"<{type(phi).__name__}>"'

    if isinstance(t, Compose):
        return "compose(" + ", ".join(describe(o) for o in t.ops) + ")" if t.ops else "identity()"
    if isinstance(t, Phase):
        extra = f", scale: {t.scale!r}" if t.scale != 1 else ""
        return f"phase({phase_text(t.phi, t.family)}{extra})"
    if isinstance(t, QuadraticPhase):
        return f"qphase({t.delta!r})"
    if isinstance(t, Dilation):
        return f"dilation({t.alpha!r})"
    if isinstance(t, FreeEvo):
        return f"freeevo({t.sigma!r})"
    if isinstance(t, HarmonicEvo):
        return f"harmonic({t.sigma!r})"
    if isinstance(t, Translation):
        return f"translation({t.axis}, {t.u!r})"
    if isinstance(t, GradSquarePhase):
        return f"gradsq({phase_text(t.phi, t.family)})"
    if isinstance(t, PartialPhase):
        return f"partial({t.axis}, {phase_text(t.phi, t.family)})"
    if isinstance(t, GradientFlow):
        return f"gradflow({phase_text(t.phi, t.family)}, t: {t.t!r})"
    if isinstance(t, TwistedGradientFlow):
        return f"twistedflow({phase_text(t.phi, t.family)}, t: {t.t!r})"
    return repr(t)
