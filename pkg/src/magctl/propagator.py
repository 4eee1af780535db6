"""Piecewise-constant control schedules and their exact execution.

A :class:`Schedule` is a time-ordered list of segments: ``evolve`` (constant
controls for a duration), ``kick`` (an instantaneous phase ``exp(i phi)``)
and ``phase`` (global phase bookkeeping).  Schedules read left to right in
time, so the operator product ``L1 L2`` is the schedule ``S(L2) + S(L1)``.
"""
from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .core import WaveFunction
from .hamiltonian import ControlSystem, apply_hamiltonian, assemble

DENSE_AUTO_CAP = 1024
KRYLOV_TOL = 1e-9
KRYLOV_MAX_DIM = 80
SCHEDULE_VERSION = 1


class KrylovError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# schedule data
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Segment:
    kind: str
    duration: float = 0.0
    u: tuple[float, ...] | None = None
    kick_coeffs: tuple[float, ...] | None = None
    kick_field: np.ndarray | None = None
    phase: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("evolve", "kick", "phase"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == "evolve":
            if not self.duration >= 0:
                raise ValueError("evolve duration must be >= 0")
            if self.u is None:
                raise ValueError("evolve segments need a control vector")
            object.__setattr__(self, "u", tuple(float(x) for x in self.u))
        if self.kind == "kick":
            if (self.kick_coeffs is None) == (self.kick_field is None):
                raise ValueError("a kick needs exactly one of kick_coeffs or kick_field")
            if self.kick_coeffs is not None:
                object.__setattr__(self, "kick_coeffs", tuple(float(x) for x in self.kick_coeffs))
            else:
                f = np.array(self.kick_field, dtype=float)
                f.setflags(write=False)
                object.__setattr__(self, "kick_field", f)

    @classmethod
    def evolve(cls, duration: float, u, label: str = "") -> "Segment":
        return cls("evolve", duration=float(duration), u=tuple(u), label=label)

    @classmethod
    def kick(cls, coeffs, label: str = "") -> "Segment":
        return cls("kick", kick_coeffs=tuple(coeffs), label=label)

    @classmethod
    def field_kick(cls, phase_field, label: str = "") -> "Segment":
        return cls("kick", kick_field=np.asarray(phase_field), label=label)

    @classmethod
    def global_phase(cls, phase: float, label: str = "") -> "Segment":
        return cls("phase", phase=float(phase), label=label)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "duration": self.duration,
               "u": list(self.u) if self.u is not None else None,
               "kick_coeffs": list(self.kick_coeffs) if self.kick_coeffs is not None else None,
               "kick_field": None, "phase": self.phase, "label": self.label}
        if self.kick_field is not None:
            out["kick_field"] = {"shape": list(self.kick_field.shape),
                                 "values": self.kick_field.ravel().tolist()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Segment":
        kf = data.get("kick_field")
        if kf is not None:
            kf = np.asarray(kf["values"], dtype=float).reshape(kf["shape"])
        return cls(data["kind"], duration=data.get("duration", 0.0), u=data.get("u"),
                   kick_coeffs=data.get("kick_coeffs"), kick_field=kf,
                   phase=data.get("phase", 0.0), label=data.get("label", ""))


@dataclass(frozen=True, eq=False)
class Schedule:
    segments: tuple[Segment, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __add__(self, other: "Schedule") -> "Schedule":
        meta = {"concat": [m for m in (self.meta, other.meta) if m]}
        return Schedule(self.segments + other.segments, meta)

    def then(self, *others: "Schedule", meta: dict | None = None) -> "Schedule":
        segs = self.segments
        for o in others:
            segs = segs + o.segments
        return Schedule(segs, meta if meta is not None else dict(self.meta))

    def repeat(self, n: int) -> "Schedule":
        return Schedule(self.segments * n, dict(self.meta))

    def with_meta(self, **meta) -> "Schedule":
        return Schedule(self.segments, {**self.meta, **meta})

    @property
    def global_phase(self) -> float:
        return float(sum(s.phase for s in self.segments if s.kind == "phase") % (2 * np.pi))

    @property
    def n_kicks(self) -> int:
        return sum(1 for s in self.segments if s.kind == "kick")

    def total_duration(self, kick_mode="ideal") -> float:
        mode = KickMode.parse(kick_mode)
        t = sum(s.duration for s in self.segments if s.kind == "evolve")
        if mode.kind == "pulsed":
            t += mode.eps * sum(1 for s in self.segments if s.kind == "kick" and s.kick_coeffs is not None)
        return float(t)

    def to_json(self, **kwargs) -> str:
        return json.dumps({"version": SCHEDULE_VERSION,
                           "segments": [s.to_dict() for s in self.segments],
                           "global_phase": self.global_phase,
                           "meta": self.meta}, **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        data = json.loads(text)
        if data.get("version") != SCHEDULE_VERSION:
            raise ValueError(f"unsupported schedule version {data.get('version')!r}")
        return cls(tuple(Segment.from_dict(s) for s in data["segments"]), data.get("meta", {}))


EMPTY = Schedule()


def trotter_pair(first: Schedule, second: Schedule, n: int) -> Schedule:
    """``(first + second)`` repeated ``n`` times; callers pass the 1/n steps."""
    if n < 1:
        raise ValueError("Trotter count must be >= 1")
    meta = {"trotter": n, "first": first.meta, "second": second.meta}
    return Schedule((first.segments + second.segments) * n, meta)


@dataclass(frozen=True)
class KickMode:
    kind: str = "ideal"
    eps: float = 0.0

    @classmethod
    def parse(cls, spec) -> "KickMode":
        if isinstance(spec, KickMode):
            return spec
        if isinstance(spec, (tuple, list)):
            return cls(spec[0], float(spec[1]))
        text = str(spec).strip().lower()
        if text == "ideal":
            return cls("ideal", 0.0)
        if text.startswith("pulsed:"):
            eps = float(text.split(":", 1)[1])
            if not eps > 0:
                raise ValueError("pulse duration must be positive")
            return cls("pulsed", eps)
        raise ValueError(f"kick mode must be 'ideal' or 'pulsed:<eps>', got {spec!r}")

    def __str__(self):
        return "ideal" if self.kind == "ideal" else f"pulsed:{self.eps:g}"


# --------------------------------------------------------------------------
# constant-control evolution
# --------------------------------------------------------------------------


class _EigCache:
    """LRU of eigendecompositions keyed by (system token, rounded controls)."""

    def __init__(self, max_entries: int = 2**24):
        self.max_entries = max_entries
        self._data: OrderedDict = OrderedDict()
        self._used = 0
        self._lock = threading.RLock()

    def key(self, sys: ControlSystem, u) -> tuple:
        return (sys.token,) + tuple(float(f"{x:.12g}") for x in np.asarray(u, dtype=float).ravel())

    def get(self, sys: ControlSystem, u):
        k = self.key(sys, u)
        with self._lock:
            hit = self._data.get(k)
            if hit is not None:
                self._data.move_to_end(k)
                return hit
        H = assemble(sys, u).matrix
        evals, evecs = np.linalg.eigh(H)
        with self._lock:
            self._data[k] = (evals, evecs)
            self._used += evecs.size
            while self._used > self.max_entries and len(self._data) > 1:
                _, (_, old) = self._data.popitem(last=False)
                self._used -= old.size
        return evals, evecs

    def clear(self):
        with self._lock:
            self._data.clear()
            self._used = 0


EIG_CACHE = _EigCache()


def _spectral_radius_bound(sys: ControlSystem, u) -> float:
    grid = sys.grid
    pot = sys.potential(u)
    kin = 0.0
    for j in range(grid.d):
        kmax = float(np.max(np.abs(grid.wavenumbers[j])))
        amax = float(np.max(np.abs(sys.A.components[j].values)))
        kin += (kmax + amax) ** 2
    return kin + float(np.max(np.abs(pot)))


def _lanczos_expm(matvec, v: np.ndarray, h: float, tol: float, m_max: int):
    """One Krylov approximation of ``exp(-i h H) v``; ``None`` when not converged."""
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), 0
    basis = np.empty((m_max + 1, v.size), dtype=complex)
    basis[0] = v / beta0
    alpha, beta = [], []
    for j in range(m_max):
        w = matvec(basis[j])
        a = float(np.vdot(basis[j], w).real)
        w = w - a * basis[j]
        if j > 0:
            w = w - beta[-1] * basis[j - 1]
        for _ in range(2):
            w = w - (basis[: j + 1].conj() @ w) @ basis[: j + 1]
        b = float(np.linalg.norm(w))
        alpha.append(a)
        m = j + 1
        breakdown = b <= 1e-13 * max(1.0, abs(a))
        if breakdown or m % 4 == 0 or m == m_max:
            if m == 1:
                evals, S = np.array(alpha), np.ones((1, 1))
            else:
                evals, S = eigh_tridiagonal(np.array(alpha), np.array(beta))
            y = S @ (np.exp(-1j * h * evals) * S[0])
            err = b * abs(y[-1]) * beta0
            if breakdown or err < tol:
                return beta0 * (y @ basis[:m]), m
        beta.append(b)
        basis[j + 1] = w / b
    return None, m_max


def krylov_expm(matvec, v: np.ndarray, tau: float, radius: float, tol: float = KRYLOV_TOL,
                m_max: int = KRYLOV_MAX_DIM) -> np.ndarray:
    """``exp(-i tau H) v`` with adaptive substeps (Hermitian ``H``)."""
    if tau == 0:
        return v.copy()
    remaining = tau
    h = min(tau, 0.5 * m_max / max(radius, 1e-300))
    out = v
    while remaining > 1e-15 * tau:
        h = min(h, remaining)
        res, used = _lanczos_expm(matvec, out, h, tol * h / tau, m_max)
        if res is None:
            h *= 0.5
            if h < 1e-14 * tau:
                raise KrylovError("Krylov propagation failed to converge")
            continue
        out = res
        remaining -= h
        if used <= m_max // 2:
            h *= 1.5
    return out


def _evolve_array(sys: ControlSystem, u, tau: float, vals: np.ndarray, method: str) -> np.ndarray:
    if tau < 0:
        raise ValueError("evolution time must be >= 0")
    if tau == 0:
        return vals.copy()
    if method == "auto":
        method = "dense_eig" if sys.grid.size <= DENSE_AUTO_CAP else "krylov"
    if method == "dense_eig":
        evals, evecs = EIG_CACHE.get(sys, u)
        flat = vals.ravel()
        out = evecs @ (np.exp(-1j * tau * evals) * (evecs.conj().T @ flat))
        return out.reshape(vals.shape)
    if method == "krylov":
        pot = sys.potential(u)
        shape = sys.grid.shape
        from .hamiltonian import magnetic_laplacian_apply

        def matvec(x):
            xs = x.reshape(shape)
            return (magnetic_laplacian_apply(sys, xs) + pot * xs).ravel()

        radius = _spectral_radius_bound(sys, u)
        return krylov_expm(matvec, vals.ravel().astype(complex), tau, radius).reshape(shape)
    raise ValueError(f"unknown method {method!r}")


def evolve_constant(sys: ControlSystem, u, tau: float, psi, method: str = "auto"):
    """``exp(-i tau H_u) psi``.

    ``method`` is ``dense_eig`` (cached eigendecomposition, at most 4096
    points), ``krylov`` (Lanczos with full reorthogonalisation) or ``auto``.
    """
    vals = np.asarray(getattr(psi, "values", psi), dtype=complex)
    out = _evolve_array(sys, u, float(tau), vals, method)
    if isinstance(psi, WaveFunction):
        return psi.with_values(out)
    return out


# --------------------------------------------------------------------------
# schedule execution
# --------------------------------------------------------------------------


def kick_phase(sys: ControlSystem, seg: Segment) -> np.ndarray:
    if seg.kick_field is not None:
        if seg.kick_field.shape != sys.grid.shape:
            raise ValueError("kick field does not match the system grid")
        return seg.kick_field
    c = np.asarray(seg.kick_coeffs)
    if c.size != sys.m:
        raise ValueError(f"kick has {c.size} coefficients, system has {sys.m} controls")
    return sum(cj * w.values for cj, w in zip(c, sys.W) if cj)


def execute(sys: ControlSystem, schedule: Schedule, psi, kick_mode="ideal", method: str = "auto",
            trace: list | None = None):
    """Run ``schedule`` from ``psi``; returns ``(final_state, total_control_time)``.

    Coefficient kicks are exact phase multiplications in ideal mode and
    ``exp(-i eps (H_0 - sum c_j W_j / eps))`` pulses in ``pulsed:<eps>`` mode.
    Kicks carrying a sampled phase field are applied as exact phases in
    both modes.  When ``trace`` is a list, per-segment norm drifts are
    appended to it (keys ``kind``, ``label``, ``method``, ``drift``).
    """
    mode = KickMode.parse(kick_mode)
    if method == "auto":
        method = "dense_eig" if sys.grid.size <= DENSE_AUTO_CAP else "krylov"
    vals = np.array(getattr(psi, "values", psi), dtype=complex)
    grid_dv = sys.grid.dv
    t_total = 0.0
    for seg in schedule.segments:
        before = np.sqrt(np.sum(np.abs(vals) ** 2) * grid_dv) if trace is not None else None
        if seg.kind == "evolve":
            vals = _evolve_array(sys, seg.u, seg.duration, vals, method)
            t_total += seg.duration
        elif seg.kind == "kick":
            if mode.kind == "pulsed" and seg.kick_coeffs is not None:
                u = -np.asarray(seg.kick_coeffs) / mode.eps
                vals = _evolve_array(sys, u, mode.eps, vals, method)
                t_total += mode.eps
            else:
                vals = vals * np.exp(1j * kick_phase(sys, seg))
        else:
            vals = vals * np.exp(1j * seg.phase)
        if trace is not None:
            after = np.sqrt(np.sum(np.abs(vals) ** 2) * grid_dv)
            trace.append({"kind": seg.kind, "label": seg.label, "method": method,
                          "drift": float(abs(after - before))})
    if isinstance(psi, WaveFunction):
        return psi.with_values(vals), t_total
    return vals, t_total
