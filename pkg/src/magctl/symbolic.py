"""Exact phase algebras and saturation certificates.

Two function classes are handled exactly:

* :class:`TrigPoly` -- real trigonometric polynomials on the torus, with the
  bracket ``phi -> -|grad phi|^2``;
* :class:`GaussHermite` -- ``<l, x> + c + p(x) exp(-|x|^2/2)`` on the line,
  with the bracket ``phi -> -d_j phi``.

A :class:`Derivation` is a certificate tree showing that a target phase is
obtained from the system's base phases (the control potentials) by real
linear combinations and brackets.  Coefficients may be ``Fraction`` (exact)
or ``float``.
"""
from __future__ import annotations

import itertools
import json
import numbers
from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np

FREQ_CAP = 16
DEPTH_CAP = 6
DEGREE_CAP = 12

HALF = Fraction(1, 2)


class FrequencyOverflow(ValueError):
    pass


class DegreeOverflow(ValueError):
    pass


class SaturationError(ValueError):
    pass


def _is_zero(c) -> bool:
    return c == 0


def _coef_json(c):
    if isinstance(c, Fraction):
        return str(c)
    if isinstance(c, numbers.Integral):
        return int(c)
    return float(c)


def _coef_from_json(c):
    return Fraction(c) if isinstance(c, str) else c


# --------------------------------------------------------------------------
# trigonometric polynomials
# --------------------------------------------------------------------------


def canonical(k) -> tuple[tuple[int, ...], int]:
    """Representative of ``+-k`` whose first nonzero entry is positive, and the sign used."""
    k = tuple(int(v) for v in k)
    for v in k:
        if v > 0:
            return k, 1
        if v < 0:
            return tuple(-x for x in k), -1
    return k, 1


class TrigPoly:
    """``sum_k s_k sin<k, x> + c_k cos<k, x>`` over canonical frequencies ``k``.

    The zero frequency stores the constant in its cosine slot.
    """

    __slots__ = ("d", "terms")

    def __init__(self, d: int, terms=None, cap: int = FREQ_CAP):
        self.d = d
        clean: dict[tuple[int, ...], tuple] = {}
        for k, (s, c) in (terms or {}).items():
            kk, sign = canonical(k)
            if len(kk) != d:
                raise ValueError(f"frequency {k} is not {d}-dimensional")
            if max((abs(v) for v in kk), default=0) > cap:
                raise FrequencyOverflow(f"frequency {kk} exceeds the cap |k|_inf <= {cap}")
            if not any(kk):
                s = 0
            s0, c0 = clean.get(kk, (0, 0))
            clean[kk] = (s0 + sign * s, c0 + c)
        self.terms = {k: v for k, v in sorted(clean.items()) if not (_is_zero(v[0]) and _is_zero(v[1]))}

    # constructors --------------------------------------------------------
    @classmethod
    def zero(cls, d: int) -> "TrigPoly":
        return cls(d)

    @classmethod
    def const(cls, d: int, c) -> "TrigPoly":
        return cls(d, {(0,) * d: (0, c)})

    @classmethod
    def sin(cls, k, coef=1) -> "TrigPoly":
        return cls(len(k), {tuple(k): (coef, 0)})

    @classmethod
    def cos(cls, k, coef=1) -> "TrigPoly":
        return cls(len(k), {tuple(k): (0, coef)})

    @classmethod
    def from_samples(cls, grid, values, rtol: float = 1e-12, cap: int = FREQ_CAP) -> "TrigPoly":
        """Fourier truncation of real torus samples (float coefficients)."""
        if grid.kind != "torus":
            raise ValueError("trigonometric polynomials live on the torus")
        vals = np.asarray(values, dtype=float)
        spec = np.fft.fftn(vals) / grid.size
        scale = max(float(np.max(np.abs(spec))), 1e-300)
        terms = {}
        for idx in zip(*np.nonzero(np.abs(spec) > rtol * scale)):
            k = tuple(int(grid.freq_lattice[j][idx[j]]) for j in range(grid.d))
            if any(abs(v) == grid.n[j] // 2 for j, v in enumerate(k)):
                raise FrequencyOverflow("phase has content at the Nyquist frequency")
            kk, sign = canonical(k)
            if kk != k:
                continue
            f = spec[idx]
            if not any(k):
                terms[k] = (0, float(f.real))
            else:
                terms[k] = (float(-2 * f.imag), float(2 * f.real))
        return cls(grid.d, terms, cap)

    @classmethod
    def from_expr(cls, text: str, d: int, cap: int = FREQ_CAP) -> "TrigPoly":
        """Trigonometric polynomial from an expression string (numerical Fourier analysis)."""
        from .core import make_grid, sample

        n = 64 if d < 3 else 32
        grid = make_grid("torus", d, n)
        return cls.from_samples(grid, sample(text, grid).values, cap=cap)

    # algebra ---------------------------------------------------------------
    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        self._check(other)
        terms = dict(self.terms)
        for k, (s, c) in other.terms.items():
            s0, c0 = terms.get(k, (0, 0))
            terms[k] = (s0 + s, c0 + c)
        return TrigPoly(self.d, terms)

    def __neg__(self) -> "TrigPoly":
        return self.scale(-1)

    def __sub__(self, other: "TrigPoly") -> "TrigPoly":
        return self + (-other)

    def scale(self, a) -> "TrigPoly":
        return TrigPoly(self.d, {k: (a * s, a * c) for k, (s, c) in self.terms.items()})

    __rmul__ = scale

    def __eq__(self, other) -> bool:
        return isinstance(other, TrigPoly) and self.d == other.d and self.terms == other.terms

    def __hash__(self):
        return hash((self.d, tuple(self.terms.items())))

    def __repr__(self):
        parts = []
        for k, (s, c) in self.terms.items():
            if not any(k):
                parts.append(f"{c}")
                continue
            if s:
                parts.append(f"{s}*sin{k}")
            if c:
                parts.append(f"{c}*cos{k}")
        return f"TrigPoly(d={self.d}: " + (" + ".join(parts) or "0") + ")"

    def _check(self, other):
        if not isinstance(other, TrigPoly) or other.d != self.d:
            raise ValueError("trigonometric polynomials of different dimension")

    @property
    def constant(self):
        return self.terms.get((0,) * self.d, (0, 0))[1]

    def drop_constant(self) -> "TrigPoly":
        return TrigPoly(self.d, {k: v for k, v in self.terms.items() if any(k)})

    def is_constant(self) -> bool:
        return all(not any(k) for k in self.terms)

    def support(self) -> list[tuple[int, ...]]:
        return [k for k in self.terms if any(k)]

    def max_freq(self) -> int:
        return max((max(abs(v) for v in k) for k in self.terms), default=0)

    def derivative(self, j: int) -> "TrigPoly":
        """``d/dx_j``: ``s sin + c cos -> k_j (s cos - c sin)``."""
        return TrigPoly(self.d, {k: (-k[j] * c, k[j] * s) for k, (s, c) in self.terms.items() if k[j]})

    def __mul__(self, other):
        if not isinstance(other, TrigPoly):
            return self.scale(other)
        self._check(other)
        out: dict = {}

        def put(m, s, c):
            mm, sign = canonical(m)
            s0, c0 = out.get(mm, (0, 0))
            out[mm] = (s0 + sign * s, c0 + c)

        for (k, (s1, c1)), (l, (s2, c2)) in itertools.product(self.terms.items(), other.terms.items()):
            kp = tuple(a + b for a, b in zip(k, l))
            km = tuple(a - b for a, b in zip(k, l))
            # s_k s_l = (c_{k-l} - c_{k+l})/2 ; c_k c_l = (c_{k-l} + c_{k+l})/2
            # s_k c_l = (s_{k+l} + s_{k-l})/2 ; c_k s_l = (s_{k+l} - s_{k-l})/2
            if s1 and s2:
                put(km, 0, HALF * s1 * s2)
                put(kp, 0, -HALF * s1 * s2)
            if c1 and c2:
                put(km, 0, HALF * c1 * c2)
                put(kp, 0, HALF * c1 * c2)
            if s1 and c2:
                put(kp, HALF * s1 * c2, 0)
                put(km, HALF * s1 * c2, 0)
            if c1 and s2:
                put(kp, HALF * c1 * s2, 0)
                put(km, -HALF * c1 * s2, 0)
        # sin of the zero frequency vanishes; the constructor drops it
        return TrigPoly(self.d, out)

    def evaluate(self, grid) -> np.ndarray:
        if grid.d != self.d:
            raise ValueError("grid dimension mismatch")
        out = np.zeros(grid.shape)
        for k, (s, c) in self.terms.items():
            arg = sum(kj * x for kj, x in zip(k, grid.coords)) if any(k) else 0.0
            if s:
                out = out + float(s) * np.sin(arg)
            if c:
                out = out + float(c) * np.cos(arg)
        return out

    def to_json(self) -> dict:
        return {"d": self.d, "terms": [[list(k), _coef_json(s), _coef_json(c)] for k, (s, c) in self.terms.items()]}

    @classmethod
    def from_json(cls, data: dict) -> "TrigPoly":
        return cls(data["d"], {tuple(k): (_coef_from_json(s), _coef_from_json(c)) for k, s, c in data["terms"]})


def grad_square(phi: TrigPoly) -> TrigPoly:
    """``|grad phi|^2`` expanded exactly with product-to-sum identities."""
    out = TrigPoly.zero(phi.d)
    for j in range(phi.d):
        g = phi.derivative(j)
        out = out + g * g
    return out


def bracket(phi: TrigPoly, chi: TrigPoly) -> TrigPoly:
    """``<grad phi, grad chi>`` by polarisation of :func:`grad_square`."""
    return (grad_square(phi + chi) - grad_square(phi) - grad_square(chi)).scale(HALF)


def trig_base_phases(d: int) -> list[TrigPoly]:
    """Control potentials of the trigonometric torus system, in control order."""
    from .hamiltonian import trig_frequencies

    out = []
    for b in trig_frequencies(d):
        k = tuple(int(v) for v in b)
        out += [TrigPoly.sin(k), TrigPoly.cos(k)]
    return out


# --------------------------------------------------------------------------
# polynomial x Gaussian class
# --------------------------------------------------------------------------


def _monomials(d: int, deg: int):
    for total in range(deg + 1):
        for alpha in itertools.product(range(total + 1), repeat=d):
            if sum(alpha) == total:
                yield alpha


class GaussHermite:
    """``<l, x> + c + p(x) exp(-|x|^2/2)`` with ``p`` a polynomial (monomial dict)."""

    __slots__ = ("d", "linear", "const", "poly")

    def __init__(self, d: int, linear=None, poly=None, const=0, cap: int = DEGREE_CAP):
        self.d = d
        lin = tuple(linear) if linear is not None else (0,) * d
        if len(lin) != d:
            raise ValueError("linear part needs d entries")
        self.linear = lin
        self.const = const
        clean = {}
        for alpha, c in (poly or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != d:
                raise ValueError(f"multi-index {alpha} is not {d}-dimensional")
            if sum(alpha) > cap:
                raise DegreeOverflow(f"degree {sum(alpha)} exceeds cap {cap}")
            clean[alpha] = clean.get(alpha, 0) + c
        self.poly = {a: c for a, c in sorted(clean.items()) if not _is_zero(c)}

    @classmethod
    def gaussian(cls, d: int, coef=1) -> "GaussHermite":
        return cls(d, poly={(0,) * d: coef})

    @classmethod
    def coordinate(cls, d: int, j: int, coef=1) -> "GaussHermite":
        lin = [0] * d
        lin[j] = coef
        return cls(d, linear=lin)

    @classmethod
    def hermite(cls, alpha, coef=1) -> "GaussHermite":
        """``coef * He_alpha(x) exp(-|x|^2/2)`` with probabilists' Hermite polynomials."""
        d = len(alpha)
        poly = {(0,) * d: coef}
        for j, n in enumerate(alpha):
            cj = _hermite_e_coeffs(n)
            new = {}
            for a, c in poly.items():
                for p, h in enumerate(cj):
                    if h:
                        b = list(a)
                        b[j] += p
                        new[tuple(b)] = new.get(tuple(b), 0) + c * h
            poly = new
        return cls(d, poly=poly)

    def __add__(self, other: "GaussHermite") -> "GaussHermite":
        self._check(other)
        poly = dict(self.poly)
        for a, c in other.poly.items():
            poly[a] = poly.get(a, 0) + c
        return GaussHermite(self.d, [x + y for x, y in zip(self.linear, other.linear)], poly,
                            self.const + other.const)

    def scale(self, s) -> "GaussHermite":
        return GaussHermite(self.d, [s * x for x in self.linear], {a: s * c for a, c in self.poly.items()},
                            s * self.const)

    __rmul__ = scale

    def __mul__(self, s):
        return self.scale(s)

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other) -> bool:
        return (isinstance(other, GaussHermite) and self.d == other.d and self.linear == other.linear
                and self.poly == other.poly and self.const == other.const)

    def __hash__(self):
        return hash((self.d, self.linear, tuple(self.poly.items()), self.const))

    def __repr__(self):
        return f"GaussHermite(d={self.d}, linear={self.linear}, const={self.const}, poly={self.poly})"

    def _check(self, other):
        if not isinstance(other, GaussHermite) or other.d != self.d:
            raise ValueError("Gauss-Hermite functions of different dimension")

    def drop_constant(self) -> "GaussHermite":
        return GaussHermite(self.d, self.linear, self.poly, 0)

    def is_constant(self) -> bool:
        return not self.poly and all(_is_zero(x) for x in self.linear)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.poly), default=0)

    def evaluate(self, grid) -> np.ndarray:
        if grid.d != self.d:
            raise ValueError("grid dimension mismatch")
        x = grid.coords
        out = np.full(grid.shape, float(self.const))
        for j, lj in enumerate(self.linear):
            if lj:
                out = out + float(lj) * x[j]
        if self.poly:
            p = np.zeros(grid.shape)
            for a, c in self.poly.items():
                term = np.full(grid.shape, float(c))
                for j, e in enumerate(a):
                    if e:
                        term = term * x[j] ** e
                p = p + term
            out = out + p * np.exp(-grid.r2 / 2)
        return out

    def to_json(self) -> dict:
        return {"d": self.d, "linear": [_coef_json(c) for c in self.linear], "const": _coef_json(self.const),
                "poly": [[list(a), _coef_json(c)] for a, c in self.poly.items()]}

    @classmethod
    def from_json(cls, data: dict) -> "GaussHermite":
        return cls(data["d"], [_coef_from_json(c) for c in data["linear"]],
                   {tuple(a): _coef_from_json(c) for a, c in data["poly"]}, _coef_from_json(data["const"]))


def _hermite_e_coeffs(n: int) -> list[int]:
    """Integer coefficients (ascending powers) of the probabilists' Hermite polynomial He_n."""
    return [0 if (n - m) % 2 else (-1) ** ((n - m) // 2) * factorial(n) // (factorial(m) * factorial((n - m) // 2) * 2 ** ((n - m) // 2))
            for m in range(n + 1)]


def d_partial(phi: GaussHermite, j: int, cap: int = DEGREE_CAP) -> GaussHermite:
    """``d/dx_j`` of ``<l, x> + c + p exp(-|x|^2/2)``: ``l_j + (d_j p - x_j p) exp(-|x|^2/2)``."""
    poly = {}
    for a, c in phi.poly.items():
        if a[j]:
            b = list(a)
            b[j] -= 1
            poly[tuple(b)] = poly.get(tuple(b), 0) + a[j] * c
        b = list(a)
        b[j] += 1
        poly[tuple(b)] = poly.get(tuple(b), 0) - c
    return GaussHermite(phi.d, None, poly, phi.linear[j], cap)


def hermite_base_phases(d: int) -> list[GaussHermite]:
    """Control potentials of the dipole line system: ``x_1, ..., x_d, exp(-|x|^2/2)``."""
    return [GaussHermite.coordinate(d, j) for j in range(d)] + [GaussHermite.gaussian(d)]


# --------------------------------------------------------------------------
# derivations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Base:
    index: int


@dataclass(frozen=True)
class Span:
    coeffs: tuple
    children: tuple


@dataclass(frozen=True)
class GradSq:
    child: object


@dataclass(frozen=True)
class Partial:
    axis: int
    child: object


def node_depth(node) -> int:
    if isinstance(node, Base):
        return 0
    if isinstance(node, Span):
        return max((node_depth(c) for c in node.children), default=0)
    return 1 + node_depth(node.child)


def node_to_json(node) -> dict:
    if isinstance(node, Base):
        return {"node": "base", "index": node.index}
    if isinstance(node, Span):
        return {"node": "span", "coeffs": [_coef_json(c) for c in node.coeffs],
                "children": [node_to_json(c) for c in node.children]}
    if isinstance(node, GradSq):
        return {"node": "gradsq", "child": node_to_json(node.child)}
    return {"node": "partial", "axis": node.axis, "child": node_to_json(node.child)}


def node_from_json(data: dict):
    kind = data["node"]
    if kind == "base":
        return Base(int(data["index"]))
    if kind == "span":
        return Span(tuple(_coef_from_json(c) for c in data["coeffs"]),
                    tuple(node_from_json(c) for c in data["children"]))
    if kind == "gradsq":
        return GradSq(node_from_json(data["child"]))
    if kind == "partial":
        return Partial(int(data["axis"]), node_from_json(data["child"]))
    raise ValueError(f"unknown derivation node {kind!r}")


def evaluate_node(node, algebra: str, d: int, _memo=None):
    """Symbolic value of a derivation tree in the ``trig`` or ``hermite`` algebra."""
    memo = {} if _memo is None else _memo
    hit = memo.get(node)
    if hit is not None:
        return hit
    if isinstance(node, Base):
        bases = trig_base_phases(d) if algebra == "trig" else hermite_base_phases(d)
        val = bases[node.index]
    elif isinstance(node, Span):
        val = TrigPoly.zero(d) if algebra == "trig" else GaussHermite(d)
        for c, child in zip(node.coeffs, node.children):
            val = val + evaluate_node(child, algebra, d, memo).scale(c)
    elif isinstance(node, GradSq):
        if algebra != "trig":
            raise ValueError("GradSq nodes belong to the trigonometric algebra")
        val = -grad_square(evaluate_node(node.child, algebra, d, memo))
    elif isinstance(node, Partial):
        if algebra != "hermite":
            raise ValueError("Partial nodes belong to the Gauss-Hermite algebra")
        val = -d_partial(evaluate_node(node.child, algebra, d, memo), node.axis)
    else:
        raise TypeError(f"not a derivation node: {node!r}")
    memo[node] = val
    return val


def node_expr(node, algebra: str, d: int, _memo=None):
    """The derivation tree as a sympy expression, brackets taken by exact differentiation.

    Independent of the algebra classes: base phases are rebuilt from the
    control potentials and ``GradSq`` / ``Partial`` use ``sympy.diff``.
    """
    import sympy as sp

    from .expr import AXIS_SYMBOLS

    xs = AXIS_SYMBOLS[:d]
    memo = {} if _memo is None else _memo
    hit = memo.get(node)
    if hit is not None:
        return hit
    if isinstance(node, Base):
        if algebra == "trig":
            from .hamiltonian import trig_frequencies

            b = trig_frequencies(d)[node.index // 2]
            arg = sum(int(bj) * x for bj, x in zip(b, xs))
            val = sp.sin(arg) if node.index % 2 == 0 else sp.cos(arg)
        else:
            val = xs[node.index] if node.index < d else sp.exp(-sum(x**2 for x in xs) / 2)
    elif isinstance(node, Span):
        val = sum((sp.Rational(c) if isinstance(c, Fraction) else sp.Float(float(c), 17))
                  * node_expr(ch, algebra, d, memo) for c, ch in zip(node.coeffs, node.children))
    elif isinstance(node, GradSq):
        child = node_expr(node.child, algebra, d, memo)
        val = -sum(sp.diff(child, x) ** 2 for x in xs)
    elif isinstance(node, Partial):
        val = -sp.diff(node_expr(node.child, algebra, d, memo), xs[node.axis])
    else:
        raise TypeError(f"not a derivation node: {node!r}")
    memo[node] = val
    return val


@dataclass(frozen=True, eq=False)
class Derivation:
    """Certificate that ``value`` is generated from the base phases.

    ``value`` equals the target up to an additive constant, which only
    contributes a global phase.
    """

    algebra: str
    d: int
    root: object
    value: object

    @property
    def depth(self) -> int:
        return node_depth(self.root)

    def evaluate(self):
        return evaluate_node(self.root, self.algebra, self.d)

    def verify(self) -> bool:
        return self.evaluate() == self.value

    def evaluate_on_grid(self, grid) -> np.ndarray:
        """Samples of the tree computed through :func:`node_expr` (an independent path)."""
        from .expr import to_callable

        e = node_expr(self.root, self.algebra, self.d)
        return np.real(to_callable(e, self.d)(*grid.coords))

    def matches(self, target) -> bool:
        """Exact equality with ``target`` up to a constant."""
        return (self.value - target).is_constant()

    def to_json(self) -> str:
        return json.dumps({"algebra": self.algebra, "d": self.d, "root": node_to_json(self.root),
                           "value": self.value.to_json()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Derivation":
        data = json.loads(text)
        cls_value = TrigPoly if data["algebra"] == "trig" else GaussHermite
        return cls(data["algebra"], data["d"], node_from_json(data["root"]), cls_value.from_json(data["value"]))


# --------------------------------------------------------------------------
# trigonometric saturation
# --------------------------------------------------------------------------


def _flat_terms(node) -> list[tuple]:
    """Flatten a node into ``(coef, Base|GradSq)`` pairs."""
    if isinstance(node, Span):
        out = []
        for c, child in zip(node.coeffs, node.children):
            out += [(c * cc, leaf) for cc, leaf in _flat_terms(child)]
        return out
    return [(1, node)]


def _combine(pairs) -> Span:
    """Span of ``(coef, node)`` pairs with repeated leaves merged."""
    acc: dict = {}
    for c, leaf in pairs:
        acc[leaf] = acc.get(leaf, 0) + c
    items = [(c, leaf) for leaf, c in acc.items() if not _is_zero(c)]
    return Span(tuple(c for c, _ in items), tuple(leaf for _, leaf in items))


class _TrigSaturation:
    """Breadth-first closure of reachable frequencies with signed monomial certificates.

    For every reached frequency ``m`` and monomial ``s_m``/``c_m`` both signs
    get a certificate: a span of base phases and ``GradSq`` nodes whose
    ``GradSq`` coefficients are nonnegative.  The brackets used are::

        G(s_k) + G(c_k) = const,  G(phi) = -|grad phi|^2
        G(s_k +- s_l) + G(c_k) + G(c_l) = -+(k.l)(c_{k-l} + c_{k+l}) + const
        G(c_k +- c_l) + G(s_k) + G(s_l) = -+(k.l)(c_{k-l} - c_{k+l}) + const
        G(s_k +- c_l) + G(c_k) + G(s_l) = +-(k.l)(s_{k+l} - s_{k-l}) + const
        G(c_k +- s_l) + G(s_k) + G(c_l) = +-(k.l)(s_{k+l} + s_{k-l}) + const
        G(c_k) = +(|k|^2/2) c_{2k} + const,  G(s_k) = -(|k|^2/2) c_{2k} + const
        G(s_k + c_k) = |k|^2 s_{2k} + const,  G(s_k - c_k) = -|k|^2 s_{2k} + const
    """

    def __init__(self, d: int, cap: int = FREQ_CAP, max_depth: int = DEPTH_CAP):
        self.d = d
        self.cap = cap
        self.max_depth = max_depth
        # cert[(m, 'sin'|'cos', sign)] = flat list of (coef, leaf); phase value = sign*monomial + const
        self.cert: dict = {}
        self.level: dict = {}
        for j, b in enumerate(_trig_base_freqs(d)):
            self._set(b, "sin", [(1, Base(2 * j))], [(-1, Base(2 * j))], 0)
            self._set(b, "cos", [(1, Base(2 * j + 1))], [(-1, Base(2 * j + 1))], 0)
        self.depth = 0

    def _set(self, m, kind, plus, minus, level):
        key = (m, kind)
        if (key + (1,)) in self.cert:
            return
        self.cert[key + (1,)] = plus
        self.cert[key + (-1,)] = minus
        self.level[m] = min(self.level.get(m, level), level)

    def reached(self) -> set:
        return {k for k, _, _ in self.cert}

    def _leaf(self, m, kind) -> object:
        return _combine(self.cert[(m, kind, 1)])

    def _G(self, *parts):
        """GradSq of a signed sum of positive monomial certificates."""
        pairs = []
        for sign, m, kind in parts:
            pairs += [(sign * c, leaf) for c, leaf in self.cert[(m, kind, 1)]]
        return GradSq(_combine(pairs))

    def step(self) -> bool:
        """Add the next level; returns False once nothing new appears."""
        lvl = self.depth + 1
        if lvl > self.max_depth:
            return False
        known = sorted(self.reached())
        have = {(k, t) for k, t, _ in self.cert}
        found: dict = {}

        def offer(m, kind, plus, minus):
            mm, sign = canonical(m)
            if not any(mm) or max(abs(v) for v in mm) > self.cap:
                return
            if (mm, kind) in have or (mm, kind) in found:
                return
            if sign < 0 and kind == "sin":
                plus, minus = minus, plus
            found[(mm, kind)] = (plus, minus)

        for k in known:
            kk = int(np.dot(k, k))
            two = tuple(2 * v for v in k)
            # c_{2k}: G(c_k) gives +|k|^2/2 c_{2k}; G(s_k) gives the negative
            offer(two, "cos", [(Fraction(2, kk), self._G((1, k, "cos")))],
                  [(Fraction(2, kk), self._G((1, k, "sin")))])
            offer(two, "sin", [(Fraction(1, kk), self._G((1, k, "sin"), (1, k, "cos")))],
                  [(Fraction(1, kk), self._G((1, k, "sin"), (-1, k, "cos")))])
        for k, l in itertools.combinations(known, 2):
            kl = int(np.dot(k, l))
            if kl == 0:
                continue
            kp = tuple(a + b for a, b in zip(k, l))
            km = tuple(a - b for a, b in zip(k, l))
            w = Fraction(1, 2 * abs(kl))
            sg = 1 if kl > 0 else -1
            # P_s(+-) := G(s_k +- s_l) + G(c_k) + G(c_l) = -+kl (c_- + c_+)
            # P_c(+-) := G(c_k +- c_l) + G(s_k) + G(s_l) = -+kl (c_- - c_+)
            def P_s(e):
                return [(1, self._G((1, k, "sin"), (e, l, "sin"))), (1, self._G((1, k, "cos"))),
                        (1, self._G((1, l, "cos")))]

            def P_c(e):
                return [(1, self._G((1, k, "cos"), (e, l, "cos"))), (1, self._G((1, k, "sin"))),
                        (1, self._G((1, l, "sin")))]

            def Q_a(e):  # G(s_k + e c_l) + G(c_k) + G(s_l) = e kl (s_+ - s_-)
                return [(1, self._G((1, k, "sin"), (e, l, "cos"))), (1, self._G((1, k, "cos"))),
                        (1, self._G((1, l, "sin")))]

            def Q_b(e):  # G(c_k + e s_l) + G(s_k) + G(c_l) = e kl (s_+ + s_-)
                return [(1, self._G((1, k, "cos"), (e, l, "sin"))), (1, self._G((1, k, "sin"))),
                        (1, self._G((1, l, "cos")))]

            def sc(pairs):
                return [(w * c, leaf) for c, leaf in pairs]

            # (c_- + c_+) = P_s(-sg)/|kl| ; -(c_- + c_+) = P_s(sg)/|kl|
            # (c_- - c_+) = P_c(-sg)/|kl| ; -(c_- - c_+) = P_c(sg)/|kl|
            # c_+ = [(c_-+c_+) - (c_- - c_+)]/2 ; c_- = [(c_-+c_+) + (c_- - c_+)]/2
            offer(kp, "cos", sc(P_s(-sg) + P_c(sg)), sc(P_s(sg) + P_c(-sg)))
            offer(km, "cos", sc(P_s(-sg) + P_c(-sg)), sc(P_s(sg) + P_c(sg)))
            # (s_+ - s_-) = Q_a(sg)/|kl| ; (s_+ + s_-) = Q_b(sg)/|kl|
            # s_+ = [(s_+ - s_-) + (s_+ + s_-)]/2 ; s_- = [(s_+ + s_-) - (s_+ - s_-)]/2
            offer(kp, "sin", sc(Q_a(sg) + Q_b(sg)), sc(Q_a(-sg) + Q_b(-sg)))
            offer(km, "sin", sc(Q_b(sg) + Q_a(-sg)), sc(Q_b(-sg) + Q_a(sg)))
        self.depth = lvl
        for (m, kind), (plus, minus) in found.items():
            self._set(m, kind, plus, minus, lvl)
        return bool(found)

    def certificate(self, m, kind, sign) -> list:
        return self.cert[(m, kind, sign)]


def _trig_base_freqs(d: int) -> list[tuple[int, ...]]:
    from .hamiltonian import trig_frequencies

    return [canonical(b)[0] for b in trig_frequencies(d)]


_SATURATIONS: dict = {}


def _saturation(d: int, cap: int, max_depth: int) -> _TrigSaturation:
    key = (d, cap, max_depth)
    if key not in _SATURATIONS:
        _SATURATIONS[key] = _TrigSaturation(d, cap, max_depth)
    return _SATURATIONS[key]


def saturate_trig(target: TrigPoly, d: int | None = None, cap: int = FREQ_CAP,
                  max_depth: int = DEPTH_CAP) -> Derivation:
    """Certificate that ``target`` (up to a constant) lies in the saturated class.

    The frequencies reachable from the base ``b_1, ..., b_d`` are explored
    breadth first; each target monomial then gets the certificate of its sign,
    so every ``GradSq`` node carries a nonnegative coefficient.
    """
    d = target.d if d is None else d
    if d != target.d:
        raise ValueError("target dimension does not match d")
    if target.max_freq() > cap:
        raise FrequencyOverflow(f"target frequency exceeds cap {cap}")
    sat = _saturation(d, cap, max_depth)
    need = set(target.support())
    while not need <= sat.reached():
        if not sat.step():
            missing = sorted(need - sat.reached())
            raise SaturationError(f"frequencies {missing} not reached within depth {max_depth}; "
                                  f"reachable space has dimension {2 * len(sat.reached())}")
    pairs = []
    for k, (s, c) in target.terms.items():
        if not any(k):
            continue
        for kind, coef in (("sin", s), ("cos", c)):
            if _is_zero(coef):
                continue
            sign = 1 if coef > 0 else -1
            pairs += [(abs(coef) * a, leaf) for a, leaf in sat.certificate(k, kind, sign)]
    root = _combine(pairs)
    value = evaluate_node(root, "trig", d)
    deriv = Derivation("trig", d, root, value)
    if not deriv.matches(target):
        residual = value - target
        if not all(abs(float(s)) + abs(float(c)) < 1e-9 for k, (s, c) in residual.terms.items() if any(k)):
            raise SaturationError("internal error: certificate does not reproduce the target")
    return deriv


def saturate_hermite(target: GaussHermite, cap: int = DEGREE_CAP) -> Derivation:
    """Certificate over ``{x_j, exp(-|x|^2/2)}`` with ``Partial`` brackets.

    ``(-d)^alpha exp(-|x|^2/2) = He_alpha(x) exp(-|x|^2/2)``, so the Gaussian
    part is decomposed on the Hermite basis by a triangular solve from the
    highest degree down; each ``He_alpha`` uses ``|alpha|`` nested partials.
    """
    d = target.d
    if target.degree > cap:
        raise DegreeOverflow(f"target degree {target.degree} exceeds cap {cap}")
    pairs = [(lj, Base(j)) for j, lj in enumerate(target.linear) if not _is_zero(lj)]
    rest = dict(target.poly)
    while rest:
        top = max(sum(a) for a in rest)
        alpha = max(a for a in rest if sum(a) == top)
        coef = rest[alpha]
        node = Base(d)
        for j, n in enumerate(alpha):
            for _ in range(n):
                node = Partial(j, node)
        pairs.append((coef, node))
        for a, c in GaussHermite.hermite(alpha, coef).poly.items():
            rest[a] = rest.get(a, 0) - c
            if _is_zero(rest[a]) or (not isinstance(rest[a], Fraction) and abs(rest[a]) < 1e-14 * (1 + abs(coef))):
                del rest[a]
    root = Span(tuple(c for c, _ in pairs), tuple(n for _, n in pairs))
    value = evaluate_node(root, "hermite", d)
    return Derivation("hermite", d, root, value)
