"""Elementary differentials of labelled trees.

Every tree encodes an iterated derivative of the equation's nonlinearities:
noise vertices stand for the noise coefficients, drift vertices for the drift
polynomial, edges for derivative slots, and polynomial labels for explicit
derivatives in the base point.  This module evaluates those differentials
exactly for polynomial data, numerically for black-box data, and checks the
algebraic identities that connect them to the tree operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .trees import (
    ConformingSet,
    HForest,
    LabeledTree,
    MultiIndex,
    critical_homogeneity,
    eval_character,
    forest_factorial,
    gamma_transform,
    homogeneity,
    m_map,
    multiindices_up_to,
    tree_factorial,
)

# ---------------------------------------------------------------------------
# exact polynomial maps on jets
#
# Variables are tagged tuples: ("jet", entries, comp) is component ``comp`` of
# the derivative-``entries`` slot of the jet, ("arg", i, comp) is component
# ``comp`` of the i-th formal argument of a multilinear map.  A monomial is a
# sorted tuple of (variable, power) pairs; a polynomial maps monomials to
# rational coefficients.

Var = tuple
Monomial = tuple


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    acc = dict(a)
    for v, p in b:
        acc[v] = acc.get(v, 0) + p
    return tuple(sorted(acc.items()))


def _poly_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for mono, c in b.items():
        s = out.get(mono, Fraction(0)) + c
        if s:
            out[mono] = s
        elif mono in out:
            del out[mono]
    return out


def _poly_scale(a: dict, c: Fraction) -> dict:
    if not c:
        return {}
    return {mono: coeff * c for mono, coeff in a.items()}


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            mono = _mono_mul(ma, mb)
            s = out.get(mono, Fraction(0)) + ca * cb
            if s:
                out[mono] = s
            elif mono in out:
                del out[mono]
    return out


def _poly_partial(a: dict, var: Var) -> dict:
    out: dict = {}
    for mono, c in a.items():
        for i, (v, p) in enumerate(mono):
            if v == var:
                rest = mono[:i] + ((v, p - 1),) + mono[i + 1 :] if p > 1 else mono[:i] + mono[i + 1 :]
                out[rest] = out.get(rest, Fraction(0)) + c * p
                break
    return {m: c for m, c in out.items() if c}


class PolyMap:
    """A polynomial map from jets (and formal argument slots) to vectors.

    Immutable; components are polynomials with exact rational coefficients.
    """

    __slots__ = ("scaling", "comps", "_frozen")

    def __init__(self, scaling: Sequence[int], comps: Sequence[Mapping[Monomial, Fraction]]):
        object.__setattr__(self, "scaling", tuple(scaling))
        object.__setattr__(
            self,
            "comps",
            tuple({m: Fraction(c) for m, c in comp.items() if c} for comp in comps),
        )
        object.__setattr__(self, "_frozen", None)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("PolyMap is immutable")

    # -- construction -------------------------------------------------------

    @classmethod
    def zero(cls, scaling: Sequence[int], n_components: int = 1) -> "PolyMap":
        return cls(scaling, [{} for _ in range(n_components)])

    @classmethod
    def constant(cls, scaling: Sequence[int], values: Sequence[Fraction]) -> "PolyMap":
        return cls(scaling, [{(): Fraction(v)} if v else {} for v in values])

    @classmethod
    def jet_entry(cls, scaling: Sequence[int], k: MultiIndex, comp: int = 0) -> "PolyMap":
        """The scalar coordinate map jet -> jet[k][comp], as a 1-component map."""
        var = ("jet", k.entries, comp)
        return cls(scaling, [{((var, 1),): Fraction(1)}])

    @classmethod
    def stack(cls, maps: Sequence["PolyMap"]) -> "PolyMap":
        """Assemble a vector map from scalar components."""
        if any(m.n_components != 1 for m in maps):
            raise ValueError("stack needs scalar maps")
        return cls(maps[0].scaling, [m.comps[0] for m in maps])

    @property
    def n_components(self) -> int:
        return len(self.comps)

    # -- canonical form, equality, hashing ----------------------------------

    def _key(self):
        frozen = object.__getattribute__(self, "_frozen")
        if frozen is None:
            frozen = (
                self.scaling,
                tuple(tuple(sorted(comp.items())) for comp in self.comps),
            )
            object.__setattr__(self, "_frozen", frozen)
        return frozen

    def __eq__(self, other) -> bool:
        return isinstance(other, PolyMap) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    @property
    def is_zero(self) -> bool:
        return all(not comp for comp in self.comps)

    def __repr__(self) -> str:
        bits = []
        for i, comp in enumerate(self.comps):
            for mono, c in sorted(comp.items()):
                fac = "*".join(f"{v}^{p}" if p > 1 else f"{v}" for v, p in mono) or "1"
                bits.append(f"[{i}] {c}*{fac}")
        return "PolyMap(" + ("; ".join(bits) if bits else "0") + ")"

    # -- linear structure ----------------------------------------------------

    def __add__(self, other: "PolyMap") -> "PolyMap":
        if self.n_components != other.n_components:
            raise ValueError("component count mismatch")
        return PolyMap(
            self.scaling, [_poly_add(a, b) for a, b in zip(self.comps, other.comps)]
        )

    def __sub__(self, other: "PolyMap") -> "PolyMap":
        return self + other.scale(-1)

    def scale(self, c: Fraction | int) -> "PolyMap":
        c = Fraction(c)
        return PolyMap(self.scaling, [_poly_scale(comp, c) for comp in self.comps])

    def __mul__(self, other: "PolyMap") -> "PolyMap":
        """Pointwise product, only for scalar (1-component) maps."""
        if self.n_components != 1 or other.n_components != 1:
            raise ValueError("pointwise product needs scalar maps")
        return PolyMap(self.scaling, [_poly_mul(self.comps[0], other.comps[0])])

    def __pow__(self, n: int) -> "PolyMap":
        if n < 0:
            raise ValueError("negative power")
        out = PolyMap.constant(self.scaling, [Fraction(1)])
        for _ in range(n):
            out = out * self
        return out

    def __neg__(self) -> "PolyMap":
        return self.scale(-1)

    # -- calculus ------------------------------------------------------------

    def jet_partial(self, k: MultiIndex, comp: int) -> "PolyMap":
        var = ("jet", k.entries, comp)
        return PolyMap(self.scaling, [_poly_partial(c, var) for c in self.comps])

    def x_derivative(self, i: int) -> "PolyMap":
        """Total derivative in the i-th direction: each jet slot is promoted."""
        out = []
        for comp in self.comps:
            acc: dict = {}
            for mono, c in comp.items():
                for idx, (v, p) in enumerate(mono):
                    if v[0] != "jet":
                        continue
                    bumped_entries = tuple(
                        e + (1 if j == i else 0) for j, e in enumerate(v[1])
                    )
                    lowered = (
                        mono[:idx] + ((v, p - 1),) + mono[idx + 1 :]
                        if p > 1
                        else mono[:idx] + mono[idx + 1 :]
                    )
                    bumped_var = ("jet", bumped_entries, v[2])
                    new = _mono_mul(lowered, ((bumped_var, 1),))
                    s = acc.get(new, Fraction(0)) + c * p
                    if s:
                        acc[new] = s
                    elif new in acc:
                        del acc[new]
            out.append(acc)
        return PolyMap(self.scaling, out)

    def substitute_args(self, args: Sequence["PolyMap"]) -> "PolyMap":
        """Replace formal argument slots by polynomial maps (jet variables stay)."""
        out = []
        for comp in self.comps:
            acc: dict = {}
            for mono, c in comp.items():
                term = {(): c}
                for v, p in mono:
                    if v[0] == "arg":
                        repl = args[v[1]].comps[v[2]]
                        for _ in range(p):
                            term = _poly_mul(term, repl)
                    else:
                        term = _poly_mul(term, {((v, p),): Fraction(1)})
                acc = _poly_add(acc, term)
            out.append(acc)
        return PolyMap(self.scaling, out)

    def scale_jet_vars(self, factor: Callable[[tuple], Fraction]) -> "PolyMap":
        """Multiply every jet variable with derivative entries l by factor(l)."""
        out = []
        for comp in self.comps:
            acc: dict = {}
            for mono, c in comp.items():
                for v, p in mono:
                    if v[0] == "jet":
                        c = c * Fraction(factor(v[1])) ** p
                acc[mono] = acc.get(mono, Fraction(0)) + c
            out.append({m: c for m, c in acc.items() if c})
        return PolyMap(self.scaling, out)

    def gradient_degree(self) -> int:
        """Largest total power of scaled-degree-1 jet slots in any monomial."""
        weights = self.scaling
        best = 0
        for comp in self.comps:
            for mono in comp:
                deg = sum(
                    p
                    for v, p in mono
                    if v[0] == "jet"
                    and sum(e * w for e, w in zip(v[1], weights)) == 1
                )
                best = max(best, deg)
        return best

    def evaluate(self, jet: "Jet", args: Sequence[Sequence] = ()):
        """Value at a jet, with numeric vectors for any formal argument slots."""
        out = []
        for comp in self.comps:
            total = Fraction(0)
            for mono, c in comp.items():
                term = c
                for v, p in mono:
                    if v[0] == "jet":
                        base = jet.get_entries(v[1])[v[2]]
                    else:
                        base = args[v[1]][v[2]]
                    term = term * base ** p
                total = total + term
            out.append(total)
        return tuple(out)


# ---------------------------------------------------------------------------
# jets


class Jet:
    """A finite-support map from derivative multi-indices to vectors.

    The zero slot is the function value, the scaled-degree-one slots its
    gradient; higher slots only appear through explicit derivatives.
    """

    __slots__ = ("scaling", "n_components", "values")

    def __init__(self, scaling: Sequence[int], values: Mapping, n_components: int = 1):
        self.scaling = tuple(scaling)
        self.n_components = n_components
        norm = {}
        for k, v in values.items():
            entries = k.entries if isinstance(k, MultiIndex) else tuple(k)
            vec = tuple(v) if isinstance(v, (tuple, list)) else (v,)
            if len(vec) != n_components:
                raise ValueError("component count mismatch in jet")
            norm[entries] = vec
        self.values = norm

    def get_entries(self, entries: tuple):
        return self.values.get(tuple(entries), (0,) * self.n_components)

    def get(self, k: MultiIndex):
        return self.get_entries(k.entries)

    def rescaled(self, factor: Callable[[tuple], Fraction]) -> "Jet":
        return Jet(
            self.scaling,
            {e: tuple(factor(e) * x for x in v) for e, v in self.values.items()},
            self.n_components,
        )


# ---------------------------------------------------------------------------
# truncated multilinear duals (forward-mode derivatives for black boxes)


class MultiDual:
    """Numbers of the form a + sum over subsets of epsilon products.

    Each epsilon is nilpotent of order two, so coefficients live on bitmasks
    of the active epsilons; the full-mask coefficient of a function value is
    the mixed derivative contracted with the seeded directions.
    """

    __slots__ = ("n", "coeffs")

    def __init__(self, n: int, coeffs: Mapping[int, object]):
        self.n = n
        self.coeffs = {m: v for m, v in coeffs.items() if not _is_zero_number(v)}

    @classmethod
    def const(cls, n: int, value) -> "MultiDual":
        return cls(n, {0: value})

    @classmethod
    def seeded(cls, n: int, j: int, value, direction=1.0) -> "MultiDual":
        return cls(n, {0: value, 1 << j: direction})

    def value(self):
        return self.coeffs.get(0, 0.0)

    def coeff(self, mask: int):
        return self.coeffs.get(mask, 0.0)

    def __add__(self, other):
        other = _as_dual(self.n, other)
        out = dict(self.coeffs)
        for m, v in other.coeffs.items():
            out[m] = out.get(m, 0.0) + v
        return MultiDual(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return MultiDual(self.n, {m: -v for m, v in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-_as_dual(self.n, other))

    def __rsub__(self, other):
        return _as_dual(self.n, other) + (-self)

    def __mul__(self, other):
        other = _as_dual(self.n, other)
        out: dict = {}
        for ma, va in self.coeffs.items():
            for mb, vb in other.coeffs.items():
                if ma & mb:
                    continue  # squares of epsilons vanish
                m = ma | mb
                out[m] = out.get(m, 0.0) + va * vb
        return MultiDual(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, p: int):
        out = MultiDual.const(self.n, 1.0)
        for _ in range(p):
            out = out * self
        return out

    def smooth(self, derivs: Sequence) -> "MultiDual":
        """Compose with a scalar function given by derivatives at the value."""
        nil = MultiDual(self.n, {m: v for m, v in self.coeffs.items() if m})
        out = MultiDual.const(self.n, derivs[0])
        power = MultiDual.const(self.n, 1.0)
        fact = 1
        for r in range(1, len(derivs)):
            power = power * nil
            fact *= r
            if not power.coeffs:
                break
            out = out + power * (derivs[r] * (1.0 / fact))
        return out


def _is_zero_number(v) -> bool:
    return isinstance(v, (int, float, Fraction)) and v == 0


def _as_dual(n: int, x) -> MultiDual:
    return x if isinstance(x, MultiDual) else MultiDual.const(n, x)


def _active_order(x: MultiDual) -> int:
    mask = 0
    for m in x.coeffs:
        mask |= m
    return mask.bit_count()


def ad_sin(x):
    if isinstance(x, MultiDual):
        v = x.value()
        s, c = ad_sin(v), ad_cos(v)
        table = [s, c, -s, -c]
        return x.smooth([table[r % 4] for r in range(_active_order(x) + 1)])
    return math.sin(x)


def ad_cos(x):
    if isinstance(x, MultiDual):
        v = x.value()
        s, c = ad_sin(v), ad_cos(v)
        table = [c, -s, -c, s]
        return x.smooth([table[r % 4] for r in range(_active_order(x) + 1)])
    return math.cos(x)


def ad_exp(x):
    if isinstance(x, MultiDual):
        e = ad_exp(x.value())
        return x.smooth([e] * (_active_order(x) + 1))
    return math.exp(x)


# ---------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class SmoothF:
    """A scalar black-box coefficient with declared jet slots and order.

    ``fn`` receives a mapping from slot entries to numbers (dual numbers
    during differentiation) and must combine them with arithmetic and the
    ``ad_*`` primitives.  Derivatives beyond ``order`` raise.
    """

    fn: Callable
    slots: tuple[MultiIndex, ...]
    order: int

    def partial(self, ks: Sequence[MultiIndex], jet: Jet):
        """Mixed derivative in the listed slots, contracted with nothing."""
        if len(ks) > self.order:
            raise ValueError(
                f"derivative order {len(ks)} exceeds declared bound {self.order}"
            )
        n = len(ks)
        reader = {}
        for ell in self.slots:
            base = jet.get(ell)[0]
            x = MultiDual.const(n, base)
            for j, k in enumerate(ks):
                if k == ell:
                    x = x + MultiDual(n, {1 << j: 1.0})
            reader[ell.entries] = x
        val = self.fn(reader)
        val = _as_dual(n, val)
        return val.coeff((1 << n) - 1) if n else val.value()


NoiseLike = object  # PolyMap | SmoothF


@dataclass(frozen=True)
class Nonlinearity:
    """Drift polynomial plus noise coefficients on a common jet space."""

    scaling: tuple[int, ...]
    drift: PolyMap
    noises: tuple[NoiseLike, ...]
    n_components: int = 1

    def __post_init__(self) -> None:
        if self.drift.n_components != self.n_components:
            raise ValueError("drift component count mismatch")
        for f in self.noises:
            if isinstance(f, PolyMap) and f.n_components != self.n_components:
                raise ValueError("noise component count mismatch")
            if isinstance(f, SmoothF) and self.n_components != 1:
                raise ValueError("black-box coefficients are scalar only")

    @property
    def all_polynomial(self) -> bool:
        return all(isinstance(f, PolyMap) for f in self.noises)

    def base(self, j: int) -> NoiseLike:
        return self.drift if j == 0 else self.noises[j - 1]


def phi(scaling: Sequence[int]) -> PolyMap:
    """The coordinate map of the function value (scalar systems)."""
    return PolyMap.jet_entry(scaling, MultiIndex.zero(scaling))


def grad_phi(scaling: Sequence[int], i: int) -> PolyMap:
    return PolyMap.jet_entry(scaling, MultiIndex.unit(scaling, i))


def drift_power(
    p: int,
    scaling: Sequence[int],
    coeff: Fraction | int = -1,
    grad_coeffs: Sequence[Fraction] | None = None,
) -> PolyMap:
    """Scalar drift coeff*phi^p, optionally plus sum_i c_i (d_i phi) phi^q.

    The gradient part uses q = (p-1)/2 so both terms rescale identically.
    """
    out = phi(scaling) ** p * PolyMap.constant(scaling, [Fraction(coeff)])
    if grad_coeffs is not None:
        if (p - 1) % 2:
            raise ValueError("gradient drift needs odd p")
        q = (p - 1) // 2
        units = [i for i in range(len(scaling)) if scaling[i] == 1]
        if len(grad_coeffs) != len(units):
            raise ValueError("one gradient coefficient per unit-weight direction")
        for c, i in zip(grad_coeffs, units):
            if c:
                out = out + grad_phi(scaling, i) * phi(scaling) ** q * PolyMap.constant(
                    scaling, [Fraction(c)]
                )
    return out


def drift_from_tensors(
    scaling: Sequence[int],
    n_components: int,
    p: int,
    F: Mapping[tuple, Fraction],
    B: Mapping[tuple, Fraction] | None = None,
    q: int | None = None,
) -> PolyMap:
    """Vector drift F(phi^{(x)p}) + B(grad phi (x) phi^{(x)q}) from coefficient tables.

    ``F`` maps (out, (c_1..c_p)) to rationals; ``B`` maps
    (out, direction, c_grad, (c_1..c_q)).
    """
    zero = MultiIndex.zero(scaling)
    comps: list[dict] = [{} for _ in range(n_components)]
    for (out, cs), val in F.items():
        mono: dict = {}
        for c in cs:
            v = ("jet", zero.entries, c)
            mono[v] = mono.get(v, 0) + 1
        key = tuple(sorted(mono.items()))
        comps[out][key] = comps[out].get(key, Fraction(0)) + Fraction(val)
    if B:
        for (out, i, cg, cs), val in B.items():
            if q is not None and len(cs) != q:
                raise ValueError("gradient term arity mismatch")
            e = MultiIndex.unit(scaling, i)
            mono = {("jet", e.entries, cg): 1}
            for c in cs:
                v = ("jet", zero.entries, c)
                mono[v] = mono.get(v, 0) + 1
            key = tuple(sorted(mono.items()))
            comps[out][key] = comps[out].get(key, Fraction(0)) + Fraction(val)
    return PolyMap(scaling, comps)


def poly_noise_phi(scaling: Sequence[int], coeffs: Sequence[Fraction]) -> PolyMap:
    """Scalar polynomial of the function value: sum_q coeffs[q] phi^q."""
    out = PolyMap.zero(scaling)
    for q, c in enumerate(coeffs):
        if c:
            out = out + phi(scaling) ** q * PolyMap.constant(scaling, [Fraction(c)])
    return out


def constant_noise(scaling: Sequence[int], value: Fraction | int = 1) -> PolyMap:
    return PolyMap.constant(scaling, [Fraction(value)])


def affine_grad_noise(
    scaling: Sequence[int], const: Fraction | int, grad_coeffs: Sequence[Fraction]
) -> PolyMap:
    """Affine function of the gradient: const + sum_i c_i d_i phi."""
    out = PolyMap.constant(scaling, [Fraction(const)])
    units = [i for i in range(len(scaling)) if scaling[i] == 1]
    if len(grad_coeffs) != len(units):
        raise ValueError("one coefficient per unit-weight direction")
    for c, i in zip(grad_coeffs, units):
        if c:
            out = out + grad_phi(scaling, i) * PolyMap.constant(scaling, [Fraction(c)])
    return out


# ---------------------------------------------------------------------------
# the applied-derivative engine


def _tensor_derivative(base: PolyMap, ks: Sequence[MultiIndex], a: MultiIndex) -> PolyMap:
    """d^a D^{k_1}..D^{k_r} base, with formal argument slots left open.

    Slot i of the result contracts against the i-th argument; the explicit
    derivative d^a acts after the jet-slot derivatives, promoting only the
    jet dependence.
    """
    m = base.n_components
    tensor = base
    for i, k in enumerate(ks):
        comps: list[dict] = [{} for _ in range(m)]
        for out in range(m):
            for c in range(m):
                part = _poly_partial(tensor.comps[out], ("jet", k.entries, c))
                if part:
                    slot = {((("arg", i, c), 1),): Fraction(1)}
                    comps[out] = _poly_add(comps[out], _poly_mul(part, slot))
        tensor = PolyMap(base.scaling, comps)
    for i, count in enumerate(a.entries):
        for _ in range(count):
            tensor = tensor.x_derivative(i)
    return tensor


_TENSOR_CACHE: dict = {}


def _tensor_cached(base: PolyMap, ks: tuple, a: MultiIndex) -> PolyMap:
    key = (base, ks, a)
    got = _TENSOR_CACHE.get(key)
    if got is None:
        got = _tensor_derivative(base, ks, a)
        _TENSOR_CACHE[key] = got
    return got


_UPSILON_CACHE: dict = {}


def upsilon_poly(tau: LabeledTree, nl: Nonlinearity) -> PolyMap:
    """The differential of a tree as an exact polynomial map (polynomial data).

    The root's noise label picks the coefficient (zero picks the drift), each
    child contributes a derivative slot filled with its own differential, and
    the root's polynomial label differentiates in the base point afterwards.
    """
    key = (tau, nl)
    got = _UPSILON_CACHE.get(key)
    if got is not None:
        return got
    base = nl.base(tau.noise)
    if not isinstance(base, PolyMap):
        raise TypeError("exact differentials need polynomial coefficients")
    ks = tuple(e for e, _ in tau.children)
    args = [upsilon_poly(c, nl) for _, c in tau.children]
    tensor = _tensor_cached(base, ks, tau.poly)
    result = tensor.substitute_args(args)
    _UPSILON_CACHE[key] = result
    return result


def _smooth_applied(
    f: SmoothF, ks: Sequence[MultiIndex], a: MultiIndex, arg_values: Sequence, jet: Jet
):
    """Numeric d^a D^{ks} f contracted with scalar argument values."""
    scaling = jet.scaling
    # terms: (extra slot entries, promoted jet factor entries) -> coefficient
    terms: dict = {((), ()): 1}
    for i, count in enumerate(a.entries):
        for _ in range(count):
            new: dict = {}
            for (extra, factors), c in terms.items():
                for t in range(len(factors)):
                    bumped = tuple(
                        e + (1 if j == i else 0) for j, e in enumerate(factors[t])
                    )
                    key = (extra, factors[:t] + (bumped,) + factors[t + 1 :])
                    new[key] = new.get(key, 0) + c
                for ell in f.slots:
                    promoted = tuple(
                        e + (1 if j == i else 0) for j, e in enumerate(ell.entries)
                    )
                    key = (tuple(sorted(extra + (ell.entries,))), factors + (promoted,))
                    new[key] = new.get(key, 0) + c
            terms = new
    total = 0.0
    base_args = 1.0
    for v in arg_values:
        base_args *= v[0]
    for (extra, factors), c in terms.items():
        ks_full = list(ks) + [MultiIndex(e, scaling) for e in extra]
        val = f.partial(ks_full, jet)
        for e in factors:
            val *= jet.get_entries(e)[0]
        total += c * val * base_args
    return (total,)


def upsilon(tau: LabeledTree, nl: Nonlinearity, jet: Jet):
    """Value of the tree differential at a jet.

    Polynomial coefficients evaluate exactly; black-box coefficients go
    through truncated forward-mode derivatives.  Trees whose shape asks for
    a vanishing derivative of the data come out as zero automatically.
    """
    base = nl.base(tau.noise)
    ks = tuple(e for e, _ in tau.children)
    args = [upsilon(c, nl, jet) for _, c in tau.children]
    if isinstance(base, PolyMap):
        tensor = _tensor_cached(base, ks, tau.poly)
        return tensor.evaluate(jet, args=args)
    return _smooth_applied(base, ks, tau.poly, args, jet)


def d_upsilon_poly(tau: LabeledTree, ks: Sequence[MultiIndex], nl: Nonlinearity) -> PolyMap:
    """The multilinear jet-slot derivative of a tree differential, slots open."""
    return _tensor_cached(upsilon_poly(tau, nl), tuple(ks), MultiIndex.zero(nl.scaling))


def d_upsilon(
    tau: LabeledTree,
    ks: Sequence[MultiIndex],
    directions: Sequence[Sequence],
    nl: Nonlinearity,
    jet: Jet,
):
    """Derivative of the tree differential contracted with direction vectors."""
    ks = tuple(ks)
    if len(directions) != len(ks):
        raise ValueError("one direction per derivative slot")
    if nl.all_polynomial:
        tensor = d_upsilon_poly(tau, ks, nl)
        return tensor.evaluate(jet, args=[tuple(d) for d in directions])
    n = len(ks)
    seeded = {}
    for entries, vec in jet.values.items():
        seeded[entries] = vec
    for j, k in enumerate(ks):
        base = jet.get(k)[0]
        x = MultiDual.const(n, base) + MultiDual(n, {1 << j: directions[j][0]})
        seeded[k.entries] = (x,)
    for ell in _active_slots(nl):
        if ell.entries not in seeded:
            seeded[ell.entries] = (MultiDual.const(n, jet.get(ell)[0]),)
    dual_jet = Jet(jet.scaling, seeded, jet.n_components)
    val = upsilon(tau, nl, dual_jet)[0]
    val = _as_dual(n, val)
    return (val.coeff((1 << n) - 1) if n else val.value(),)


def _active_slots(nl: Nonlinearity):
    slots = set()
    for f in nl.noises:
        if isinstance(f, SmoothF):
            slots.update(f.slots)
    return slots


# ---------------------------------------------------------------------------
# identities


def morphism_residual_poly(forest: HForest, tau: LabeledTree, nl: Nonlinearity) -> PolyMap:
    """Symbolic residual of the action identity (the zero map when it holds).

    The left side pushes the algebra monomial into the tree and sums the
    differentials; the right side differentiates the tree's differential in
    the monomial's slots and feeds it the planted differentials.
    """
    lhs = PolyMap.zero(nl.scaling, nl.n_components)
    for t, c in m_map(forest, tau).items():
        lhs = lhs + upsilon_poly(t, nl).scale(c)
    ks = tuple(k for k, _ in forest.planted)
    args = [upsilon_poly(s, nl) for _, s in forest.planted]
    tensor = _tensor_cached(upsilon_poly(tau, nl), ks, forest.poly)
    rhs = tensor.substitute_args(args)
    return lhs - rhs


def verify_morphism(forest: HForest, tau: LabeledTree, nl: Nonlinearity, jet: Jet):
    """Residual of the action identity at a jet (exactly zero when it holds)."""
    return morphism_residual_poly(forest, tau, nl).evaluate(jet)


@dataclass(frozen=True)
class Character:
    """Rational values on the group generators: directions and planted trees."""

    scaling: tuple[int, ...]
    x_values: tuple[Fraction, ...]
    planted_values: tuple[tuple[LabeledTree, Fraction], ...]

    @classmethod
    def from_values(
        cls,
        scaling: Sequence[int],
        x_values: Sequence[Fraction],
        planted: Mapping[LabeledTree, Fraction],
    ) -> "Character":
        items = tuple(sorted(planted.items(), key=lambda kv: str(kv[0])))
        return cls(tuple(scaling), tuple(Fraction(v) for v in x_values), items)

    @classmethod
    def identity(cls, scaling: Sequence[int]) -> "Character":
        return cls(tuple(scaling), (Fraction(0),) * len(tuple(scaling)), ())

    def planted_dict(self) -> dict:
        return dict(self.planted_values)

    def of_forest(self, forest: HForest) -> Fraction:
        return eval_character(forest, self.x_values, self.planted_dict())


def _hplus_monomials(cs: ConformingSet, budget: Fraction):
    """All algebra monomials of scaled degree <= budget over the planted set."""
    beta = cs.rule.beta
    plants = [
        (homogeneity(s, beta) + 2 - k.s_degree, HForest.plant(k, s))
        for k, s in cs.u_planted
    ]
    plants.sort(key=lambda hv: (hv[0], str(hv[1])))

    def rec(start: int, acc: HForest, room: Fraction):
        for a in multiindices_up_to(cs.scaling, int(room) if room >= 0 else -1):
            yield HForest.x_power(a) * acc
        for idx in range(start, len(plants)):
            h, pf = plants[idx]
            if h > room:
                break
            yield from rec(idx, acc * pf, room - h)

    yield from rec(0, HForest.unit(cs.scaling), budget)


def taylor_residual_poly(
    tau: LabeledTree,
    character: Character,
    nl: Nonlinearity,
    cs: ConformingSet,
) -> PolyMap:
    """Symbolic residual of the re-expansion identity.

    The left side re-expands every enumerated tree through the character and
    weighs its differential by the pairing with ``tau``; the right side is
    the explicit derivative sum over algebra monomials below the cutoff.
    """
    beta = cs.rule.beta
    xv = list(character.x_values)
    pv = character.planted_dict()
    lhs = PolyMap.zero(nl.scaling, nl.n_components)
    for sigma in cs.trees:
        pairing = gamma_transform(sigma, beta, xv, pv).coeff(tau) * tree_factorial(tau)
        if pairing:
            lhs = lhs + upsilon_poly(sigma, nl).scale(
                pairing * Fraction(1, tree_factorial(sigma))
            )
    rhs = PolyMap.zero(nl.scaling, nl.n_components)
    budget = -homogeneity(tau, beta)
    base = upsilon_poly(tau, nl)
    for forest in _hplus_monomials(cs, budget):
        g = character.of_forest(forest)
        if not g:
            continue
        ks = tuple(k for k, _ in forest.planted)
        args = [upsilon_poly(s, nl) for _, s in forest.planted]
        tensor = _tensor_cached(base, ks, forest.poly)
        rhs = rhs + tensor.substitute_args(args).scale(
            g * Fraction(1, forest_factorial(forest))
        )
    return lhs - rhs


def taylor_residual(
    tau: LabeledTree,
    character: Character,
    nl: Nonlinearity,
    cs: ConformingSet,
    jet: Jet,
):
    """Residual of the re-expansion identity at a jet (exactly zero)."""
    return taylor_residual_poly(tau, character, nl, cs).evaluate(jet)


# ---------------------------------------------------------------------------
# parabolic rescaling


def q_lambda_factor(entries: tuple, mu: Fraction, p: int, scaling: Sequence[int]) -> Fraction:
    """Jet-slot factor of the rescaling: lambda^{-alpha-|l|_s} at lambda = mu^{p-1}.

    With alpha = 2/(p-1) every power is integral in mu, keeping the arithmetic
    rational for rational mu.
    """
    s_deg = sum(e * w for e, w in zip(entries, scaling))
    return Fraction(mu) ** (-(2 + (p - 1) * s_deg))


def q_lambda_jet(jet: Jet, mu: Fraction, p: int) -> Jet:
    return jet.rescaled(lambda e: q_lambda_factor(e, mu, p, jet.scaling))


def q_lambda_nonlinearity(nl: Nonlinearity, mu: Fraction, p: int) -> Nonlinearity:
    """Precompose every noise coefficient with the rescaling; the drift keeps
    its form (its own power scaling is what the exponent accounts for)."""
    new_noises = []
    for f in nl.noises:
        if not isinstance(f, PolyMap):
            raise TypeError("rescaling of coefficients needs polynomial data")
        new_noises.append(
            f.scale_jet_vars(lambda e: q_lambda_factor(e, mu, p, nl.scaling))
        )
    return Nonlinearity(nl.scaling, nl.drift, tuple(new_noises), nl.n_components)


def crit_scaling_residual(
    tau: LabeledTree, nl: Nonlinearity, mu: Fraction, p: int, jet: Jet
):
    """Residual of the exact rescaling covariance of tree differentials.

    Evaluating the differential on a rescaled jet equals the rescaled-data
    differential times lambda^{-2-alpha-c(tau)}, with c the critical
    homogeneity at alpha = 2/(p-1); exact for rational mu.
    """
    alpha = Fraction(2, p - 1)
    c_tau = critical_homogeneity(tau, alpha)
    # lambda^{-2-alpha-c} = mu^{-(p-1)(2+alpha+c)}; the exponent is integral
    exponent = (p - 1) * (2 + alpha + c_tau)
    if exponent.denominator != 1:
        raise ValueError("critical homogeneity not compatible with the power")
    factor = Fraction(mu) ** (-int(exponent))
    lhs = upsilon(tau, nl, q_lambda_jet(jet, mu, p))
    rhs = upsilon(tau, q_lambda_nonlinearity(nl, mu, p), jet)
    return tuple(a - factor * b for a, b in zip(lhs, rhs))
