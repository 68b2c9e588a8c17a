"""Decorated rooted trees and the algebraic operations on them.

Trees carry a polynomial label (a multi-index) and a noise label on every
vertex and a derivative multi-index on every edge.  Label 0 plays the role of
the drift symbol and is the unit for the root product.  On top of the trees
this module provides the grafting and raising operations, the induced products
on the free commutative algebra of planted trees, the coproduct, characters,
and an enumerator for the conforming trees below a homogeneity cutoff.

All arithmetic is exact: coefficients are ``fractions.Fraction`` and
homogeneities are rational.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement, product as iter_product
from math import ceil, comb, factorial, prod
from typing import Callable, Iterable, Iterator, Mapping, Sequence, Union


# ---------------------------------------------------------------------------
# multi-indices


@dataclass(frozen=True)
class MultiIndex:
    """A multi-index in N^d together with the scaling of each direction.

    The scaling weights the degree of a direction: ``s_degree`` is the sum of
    ``entries[i] * scaling[i]``.  Arithmetic requires both operands to carry
    the same scaling.
    """

    entries: tuple[int, ...]
    scaling: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.entries) != len(self.scaling):
            raise ValueError("entries and scaling must have equal length")
        if any(e < 0 or not isinstance(e, int) for e in self.entries):
            raise ValueError(f"entries must be nonnegative integers: {self.entries}")
        if any(s < 1 or not isinstance(s, int) for s in self.scaling):
            raise ValueError(f"scaling weights must be positive integers: {self.scaling}")

    @classmethod
    def zero(cls, scaling: Sequence[int]) -> "MultiIndex":
        return cls((0,) * len(scaling), tuple(scaling))

    @classmethod
    def unit(cls, scaling: Sequence[int], i: int) -> "MultiIndex":
        e = [0] * len(scaling)
        e[i] = 1
        return cls(tuple(e), tuple(scaling))

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def order(self) -> int:
        """Plain degree |k| (number of derivatives)."""
        return sum(self.entries)

    @property
    def s_degree(self) -> int:
        """Scaled degree |k|_s."""
        return sum(e * s for e, s in zip(self.entries, self.scaling))

    @property
    def is_zero(self) -> bool:
        return all(e == 0 for e in self.entries)

    def factorial(self) -> int:
        return prod(factorial(e) for e in self.entries)

    def _check(self, other: "MultiIndex") -> None:
        if self.scaling != other.scaling:
            raise ValueError("mismatched scalings")

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        self._check(other)
        return MultiIndex(tuple(a + b for a, b in zip(self.entries, other.entries)), self.scaling)

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        self._check(other)
        diff = tuple(a - b for a, b in zip(self.entries, other.entries))
        if any(e < 0 for e in diff):
            raise ValueError(f"negative multi-index: {self.entries} - {other.entries}")
        return MultiIndex(diff, self.scaling)

    def meet(self, other: "MultiIndex") -> "MultiIndex":
        """Componentwise minimum."""
        self._check(other)
        return MultiIndex(tuple(min(a, b) for a, b in zip(self.entries, other.entries)), self.scaling)

    def leq(self, other: "MultiIndex") -> bool:
        self._check(other)
        return all(a <= b for a, b in zip(self.entries, other.entries))

    def binom(self, q: "MultiIndex") -> int:
        """Product of componentwise binomial coefficients C(self_i, q_i)."""
        self._check(q)
        return prod(comb(a, b) for a, b in zip(self.entries, q.entries))

    def down_set(self) -> Iterator["MultiIndex"]:
        """All multi-indices q <= self, componentwise."""
        for es in iter_product(*(range(e + 1) for e in self.entries)):
            yield MultiIndex(es, self.scaling)

    def __str__(self) -> str:
        return "(" + ",".join(str(e) for e in self.entries) + ")"


def parabolic_scaling(d: int) -> tuple[int, ...]:
    """Scaling (2, 1, ..., 1): one time direction and d-1 space directions."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return (2,) + (1,) * (d - 1)


def multiindices_up_to(scaling: Sequence[int], max_s_degree: int) -> list[MultiIndex]:
    """All multi-indices with scaled degree <= max_s_degree, sorted."""
    scaling = tuple(scaling)
    if max_s_degree < 0:
        return []
    ranges = [range(max_s_degree // s + 1) for s in scaling]
    out = [
        MultiIndex(es, scaling)
        for es in iter_product(*ranges)
        if sum(e * s for e, s in zip(es, scaling)) <= max_s_degree
    ]
    out.sort(key=lambda m: (m.s_degree, m.entries))
    return out


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class LabeledTree:
    """A rooted tree with vertex labels (poly, noise) and edge labels.

    ``children`` holds pairs (edge label, subtree) and is stored sorted by a
    canonical key, so two trees are equal iff they are equal as unordered
    labelled trees.  Noise label 0 is the drift symbol; labels 1..n are the
    noise components.
    """

    poly: MultiIndex
    noise: int
    children: tuple[tuple[MultiIndex, "LabeledTree"], ...] = ()

    def __post_init__(self) -> None:
        if self.noise < 0:
            raise ValueError("noise label must be nonnegative")
        for edge, child in self.children:
            if edge.scaling != self.poly.scaling or child.poly.scaling != self.poly.scaling:
                raise ValueError("all labels in a tree must share one scaling")
        ordered = tuple(sorted(self.children, key=_edge_child_key))
        object.__setattr__(self, "children", ordered)

    @property
    def scaling(self) -> tuple[int, ...]:
        return self.poly.scaling

    @property
    def is_unit(self) -> bool:
        """True for the bare drift vertex with no labels (the tree 1)."""
        return self.noise == 0 and self.poly.is_zero and not self.children

    @property
    def n_vertices(self) -> int:
        return 1 + sum(c.n_vertices for _, c in self.children)

    def __str__(self) -> str:
        return serialize(self)


def _tree_key(tree: LabeledTree):
    return (
        tree.noise,
        tree.poly.entries,
        tuple((e.entries, _tree_key(c)) for e, c in tree.children),
    )


def _edge_child_key(pair: tuple[MultiIndex, LabeledTree]):
    edge, child = pair
    return (edge.entries, _tree_key(child))


def unit_tree(scaling: Sequence[int]) -> LabeledTree:
    return LabeledTree(MultiIndex.zero(scaling), 0)


def x_tree(k: MultiIndex) -> LabeledTree:
    """The purely polynomial tree X^k."""
    return LabeledTree(k, 0)


def xi_tree(j: int, scaling: Sequence[int], poly: MultiIndex | None = None) -> LabeledTree:
    """A single noise vertex, optionally with a polynomial label."""
    return LabeledTree(poly if poly is not None else MultiIndex.zero(scaling), j)


def planted(k: MultiIndex, sigma: LabeledTree) -> LabeledTree:
    """The planted tree obtained by attaching a bare drift root above sigma."""
    return LabeledTree(MultiIndex.zero(k.scaling), 0, ((k, sigma),))


def tree_mul(a: LabeledTree, b: LabeledTree) -> LabeledTree:
    """Root product: merge roots (polynomial labels add, children concatenate).

    At most one factor may carry a nonzero noise label at the root.
    """
    if a.noise and b.noise:
        raise ValueError("product of two noise-rooted trees is not a tree")
    return LabeledTree(a.poly + b.poly, a.noise or b.noise, a.children + b.children)


def canonicalize(tree: LabeledTree) -> LabeledTree:
    """Rebuild the tree bottom-up; idempotent by construction."""
    return LabeledTree(
        tree.poly, tree.noise, tuple((e, canonicalize(c)) for e, c in tree.children)
    )


def noise_count(tree: LabeledTree) -> int:
    """Number of vertices with a nonzero noise label."""
    return (1 if tree.noise else 0) + sum(noise_count(c) for _, c in tree.children)


def branches(tree: LabeledTree) -> tuple[LabeledTree, ...]:
    """All subtrees hanging at a vertex, one per vertex, preorder.

    The first entry is the tree itself.
    """
    out = [tree]
    for _, c in tree.children:
        out.extend(branches(c))
    return tuple(out)


def has_polynomial_leaf(tree: LabeledTree) -> bool:
    """True if some non-root vertex is childless with noise label 0."""

    def below(t: LabeledTree) -> bool:
        return any((not c.children and c.noise == 0) or below(c) for _, c in t.children)

    return below(tree)


# ---------------------------------------------------------------------------
# factorials, inner products, homogeneities


@lru_cache(maxsize=None)
def tree_factorial(tree: LabeledTree) -> int:
    """k! times m! (sigma!)^m over distinct (edge, subtree) child groups."""
    groups: dict[tuple[MultiIndex, LabeledTree], int] = {}
    for pair in tree.children:
        groups[pair] = groups.get(pair, 0) + 1
    return tree.poly.factorial() * prod(
        factorial(m) * tree_factorial(c) ** m for (_, c), m in groups.items()
    )


def inner_product(a: LabeledTree, b: LabeledTree) -> int:
    """<a, b> = delta_{a,b} a!; trees are an orthogonal basis."""
    return tree_factorial(a) if a == b else 0


def inner_product_recursive(a: LabeledTree, b: LabeledTree) -> int:
    """Inner product by the root recursion, summing over child matchings.

    Independent of the canonical-form route; the two must agree.
    """
    if a.noise != b.noise or a.poly != b.poly:
        return 0
    if len(a.children) != len(b.children):
        # trees with different numbers of root edges are orthogonal
        return 0
    from itertools import permutations

    total = 0
    bc = b.children
    for perm in permutations(range(len(bc))):
        term = 1
        for i, (ea, ca) in enumerate(a.children):
            eb, cb = bc[perm[i]]
            if ea != eb:
                term = 0
                break
            term *= inner_product_recursive(ca, cb)
            if term == 0:
                break
        total += term
    return a.poly.factorial() * total


@lru_cache(maxsize=None)
def homogeneity(tree: LabeledTree, beta: Fraction) -> Fraction:
    """|tau|_s: beta per noise vertex, |n(v)|_s per vertex, 2 - |e|_s per edge."""
    h = Fraction(beta) if tree.noise else Fraction(0)
    h += tree.poly.s_degree
    for edge, child in tree.children:
        h += 2 - edge.s_degree + homogeneity(child, beta)
    return h


@lru_cache(maxsize=None)
def critical_homogeneity(tree: LabeledTree, alpha: Fraction) -> Fraction:
    """Same recursion as the homogeneity but every noise counts -alpha - 2."""
    h = -Fraction(alpha) - 2 if tree.noise else Fraction(0)
    h += tree.poly.s_degree
    for edge, child in tree.children:
        h += 2 - edge.s_degree + critical_homogeneity(child, alpha)
    return h


# ---------------------------------------------------------------------------
# linear combinations


Key = Union[LabeledTree, "HForest", tuple]


class TreeSum:
    """A finite linear combination with exact rational coefficients.

    Keys may be trees, algebra monomials, or pairs of those; zero coefficients
    are never stored.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Key, Fraction] | Iterable[tuple[Key, Fraction]] = ()):
        acc: dict[Key, Fraction] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for key, coeff in items:
            c = acc.get(key, Fraction(0)) + Fraction(coeff)
            if c:
                acc[key] = c
            elif key in acc:
                del acc[key]
        self._terms = acc

    @classmethod
    def single(cls, key: Key, coeff: Fraction | int = 1) -> "TreeSum":
        return cls([(key, Fraction(coeff))])

    @classmethod
    def zero(cls) -> "TreeSum":
        return cls()

    def items(self):
        return self._terms.items()

    def keys(self):
        return self._terms.keys()

    def coeff(self, key: Key) -> Fraction:
        return self._terms.get(key, Fraction(0))

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def __add__(self, other: "TreeSum") -> "TreeSum":
        out = dict(self._terms)
        for key, c in other._terms.items():
            s = out.get(key, Fraction(0)) + c
            if s:
                out[key] = s
            elif key in out:
                del out[key]
        res = TreeSum.__new__(TreeSum)
        res._terms = out
        return res

    def __sub__(self, other: "TreeSum") -> "TreeSum":
        return self + (other * -1)

    def __mul__(self, scalar: Fraction | int) -> "TreeSum":
        scalar = Fraction(scalar)
        if not scalar:
            return TreeSum()
        res = TreeSum.__new__(TreeSum)
        res._terms = {k: c * scalar for k, c in self._terms.items()}
        return res

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TreeSum) and self._terms == other._terms

    def apply_linear(self, fn: Callable[[Key], "TreeSum"]) -> "TreeSum":
        """Linear extension of a key-level map into sums."""
        acc: dict[Key, Fraction] = {}
        for key, c in self._terms.items():
            for k2, c2 in fn(key).items():
                s = acc.get(k2, Fraction(0)) + c * c2
                if s:
                    acc[k2] = s
                elif k2 in acc:
                    del acc[k2]
        res = TreeSum.__new__(TreeSum)
        res._terms = acc
        return res

    def map_keys(self, fn: Callable[[Key], Key]) -> "TreeSum":
        return TreeSum([(fn(k), c) for k, c in self._terms.items()])

    def __repr__(self) -> str:
        if not self._terms:
            return "TreeSum(0)"
        bits = [f"{c}*{k}" for k, c in sorted(self._terms.items(), key=lambda kv: str(kv[0]))]
        return "TreeSum(" + " + ".join(bits) + ")"


# ---------------------------------------------------------------------------
# algebra monomials


@dataclass(frozen=True)
class HForest:
    """A monomial X^a * prod_i I^{k_i}[sigma_i] in the free commutative algebra.

    The empty monomial (a = 0, no planted factors) is the unit.
    """

    poly: MultiIndex
    planted: tuple[tuple[MultiIndex, LabeledTree], ...] = ()

    def __post_init__(self) -> None:
        for k, s in self.planted:
            if k.scaling != self.poly.scaling or s.poly.scaling != self.poly.scaling:
                raise ValueError("all labels in a monomial must share one scaling")
        object.__setattr__(self, "planted", tuple(sorted(self.planted, key=_edge_child_key)))

    @classmethod
    def unit(cls, scaling: Sequence[int]) -> "HForest":
        return cls(MultiIndex.zero(scaling))

    @classmethod
    def x_power(cls, a: MultiIndex) -> "HForest":
        return cls(a)

    @classmethod
    def plant(cls, k: MultiIndex, sigma: LabeledTree) -> "HForest":
        return cls(MultiIndex.zero(k.scaling), ((k, sigma),))

    @property
    def is_unit(self) -> bool:
        return self.poly.is_zero and not self.planted

    @property
    def scaling(self) -> tuple[int, ...]:
        return self.poly.scaling

    def __mul__(self, other: "HForest") -> "HForest":
        return HForest(self.poly + other.poly, self.planted + other.planted)

    def __str__(self) -> str:
        bits = [f"X^{self.poly}"]
        bits += [f"I^{k}[{serialize(s)}]" for k, s in self.planted]
        return " ".join(bits)


def forest_factorial(forest: HForest) -> int:
    """a! times m! (sigma!)^m over distinct planted factors (edge labels free)."""
    groups: dict[tuple[MultiIndex, LabeledTree], int] = {}
    for pair in forest.planted:
        groups[pair] = groups.get(pair, 0) + 1
    return forest.poly.factorial() * prod(
        factorial(m) * tree_factorial(s) ** m for (_, s), m in groups.items()
    )


def forest_inner_product(a: HForest, b: HForest) -> int:
    return forest_factorial(a) if a == b else 0


def forest_homogeneity(forest: HForest, beta: Fraction) -> Fraction:
    h = Fraction(forest.poly.s_degree)
    for k, s in forest.planted:
        h += homogeneity(s, beta) + 2 - k.s_degree
    return h


# ---------------------------------------------------------------------------
# grafting and raising


def graft(sigma: LabeledTree, k: MultiIndex, tau: LabeledTree) -> TreeSum:
    """Sum over vertices v of tau and splittings q <= n(v) ^ k of attaching
    sigma below v with edge label k - q, weighted by binom(n(v), q); the
    vertex keeps label n(v) - q."""
    acc: dict[LabeledTree, Fraction] = {}
    for q in tau.poly.meet(k).down_set():
        t = LabeledTree(tau.poly - q, tau.noise, tau.children + ((k - q, sigma),))
        acc[t] = acc.get(t, Fraction(0)) + tau.poly.binom(q)
    for i, (edge, child) in enumerate(tau.children):
        for t, c in graft(sigma, k, child).items():
            rebuilt = LabeledTree(
                tau.poly, tau.noise, tau.children[:i] + ((edge, t),) + tau.children[i + 1 :]
            )
            acc[rebuilt] = acc.get(rebuilt, Fraction(0)) + c
    return TreeSum(acc)


def raise_op(tau: LabeledTree, i: int) -> TreeSum:
    """Sum over vertices of adding e_i to the polynomial label."""
    e = MultiIndex.unit(tau.scaling, i)
    top = LabeledTree(tau.poly + e, tau.noise, tau.children)
    acc: dict[LabeledTree, Fraction] = {top: Fraction(1)}
    for idx, (edge, child) in enumerate(tau.children):
        for t, c in raise_op(child, i).items():
            rebuilt = LabeledTree(
                tau.poly, tau.noise, tau.children[:idx] + ((edge, t),) + tau.children[idx + 1 :]
            )
            acc[rebuilt] = acc.get(rebuilt, Fraction(0)) + c
    return TreeSum(acc)


# ---------------------------------------------------------------------------
# the products M and M^+ induced by grafting/raising


def _first_nonzero(mi: MultiIndex) -> int:
    for i, e in enumerate(mi.entries):
        if e:
            return i
    raise ValueError("zero multi-index has no support")


def _gen_on_forest(gen_kind: str, gen_payload, forest: HForest) -> TreeSum:
    """Derivation action of a single generator on a monomial.

    X-generators act on planted factors by raising, planted generators by
    grafting; the X^a part of the monomial is annihilated either way.
    """
    acc: dict[HForest, Fraction] = {}
    for idx, (edge, sub) in enumerate(forest.planted):
        if gen_kind == "x":
            inner = raise_op(sub, gen_payload)
        else:
            gk, gs = gen_payload
            inner = graft(gs, gk, sub)
        rest = forest.planted[:idx] + forest.planted[idx + 1 :]
        for t, c in inner.items():
            key = HForest(forest.poly, rest + ((edge, t),))
            acc[key] = acc.get(key, Fraction(0)) + c
    return TreeSum(acc)


_M_PLUS_CACHE: dict[tuple[HForest, HForest], TreeSum] = {}
_M_MAP_CACHE: dict[tuple[HForest, LabeledTree], TreeSum] = {}
_COPRODUCT_CACHE: dict[tuple[LabeledTree, Fraction], TreeSum] = {}


def m_plus(forest: HForest, target: HForest, pivot: int | None = None) -> TreeSum:
    """Product on the algebra: peel one generator off ``forest``, act as a
    derivation, and correct by the inner action on the remainder.

    ``pivot`` selects which generator is peeled (an X-direction while the
    polynomial part is nonzero, else an index into the planted factors); the
    result does not depend on it.
    """
    if pivot is None:
        cached = _M_PLUS_CACHE.get((forest, target))
        if cached is not None:
            return cached
        result = _m_plus_impl(forest, target, None)
        _M_PLUS_CACHE[(forest, target)] = result
        return result
    return _m_plus_impl(forest, target, pivot)


def _m_plus_impl(forest: HForest, target: HForest, pivot: int | None) -> TreeSum:
    if forest.is_unit:
        return TreeSum.single(target)
    if not forest.poly.is_zero:
        i = pivot if pivot is not None else _first_nonzero(forest.poly)
        if forest.poly.entries[i] == 0:
            raise ValueError("pivot direction not present in polynomial part")
        rest = HForest(forest.poly - MultiIndex.unit(forest.scaling, i), forest.planted)
        first = m_plus(rest, target).apply_linear(lambda g: _gen_on_forest("x", i, g))
        second = _gen_on_forest("x", i, rest).apply_linear(lambda g: m_plus(g, target))
        return first - second
    idx = pivot if pivot is not None else 0
    k1, s1 = forest.planted[idx]
    rest = HForest(forest.poly, forest.planted[:idx] + forest.planted[idx + 1 :])
    first = m_plus(rest, target).apply_linear(lambda g: _gen_on_forest("planted", (k1, s1), g))
    second = _gen_on_forest("planted", (k1, s1), rest).apply_linear(lambda g: m_plus(g, target))
    return first - second


def _gen_on_tree(gen_kind: str, gen_payload, tau: LabeledTree) -> TreeSum:
    if gen_kind == "x":
        return raise_op(tau, gen_payload)
    gk, gs = gen_payload
    return graft(gs, gk, tau)


def m_map(forest: HForest, tau: LabeledTree, pivot: int | None = None) -> TreeSum:
    """Action of an algebra monomial on a tree, extending grafting/raising.

    Same peeling scheme as ``m_plus``; the unit acts as the identity.
    """
    if pivot is None:
        cached = _M_MAP_CACHE.get((forest, tau))
        if cached is not None:
            return cached
        result = _m_map_impl(forest, tau, None)
        _M_MAP_CACHE[(forest, tau)] = result
        return result
    return _m_map_impl(forest, tau, pivot)


def _m_map_impl(forest: HForest, tau: LabeledTree, pivot: int | None) -> TreeSum:
    if forest.is_unit:
        return TreeSum.single(tau)
    if not forest.poly.is_zero:
        i = pivot if pivot is not None else _first_nonzero(forest.poly)
        if forest.poly.entries[i] == 0:
            raise ValueError("pivot direction not present in polynomial part")
        rest = HForest(forest.poly - MultiIndex.unit(forest.scaling, i), forest.planted)
        first = m_map(rest, tau).apply_linear(lambda t: _gen_on_tree("x", i, t))
        second = _gen_on_forest("x", i, rest).apply_linear(lambda g: m_map(g, tau))
        return first - second
    idx = pivot if pivot is not None else 0
    k1, s1 = forest.planted[idx]
    rest = HForest(forest.poly, forest.planted[:idx] + forest.planted[idx + 1 :])
    first = m_map(rest, tau).apply_linear(lambda t: _gen_on_tree("planted", (k1, s1), t))
    second = _gen_on_forest("planted", (k1, s1), rest).apply_linear(lambda g: m_map(g, tau))
    return first - second


# ---------------------------------------------------------------------------
# coproduct and characters


def coproduct(tau: LabeledTree, beta: Fraction) -> TreeSum:
    """The structure coproduct, as a sum over pairs (monomial, tree).

    Defined on the free span of all trees: noise vertices stay on the right,
    X^i splits binomially, and each planted subtree either keeps its integral
    on the right or moves to the left against a Taylor monomial X^l / l!,
    with l restricted by the homogeneity of the planted factor.
    """
    beta = Fraction(beta)
    cached = _COPRODUCT_CACHE.get((tau, beta))
    if cached is not None:
        return cached
    scaling = tau.scaling
    unit_f = HForest.unit(scaling)
    # noise factor at the root
    pairs = TreeSum.single((unit_f, LabeledTree(MultiIndex.zero(scaling), tau.noise)))
    # polynomial factor: X^k splits with binomial weights
    pairs = _pair_mul(pairs, _coproduct_x(tau.poly))
    for edge, child in tau.children:
        pairs = _pair_mul(pairs, _coproduct_planted(edge, child, beta))
    _COPRODUCT_CACHE[(tau, beta)] = pairs
    return pairs


def _pair_mul(a: TreeSum, b: TreeSum) -> TreeSum:
    acc: dict = {}
    for (fa, ta), ca in a.items():
        for (fb, tb), cb in b.items():
            key = (fa * fb, tree_mul(ta, tb))
            acc[key] = acc.get(key, Fraction(0)) + ca * cb
    return TreeSum(acc)


def _coproduct_x(k: MultiIndex) -> TreeSum:
    out = TreeSum()
    for a in k.down_set():
        out = out + TreeSum.single((HForest.x_power(a), x_tree(k - a)), k.binom(a))
    return out


def _coproduct_planted(k: MultiIndex, sigma: LabeledTree, beta: Fraction) -> TreeSum:
    out = TreeSum()
    for (f, t), c in coproduct(sigma, beta).items():
        out = out + TreeSum.single((f, planted(k, t)), c)
    bound = homogeneity(sigma, beta) + 2 - k.s_degree
    if bound > 0:
        top = int(bound) if bound != int(bound) else int(bound) - 1
        for ell in multiindices_up_to(sigma.scaling, top):
            out = out + TreeSum.single(
                (HForest.plant(k + ell, sigma), x_tree(ell)), Fraction(1, ell.factorial())
            )
    return out


def coproduct_flags(
    tau: LabeledTree,
    beta: Fraction,
    rule: "Rule",
    omega_right: Fraction | int = 2,
) -> list[str]:
    """Report coproduct output legs that escape the expected sectors.

    Left planted factors should be integrals of conforming, leaf-free trees of
    negative homogeneity with positive integrated homogeneity; right legs
    should have homogeneity at most ``omega_right``.  Returns messages, empty
    when everything lands where it should.
    """
    msgs = []
    for (f, t), _ in coproduct(tau, beta).items():
        for k, s in f.planted:
            if not conforms(s, rule):
                msgs.append(f"left factor I^{k}[{serialize(s)}] has a non-conforming subtree")
            elif has_polynomial_leaf(s):
                msgs.append(f"left factor I^{k}[{serialize(s)}] has a polynomial leaf")
            elif not homogeneity(s, beta) < 0:
                msgs.append(f"left factor I^{k}[{serialize(s)}] not of negative homogeneity")
            elif not homogeneity(s, beta) + 2 - k.s_degree > 0:
                msgs.append(f"left factor I^{k}[{serialize(s)}] not positively integrated")
        if homogeneity(t, beta) > omega_right:
            msgs.append(f"right leg {serialize(t)} above cutoff {omega_right}")
    return msgs


def eval_character(
    forest: HForest,
    x_values: Sequence[Fraction],
    planted_values: Mapping[LabeledTree, Fraction],
) -> Fraction:
    """Evaluate a multiplicative functional on a monomial.

    ``planted_values`` is keyed by the planted-tree form; generators outside
    its support evaluate to zero, the unit to one.
    """
    val = Fraction(1)
    for i, e in enumerate(forest.poly.entries):
        if e:
            val *= Fraction(x_values[i]) ** e
    for k, s in forest.planted:
        val *= Fraction(planted_values.get(planted(k, s), 0))
    return val


def gamma_transform(
    tau: LabeledTree,
    beta: Fraction,
    x_values: Sequence[Fraction],
    planted_values: Mapping[LabeledTree, Fraction],
) -> TreeSum:
    """Apply the re-expansion map of the character: (g (x) Id) after the coproduct."""
    out = TreeSum()
    for (f, t), c in coproduct(tau, beta).items():
        g = eval_character(f, x_values, planted_values)
        if g:
            out = out + TreeSum.single(t, c * g)
    return out


# ---------------------------------------------------------------------------
# rules and conforming trees


@dataclass(frozen=True)
class Rule:
    """Which edge-label multisets are allowed below each vertex type.

    ``case`` describes the noise nonlinearity: "constant" (no arguments),
    "phi" (depends on the function only), "grad_phi" (depends on the
    gradient).  ``drift_sets`` lists the allowed multisets below a drift
    vertex, each a sorted tuple of multi-indices.
    """

    case: str
    beta: Fraction
    drift_sets: tuple[tuple[MultiIndex, ...], ...]

    def __post_init__(self) -> None:
        if self.case not in ("constant", "phi", "grad_phi"):
            raise ValueError(f"unknown case {self.case!r}")
        object.__setattr__(self, "beta", Fraction(self.beta))
        canon = {tuple(sorted(s, key=lambda m: m.entries)) for s in self.drift_sets}
        object.__setattr__(
            self,
            "drift_sets",
            tuple(sorted(canon, key=lambda s: (len(s), tuple(m.entries for m in s)))),
        )

    @classmethod
    def power(
        cls,
        case: str,
        beta: Fraction,
        p: int,
        scaling: Sequence[int],
        gradient_drift: bool = False,
    ) -> "Rule":
        """Rule for a degree-p power drift, optionally with one gradient slot.

        The gradient part allows one spatial-derivative edge alongside up to
        (p-1)/2 plain edges.
        """
        if p < 2:
            raise ValueError("drift degree must be at least 2")
        scaling = tuple(scaling)
        zero = MultiIndex.zero(scaling)
        sets = [tuple([zero] * a) for a in range(p + 1)]
        if gradient_drift:
            if (p - 1) % 2:
                raise ValueError("gradient drift needs odd degree p")
            q = (p - 1) // 2
            units = [MultiIndex.unit(scaling, i) for i in range(len(scaling)) if scaling[i] == 1]
            for e in units:
                for a in range(q + 1):
                    sets.append(tuple(sorted([e] + [zero] * a, key=lambda m: m.entries)))
        return cls(case, Fraction(beta), tuple(sets))

    @property
    def drift_degree(self) -> int:
        return max(len(s) for s in self.drift_sets)

    @property
    def alpha(self) -> Fraction:
        """Scaling exponent 2/(p-1) of the damping term."""
        return Fraction(2, self.drift_degree - 1)

    def is_subcritical(self) -> bool:
        if self.case == "constant":
            return self.beta > -self.alpha - 2
        if self.case == "phi":
            return self.beta > -2
        return self.beta > -1

    def noise_edge_labels(self, scaling: Sequence[int]) -> tuple[MultiIndex, ...]:
        """Edge labels allowed below a noise vertex (any multiset of them)."""
        scaling = tuple(scaling)
        if self.case == "constant":
            return ()
        if self.case == "phi":
            return (MultiIndex.zero(scaling),)
        units = tuple(
            MultiIndex.unit(scaling, i) for i in range(len(scaling)) if scaling[i] == 1
        )
        return (MultiIndex.zero(scaling),) + units

    def allows(self, noise: int, edges: Sequence[MultiIndex]) -> bool:
        """Is the multiset of edge labels allowed below a vertex with this noise?"""
        if not edges:
            return True  # childless vertices conform unconditionally
        if noise == 0:
            key = tuple(sorted(edges, key=lambda m: m.entries))
            return key in self.drift_sets
        if self.case == "constant":
            return False
        if self.case == "phi":
            return all(e.is_zero for e in edges)
        return all(e.s_degree <= 1 for e in edges)


def conforms(tree: LabeledTree, rule: Rule) -> bool:
    """Every vertex's child edge labels form an allowed multiset."""
    if not rule.allows(tree.noise, [e for e, _ in tree.children]):
        return False
    return all(conforms(c, rule) for _, c in tree.children)


@dataclass(frozen=True)
class ConformingSet:
    """Exact enumeration of the conforming leaf-free trees below a cutoff.

    ``trees`` is the full list with homogeneity <= omega (and > -2), sorted by
    (homogeneity, serialization); ``u_planted`` lists the pairs (k, sigma)
    with sigma of negative homogeneity whose integral has positive
    homogeneity.  ``min_hom`` and ``min_hom_trees`` certify the bottom of the
    spectrum.
    """

    rule: Rule
    omega: Fraction
    scaling: tuple[int, ...]
    n_noises: int
    trees: tuple[LabeledTree, ...]
    u_planted: tuple[tuple[MultiIndex, LabeledTree], ...]
    min_hom: Fraction
    min_hom_trees: tuple[LabeledTree, ...]

    @property
    def negative_trees(self) -> tuple[LabeledTree, ...]:
        beta = self.rule.beta
        return tuple(t for t in self.trees if homogeneity(t, beta) < 0)


MAX_NOISE_VERTICES = 12


def enumerate_conforming(
    rule: Rule,
    omega: Fraction | int,
    scaling: Sequence[int],
    n_noises: int = 1,
    max_noise: int = MAX_NOISE_VERTICES,
) -> ConformingSet:
    """All conforming trees without polynomial leaves of homogeneity <= omega.

    Closure argument: every branch of such a tree is again such a tree with no
    larger homogeneity, so the set is built as a pool closed under adding new
    roots.  Noise-vertex counts are bounded by charging each noise vertex its
    own parent edge: with L noise vertices, hom >= L(beta+2) - 2 when the
    noise coefficient depends on the function, hom >= L(beta+1) - 1 in the
    gradient case, and hom >= L(beta+2+alpha) - 2 - alpha in the constant
    case (where the charge also covers the mandatory drift parents).

    Args:
        rule: allowed edge multisets per vertex type (carries beta).
        omega: homogeneity cutoff.
        scaling: direction weights shared by every label.
        n_noises: number of distinct noise labels.
        max_noise: diagnostic cap on noise vertices per tree.

    Raises:
        ValueError: if the rule is not subcritical, or if the window would
            require trees with more than ``max_noise`` noise vertices.
    """
    if not rule.is_subcritical():
        raise ValueError(
            f"rule not subcritical: case={rule.case} beta={rule.beta} needs "
            f"beta > {-rule.alpha - 2 if rule.case == 'constant' else (-2 if rule.case == 'phi' else -1)}"
        )
    beta = rule.beta
    omega = Fraction(omega)
    scaling = tuple(scaling)
    zero = MultiIndex.zero(scaling)

    if rule.case == "grad_phi":
        l_bound = (omega + 1) / (beta + 1)
    elif rule.case == "phi":
        l_bound = (omega + 2) / (beta + 2)
    else:
        # noise vertices are leaves here, so each batch of them needs a drift
        # parent; counting drift vertices tightens the bound enough to cover
        # beta <= -2
        a = rule.alpha
        l_bound = (omega + 2 + a) / (beta + 2 + a)
        if beta + 2 > 0:
            l_bound = min(l_bound, (omega + 2) / (beta + 2))
    l_max = int(l_bound) if l_bound >= 0 else 0
    if l_max > max_noise:
        raise ValueError(
            f"homogeneity window omega={omega} admits trees with up to {l_max} noise "
            f"vertices, above the cap of {max_noise}; refusing to enumerate"
        )
    # hom >= L*beta + (V-1) since every edge contributes at least 1
    v_max = int(1 + omega - min(beta, 0) * l_max)

    by_vertices: dict[int, list[LabeledTree]] = {}
    pool: set[LabeledTree] = set()

    def add(tree: LabeledTree) -> None:
        if tree not in pool:
            pool.add(tree)
            by_vertices.setdefault(tree.n_vertices, []).append(tree)

    # single vertices: X^k for any |k|_s <= omega, and X^k Xi_j for
    # |k|_s <= omega - beta
    for k in multiindices_up_to(scaling, int(omega) if omega >= 0 else -1):
        add(x_tree(k))
    if beta <= omega:
        for k in multiindices_up_to(scaling, int(omega - beta)):
            for j in range(1, n_noises + 1):
                add(xi_tree(j, scaling, k))

    noise_labels = rule.noise_edge_labels(scaling)

    for v_total in range(2, v_max + 1):
        child_pool = [
            t for t in pool
            if t.n_vertices < v_total and not (t.noise == 0 and not t.children)
        ]
        # candidates (edge, subtree) with their homogeneity contribution
        def contributions(edges: Sequence[MultiIndex]):
            cand = []
            for e in edges:
                for t in child_pool:
                    cand.append((2 - e.s_degree + homogeneity(t, beta), t.n_vertices, e, t))
            cand.sort(key=lambda it: (it[0], it[1], it[2].entries, _tree_key(it[3])))
            return cand

        def finish(j: int, chosen: list[tuple[MultiIndex, LabeledTree]], used_hom: Fraction):
            if sum(t.n_vertices for _, t in chosen) != v_total - 1:
                return
            room = omega - used_hom
            if room < 0:
                return
            if noise_count(LabeledTree(zero, j, tuple(chosen))) > min(l_max, max_noise):
                return
            for k in multiindices_up_to(scaling, int(room)):
                add(LabeledTree(k, j, tuple(chosen)))

        # noise roots: any multiset over the allowed labels; every candidate
        # contributes > 0 so ascending budget pruning is exact
        for j in range(1, n_noises + 1):
            if not noise_labels:
                break
            cand = contributions(noise_labels)

            def rec(start: int, chosen, used_hom, used_v):
                finish(j, chosen, used_hom)
                for idx in range(start, len(cand)):
                    c, v, e, t = cand[idx]
                    if used_hom + c > omega or used_v + v > v_total - 1:
                        if used_hom + c > omega:
                            break  # sorted ascending, all positive
                        continue
                    rec(idx, chosen + [(e, t)], used_hom + c, used_v + v)

            rec(0, [], Fraction(beta), 0)

        # drift roots: iterate the allowed multisets; derivative-edge slots are
        # assigned exhaustively (their contribution can be negative), zero-edge
        # slots with ascending budget pruning (their contribution is positive)
        for pattern in rule.drift_sets:
            if not pattern:
                continue
            nz_groups: dict[MultiIndex, int] = {}
            for e in pattern:
                if not e.is_zero:
                    nz_groups[e] = nz_groups.get(e, 0) + 1
            n_zero = len(pattern) - sum(nz_groups.values())
            zero_cand = contributions([zero]) if n_zero else []

            def rec_zero(start, chosen, used_hom, used_v, remaining):
                if remaining == 0:
                    finish(0, chosen, used_hom)
                    return
                for idx in range(start, len(zero_cand)):
                    c, v, e, t = zero_cand[idx]
                    if used_hom + c > omega or used_v + v > v_total - 1:
                        if used_hom + c > omega:
                            break
                        continue
                    rec_zero(idx, chosen + [(e, t)], used_hom + c, used_v + v, remaining - 1)

            def assign_nonzero(groups, chosen, used_hom, used_v):
                if used_v > v_total - 1:
                    return
                if not groups:
                    if n_zero:
                        rec_zero(0, chosen, used_hom, used_v, n_zero)
                    else:
                        finish(0, chosen, used_hom)
                    return
                (e, m) = groups[0]
                for combo in combinations_with_replacement(child_pool, m):
                    h = used_hom + sum(2 - e.s_degree + homogeneity(t, beta) for t in combo)
                    v = used_v + sum(t.n_vertices for t in combo)
                    assign_nonzero(groups[1:], chosen + [(e, t) for t in combo], h, v)

            assign_nonzero(
                sorted(nz_groups.items(), key=lambda em: em[0].entries), [], Fraction(0), 0
            )

    trees = sorted(pool, key=lambda t: (homogeneity(t, beta), serialize(t)))
    u_planted = []
    for s in trees:
        h = homogeneity(s, beta)
        if h < 0 and not (s.noise == 0 and not s.children):
            bound = h + 2
            # largest integer strictly below bound, also when bound <= 0
            top = ceil(bound) - 1
            for k in multiindices_up_to(scaling, top):
                u_planted.append((k, s))
    u_planted.sort(key=lambda ks: (homogeneity(ks[1], beta) + 2 - ks[0].s_degree,
                                   ks[0].entries, serialize(ks[1])))
    min_hom = min(homogeneity(t, beta) for t in trees)
    min_trees = tuple(t for t in trees if homogeneity(t, beta) == min_hom)
    return ConformingSet(
        rule=rule,
        omega=omega,
        scaling=scaling,
        n_noises=n_noises,
        trees=tuple(trees),
        u_planted=tuple(u_planted),
        min_hom=min_hom,
        min_hom_trees=min_trees,
    )


# ---------------------------------------------------------------------------
# serialization


def serialize(tree: LabeledTree) -> str:
    """Canonical text form ``X^(k) Xi_j [ e1:child1 , e2:child2 ]``."""
    if not tree.children:
        inner = "[]"
    else:
        inner = "[ " + " , ".join(f"{e}:{serialize(c)}" for e, c in tree.children) + " ]"
    return f"X^{tree.poly} Xi_{tree.noise} {inner}"


class _Parser:
    def __init__(self, text: str, scaling: tuple[int, ...]):
        self.text = text
        self.pos = 0
        self.scaling = scaling

    def error(self, msg: str) -> ValueError:
        return ValueError(f"parse error at {self.pos}: {msg} (in {self.text!r})")

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def expect(self, token: str) -> None:
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            raise self.error(f"expected {token!r}")
        self.pos += len(token)

    def peek(self, token: str) -> bool:
        self.skip_ws()
        return self.text.startswith(token, self.pos)

    def parse_int(self) -> int:
        self.skip_ws()
        m = re.match(r"\d+", self.text[self.pos :])
        if not m:
            raise self.error("expected integer")
        self.pos += m.end()
        return int(m.group())

    def parse_multiindex(self) -> MultiIndex:
        self.expect("(")
        entries = [self.parse_int()]
        while self.peek(","):
            self.expect(",")
            entries.append(self.parse_int())
        self.expect(")")
        if len(entries) != len(self.scaling):
            raise self.error(f"multi-index length {len(entries)} != dimension {len(self.scaling)}")
        return MultiIndex(tuple(entries), self.scaling)

    def parse_tree(self) -> LabeledTree:
        self.expect("X^")
        poly = self.parse_multiindex()
        self.expect("Xi_")
        noise = self.parse_int()
        self.expect("[")
        children = []
        if not self.peek("]"):
            children.append(self.parse_child())
            while self.peek(","):
                self.expect(",")
                children.append(self.parse_child())
        self.expect("]")
        return LabeledTree(poly, noise, tuple(children))

    def parse_child(self) -> tuple[MultiIndex, LabeledTree]:
        edge = self.parse_multiindex()
        self.expect(":")
        return edge, self.parse_tree()


def parse_tree(text: str, scaling: Sequence[int]) -> LabeledTree:
    """Inverse of ``serialize``; accepts children in any order and returns the
    canonical tree.  The scaling is supplied by the caller (the text does not
    carry it)."""
    p = _Parser(text, tuple(scaling))
    tree = p.parse_tree()
    p.skip_ws()
    if p.pos != len(text):
        raise p.error("trailing input")
    return tree


def fraction_str(x: Fraction | int) -> str:
    """Exact rational as "num/den" (always with the slash)."""
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_fraction(text: str) -> Fraction:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/")
        return Fraction(int(num), int(den))
    return Fraction(int(text))
