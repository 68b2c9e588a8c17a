"""Tests for elementary differentials and their algebraic identities."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest

from coercive.differentials import (
    Character,
    Jet,
    MultiDual,
    Nonlinearity,
    PolyMap,
    SmoothF,
    ad_cos,
    ad_exp,
    ad_sin,
    affine_grad_noise,
    constant_noise,
    crit_scaling_residual,
    d_upsilon,
    d_upsilon_poly,
    drift_from_tensors,
    drift_power,
    grad_phi,
    morphism_residual_poly,
    phi,
    poly_noise_phi,
    q_lambda_jet,
    q_lambda_nonlinearity,
    taylor_residual,
    taylor_residual_poly,
    upsilon,
    upsilon_poly,
    verify_morphism,
)
from coercive.trees import (
    HForest,
    LabeledTree,
    MultiIndex,
    Rule,
    critical_homogeneity,
    enumerate_conforming,
    multiindices_up_to,
    planted,
    tree_mul,
    unit_tree,
    xi_tree,
)
from oracles import fd_partial

S2 = (2,)
S21 = (2, 1)


def _mi(entries, scaling):
    return MultiIndex(tuple(entries), tuple(scaling))


def _zero(scaling):
    return MultiIndex.zero(scaling)


def _branch(root: LabeledTree, k: MultiIndex, child: LabeledTree) -> LabeledTree:
    return tree_mul(root, planted(k, child))


def _nl_cubic(scaling) -> Nonlinearity:
    """Scalar cubic drift with one square noise coefficient."""
    return Nonlinearity(
        tuple(scaling),
        drift_power(3, scaling),
        (poly_noise_phi(scaling, [0, 0, Fraction(1)]),),
    )


def _nl_poly_mixed(scaling) -> Nonlinearity:
    """Two polynomial noises with inhomogeneous coefficients."""
    f1 = poly_noise_phi(scaling, [Fraction(1, 2), Fraction(-1), 0, Fraction(2, 3)])
    f2 = poly_noise_phi(scaling, [Fraction(3), 0, Fraction(1, 5)])
    return Nonlinearity(tuple(scaling), drift_power(3, scaling), (f1, f2))


def _nl_grad(scaling=S21) -> Nonlinearity:
    """Gradient-dependent noise with a gradient term in the drift."""
    return Nonlinearity(
        tuple(scaling),
        drift_power(3, scaling, -1, grad_coeffs=[Fraction(1, 2)]),
        (affine_grad_noise(scaling, Fraction(1, 3), [Fraction(2)]),),
    )


def _nl_const(scaling=S21) -> Nonlinearity:
    return Nonlinearity(
        tuple(scaling),
        drift_power(3, scaling, -1, grad_coeffs=[Fraction(1, 4)]),
        (constant_noise(scaling, Fraction(5, 3)), constant_noise(scaling, Fraction(-2, 7))),
    )


def _rand_jet(rng: random.Random, scaling, max_deg: int = 6) -> Jet:
    vals = {}
    for k in multiindices_up_to(scaling, max_deg):
        vals[k] = Fraction(rng.randint(-4, 4), rng.randint(1, 5))
    return Jet(scaling, vals)


def _random_tree(rng: random.Random, scaling, depth: int, n_noises: int = 2) -> LabeledTree:
    poly = _mi([rng.randint(0, 1) for _ in scaling], scaling)
    noise = rng.randint(0, n_noises)
    n_children = rng.randint(0, 2) if depth > 0 else 0
    tree = LabeledTree(poly, noise, ())
    for _ in range(n_children):
        k = _mi([rng.randint(0, 1) for _ in scaling], scaling)
        tree = _branch(tree, k, _random_tree(rng, scaling, depth - 1, n_noises))
    return tree


# ---------------------------------------------------------------------------
# polynomial maps


def test_polymap_algebra():
    u = phi(S2)
    sq = u * u
    assert sq == u ** 2
    three = PolyMap.constant(S2, [Fraction(3)])
    expr = sq.scale(2) + three
    jet = Jet(S2, {(0,): Fraction(1, 2)})
    assert expr.evaluate(jet) == (Fraction(7, 2),)
    assert (expr - expr).is_zero
    # the total derivative promotes the slot and applies the chain rule
    d = sq.x_derivative(0)
    jet2 = Jet(S2, {(0,): Fraction(3), (1,): Fraction(5)})
    assert d.evaluate(jet2) == (Fraction(30),)


def test_polymap_jet_partial_and_stack():
    u = phi(S21)
    g = grad_phi(S21, 1)
    expr = u ** 2 * g
    d_g = expr.jet_partial(MultiIndex.unit(S21, 1), 0)
    assert d_g == u ** 2
    vec = PolyMap.stack([u * g, u ** 3])
    assert vec.n_components == 2
    jet = Jet(S21, {(0, 0): Fraction(2), (0, 1): Fraction(-1)})
    assert vec.evaluate(jet) == (Fraction(-2), Fraction(8))


def test_polymap_hashable_and_equal():
    a = phi(S2) ** 2
    b = phi(S2) * phi(S2)
    assert a == b and hash(a) == hash(b)
    cache = {a: 1}
    assert cache[b] == 1


# ---------------------------------------------------------------------------
# values of tree differentials


def test_upsilon_base_cases():
    nl = _nl_cubic(S2)
    assert upsilon_poly(xi_tree(1, S2), nl) == nl.noises[0]
    assert upsilon_poly(unit_tree(S2), nl) == nl.drift


def test_upsilon_square_noise_chain():
    # f(u) = u^2, so the one-edge chain evaluates to (Df)(f) = 2u^3
    nl = _nl_cubic(S2)
    tau = _branch(xi_tree(1, S2), _zero(S2), xi_tree(1, S2))
    expect = phi(S2) ** 3 * PolyMap.constant(S2, [Fraction(2)])
    assert upsilon_poly(tau, nl) == expect
    jet = Jet(S2, {(0,): Fraction(3)})
    assert upsilon(tau, nl, jet) == (Fraction(54),)


def test_upsilon_drift_vertex_and_poly_label():
    # drift root -u^3 with one branch: (D P)(f) = -3u^2 f
    nl = _nl_cubic(S2)
    tau = _branch(unit_tree(S2), _zero(S2), xi_tree(1, S2))
    assert upsilon_poly(tau, nl) == phi(S2) ** 4 * PolyMap.constant(S2, [Fraction(-3)])
    # the explicit derivative hits the derivative function only, so the
    # labelled variant is d/dx(-3u^2) applied to f = u^2, not the product rule
    labelled = _branch(
        LabeledTree(_mi([1], S2), 0, ()), _zero(S2), xi_tree(1, S2)
    )
    u, du = phi(S2), PolyMap.jet_entry(S2, _mi([1], S2))
    assert upsilon_poly(labelled, nl) == (u ** 3 * du).scale(-6)


def test_upsilon_nonconforming_vanishes():
    # constant coefficients kill any child below a noise vertex
    nl = _nl_const(S21)
    tau = _branch(xi_tree(1, S21), _zero(S21), xi_tree(2, S21))
    assert upsilon_poly(tau, nl).is_zero
    # function-only coefficients kill derivative edges
    nl2 = _nl_cubic(S2)
    tau2 = _branch(xi_tree(1, S2), _mi([1], S2), xi_tree(1, S2))
    assert upsilon_poly(tau2, nl2).is_zero
    # drift arity above the power vanishes too
    root = unit_tree(S2)
    for _ in range(4):
        root = _branch(root, _zero(S2), xi_tree(1, S2))
    assert upsilon_poly(root, nl2).is_zero


def test_upsilon_vector_system():
    # f(u) = (u0 u1, u0^2): (Df)(f) = (u1 f0 + u0 f1, 2 u0 f0)
    zero = _zero(S2)
    u0 = PolyMap.jet_entry(S2, zero, comp=0)
    u1 = PolyMap.jet_entry(S2, zero, comp=1)
    f = PolyMap.stack([u0 * u1, u0 ** 2])
    nl = Nonlinearity(S2, PolyMap.zero(S2, 2), (f,), n_components=2)
    tau = _branch(xi_tree(1, S2), zero, xi_tree(1, S2))
    jet = Jet(S2, {zero: (Fraction(2), Fraction(3))}, n_components=2)
    assert upsilon(tau, nl, jet) == (Fraction(26), Fraction(24))


def test_drift_from_tensors_matches_power():
    F = {(0, (0, 0, 0)): Fraction(-1)}
    B = {(0, 1, 0, (0,)): Fraction(1, 2)}
    built = drift_from_tensors(S21, 1, 3, F, B, q=1)
    assert built == drift_power(3, S21, -1, grad_coeffs=[Fraction(1, 2)])


# ---------------------------------------------------------------------------
# derivatives of differentials


def test_d_upsilon_matches_finite_differences():
    nl = _nl_poly_mixed(S2)
    rng = random.Random(5)
    zero = _zero(S2)
    trees = [
        xi_tree(1, S2),
        _branch(xi_tree(1, S2), zero, xi_tree(2, S2)),
        _branch(_branch(unit_tree(S2), zero, xi_tree(1, S2)), zero, xi_tree(2, S2)),
    ]
    for tau in trees:
        base = [rng.uniform(-1.0, 1.0)]

        def scalar(v, tau=tau):
            return upsilon(tau, nl, Jet(S2, {(0,): v[0]}))[0]

        fd = fd_partial(scalar, base, 0)
        exact = d_upsilon(tau, [zero], [(1,)], nl, Jet(S2, {(0,): base[0]}))[0]
        assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


def test_d_upsilon_symmetric_and_multilinear():
    # a noise seeing both the value and the gradient makes the mixed slot
    # derivative genuinely nonzero
    zero, e1 = _zero(S21), MultiIndex.unit(S21, 1)
    mixed = phi(S21) ** 2 + phi(S21) * grad_phi(S21, 1)
    nl = Nonlinearity(S21, drift_power(3, S21), (mixed,))
    tau = _branch(xi_tree(1, S21), zero, xi_tree(1, S21))
    rng = random.Random(11)
    saw_nonzero = False
    for _ in range(20):
        jet = _rand_jet(rng, S21, 4)
        u = (Fraction(rng.randint(-3, 3), rng.randint(1, 4)),)
        v = (Fraction(rng.randint(-3, 3), rng.randint(1, 4)),)
        ab = d_upsilon(tau, [zero, e1], [u, v], nl, jet)
        ba = d_upsilon(tau, [e1, zero], [v, u], nl, jet)
        assert ab == ba
        scaled = d_upsilon(tau, [zero, e1], [(u[0] * 3,), v], nl, jet)
        assert scaled == (ab[0] * 3,)
        saw_nonzero = saw_nonzero or ab != (0,)
    assert saw_nonzero


def test_d_upsilon_kills_high_order_slots():
    # differentials only see the value and gradient of the jet
    cases = [
        (_nl_cubic(S2), Rule.power("phi", Fraction(-3, 2), 3, S2), S2),
        (_nl_grad(S21), Rule.power("grad_phi", Fraction(-2, 3), 3, S21, gradient_drift=True), S21),
    ]
    for nl, rule, scaling in cases:
        cs = enumerate_conforming(rule, 0, scaling, n_noises=1)
        high = [k for k in multiindices_up_to(scaling, 4) if k.s_degree >= 2]
        assert high
        for tau in cs.trees:
            for k in high:
                assert d_upsilon_poly(tau, (k,), nl).is_zero


def test_d_upsilon_zero_pattern_constant_coefficients():
    # for constant noises the slot derivative vanishes once the counting
    # exponent goes negative, and the gradient enters at most affinely
    nl = _nl_const(S21)
    rule = Rule.power("constant", Fraction(-5, 2), 3, S21, gradient_drift=True)
    cs = enumerate_conforming(rule, 0, S21, n_noises=2)
    alpha = rule.alpha
    for tau in cs.trees:
        assert upsilon_poly(tau, nl).gradient_degree() <= 1
        for k in multiindices_up_to(S21, 1):
            eta = (2 + alpha + critical_homogeneity(tau, alpha) - k.s_degree) / alpha - k.order
            if eta < 0:
                assert d_upsilon_poly(tau, (k,) * 1, nl).is_zero


# ---------------------------------------------------------------------------
# black-box coefficients


def test_multidual_products_and_smooth():
    x = MultiDual.seeded(2, 0, 0.5) + MultiDual(2, {1 << 1: 1.0})
    y = x * x
    assert y.value() == 0.25
    assert abs(y.coeff(0b11) - 2.0) < 1e-14
    s = ad_sin(x)
    assert abs(s.value() - math.sin(0.5)) < 1e-14
    assert abs(s.coeff(0b11) + math.sin(0.5)) < 1e-14


def test_smooth_matches_polynomial_route():
    poly = _nl_cubic(S2)
    smooth = Nonlinearity(
        S2,
        drift_power(3, S2),
        (SmoothF(lambda r: r[(0,)] ** 2, (_zero(S2),), 8),),
    )
    zero = _zero(S2)
    tau = _branch(_branch(unit_tree(S2), zero, xi_tree(1, S2)), zero, xi_tree(1, S2))
    jet = Jet(S2, {(0,): 0.7})
    a = upsilon(tau, poly, jet)[0]
    b = upsilon(tau, smooth, jet)[0]
    assert abs(a - b) < 1e-9 * max(1.0, abs(a))
    da = d_upsilon(tau, [zero], [(1.0,)], poly, jet)[0]
    db = d_upsilon(tau, [zero], [(1.0,)], smooth, jet)[0]
    assert abs(da - db) < 1e-9 * max(1.0, abs(da))


def test_smooth_cosine_chain():
    # f = cos(u): the one-edge chain is (Df)(f) = -sin(u) cos(u)
    nl = Nonlinearity(
        S2,
        drift_power(3, S2),
        (SmoothF(lambda r: ad_cos(r[(0,)]), (_zero(S2),), 6),),
    )
    zero = _zero(S2)
    tau = _branch(xi_tree(1, S2), zero, xi_tree(1, S2))
    got = upsilon(tau, nl, Jet(S2, {(0,): 0.7}))[0]
    assert abs(got + math.sin(0.7) * math.cos(0.7)) < 1e-12


def test_smooth_respects_poly_label():
    # explicit derivative of exp(u): d/dx exp(u) = exp(u) u_x
    nl = Nonlinearity(
        S21,
        drift_power(3, S21),
        (SmoothF(lambda r: ad_exp(r[(0, 0)]), (_zero(S21),), 6),),
    )
    tau = xi_tree(1, S21, poly=_mi([0, 1], S21))
    jet = Jet(S21, {(0, 0): 0.3, (0, 1): -1.25})
    got = upsilon(tau, nl, jet)[0]
    assert abs(got - math.exp(0.3) * (-1.25)) < 1e-12


def test_smooth_order_bound_enforced():
    nl = Nonlinearity(
        S2,
        drift_power(3, S2),
        (SmoothF(lambda r: ad_sin(r[(0,)]), (_zero(S2),), 1),),
    )
    zero = _zero(S2)
    tau = _branch(xi_tree(1, S2), zero, xi_tree(1, S2))
    tau = _branch(tau, zero, xi_tree(1, S2))
    with pytest.raises(ValueError):
        upsilon(tau, nl, Jet(S2, {(0,): 0.5}))


# ---------------------------------------------------------------------------
# the action identity


def test_morphism_single_plant_and_direction():
    nl = _nl_cubic(S2)
    rng = random.Random(23)
    zero = _zero(S2)
    jet = _rand_jet(rng, S2)
    tau = _branch(xi_tree(1, S2), zero, xi_tree(1, S2))
    forest = HForest.plant(zero, xi_tree(1, S2))
    assert verify_morphism(forest, tau, nl, jet) == (Fraction(0),)
    assert verify_morphism(HForest.x_power(_mi([1], S2)), tau, nl, jet) == (Fraction(0),)


def test_morphism_random_forests_symbolically_zero():
    rng = random.Random(71)
    cases = [
        (_nl_poly_mixed(S2), S2),
        (_nl_grad(S21), S21),
        (_nl_const(S21), S21),
    ]
    checked = 0
    for nl, scaling in cases:
        n = len(nl.noises)
        for _ in range(25):
            tau = _random_tree(rng, scaling, 2, n)
            a = _mi([rng.randint(0, 1) for _ in scaling], scaling)
            forest = HForest.x_power(a)
            for _ in range(rng.randint(0, 2)):
                k = _mi([rng.randint(0, 1) for _ in scaling], scaling)
                forest = forest * HForest.plant(k, _random_tree(rng, scaling, 1, n))
            assert morphism_residual_poly(forest, tau, nl).is_zero
            checked += 1
    assert checked == 75


# ---------------------------------------------------------------------------
# the re-expansion identity


def _phi_setup():
    rule = Rule.power("phi", Fraction(-3, 2), 3, S2)
    cs = enumerate_conforming(rule, 0, S2, n_noises=1)
    return _nl_cubic(S2), cs


def _grad_setup():
    rule = Rule.power("grad_phi", Fraction(-2, 3), 3, S21, gradient_drift=True)
    cs = enumerate_conforming(rule, 0, S21, n_noises=1)
    return _nl_grad(S21), cs


def test_taylor_residual_identity_character():
    nl, cs = _phi_setup()
    rng = random.Random(3)
    ident = Character.identity(S2)
    jet = _rand_jet(rng, S2)
    for tau in cs.trees:
        assert taylor_residual(tau, ident, nl, cs, jet) == (Fraction(0),)


def _random_character(rng: random.Random, cs) -> Character:
    xv = [Fraction(rng.randint(-2, 2), rng.randint(1, 3)) for _ in cs.scaling]
    pv = {
        planted(k, s): Fraction(rng.randint(-2, 2), rng.randint(1, 3))
        for k, s in cs.u_planted
    }
    return Character.from_values(cs.scaling, xv, pv)


def test_taylor_residual_random_characters():
    rng = random.Random(97)
    for nl, cs in (_phi_setup(), _grad_setup()):
        for _ in range(12):
            gamma = _random_character(rng, cs)
            for tau in cs.negative_trees:
                assert taylor_residual_poly(tau, gamma, nl, cs).is_zero


def test_character_evaluation():
    g = Character.from_values(
        S2, [Fraction(2)], {planted(_zero(S2), xi_tree(1, S2)): Fraction(1, 3)}
    )
    f = HForest.x_power(_mi([2], S2)) * HForest.plant(_zero(S2), xi_tree(1, S2))
    assert g.of_forest(f) == Fraction(4, 3)
    assert g.of_forest(HForest.unit(S2)) == 1


# ---------------------------------------------------------------------------
# parabolic rescaling


def test_q_lambda_jet_scaling():
    jet = Jet(S2, {(0,): Fraction(1), (1,): Fraction(1)})
    scaled = q_lambda_jet(jet, Fraction(2), 3)
    # alpha = 1: value slot picks lambda^{-1} = mu^{-2}, gradient slot
    # (scaled degree 2) picks lambda^{-3} = mu^{-6}
    assert scaled.get_entries((0,)) == (Fraction(1, 4),)
    assert scaled.get_entries((1,)) == (Fraction(1, 64),)


def test_crit_scaling_exact():
    rng = random.Random(41)
    mus = [Fraction(2), Fraction(1, 2), Fraction(3, 2), Fraction(5, 7)]
    cases = [(_nl_poly_mixed(S2), S2), (_nl_grad(S21), S21), (_nl_const(S21), S21)]
    for nl, scaling in cases:
        for _ in range(8):
            tau = _random_tree(rng, scaling, 2, len(nl.noises))
            jet = _rand_jet(rng, scaling, 4)
            mu = rng.choice(mus)
            res = crit_scaling_residual(tau, nl, mu, 3, jet)
            assert all(r == 0 for r in res)


def test_q_lambda_nonlinearity_constant_noise_fixed():
    nl = _nl_const(S21)
    scaled = q_lambda_nonlinearity(nl, Fraction(3), 3)
    assert scaled.noises == nl.noises
    assert scaled.drift == nl.drift
