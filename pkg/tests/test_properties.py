"""Property suites that need no model solve; runnable on their own with ``pytest tests/test_properties.py``."""

import math
from itertools import combinations

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from ddsg import ddsg_eval, hdmr, irbc
from ddsg import sparse_grid as sg

modes = st.sampled_from(sg.BOUNDARY_MODES)


def random_smooth(seed, n, m=1):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(m, n)) * 2.0
    c = rng.normal(size=m)

    def f(X):
        X = np.atleast_2d(X)
        return np.sin(X @ W.T + c) + 0.3 * np.prod(X, axis=1, keepdims=True)

    return f


# -- hierarchization round-trip -------------------------------------------------------------

@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), level=st.integers(1, 5), mode=modes,
       eps=st.sampled_from([0.0, 1e-4, 1e-2]), m=st.integers(1, 3))
def test_round_trip_at_nodes(seed, n, level, mode, eps, m):
    f = random_smooth(seed, n, m)
    g = sg.build(f, n, level, eps, mode)
    P = g.points()
    np.testing.assert_allclose(g.interpolate(P), f(P), atol=1e-12, rtol=0)
    assert np.all(np.isfinite(g.surplus))


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), level=st.integers(1, 5), mode=modes)
def test_round_trip_serialization(seed, n, level, mode):
    g = sg.build(random_smooth(seed, n), n, level, 1e-3, mode)
    h = sg.SparseGrid.from_dict(g.to_dict())
    assert np.array_equal(g.surplus, h.surplus)


# -- quadrature linearity --------------------------------------------------------------------

@given(s1=st.integers(0, 2**31), s2=st.integers(0, 2**31), a=st.floats(-10, 10), b=st.floats(-10, 10),
       n=st.integers(1, 3), level=st.integers(1, 5), mode=modes)
def test_quadrature_is_linear(s1, s2, a, b, n, level, mode):
    f, h = random_smooth(s1, n), random_smooth(s2, n)
    gf = sg.build(f, n, level, 0.0, mode)
    gh = sg.build(h, n, level, 0.0, mode)
    gs = sg.build(lambda X: a * f(X) + b * h(X), n, level, 0.0, mode)
    expect = a * gf.quadrature() + b * gh.quadrature()
    np.testing.assert_allclose(gs.quadrature(), expect, atol=1e-12 * (1 + abs(a) + abs(b)), rtol=0)


# -- Fischer-Burmeister characterization ----------------------------------------------------------

lattice = st.sampled_from([-2.0, -1.0, -0.5, -1e-3, 0.0, 1e-3, 0.25, 0.5, 1.0, 3.0])


@given(a=lattice, b=lattice)
def test_fb_zero_iff_complementary(a, b):
    zero = irbc.fischer_burmeister(a, b) == 0.0
    assert zero == (a >= 0 and b >= 0 and a * b == 0)


@given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3))
def test_fb_sign_and_symmetry(a, b):
    v = float(irbc.fischer_burmeister(a, b))
    assert v == float(irbc.fischer_burmeister(b, a))
    if a > 0 and b > 0:
        assert v >= 0.0
    if min(a, b) < 0:
        # strictly negative in exact arithmetic; rounds to zero when |min| is negligible next to |max|
        assert v <= 0.0


# -- b-vector lattice oracle -------------------------------------------------------------------------

@st.composite
def closed_families(draw):
    d = draw(st.integers(1, 5))
    k = draw(st.integers(1, min(3, d)))
    pool = [u for r in range(1, k + 1) for u in combinations(range(d), r)]
    picked = draw(st.lists(st.sampled_from(pool), max_size=len(pool)))
    fam = {()}
    for u in picked:
        for r in range(len(u) + 1):
            fam.update(combinations(u, r))
    return d, k, fam


def b_by_bitmask(d, fam):
    # independent enumeration over all 2^d masks
    masks = {sum(1 << i for i in u) for u in fam}
    out = {}
    for v in fam:
        mv = sum(1 << i for i in v)
        out[v] = sum((-1) ** (bin(mu).count("1") - len(v)) for mu in masks if mu & mv == mv)
    return out


@given(closed_families())
def test_b_matches_lattice_oracle(case):
    d, _, fam = case
    assert ddsg_eval.b_coefficients(fam) == b_by_bitmask(d, fam)


@given(d=st.integers(1, 5), k=st.integers(0, 3))
def test_b_full_family_closed_form(d, k):
    k = min(k, d)
    fam = [u for r in range(k + 1) for u in combinations(range(d), r)]
    b = ddsg_eval.b_coefficients(fam)
    for v, c in b.items():
        m = len(v)
        assert c == sum((-1) ** j * math.comb(d - m, j) for j in range(k - m + 1))


@settings(max_examples=20)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 5), k=st.integers(1, 3), eps_eta=st.sampled_from([0.0, 1e-3]))
def test_vectorized_matches_naive(seed, d, k, eps_eta):
    assume(k <= d)
    f = random_smooth(seed, d)
    D = hdmr.decompose(f, d, k, eps_eta=eps_eta, level=3, anchor=hdmr.center_anchor(f, d))
    D.check_invariants()
    X = np.random.default_rng(seed).random((50, d))
    assert np.abs(D.vectorized.evaluate_naive(X) - D(X)).max() <= 1e-12


# -- anchor invariance for separable functions ---------------------------------------------------------

@given(seed=st.integers(0, 2**31), d=st.integers(1, 6),
       c1=st.lists(st.floats(0, 1), min_size=6, max_size=6), c2=st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_separable_anchor_invariance(seed, d, c1, c2):
    rng = np.random.default_rng(seed)
    amp, freq = rng.uniform(0.5, 2.0, d), rng.uniform(0.5, 4.0, d)

    def f(X):
        X = np.atleast_2d(X)
        return np.sum(amp * np.cos(freq * X) + X ** 3, axis=1, keepdims=True)

    def anchored(c):
        x = np.array(c[:d])
        return hdmr.decompose(f, d, 1, anchor=hdmr.AnchorPoint(x, f(x[None])[0]), level=2, exact_cuts=True)

    X = rng.random((100, d))
    np.testing.assert_allclose(anchored(c1)(X), anchored(c2)(X), atol=1e-10, rtol=0)
