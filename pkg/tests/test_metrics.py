import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlab.errors import ContractViolation
from mixlab.metrics import exp_weight_integral, kw_distance
from mixlab.model import MixingDistribution, mixing

ONE_MINUS_INV_E = 0.6321205588285577


def _random_mixing(rng, k=3, lattice=None, scale=False):
    w = rng.dirichlet(np.ones(k))
    m = rng.uniform(-3, 3, k)
    if lattice:
        m = np.round(m / lattice) * lattice
    if scale:
        s = rng.uniform(0.1, 2, k)
        if lattice:
            s = np.round(s / lattice) * lattice
        return mixing(w, list(zip(m, s)))
    return mixing(w, m)


def test_identical_is_zero():
    G = mixing([0.2, 0.8], [-1.0, 2.0])
    assert kw_distance(G, G).value == 0.0


def test_point_masses():
    d = kw_distance(MixingDistribution.point_mass(0.0), MixingDistribution.point_mass(1.0))
    assert abs(d.value - ONE_MINUS_INV_E) < 1e-15


@pytest.mark.parametrize("eps", [0.1, 0.01])
@pytest.mark.parametrize("x", [0.0, 0.5, 5.0, 50.0])
def test_sub_distribution_perturbation_bound(eps, x):
    G1 = MixingDistribution.point_mass(1.0)
    G2 = mixing([1 - eps, eps], [1.0, x])
    assert kw_distance(G1, G2).value <= eps


def test_sub_distribution_compared_unnormalised():
    G = MixingDistribution.point_mass(0.0)
    # |1 - 0.5| on [0, inf) under exp(-t)
    assert kw_distance(G, G.with_mass(0.5)).value == pytest.approx(0.5, rel=1e-15)


def test_exp_weight_integral_cases():
    assert exp_weight_integral(-np.inf, np.inf) == pytest.approx(2.0)
    assert exp_weight_integral(0.0, np.inf) == pytest.approx(1.0)
    assert exp_weight_integral(-1.0, 1.0) == pytest.approx(2 * ONE_MINUS_INV_E)
    # narrow cell keeps relative accuracy
    assert exp_weight_integral(3.0, 3.0 + 1e-12) == pytest.approx(math.exp(-3.0) * 1e-12, rel=1e-9)
    assert exp_weight_integral(-2.0, -1.0) == pytest.approx(math.exp(-1) - math.exp(-2), rel=1e-14)


def test_dim2_needs_scale():
    G = mixing([1.0], [0.0])
    with pytest.raises(ContractViolation):
        kw_distance(G, G, dim=2)
    with pytest.raises(ContractViolation):
        kw_distance(G, G, dim=3)


def test_dim2_closed_form():
    G1 = MixingDistribution.point_mass((0.0, 1.0))
    G2 = MixingDistribution.point_mass((0.0, 2.0))
    # |G1 - G2| = 1 on theta >= 0, 1 <= sigma < 2
    expected = 1.0 * (math.exp(-1) - math.exp(-2))
    assert kw_distance(G1, G2, dim=2).value == pytest.approx(expected, rel=1e-14)


def test_dim2_riemann():
    rng = np.random.default_rng(5)
    G1 = _random_mixing(rng, lattice=0.05, scale=True)
    G2 = _random_mixing(rng, lattice=0.05, scale=True)
    h = 0.01
    t = np.arange(-4, 20, h) + h / 2
    s = np.arange(0, 20, h) + h / 2

    def cdf2(G):
        out = np.zeros((t.size, s.size))
        for a, w in zip(G.atoms, G.weight_array):
            out += w * np.outer(t >= a.mean, s >= a.scale)
        return out

    wt = np.exp(-np.abs(t))[:, None] * np.exp(-np.abs(s))[None, :]
    approx = float(np.sum(np.abs(cdf2(G1) - cdf2(G2)) * wt) * h * h)
    # coarse 2-D midpoint rule; discretisation error is about 5e-6 at this step
    assert kw_distance(G1, G2, dim=2).value == pytest.approx(approx, abs=2e-5)


def test_riemann_agreement():
    rng = np.random.default_rng(2024)
    h = 1e-4
    t = np.arange(-40, 40, h) + h / 2
    wt = np.exp(-np.abs(t)) * h
    for _ in range(20):
        G1 = _random_mixing(rng, lattice=0.01)
        G2 = _random_mixing(rng, lattice=0.01)
        F1 = np.zeros_like(t)
        F2 = np.zeros_like(t)
        for G, F in ((G1, F1), (G2, F2)):
            for a, w in zip(G.means, G.weight_array):
                F += w * (t >= a)
        approx = float(np.sum(np.abs(F1 - F2) * wt))
        assert kw_distance(G1, G2).value == pytest.approx(approx, abs=1e-6)


def test_weak_convergence_proxy():
    base = MixingDistribution.point_mass(0.0)
    vals = [kw_distance(mixing([1 - 1 / m, 1 / m], [0.0, float(m)]), base).value for m in range(1, 101)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.011


def test_cells_counted():
    G1 = mixing([0.5, 0.5], [0.0, 1.0])
    G2 = mixing([1.0], [2.0])
    assert kw_distance(G1, G2).cells_evaluated == 3


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    G1, G2 = _random_mixing(rng), _random_mixing(rng)
    assert abs(kw_distance(G1, G2).value - kw_distance(G2, G1).value) <= 1e-14
    H1, H2 = _random_mixing(rng, scale=True), _random_mixing(rng, scale=True)
    assert abs(kw_distance(H1, H2, 2).value - kw_distance(H2, H1, 2).value) <= 1e-14


def test_triangle_inequality():
    rng = np.random.default_rng(77)
    for _ in range(100):
        a, b, c = (_random_mixing(rng) for _ in range(3))
        assert kw_distance(a, c).value <= kw_distance(a, b).value + kw_distance(b, c).value + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_iff_identical(seed):
    rng = np.random.default_rng(seed)
    G1 = _random_mixing(rng)
    G2 = _random_mixing(rng)
    d = kw_distance(G1, G2).value
    assert d >= 0
    assert (d == 0) == (G1 == G2)
    assert kw_distance(G1, mixing(list(reversed(G1.weights)), list(reversed(G1.means)))).value == 0
