import math
import operator

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlab.checks import (
    CHECKS,
    CheckReport,
    check_concentration,
    check_jensen_kl,
    check_kl_finiteness_bounded_poisson,
    check_pfanzagl,
    degenerate_bound,
    degenerate_log_likelihood,
    degenerate_mixing,
    degenerate_sequence_demo,
    finite_grid_mle_demo,
    g_dominance_check,
    heavy_tail_integral,
    pfanzagl_terms,
    poisson_heavy_tail_check,
)
from mixlab.errors import ContractViolation, DomainError
from mixlab.model import ComponentFamily, MixingDistribution, log_likelihood, mixing

POIS = ComponentFamily.poisson()
EQ = ComponentFamily.normal_equal(1.0)
FREE = ComponentFamily.normal_free()

# closed form 2 log(2/3) + 1, evaluated with mpmath
KL_POIS2_POIS3 = 0.18906978378367124
# E_{N(0,1)} log{1 + (exp(1/2 - X) - 1)/2}, mpmath quadrature at 40 digits
PFANZAGL_N0_N1_HALF = 0.3885785178152638
# log 100 - 1 - 3 log(2 pi)
DEGENERATE_BOUND_EXAMPLE = -1.908461013239945
# exact l_n(G_100) on (0, 1, -1), mpmath
DEGENERATE_LL_EXAMPLE = -0.5329522332347784

OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt}


def _recomputable(rep: CheckReport):
    return rep.passed == OPS[rep.comparison](rep.statistic, rep.threshold)


def test_jensen_equality_case():
    G = mixing([0.3, 0.7], [1.0, 4.0])
    rep = check_jensen_kl(POIS, G, G, mc_n=10_000)
    assert rep.statistic == 0.0 and rep.passed


def test_jensen_relabelled():
    G = mixing([0.3, 0.7], [1.0, 4.0])
    H = MixingDistribution((4.0, 1.0), (0.7, 0.3))
    assert check_jensen_kl(POIS, G, H, mc_n=10_000).statistic == 0.0


def test_jensen_poisson_kl():
    rep = check_jensen_kl(POIS, MixingDistribution.point_mass(2.0), MixingDistribution.point_mass(3.0),
                          mc_n=100_000, seed=1)
    assert rep.passed and _recomputable(rep)
    assert abs(rep.statistic + KL_POIS2_POIS3) <= 3 * rep.standard_error


def test_pfanzagl_equality_case():
    G = MixingDistribution.point_mass(0.0)
    rep = check_pfanzagl(EQ, G, G, u=0.5, mc_n=10_000)
    assert rep.statistic == 0.0 and rep.passed


def test_pfanzagl_quadrature_oracle():
    rep = check_pfanzagl(EQ, MixingDistribution.point_mass(0.0), MixingDistribution.point_mass(1.0),
                         u=0.5, mc_n=100_000, seed=2)
    assert rep.passed and rep.statistic > 0
    assert abs(rep.statistic - PFANZAGL_N0_N1_HALF) <= 3 * rep.standard_error


def test_pfanzagl_small_u():
    rep = check_pfanzagl(EQ, MixingDistribution.point_mass(0.0), MixingDistribution.point_mass(1.0),
                         u=1e-6, mc_n=10_000)
    assert abs(rep.statistic) < 1e-4


def test_pfanzagl_u_contract():
    G = MixingDistribution.point_mass(0.0)
    with pytest.raises(ContractViolation):
        check_pfanzagl(EQ, G, G, u=1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-800, 800), st.floats(1e-6, 1 - 1e-6))
def test_pfanzagl_terms_floor(d, u):
    t = float(pfanzagl_terms(np.array([d]), u)[0])
    assert t >= math.log1p(-u)
    assert np.isfinite(t)


def test_pfanzagl_terms_large_ratio():
    t = pfanzagl_terms(np.array([1000.0]), 0.5)[0]
    assert t == pytest.approx(1000 + math.log(0.5), rel=1e-15)


def test_finite_grid_mle():
    rep = finite_grid_mle_demo(POIS, 2.0, [1.0, 2.0, 4.0], [5, 50, 500], reps=200, seed=3)
    assert rep.passed and rep.data["fractions"][-1] >= 0.99


def test_finite_grid_single_candidate():
    rep = finite_grid_mle_demo(POIS, 2.0, [2.0], [1, 10], reps=20)
    assert rep.data["fractions"] == [1.0, 1.0]
    with pytest.raises(ContractViolation):
        finite_grid_mle_demo(POIS, 3.0, [2.0], [1], reps=2)


def test_degenerate_bound_example():
    x = np.array([0.0, 1.0, -1.0])
    assert degenerate_bound(x, 100) == pytest.approx(DEGENERATE_BOUND_EXAMPLE, rel=1e-14)
    ll = log_likelihood(FREE, degenerate_mixing(0.0, 100), x)
    assert ll == pytest.approx(DEGENERATE_LL_EXAMPLE, rel=1e-13)
    assert ll >= degenerate_bound(x, 100)


def test_degenerate_log_space_matches_direct():
    x = np.array([0.3, 1.0, -2.0, 0.7])
    for k in (1.0, 1e3, 1e8):
        direct = log_likelihood(FREE, degenerate_mixing(x[0], k), x)
        assert degenerate_log_likelihood(x, math.log(k)) == pytest.approx(direct, rel=1e-13)


def test_degenerate_growth():
    x = np.random.default_rng(4).normal(size=30)
    base = [degenerate_log_likelihood(x, math.log(k)) - math.log(k) for k in (1e2, 1e4, 1e8, 1e16)]
    assert min(base) > degenerate_bound(x, 1.0) - 1e-12
    d = degenerate_log_likelihood(x, math.log(2e8)) - degenerate_log_likelihood(x, math.log(1e8))
    assert d == pytest.approx(math.log(2), rel=1e-7)


def test_degenerate_demo_bound_exact():
    x = np.random.default_rng(5).normal(size=50)
    rep = degenerate_sequence_demo(x, [1, 1e2, 1e4, 1e6])
    assert all(l >= b for l, b in zip(rep.data["loglik"], rep.data["bound"]))
    assert _recomputable(rep)


def test_degenerate_demo_huge_k():
    x = np.random.default_rng(5).normal(size=50)
    rep = degenerate_sequence_demo(x, [1e6, 1e300], excess=100.0)
    assert rep.passed and rep.data["gap_to_equal_variance_mle"] > 100


def test_concentration_examples():
    rng = np.random.default_rng(6)
    u = rng.uniform(size=10_000)
    rep = check_concentration(1.0, u, [0.01])
    assert 0.01 <= rep.data["lhs"][0] <= 0.02
    assert rep.data["bound"][0] == pytest.approx(0.02 + 10 * math.log(1e4) / 1e4)
    wide = check_concentration(1.0, u, [1.0, 2.0])
    assert wide.data["lhs"] == [1.0, 1.0] and wide.passed


def test_concentration_needs_n():
    with pytest.raises(ContractViolation):
        check_concentration(1.0, np.arange(10.0), [0.1])


def test_heavy_tail_small_set():
    rep = poisson_heavy_tail_check([1, 5, 10])
    assert rep.passed
    assert rep.data["log_f_upper"][1] <= -math.log(5)
    assert rep.data["integral"][2] <= math.factorial(9)


def test_heavy_tail_integral_closed_form_bound():
    # with 1/(log u)^2 <= 1/(log log 20)^2 the integral is below Gamma(x, log 20)/(log log 20)^2
    for x in (1, 3, 8):
        assert 0 < heavy_tail_integral(x) < math.gamma(x) / math.log(math.log(20)) ** 2


def test_heavy_tail_domain():
    with pytest.raises(DomainError):
        poisson_heavy_tail_check([31])
    with pytest.raises(DomainError):
        poisson_heavy_tail_check([0])


def test_g_dominance_examples():
    assert g_dominance_check(0.05, [0.05], [0.0]).passed
    far = g_dominance_check(0.05, [0.05], [10.0 - 0.05 * math.log(20)])
    assert far.passed and far.statistic < -1000
    assert g_dominance_check(0.05, [1e-6], np.linspace(0, 5, 200)).passed
    with pytest.raises(ContractViolation):
        g_dominance_check(0.1, [0.05], [0.0])
    with pytest.raises(ContractViolation):
        g_dominance_check(0.05, [0.06], [0.0])


def test_kl_finiteness():
    assert check_kl_finiteness_bounded_poisson(2.0, MixingDistribution.point_mass(2.0), seed=1).passed
    assert check_kl_finiteness_bounded_poisson(10.0, mixing([0.5, 0.5], [1.0, 10.0]), seed=2).passed
    with pytest.raises(ContractViolation):
        check_kl_finiteness_bounded_poisson(5.0, MixingDistribution.point_mass(6.0))


def test_report_flag_is_derived():
    rep = CheckReport("x", statistic=0.5, threshold=0.0, comparison="<=")
    assert not rep.passed and rep.to_dict()["passed"] is False
    assert "FAIL" in rep.summary()


def test_registry():
    assert set(CHECKS) == {"jensen_kl", "pfanzagl", "finite_grid_mle", "degenerate_sequence",
                           "concentration", "poisson_heavy_tail", "g_dominance",
                           "kl_finiteness_bounded_poisson"}
