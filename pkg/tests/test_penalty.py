import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlab.errors import ContractViolation, DomainError
from mixlab.model import mixing
from mixlab.penalty import LOG_ONLY, PenaltyConfig, penalty_component, penalty_total, validate_penalty_properties

RAW = PenaltyConfig.raw()
# -(1/100)(1/4 + log 4), recomputed with mpmath at 40 digits
PEN_SIGMA2_4_N100 = -0.016362943611198906

N_GRID = [10**k for k in range(2, 7)]
SIGMA_GRID = [10.0**k for k in range(-8, 2)]


def test_value_at_maximiser():
    for n in (1, 7, 1000):
        assert penalty_component(RAW, n, 1.0) == pytest.approx(-1 / n, rel=1e-15)


def test_oracle_value():
    assert penalty_component(RAW, 100, 2.0) == pytest.approx(PEN_SIGMA2_4_N100, rel=1e-14)


def test_blows_up_at_zero_and_infinity():
    assert penalty_component(RAW, 10, 1e-200) == -math.inf
    assert penalty_component(PenaltyConfig.raw(LOG_ONLY), 10, 1e-200) == pytest.approx(0.2 * math.log(1e200))
    assert penalty_component(RAW, 10, 1e-100) < -1e190
    assert penalty_component(RAW, 10, 1e100) < penalty_component(RAW, 10, 1e10) < penalty_component(RAW, 10, 1.0)


def test_domain_errors():
    with pytest.raises(DomainError):
        penalty_component(RAW, 10, 0.0)
    with pytest.raises(DomainError):
        penalty_component(RAW, 10, -1.0)
    with pytest.raises(ContractViolation):
        penalty_component(RAW, 0, 1.0)
    with pytest.raises(ContractViolation):
        penalty_component(PenaltyConfig(), 10, 1.0)
    with pytest.raises(ContractViolation):
        PenaltyConfig(scale_anchor=0.0)


def test_total_additive_and_symmetric():
    G1 = mixing([1.0], [(0.0, 1.5)])
    assert penalty_total(RAW, 50, G1) == penalty_component(RAW, 50, 1.5)
    G2 = mixing([0.5, 0.5], [(0.0, 1.5), (3.0, 1.5)])
    assert penalty_total(RAW, 50, G2) == 2 * penalty_component(RAW, 50, 1.5)
    G3 = mixing([0.2, 0.8], [(0.0, 0.5), (3.0, 2.0)])
    G4 = mixing([0.8, 0.2], [(3.0, 2.0), (0.0, 0.5)])
    assert penalty_total(RAW, 50, G3) == penalty_total(RAW, 50, G4)
    with pytest.raises(ContractViolation):
        penalty_total(RAW, 50, mixing([1.0], [0.0]))


def test_unimodal_in_variance():
    for anchor in (0.3, 1.0, 7.0):
        cfg = PenaltyConfig(anchor)
        v = np.geomspace(anchor * 1e-3, anchor * 1e3, 2001)
        p = penalty_component(cfg, 10, np.sqrt(v))
        k = int(np.argmax(p))
        assert v[k] == pytest.approx(anchor, rel=1e-2)
        assert np.all(np.diff(p[: k + 1]) > 0) and np.all(np.diff(p[k:]) < 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(1, 10**6))
def test_scale_equivariance(s2, sigma, n):
    lhs = penalty_component(PenaltyConfig(s2), n, sigma)
    rhs = penalty_component(RAW, n, sigma / math.sqrt(s2))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_sigma_equals_inverse_n():
    for n in (10**3, 10**4, 10**5, 10**6):
        assert penalty_component(RAW, n, 1 / n) < math.log(n) ** 2 * math.log(1 / n)


def test_validator_passes_default():
    rep = validate_penalty_properties(RAW, N_GRID, SIGMA_GRID)
    assert rep.p2_upper_passed and rep.p2_lower_passed and rep.p3_passed and rep.passed
    assert all(v == 0 for v in rep.max_positive_part.values())
    assert rep.p3_n0 is not None and rep.p3_min_margin > 0


def test_validator_records_n0():
    # at n=1e5, sigma=1e-4 < log(n)/n the bound fails; it holds from n=1e6 on
    rep = validate_penalty_properties(RAW, N_GRID, SIGMA_GRID)
    assert rep.p3_n0 == 10**6
    assert any(v["n"] == 10**5 and v["sigma"] == 1e-4 for v in rep.p3_violations)


def test_validator_flags_negative_control():
    rep = validate_penalty_properties(PenaltyConfig.raw(LOG_ONLY), N_GRID, SIGMA_GRID)
    assert not rep.p3_passed and rep.p3_n0 is None and not rep.passed


def test_roundtrip():
    cfg = PenaltyConfig(2.5, LOG_ONLY)
    assert PenaltyConfig.from_dict(cfg.to_dict()) == cfg
    assert PenaltyConfig().resolve(4.0).scale_anchor == 4.0
    with pytest.raises(ContractViolation):
        PenaltyConfig().resolve(0.0)
