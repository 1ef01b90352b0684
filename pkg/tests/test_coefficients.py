import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from chks.coefficients import Beta, HSpec, ModelParams, Mobility, validate
from chks.errors import NegativeSigma

RATIONAL = Mobility("rational", m0=0.5, M=2.0, a=1.0)


def test_validate_examples():
    assert validate(ModelParams(m=1.0, h=HSpec(0.5)), 2).ok
    rep = validate(ModelParams(p=1.4), 2)
    assert rep.errors == ["logistic exponent: p = 1.4 must lie in [1.5, 2] for d = 2"]
    rep = validate(ModelParams(chi=2.0, kappa_inf=1.0, beta=Beta(1.0)), 3, strict3d=True)
    assert rep.errors == ["smallness: chi = 2 must be < sqrt(2 kappaInf b0) = 1.41421"]


def test_validate_reports_every_violation():
    params = ModelParams(m=1.0, h=HSpec(1.0), p=2.5, eps=2.0, mob_n=Mobility("constant", value=0.0))
    rep = validate(params, 2)
    assert not rep and len(rep.errors) == 4
    assert "compatibility: H/m = 1 must be < 1 (H = 1, m = 1)" in rep.errors
    assert validate(ModelParams(m=0.0, h=HSpec(0.0)), 2).ok
    assert validate(ModelParams(p=1.2), 1).ok
    assert not validate(ModelParams(p=1.0), 1).ok
    assert not validate(ModelParams(p=1.55), 3).ok


def test_strict3d_requires_unit_nutrient_mobility():
    rep = validate(ModelParams(chi=0.1, mob_n=RATIONAL), 3, strict3d=True)
    assert rep.errors == ["nutrient mobility: strict 3D mode requires a constant nutrient mobility equal to 1"]


def test_source_s():
    assert np.all(ModelParams(m=0.0).source_s(np.linspace(-1, 1, 5), 2.0) == 0)
    assert ModelParams(m=2.0, h=HSpec(1.0)).source_s(0.25, 0.0) == pytest.approx(0.5)
    assert ModelParams(m=1.0, h=HSpec(0.5)).source_s(0.5, 3.0) == pytest.approx(0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 50), st.floats(0, 3), st.floats(-1, 1))
def test_source_s_bound(phi, sigma, m, hval):
    params = ModelParams(m=m, h=HSpec(hval))
    assert abs(params.source_s(phi, sigma)) <= m * abs(phi) + params.H + 1e-15


def test_beta_shape_and_bounds():
    b = Beta(B=2.0)
    assert b(0.0) == 2.0 and b(1.75) == pytest.approx(1.0) and b(2.5) == 0.0
    r = np.linspace(-3, 3, 1001)
    v = b(r)
    assert np.all((v >= 0) & (v <= b.B))
    assert np.all(v[np.abs(r) <= 1.5] >= b.lower)
    assert np.all(v[np.abs(r) >= 2] == 0)
    assert np.max(np.abs(np.diff(v) / np.diff(r))) <= b.B / 0.5 + 1e-9


def test_source_b():
    params = ModelParams(kappa0=1.0, kappa_inf=1.0, p=2.0, beta=Beta(1.0))
    assert params.source_b(0.0, 0.0) == 0.0
    assert params.source_b(0.0, 1.0) == 0.0
    assert params.source_b(0.0, 0.5) == pytest.approx(0.25)
    sat = (2.0 / 3.0) ** (1 / 0.6)
    p2 = ModelParams(kappa0=2.0, kappa_inf=3.0, p=1.6)
    assert np.all(p2.source_b(0.3, np.linspace(sat, 10, 30)) <= 1e-15)
    with pytest.raises(NegativeSigma):
        params.source_b(0.0, np.array([1.0, -1e-10]))


def test_h_table_bilinear_and_clamped():
    h = HSpec(phi_nodes=(-1, 1), sigma_nodes=(0, 2), table=((0.0, 0.4), (0.2, -0.6)))
    assert h.sup == 0.6 and not h.is_constant
    assert h(0.0, 1.0) == pytest.approx(0.0)
    assert h(-1.0, 1.0) == pytest.approx(0.2)
    assert h(5.0, 7.0) == pytest.approx(-0.6)
    assert validate(ModelParams(m=1.0, h=h), 2).ok


def test_constant_mobility_integrals():
    mob = Mobility()
    assert np.allclose(mob.big_n(0.3, np.array([0.0, 1.5])), [0.0, 1.5])
    assert np.all(mob.n1(0.3, np.array([0.0, 1.5])) == 0)


def test_rational_mobility_example():
    mob = Mobility("rational", m0=1.0, M=1.5, a=0.0)
    assert mob(0.7, 1.0) == pytest.approx(1.25)
    assert mob.big_n(0.7, 1.0) == pytest.approx(1 + 0.5 * (1 - math.log(2)), abs=1e-6)
    assert mob.big_n(0.0, 1.0) == pytest.approx(1.153426, abs=1e-6)


def test_big_n_matches_quadrature():
    for phi, sigma in [(0.2, 0.5), (-0.9, 3.0), (0.0, 10.0)]:
        q, _ = quad(lambda s: float(RATIONAL(phi, s)), 0.0, sigma, epsabs=1e-13)
        assert RATIONAL.big_n(phi, sigma) == pytest.approx(q, rel=1e-10)


@settings(max_examples=80, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 10))
def test_mobility_bounds(phi, sigma):
    lo, hi = RATIONAL.bounds
    v = RATIONAL(phi, sigma)
    assert lo <= v <= hi
    N = RATIONAL.big_n(phi, sigma)
    assert lo * sigma - 1e-12 <= N <= hi * sigma + 1e-12
    assert abs(RATIONAL.n1(phi, sigma)) <= hi * sigma + 1e-12


@settings(max_examples=80, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 10), st.floats(-1, 1), st.floats(0, 10))
def test_big_n_lipschitz(p1, s1, p2, s2):
    L = RATIONAL.lipschitz
    lhs = abs(RATIONAL.big_n(p1, s1) - RATIONAL.big_n(p2, s2))
    assert lhs <= L * abs(s1 - s2) + L * s2 * abs(p1 - p2) + 1e-12


def test_chain_identity_along_path():
    # phi(t) = 0.4 sin t, sigma(t) = 1 + t^2
    t0, dt = 0.7, 1e-3
    path = lambda t: (0.4 * np.sin(t), 1 + t * t)
    (pa, sa), (pb, sb), (p0, s0) = path(t0 - dt), path(t0 + dt), path(t0)
    lhs = RATIONAL.big_n(pb, sb) - RATIONAL.big_n(pa, sa)
    rhs = RATIONAL(p0, s0) * (sb - sa) + RATIONAL.n1(p0, s0) * (pb - pa)
    assert abs(lhs - rhs) <= 10 * dt**3
