import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
import mpmath as mp

from chks.errors import DomainViolation
from chks.potentials import (
    GROWTH_CONSTANT, KINDS, PotentialSpec, eval_f1, eval_f1_prime, eval_f1_second,
    eval_fn, eval_fn_prime, eval_fn_second, resolvent,
)

FH, NL = "floryHuggins", "negLog"


def test_values():
    assert eval_f1(FH, 0.0) == 0.0
    assert eval_f1(FH, 0.5) == pytest.approx(1.5 * np.log(1.5) + 0.5 * np.log(0.5), rel=1e-14)
    assert eval_f1(FH, 0.5) == pytest.approx(0.2616, abs=1e-4)
    assert eval_f1(NL, 0.5) == pytest.approx(0.287682, abs=1e-6)
    assert eval_f1_prime(FH, 0.5) == pytest.approx(1.098612, abs=1e-6)
    assert eval_f1_prime(NL, 0.5) == pytest.approx(4 / 3, rel=1e-14)
    for k in KINDS:
        assert eval_f1_prime(k, 0.0) == 0.0
        assert eval_f1_second(k, 0.0) == pytest.approx(2.0)
    assert eval_f1_second(FH, 0.5) == pytest.approx(8 / 3)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("r", [1.0, -1.0, 1.5, np.nan])
def test_domain_violation(kind, r):
    for fn in (eval_f1, eval_f1_prime, eval_f1_second):
        with pytest.raises(DomainViolation) as info:
            fn(kind, np.array([0.0, r]))
        assert info.value.index == (1,)
        if np.isfinite(r):
            assert info.value.margin == pytest.approx(1 - abs(r))


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_consistency(kind):
    r = np.linspace(-0.9, 0.9, 37)
    h = 1e-5
    fd1 = (eval_f1(kind, r + h) - eval_f1(kind, r - h)) / (2 * h)
    fd2 = (eval_f1_prime(kind, r + h) - eval_f1_prime(kind, r - h)) / (2 * h)
    d1, d2 = eval_f1_prime(kind, r), eval_f1_second(kind, r)
    assert np.all(np.abs(fd1 - d1) <= 1e-6 * np.maximum(np.abs(d1), 1e-3))
    assert np.all(np.abs(fd2 - d2) <= 1e-6 * np.abs(d2))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(KINDS), st.floats(-0.999, 0.999), st.floats(-0.999, 0.999))
def test_f1_prime_monotone(kind, a, b):
    assert (eval_f1_prime(kind, b) - eval_f1_prime(kind, a)) * (b - a) >= 0


@pytest.mark.parametrize("kind", KINDS)
def test_growth_condition(kind):
    r = np.concatenate([np.linspace(-1 + 1e-6, 1 - 1e-6, 2001), [1 - 1e-6, -(1 - 1e-6)]])
    lhs = np.abs(eval_f1_second(kind, r))
    # compare logarithms to avoid overflow of the exponential bound
    rhs_log = GROWTH_CONSTANT * (np.abs(eval_f1_prime(kind, r)) + 1)
    assert np.all(np.log(lhs) <= rhs_log)


def test_resolvent_zero_dimensional():
    assert resolvent(FH, 0.5 + np.log(3.0)) == pytest.approx(0.5, abs=1e-12)
    assert resolvent(FH, 1.598612) == pytest.approx(0.5, abs=1e-6)


def _yosida_oracle(kind, n, r):
    # high-precision bracketing on the original resolvent equation
    with mp.workdps(60):
        def g(s):
            d = mp.log((1 + s) / (1 - s)) if kind == FH else 2 * s / (1 - s * s)
            return s + d / n - r
        s = mp.findroot(g, (mp.mpf(-1) + mp.mpf(10) ** -50, 1 - mp.mpf(10) ** -50), solver="anderson")
        return float(n * (r - s))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [1, 2, 8, 64])
def test_yosida_matches_root_finding_oracle(kind, n):
    r = np.array([-1.7, -0.95, -0.3, 0.0, 0.4, 0.9, 0.999, 1.3])
    got = eval_fn_prime(kind, n, r) - n**3 * np.maximum(np.abs(r) - 1, 0) * np.sign(r)
    expect = [_yosida_oracle(kind, n, x) for x in r]
    assert np.allclose(got, expect, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_regularization_floor_and_monotone_approach(kind):
    assert eval_fn_prime(kind, 3, 0.0) == 0.0
    assert eval_fn_prime(kind, 2, 1.5) >= 4.0
    r = np.linspace(1.0, 2.0, 51)
    for n in (1, 2, 4, 8):
        assert np.all(eval_fn_prime(kind, n, r) >= n**3 * (r - 1) - 1e-12)
        assert np.all(-eval_fn_prime(kind, n, -r) >= n**3 * (r - 1) - 1e-12)
    gaps = [abs(eval_fn_prime(kind, n, 0.9) - eval_f1_prime(kind, 0.9)) for n in (1, 2, 4, 8, 16, 32, 64)]
    assert np.all(np.diff(gaps) < 0)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(KINDS), st.sampled_from([1, 3, 16]), st.floats(-3, 3), st.floats(-3, 3))
def test_fn_prime_monotone(kind, n, a, b):
    assert (eval_fn_prime(kind, n, b) - eval_fn_prime(kind, n, a)) * (b - a) >= -1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_fn_is_antiderivative_and_increases_to_f1(kind):
    for r in (-0.95, -0.4, 0.3, 0.8, 1.2, -1.6):
        vals = []
        for n in (1, 2, 4, 8):
            q, _ = quad(lambda x: float(eval_fn_prime(kind, n, x)), 0.0, r, epsabs=1e-13, epsrel=1e-12)
            assert float(eval_fn(kind, n, r)) == pytest.approx(q, abs=1e-9)
            vals.append(q)
        assert np.all(np.diff(vals) >= -1e-12)
        if abs(r) < 1:
            assert vals[-1] <= float(eval_f1(kind, r)) + 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_fn_second_derivative(kind):
    r = np.array([-1.4, -0.99, -0.2, 0.5, 0.97, 1.1])
    h = 1e-6
    for n in (2, 16):
        fd = (eval_fn_prime(kind, n, r + h) - eval_fn_prime(kind, n, r - h)) / (2 * h)
        assert np.allclose(eval_fn_second(kind, n, r), fd, rtol=1e-5)


def test_regularized_extreme_arguments_are_finite():
    r = np.array([-1e6, -1 - 1e-12, 1 - 1e-12, 1e6])
    for kind in KINDS:
        for f in (eval_fn, eval_fn_prime, eval_fn_second):
            assert np.all(np.isfinite(f(kind, 1000, r)))


def test_spec_full_potential():
    spec = PotentialSpec(FH, lam=3.0)
    assert spec.singular
    assert spec.energy(0.5) == pytest.approx(eval_f1(FH, 0.5) - 0.375)
    assert spec.derivative(0.5) == pytest.approx(np.log(3) - 1.5)
    reg = spec.with_n(4)
    assert not reg.singular and reg.derivative(2.0) == pytest.approx(eval_fn_prime(FH, 4, 2.0) - 6.0)
    with pytest.raises(ValueError):
        PotentialSpec("obstacle")
    with pytest.raises(ValueError):
        PotentialSpec(FH, lam=-1)
    with pytest.raises(ValueError):
        PotentialSpec(FH, n=0)
