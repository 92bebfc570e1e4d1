import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from shelab.yw import (EPS1_RULE, ConstraintError, a_seq, eps_grid, gamma_closed_form,
                       gamma_seq, length_scales, bin_log_envelope, log_a, log_l, log_lbar,
                       log_m, m_seq, make_mollifier, n_0, n_M, phi_props_check, plateau)


def test_sequences():
    assert a_seq(0) == 1.0
    assert a_seq(1) == pytest.approx(math.exp(-1))
    assert a_seq(3) == pytest.approx(math.exp(-6))
    assert m_seq(1) == 1.0
    for n in range(1, 8):
        assert math.exp(log_m(n)) == pytest.approx(a_seq(n - 1) ** -0.5)
    assert log_a(100) == -5050


def test_plateau_shape():
    u = np.linspace(-0.5, 1.5, 2001)
    s = plateau(u)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(s[(u <= 0) | (u >= 1)] == 0)
    assert np.all(s[(u >= 0.25) & (u <= 0.75)] == 1)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_mollifier_properties(n):
    r = phi_props_check(make_mollifier(n))
    assert abs(r["mass"] - 1) <= 1e-9
    assert r["cap_max"] <= 2 + 1e-9
    assert r["dphi_max"] <= 1 + 1e-12
    assert r["gap_sup"] <= r["a_prev"]
    assert r["d2phi_scaled_max"] <= 2 + 1e-9
    assert r["ok"]


def test_phi_against_direct_quadrature():
    p = make_mollifier(2)
    lo, hi = p.support
    for x in (0.5 * (lo + hi), 0.9 * hi, 2 * hi):
        # phi(x) = int_0^x (x - y) psi(y) dy
        direct, _ = integrate.quad(lambda y: (x - y) * p.psi(y), lo, min(hi, x), limit=200,
                                   epsabs=1e-15, epsrel=1e-12)
        assert p.phi(x) == pytest.approx(direct, rel=1e-8, abs=1e-12)
        assert p.phi(-x) == p.phi(x)


def test_phi_is_abs_minus_kappa_outside_support():
    p = make_mollifier(3)
    hi = p.support[1]
    x = np.array([hi, 2 * hi, 10.0])
    np.testing.assert_allclose(p.phi(x), x - p.kappa, rtol=1e-13)
    np.testing.assert_allclose(p.dphi(-x), -1.0, atol=1e-13)
    assert p.phi(0.0) == 0.0


def test_mollifier_resolution_independent():
    a, b = make_mollifier(4, 256), make_mollifier(4, 2048)
    x = np.geomspace(a.support[0], a.support[1], 50)
    np.testing.assert_allclose(a.phi(x), b.phi(x), rtol=1e-12, atol=1e-15)


def test_gamma_seq_example():
    gs = gamma_seq(0.9, 1.0)
    np.testing.assert_allclose(gs.values, [1, 1.4, 1.76, 2.084], atol=1e-12)
    assert gs.m_bar == 2 and gs.terminated
    assert gs.gamma_inf == pytest.approx(5.0)
    for m, v in enumerate(gs.values):
        assert abs(v - gamma_closed_form(0.9, 1.0, m)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.51, 0.99), frac=st.floats(0.01, 0.99))
def test_gamma_seq_monotone_and_bracketed(g, frac):
    alpha = frac * min(2.0, 2 * (2 * g - 1))
    gs = gamma_seq(g, alpha)
    v = np.array(gs.values)
    assert np.all(np.diff(v) > 0)
    assert gs.terminated
    assert v[gs.m_bar] <= 2 < v[gs.m_bar + 1]
    assert np.all(v < gs.gamma_inf)


def test_gamma_seq_non_terminating_above_threshold():
    gs = gamma_seq(0.6, 0.5, cap=200)  # 2(2 gamma - 1) = 0.4 < alpha
    assert not gs.terminated and gs.m_bar is None
    with pytest.raises(ConstraintError):
        gamma_seq(1.0, 0.5)


def test_eps_grid():
    eg = eps_grid(0.75, 0.5, 0.01, 0.0002)
    assert eg.L == 2200
    assert eg.betas[-1] == pytest.approx(0.49)
    assert eg.betas[eg.L] <= 0.5 - 6 * 0.01 + 1e-12
    np.testing.assert_allclose(eg.lambdas, 2 * (eg.betas[:-1] + 0.01))


def test_eps1_violation_names_rule():
    with pytest.raises(ConstraintError) as exc:
        eps_grid(0.75, 0.5, 0.5 / 32 + 1e-6, 1e-6)
    assert EPS1_RULE in str(exc.value)
    with pytest.raises(ConstraintError):
        eps_grid(0.75, 0.5, 0.01, 0.01)


def test_n_M_and_n_0():
    assert n_M(0.01, 1) == 35
    # definition check: a_n^eps1 <= 2^(-M-8) first holds at n_M
    n = n_M(0.01, 1)
    assert 0.01 * log_a(n) <= -9 * math.log(2) < 0.01 * log_a(n - 1)
    n0 = n_0(0.0002, 0.01)
    e = 0.0002 * 0.01
    cond = lambda n: n * (n + 1) / 4 > math.log(2) * math.exp(e * n * (n + 1) / 8)
    assert cond(n0) and not cond(n0 + 1) and not cond(n0 + 100)


def test_scale_ordering_random_points():
    rng = np.random.default_rng(0)
    gamma, alpha, eps1, eps0 = 0.75, 0.5, 0.01, 0.0002
    eg = eps_grid(gamma, alpha, eps1, eps0)
    for _ in range(100):
        n = int(rng.integers(36, 400))
        i = int(rng.integers(0, eg.L + 1))
        ls = length_scales(n, eg.betas[i], eg.betas[i + 1], gamma, alpha, eps1, 1, eps0)
        assert ls.lemma36_holds


def test_bin_envelope_log_form():
    v = bin_log_envelope(40, 0.1, 0.1002, 0.75, 0.5, 0.01, 1.0, 1)
    assert v == pytest.approx(math.log(16) + log_l(40, 0.1002, 0.75, 0.5, 0.01)
                              - log_lbar(40, 0.1, 0.01))
