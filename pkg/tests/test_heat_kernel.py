import math

import numpy as np
import pytest
from scipy import integrate, stats

from shelab.heat_kernel import (KernelLemmaReport, cross_integral, heat_mass, log_pt, pt,
                                pt_deriv, verify_algebra_bound, verify_cross_integral,
                                verify_deriv_bound, verify_difference_pointwise,
                                verify_outside_tail, verify_weighted_integral)
from shelab.quadrature import (cell_average_2d, gaussian_riesz_moment, hat_weights_1d,
                               riesz_form)


def _shifted_moment(mu, s2, alpha):
    """E|Z|^-alpha for Z ~ N(mu, s2) in 1-D by adaptive quadrature."""
    s = math.sqrt(s2)
    f = lambda z: abs(z) ** -alpha * stats.norm.pdf(z, mu, s)
    a, _ = integrate.quad(f, -np.inf, 0, epsabs=1e-13, limit=200)
    b, _ = integrate.quad(f, 0, np.inf, epsabs=1e-13, limit=200)
    return a + b


def test_pt_values():
    assert pt(1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    assert pt(0.5, [0.3, -0.2], q=2) == pytest.approx(
        stats.norm.pdf(0.3, scale=math.sqrt(0.5)) * stats.norm.pdf(-0.2, scale=math.sqrt(0.5)),
        rel=1e-13)
    assert log_pt(1e-6, 1.0) == pytest.approx(math.log(2 * math.pi * 1e-6) * -0.5 - 0.5e6)


def test_pt_integrates_to_one_independently():
    for t in (0.01, 1.0):
        val, _ = integrate.quad(lambda x: pt(t, x), -np.inf, np.inf, epsabs=1e-14)
        assert val == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", [1, 2])
@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_heat_mass(q, t):
    assert abs(heat_mass(t, q) - 1) < 1e-12


def test_pt_deriv_matches_finite_difference():
    t, h = 0.3, 1e-5
    for x in (-0.7, 0.1, 1.3):
        fd = (pt(t, x + h) - pt(t, x - h)) / (2 * h)
        assert pt_deriv(t, x) == pytest.approx(fd, rel=1e-8)
    x = np.array([0.2, -0.4])
    for l in range(2):
        e = np.eye(2)[l] * h
        fd = (pt(t, x + e, 2) - pt(t, x - e, 2)) / (2 * h)
        assert pt_deriv(t, x, l, 2) == pytest.approx(fd, rel=1e-8)


@pytest.mark.parametrize("r", [1.0, 1.5, 2.0])
def test_algebra_bound_constant(r):
    rep = verify_algebra_bound(r, r, [1.0, 5.0, 50.0], n_r=1)
    exact = (1 / r) ** (1 / r) * math.exp(-1 / r)
    for row in rep.rows:
        assert row["lhs"] == pytest.approx(exact, abs=1e-9)
    if r == 1.0:
        assert rep.rows[0]["lhs"] == pytest.approx(0.367879441, abs=1e-9)


def test_deriv_bound_constant():
    # sup_y y sqrt(2) exp(-y^2/4) = 2 exp(-1/2), attained at y = sqrt(2).
    t = 0.04
    rep = verify_deriv_bound([t], np.linspace(0, 1, 20001) * math.sqrt(t) * 3, q=1)
    assert rep.empirical_constant == pytest.approx(2 * math.exp(-0.5), abs=1e-7)
    assert rep.lhs.max() > 0


def test_deriv_bound_q2_shape():
    rep = verify_deriv_bound([0.1], [[0.1, 0.2], [0.0, 0.0]], q=2)
    assert len(rep.rows) == 4
    assert rep.empirical_constant <= 2 * 2 ** 0.5 * math.exp(-0.5)


def test_report_rejects_negative_and_nonfinite():
    rep = KernelLemmaReport("A_1")
    with pytest.raises(ValueError):
        rep.add({}, -1.0, 1.0)
    with pytest.raises(ValueError):
        rep.add({}, float("nan"), 1.0)
    rep.add({}, 0.0, 1.0)
    assert rep.rows[0]["ratio"] == 0.0
    with pytest.raises(ValueError):
        KernelLemmaReport("nope")
    assert rep.to_csv().splitlines()[0] == "lemma_id,param_json,lhs,envelope,ratio"


def test_gaussian_moment_helper_against_quadrature():
    for alpha in (0.25, 0.5, 0.75):
        assert gaussian_riesz_moment(0.3, alpha, 1) == pytest.approx(
            _shifted_moment(0.0, 0.3, alpha), rel=1e-9)
    # q = 2: E|X|^-alpha = int_0^inf r^(1-alpha) exp(-r^2/2s) / s dr
    s2, alpha = 0.4, 1.2
    val, _ = integrate.quad(lambda r: r ** (1 - alpha) * math.exp(-r * r / (2 * s2)) / s2,
                            0, np.inf)
    assert gaussian_riesz_moment(s2, alpha, 2) == pytest.approx(val, rel=1e-9)


def test_hat_weights_reproduce_kernel_mass():
    # The hat weights integrate |x|^-alpha against a hat at each node, so a
    # constant unit density gives the full integral over the covered range.
    alpha, h, M = 0.5, 0.01, 400
    j = np.arange(-M, M + 1)
    w = hat_weights_1d(j, alpha) * h ** (1 - alpha)
    exact = 2 * (M * h) ** (1 - alpha) / (1 - alpha)
    # the end hats are cut in half at the boundary
    assert np.sum(w) == pytest.approx(exact, rel=2e-3)


def test_cell_average_2d_independent():
    # mean of |x|^-alpha over the unit cell centred at the origin
    for alpha in (0.5, 1.0, 1.5):
        val, _ = integrate.dblquad(lambda y, x: (x * x + y * y) ** (-alpha / 2), 0, 0.5,
                                   0, 0.5, epsabs=1e-11, epsrel=1e-10)
        assert cell_average_2d(alpha) == pytest.approx(4 * val, rel=1e-6)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_riesz_form_gaussian_oracle_1d(alpha):
    t = 0.05
    h = math.sqrt(t) / 16
    w = np.arange(-12 * math.sqrt(t), 12 * math.sqrt(t) + h, h)
    f = pt(t, w)
    sing, plus = riesz_form(f, f, h, alpha)
    assert sing == pytest.approx(gaussian_riesz_moment(2 * t, alpha, 1), rel=1e-3)
    assert plus == pytest.approx(1.0, rel=1e-10)


def test_weighted_integral_offset_oracle():
    # r1 = r2 = r3 = 0 with centres x, y: the integral is E|N(x-y, t+t')|^-alpha + 1.
    t, tp, alpha = 0.02, 0.05, 0.5
    rep = verify_weighted_integral(t, tp, 0.0, 0.0, 0.0, alpha, x=[0.1], y=[-0.05],
                                   resolution=32)
    exact = _shifted_moment(0.15, t + tp, alpha) + 1
    assert rep.rows[0]["lhs"] == pytest.approx(exact, rel=2e-3)
    assert rep.rows[0]["params"]["K"] == pytest.approx(0.1)


def test_weighted_integral_centred_q2():
    t, tp, alpha = 0.05, 0.05, 1.0
    rep = verify_weighted_integral(t, tp, 0.0, 0.0, 0.0, alpha, q=2, resolution=8)
    exact = gaussian_riesz_moment(t + tp, alpha, 2) + 1
    assert rep.rows[0]["lhs"] == pytest.approx(exact, rel=2e-2)


def test_cross_integral_zero_when_points_coincide():
    assert cross_integral(0.1, 0.1, 0.0, 0.0, 0.5)[0] == 0.0


def test_cross_integral_t_scaling_fixed_offset():
    d0 = 0.5
    ts = d0 ** 2 * np.geomspace(1e-8, 1e-6, 5)
    rep = verify_cross_integral(ts, ts, 0.0, d0, 0.5, resolution=16, fit="t")
    assert rep.scaling_slope == pytest.approx(-1.25, abs=0.05)


def test_cross_integral_offset_scaling():
    t = 0.1
    v = math.sqrt(t) * np.geomspace(1e-3, 1e-2, 5)
    rep = verify_cross_integral(t, t, 0.0, v, 0.5, resolution=32, fit="offset")
    assert rep.scaling_slope == pytest.approx(2.0, abs=0.1)


def test_cross_integral_rejects_bad_order():
    with pytest.raises(ValueError):
        verify_cross_integral(0.2, 0.1, 0.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        verify_cross_integral(0.1, 0.2, 0.0, 0.1, 1.5)


def test_outside_tail_is_below_full_integral():
    kw = dict(resolution=16)
    tail = verify_outside_tail(0.0, 0.1, 0.2, 0.0, 0.05, 0.25, 0.5, 0.0, 0.0, 0.5, **kw)
    full = cross_integral(0.1, 0.2, 0.0, 0.05, 0.5, resolution=16)[0]
    assert 0 <= tail.rows[0]["lhs"] <= full


def test_difference_pointwise_reports():
    out = verify_difference_pointwise(0.1, 0.2, np.linspace(-1, 1, 11), 0.05)
    assert set(out) == {"A_2a", "A_2b", "A_3"}
    # A_2a: |p'(w+v) - p'(w)| <= C t^-1 int p_2t; finite and positive constant
    assert 0 < out["A_2a"].empirical_constant < 10
    assert {r["params"]["part"] for r in out["A_3"].rows} == {"a", "b"}
