import math

import numpy as np
import numpy.polynomial.polynomial as npoly
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwsgrazing import expr as ex
from pwsgrazing import scenarios as sc
from pwsgrazing import unfold as uf
from pwsgrazing.system import tangency_at


@pytest.mark.parametrize(
    "kind, m",
    [("S-I", 4), ("S-V", 2), ("S-L", 1), ("S-R", 3), ("S-X", 1), ("S-I", 0)],
)
def test_make_scenario_rejects(kind, m):
    with pytest.raises(sc.ScenarioError):
        sc.make_scenario(kind, m)


def test_make_scenario_rejects_mu():
    for mu in (0.0, -0.1, 1.5):
        with pytest.raises(sc.ScenarioError):
            sc.make_scenario("S-I", 1, mu=mu)


def test_canonical_cycle_is_invariant():
    fld = sc.canonical_upper(0.3)
    for th in np.linspace(0, 2 * math.pi, 13):
        x, y = math.sin(th), 1 - math.cos(th)
        f, g = fld(x, y)
        # tangent to the unit circle about (0, 1) with unit speed
        assert abs(f * x + g * (y - 1)) < 1e-14
        assert math.hypot(f, g) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("lam", [[0.0], [0.0, 0.05], [-0.02, 0.0, 0.05, 0.1]])
def test_level_polynomial_derivative(lam):
    nf = sc.make_scenario("S-I" if len(lam) % 2 else "S-R", len(lam)).normal_form
    F = sc.level_polynomial(nf, lam)
    assert npoly.polyval(0.0, F) == 0.0
    phi, fm = ex.evaluate(nf.phi, 0.0, 0.0), ex.evaluate(nf.fm, 0.0, 0.0)
    for x in np.linspace(-0.3, 0.3, 7):
        want = phi * math.prod(x - v for v in lam) / fm
        assert npoly.polyval(x, npoly.polyder(F)) == pytest.approx(want, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.5), st.floats(1e-6, 1e-3), st.floats(0.02, 0.98))
def test_push_window_gives_two_positive_roots(mu, a, t):
    lo, hi = sc.push_window(mu, a)
    assert 0 < lo < hi
    K = math.exp(-4 * math.pi * mu)
    L = lo + t * (hi - lo)
    roots = np.roots([1 - K, -4 * K * L, -4 * K * L * L + 2 * a * (1 - K)])
    assert np.all(np.isreal(roots)) and np.all(roots.real > 0)
    # above the window the constant term is negative: one root changes sign
    L = 1.5 * hi
    roots = np.roots([1 - K, -4 * K * L, -4 * K * L * L + 2 * a * (1 - K)])
    assert np.sum(roots.real > 0) < 2 or np.any(~np.isreal(roots))


def test_expected_bound_values():
    assert sc.expected_bound("S-I", 5, 0) == 6
    assert sc.expected_bound("S-I", 5, 2) == 4
    assert sc.expected_bound("S-R", 4, 1) == 5
    with pytest.raises(sc.ScenarioError):
        sc.expected_bound("S-V", 3, 0)


def test_kappa_roots_closed_form():
    a, b = sc.kappa_roots(2.0)
    assert a == pytest.approx(1 + math.sqrt(2), rel=1e-15)
    assert b == pytest.approx(1 - math.sqrt(2), rel=1e-14)
    with pytest.raises(sc.ScenarioError):
        sc.kappa_roots(0.0)


def test_transition_roots_and_skeleton():
    assert sc.transition_roots("S-I", 3, 0.1) == [0.0, 0.1, 0.2]
    with pytest.raises(sc.ScenarioError):
        sc.transition_roots("S-V", 3, 0.1)
    nf = sc.make_scenario("S-I", 5).normal_form
    lam = sc.transition_roots("S-I", 5, 0.05)
    F = sc.level_polynomial(nf, lam)
    # S-I m=5: right extrema alternate max, min, max, min from the first positive root
    assert sc.right_skeleton(F, lam, 0.05) == [0.0] + lam[1:]


def test_require_zero_k():
    bumped = uf.UnfoldingParams.bumps([0, 0.1, 0.2], [1e-6])
    for m in (2, 3):
        with pytest.raises(sc.ScenarioError):
            sc.require_zero_k(m, bumped)
        sc.require_zero_k(m, uf.UnfoldingParams(0.0, [0.0] * m))
    sc.require_zero_k(5, bumped)


def test_reductions():
    red = sc.reduce_type(sc.make_scenario("S-V", 3))
    assert red.target == "S-L" and red.at_origin.multiplicity == (1, 2)
    assert tangency_at(red.system, red.lam[-1]).vis_lower == "V"
    red = sc.reduce_type(sc.make_scenario("S-R", 2))
    assert red.target == "S-I" and red.at_origin.kind == "VI"
    with pytest.raises(sc.ScenarioError):
        sc.reduce_type(sc.make_scenario("S-I", 3))


def test_literal_layout_theta_negative():
    lay = sc.step2_layout(sc.make_scenario("S-I", 5), 0.05)
    assert lay.theta_negative
    assert len(lay.A) == 9 and len(lay.heights) == 4
    # the negative Theta makes some heights negative: the bumps are not admissible
    assert not uf.check_admissible(lay.params).admissible
    with pytest.raises(sc.ScenarioError):
        sc.step2_layout(sc.make_scenario("S-I", 3), 0.05)


def test_plan_harness_without_bumps():
    plan = sc.plan_harness(sc.make_scenario("S-I", 1), 0.05, 0)
    assert plan.params.d == 0 and plan.visible == []
    assert plan.params.alpha < 0 and plan.params.lam[0] < 0
    assert plan.push.found
    with pytest.raises(sc.ScenarioError):
        sc.plan_harness(sc.make_scenario("S-I", 1), 0.05, 1, push=plan.push)


def test_plan_harness_m5_structure():
    plan = sc.plan_harness(sc.make_scenario("S-I", 5), 0.05, 1)
    assert len(plan.visible) == 2 and len(plan.images) == 2
    assert all(w < 0 for w in plan.images)
    assert all(mg < 0 for mg in plan.level_margin)
    assert plan.offsets[0] > 0 > plan.offsets[1]
    assert not plan.notes
    assert "levels" in plan.as_dict()


def test_distance_family_admissible():
    scn = sc.make_scenario("S-I", 1)
    for d in (0.1, 0.025):
        p = sc.distance_family(scn, d)
        assert uf.check_admissible(p).admissible
        assert p.alpha == pytest.approx(d**3)
