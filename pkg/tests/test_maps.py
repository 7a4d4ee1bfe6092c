import math

import numpy as np
import pytest

from pwsgrazing import flow as fl
from pwsgrazing import maps
from pwsgrazing import scenarios as sc
from pwsgrazing import unfold as uf
from pwsgrazing.fields import ExprField
from pwsgrazing.system import PWSSystem

PARABOLA = ExprField("1", "-x")
S0 = maps.Section((0.0, 0.0), (1.0, 0.0), 0.1)
S1 = maps.Section((1.0, -0.5), (0.0, 1.0), 0.1)


@pytest.mark.parametrize("r", [-0.05, -1e-3, 1e-3, 0.02, 0.05])
def test_parabola_transition_exact(r):
    assert maps.transition_numeric(PARABOLA, S0, S1, r) == pytest.approx(r * r / 2, abs=1e-11)


def test_transition_zero_and_orientation():
    assert abs(maps.transition_numeric(PARABOLA, S0, S1, 0.0)) < 1e-11
    v = maps.transition_numeric(PARABOLA, S0, S1, 0.03)
    assert maps.transition_numeric(PARABOLA, S0, S1.flipped(), 0.03) == pytest.approx(-v, abs=1e-12)


def test_section_missed():
    far = maps.Section((50.0, 50.0), (0.0, 1.0), 0.1)
    with pytest.raises(maps.SectionMissed):
        maps.transition_numeric(PARABOLA, S0, far, 0.01, fl.DEFAULT.with_(max_time=5.0))


def test_parabola_closed_form_ingredients():
    rec = maps.v2_closed_form(PARABOLA, S0, S1)
    assert rec.g_x == -1.0
    assert abs(rec.div_integral) < 1e-12
    assert abs(abs(rec.delta1) - 1.0) < 1e-12
    assert rec.v2_magnitude == 0.5
    assert rec.calibrated_sign == 1


def _rotated_case(theta):
    from scipy.optimize import brentq

    fld = PARABOLA.rotated(theta)
    x0 = brentq(lambda x: fld(x, 0.0)[1], -1.0, 1.0, xtol=1e-15)
    arc = fl.integrate_arc(fld, (x0, 0.0), 1, fl.DEFAULT.with_(max_time=1.0), fl.FREE)
    f, g = fld(*arc.end)
    n1 = (-g / math.hypot(f, g), f / math.hypot(f, g))
    return fld, maps.Section((x0, 0.0), (1.0, 0.0), 0.1), maps.Section(tuple(arc.end), n1, 0.1)


@pytest.mark.parametrize(
    "case",
    ["parabola", "rotated", "scaled", "cycle"],
)
def test_v2_cross_validation(case):
    if case == "parabola":
        fld, s0, s1 = PARABOLA, S0, S1
    elif case == "rotated":
        fld, s0, s1 = _rotated_case(0.3)
    elif case == "scaled":
        fld, s0, s1 = PARABOLA.scaled(2.0), S0, S1
    else:
        th = 0.7
        fld = sc.canonical_upper(0.2)
        s0 = maps.Section((0.0, 0.0), (1.0, 0.0), 0.1)
        s1 = maps.Section((math.sin(th), 1 - math.cos(th)), (1.0, 0.0), 0.1)
    rec = maps.transition_record(fld, s0, s1)
    assert abs(abs(rec.v2_fit) - rec.v2_magnitude) <= 1e-4 * rec.v2_magnitude
    assert 1.95 <= rec.fit_slope <= 2.05


def test_time_reparametrization_keeps_v2():
    a = maps.v2_closed_form(PARABOLA, S0, S1)
    b = maps.v2_closed_form(PARABOLA.scaled(2.0), S0, S1)
    assert b.v2_magnitude == pytest.approx(a.v2_magnitude, rel=1e-9)
    assert b.T == pytest.approx(a.T / 2, rel=1e-9)


def test_fit_exact_quadratic():
    r = np.concatenate([-np.geomspace(1e-3, 1e-2, 4), np.geomspace(1e-3, 1e-2, 4)])
    v2, resid, slope = maps.fit_v2(r, 3.5 * r**2)
    assert v2 == pytest.approx(3.5, rel=1e-12)
    assert abs(slope - 2.0) < 1e-9


def test_fit_rejects_noise():
    rng = np.random.default_rng(0)
    r = np.concatenate([-np.geomspace(1e-3, 1e-2, 4), np.geomspace(1e-3, 1e-2, 4)])
    with pytest.raises(ValueError):
        maps.fit_v2(r, rng.normal(0, 1e-3, r.size))


def test_grazing_ratio_stable_and_reversed():
    th = 0.7
    far = (math.sin(th), 1 - math.cos(th))
    for mu in (0.05, 0.3):
        g = maps.grazing_ratio(sc.canonical_upper(mu), (0.0, 0.0), far, 0.1)
        assert g.from_fits == pytest.approx(math.exp(2 * math.pi * mu), rel=1e-3)
        assert g.from_fits > 1.0
    g = maps.grazing_ratio(sc.canonical_upper(0.3).scaled(-1.0), (0.0, 0.0), far, 0.1)
    assert g.from_fits < 1.0


# ----------------------------------------------------------------------------- return maps


def test_all_crossing_annulus_monotone():
    # rotation about (0, 0.3) in the upper half, constant drift below: every orbit crosses
    sys = PWSSystem(ExprField("y-0.3", "-x"), ExprField("-1", "-x"))
    rm = maps.return_map(sys, (0.4, 0.9), 12)
    assert all(a == maps.CROSSING for a in rm.annotation)
    assert np.all(np.diff(rm.R) > 0)


def test_visible_grazing_point_is_escape():
    # the grazing orbit re-enters the upper half and never crosses again
    scn = sc.make_scenario("S-I", 1)
    assert maps.first_return(scn.system, 0.0, fl.DEFAULT.with_(max_time=20.0)).annotation == maps.ESCAPE


def test_tangency_hit_splits_the_map():
    scn = sc.make_scenario("S-I", 5)
    plan = sc.plan_harness(scn, 0.05, 1)
    sys = uf.build_unfolded(scn.normal_form, plan.params)
    for v in plan.visible:
        assert maps.first_return(sys, v).annotation == maps.TANGENCY_HIT


def test_unperturbed_counts_zero():
    scn = sc.make_scenario("S-I", 1)
    cnt = maps.count_bifurcations(scn.system, (1e-3, 0.2), n=30)
    assert (cnt.beta_c, cnt.beta_s) == (0, 0)


def test_degenerate_identity_map():
    sys = PWSSystem(ExprField("1", "-1"), ExprField("1", "1"))
    rm = maps.ReturnMap(sys, (0.0, 1.0), np.linspace(0.1, 0.9, 5), np.linspace(0.1, 0.9, 5), [maps.CROSSING] * 5)
    with pytest.raises(maps.DegenerateMap):
        maps.find_fixed_points(rm)


def test_contracting_map_has_no_interior_fixed_point():
    sys = PWSSystem(ExprField("1", "-1"), ExprField("1", "1"))
    xs = np.linspace(0.1, 0.9, 9)
    rm = maps.ReturnMap(sys, (0.0, 1.0), xs, xs / 2, [maps.CROSSING] * 9)
    fps, boundary = maps.find_fixed_points(rm)
    assert fps == [] and boundary == []


@pytest.fixture(scope="module")
def m1_case():
    scn = sc.make_scenario("S-I", 1)
    plan = sc.plan_harness(scn, 0.05, 0)
    sys = uf.build_unfolded(scn.normal_form, plan.params)
    return plan, sys


def test_m1_fixed_points_close_into_loops(m1_case):
    plan, sys = m1_case
    xs = sc.count_grid(plan)
    rm = maps.return_map(sys, (xs[0], xs[-1]), xs=xs)
    fps, _ = maps.find_fixed_points(rm)
    crossing = [fp for fp in fps if fp.loop is not None and fp.loop.kind == "crossing-periodic"]
    assert [fp.stability for fp in sorted(crossing, key=lambda f: f.x)] == ["unstable", "stable"]
    for fp in crossing:
        assert abs(fp.residual) <= 10 * 1e-10 + 1e-12
        assert len(fp.loop.switching_points()) == 2


def test_parallel_return_map_matches_serial(m1_case):
    _, sys = m1_case
    a = maps.return_map(sys, (0.001, 0.02), 8)
    b = maps.return_map(sys, (0.001, 0.02), 8, jobs=2)
    assert np.array_equal(a.R, b.R, equal_nan=True)
    assert a.annotation == b.annotation


def test_count_stable_under_grid_halving(m1_case):
    plan, sys = m1_case
    xs = sc.count_grid(plan)
    full = maps.count_bifurcations(sys, (xs[0], xs[-1]), xs=xs)
    half = maps.count_bifurcations(sys, (xs[0], xs[-1]), xs=xs[::2])
    assert (full.beta_c, full.beta_s) == (half.beta_c, half.beta_s)


def test_count_exports(tmp_path, m1_case):
    plan, sys = m1_case
    xs = sc.count_grid(plan)
    cnt = maps.count_bifurcations(sys, (xs[0], xs[-1]), xs=xs)
    cnt.to_json(tmp_path / "c.json")
    text = (tmp_path / "c.json").read_text()
    assert '"beta_c": 2' in text
    areas = [abs(e["area"]) for e in cnt.nesting]
    assert areas == sorted(areas)
