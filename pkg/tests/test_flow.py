import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwsgrazing import flow as fl
from pwsgrazing import scenarios as sc
from pwsgrazing import unfold as uf
from pwsgrazing.fields import ExprField
from pwsgrazing.system import PWSSystem

PARABOLA = ExprField("1", "-x")


def test_parabola_exit_matches_closed_form():
    arc = fl.integrate_arc(PARABOLA, (-1.0, 0.5), 1, fl.DEFAULT, fl.UPPER)
    assert arc.exit.type == "event"
    assert abs(arc.exit.x - math.sqrt(2.0)) < 1e-9
    assert abs(arc.exit.y_raw) <= fl.DEFAULT.atol * 1e-2


def test_linear_fall_hits_line_at_unit_time():
    arc = fl.integrate_arc(ExprField("0", "-1"), (0.0, 1.0), 1, fl.DEFAULT, fl.UPPER)
    assert abs(arc.t1 - 1.0) < 1e-12


def test_start_on_line_moving_away_not_retriggered():
    arc = fl.integrate_arc(ExprField("0", "1"), (0.0, 0.0), 1, fl.DEFAULT.with_(max_time=2.0), fl.UPPER)
    assert arc.exit.type == fl.TIME_LIMIT
    assert arc.exit.y == pytest.approx(2.0)


def test_rotation_conserves_radius():
    ctl = fl.DEFAULT.with_(rtol=1e-10)
    arc = fl.integrate_arc(ExprField("y", "-x"), (1.0, 0.0), 1, ctl.with_(max_time=2 * math.pi), fl.FREE)
    _, xs, ys = arc.sample(500)
    assert np.max(np.abs(xs**2 + ys**2 - 1.0)) < 1e-9


def test_crossing_rule_and_alternation():
    sys = PWSSystem(ExprField("1", "-1"), ExprField("1", "-1"))
    d = fl.continue_filippov(sys, 0.0, fl.UPPER)
    assert d.next_regime == fl.LOWER
    orb = fl.flow(sys, (0.0, 0.5), 1, fl.DEFAULT.with_(max_time=3.0))
    assert orb.regimes[:2] == [fl.UPPER, fl.LOWER]


def test_attracting_sliding_and_exit():
    # g+ = -1 < 0 < g- = x on x > 0; sliding velocity is exactly -1
    sys = PWSSystem(ExprField("-1", "-1"), ExprField("-1", "x"))
    d = fl.continue_filippov(sys, 0.4, fl.UPPER)
    assert d.next_regime == fl.SLIDING
    arc, reason = fl.slide(sys, 0.4)
    assert reason == "boundary"
    assert arc.exit.x == pytest.approx(0.0, abs=1e-9)
    assert arc.duration == pytest.approx(0.4, rel=1e-6)


def test_pseudo_equilibrium_flagged():
    sys = PWSSystem(ExprField("0.2-x", "-1"), ExprField("0.2-x", "1"))
    arc, reason = fl.slide(sys, 0.5)
    assert reason == fl.PSEUDO_EQ
    assert arc.exit.x == pytest.approx(0.2, abs=1e-6)


def test_visible_upper_tangency_continues_upper():
    # upper orbits of (1, x) are y = c + x^2/2: visible at the origin
    sys = PWSSystem(ExprField("1", "x"), ExprField("1", "1"))
    d = fl.continue_filippov(sys, 0.0, fl.UPPER)
    assert d.next_regime == fl.UPPER and d.tangent


def test_repelling_start_is_non_unique():
    sys = PWSSystem(ExprField("1", "1"), ExprField("1", "-1"))
    orb = fl.flow(sys, (0.0, 0.0), 1)
    assert orb.status == fl.NON_UNIQUE and not orb.arcs


def test_grazing_cycle_closes_as_grazing_loop():
    scn = sc.make_scenario("S-I", 1)
    orb = fl.flow(scn.system, (0.0, 2.0), 1, fl.DEFAULT.with_(max_time=8.0))
    loop = fl.detect_and_classify_loop(orb, 1e-6)
    assert loop is not None and loop.kind == "grazing"
    assert loop.period == pytest.approx(2 * math.pi, rel=1e-8)
    assert abs(loop.area) == pytest.approx(math.pi, rel=1e-4)


def test_lifted_cycle_is_smooth_loop():
    # alpha < 0 lifts the upper cycle off the line: no switching points, no touching
    sys = uf.build_unfolded(sc.make_scenario("S-I", 1).normal_form, uf.UnfoldingParams(-0.01, [0.0]))
    # the shifted cycle is centred at (0, 1.01)
    orb = fl.flow(sys, (0.0, 2.01), 1, fl.DEFAULT.with_(max_time=8.0))
    loop = fl.detect_and_classify_loop(orb, 1e-6)
    assert loop is not None and loop.kind == "smooth"


def test_sliding_loop_kind():
    # outward spiral above an attracting sliding segment x > -0.35 that ends at a visible tangency
    up = ExprField("(y-0.5)+0.1*(x+0.3)", "-(x+0.3)+0.1*(y-0.5)")
    sys = PWSSystem(up, ExprField("-1", "1"))
    orb = fl.flow(sys, (0.5, 0.0), 1, fl.DEFAULT.with_(max_time=30.0, max_arcs=20), regime=fl.SLIDING)
    loop = fl.detect_and_classify_loop(orb, 1e-6)
    assert loop is not None and loop.kind == "sliding"
    assert any(a.regime == fl.SLIDING for a in loop.arcs)


def test_orbit_csv_exports(tmp_path):
    sys = PWSSystem(ExprField("1", "-1"), ExprField("1", "-1"))
    orb = fl.flow(sys, (0.0, 0.5), 1, fl.DEFAULT.with_(max_time=2.0))
    orb.to_csv(tmp_path / "o.csv", 10)
    orb.events_to_csv(tmp_path / "e.csv")
    head = (tmp_path / "o.csv").read_text().splitlines()[0]
    assert head == "arc_index,regime,t,x,y"
    assert (tmp_path / "e.csv").read_text().splitlines()[1].endswith("crossing")


# ----------------------------------------------------------------------------- properties

_unf = uf.build_unfolded(sc.make_scenario("S-I", 1).normal_form, uf.UnfoldingParams(-1e-3, [-0.02]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.8))
def test_junction_continuity_and_bracketing(x0):
    ctl = fl.DEFAULT.with_(max_arcs=8, max_time=30.0)
    orb = fl.flow(_unf, (x0, 0.0), 1, ctl)
    assert all(g <= 10 * ctl.atol for g in orb.continuity_gaps())
    for arc in orb.arcs:
        if arc.regime in (fl.UPPER, fl.LOWER) and arc.exit.type != fl.TIME_LIMIT:
            assert abs(arc.exit.y_raw) <= max(ctl.atol * 1e-2, 1e-14)
            tt = np.linspace(arc.t0, arc.t1, 40)[1:-1]
            ys = arc.at(tt)[:, 1]
            sign = 1.0 if arc.regime == fl.UPPER else -1.0
            assert np.all(ys * sign >= -1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.1, 1.5))
def test_reversibility_of_smooth_arcs(x0, y0):
    fld = _unf.upper
    ctl = fl.DEFAULT
    fwd = fl.integrate_arc(fld, (x0, y0), 1, ctl.with_(max_time=1.0), fl.FREE)
    back = fl.integrate_arc(fld, tuple(fwd.end), -1, ctl.with_(max_time=fwd.duration), fl.FREE)
    assert np.hypot(*(back.end - np.array([x0, y0]))) <= 100 * ctl.atol + 1e-9


def test_loop_kind_invariant_under_restart():
    scn = sc.make_scenario("S-I", 1)
    kinds, areas = [], []
    for th in (0.0, 1.0, 2.5):
        p = (math.sin(th), 1.0 + math.cos(th))
        orb = fl.flow(scn.system, p, 1, fl.DEFAULT.with_(max_time=8.0))
        lp = fl.detect_and_classify_loop(orb, 1e-6)
        kinds.append(lp.kind)
        areas.append(abs(lp.area))
    assert len(set(kinds)) == 1
    assert max(areas) - min(areas) < 1e-4


def test_python_fallback_matches_numba():
    import os
    import subprocess
    import sys

    code = (
        "from pwsgrazing import _accel, flow as fl; from pwsgrazing.fields import ExprField;"
        "a = fl.integrate_arc(ExprField('1', '-x'), (-1.0, 0.5), 1, fl.DEFAULT, fl.UPPER);"
        "print(_accel.backend(), repr(float(a.exit.x)))"
    )
    env = dict(os.environ, PWSGRAZING_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == "python"
    ref = fl.integrate_arc(PARABOLA, (-1.0, 0.5), 1, fl.DEFAULT, fl.UPPER).exit.x
    assert abs(float(out[1]) - ref) < 1e-13
