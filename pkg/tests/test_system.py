import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwsgrazing import scenarios as sc
from pwsgrazing.fields import ExprField
from pwsgrazing.system import (
    LOWER,
    UPPER,
    NotSliding,
    PWSSystem,
    SystemFileError,
    classify_point,
    decompose,
    find_tangencies,
    parse_system_text,
    sliding_velocity,
    system_to_text,
    tangency_at,
    visibility_from_sign,
)

SI3 = """\
# canonical S-I grazing loop, m = 3
upper.fx = (y-1)+0.1*x*(1-(x^2+(y-1)^2))
upper.fy = -x+0.1*(y-1)*(1-(x^2+(y-1)^2))
lower.fx = -1
lower.fy = -x^3   # invisible from below
domain = -2 2 -2 3
"""


def test_classify_point_regions():
    sys = PWSSystem(ExprField("1", "x"), ExprField("1", "1"))
    assert classify_point(sys, 0.5).label == "crossing"
    assert classify_point(sys, -0.5).label == "sliding"
    assert classify_point(sys, 0.0).label == "tangent"
    both = PWSSystem(ExprField("x", "x"), ExprField("1", "1"))
    assert classify_point(both, 0.0).label == "both-vanish"


def test_sliding_velocity_formula():
    sys = PWSSystem(ExprField("2", "-1"), ExprField("-1", "3"))
    st_ = sliding_velocity(sys, 0.0)
    # (f+ g- - f- g+)/(g- - g+) = (6 - 1)/4
    assert st_.velocity == pytest.approx(1.25)
    assert st_.attracting and 0 < st_.weight < 1
    rep = PWSSystem(ExprField("2", "1"), ExprField("-1", "-3"))
    assert not sliding_velocity(rep, 0.0).attracting
    with pytest.raises(NotSliding):
        sliding_velocity(PWSSystem(ExprField("1", "1"), ExprField("1", "1")), 0.0)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 6),
    st.lists(st.floats(0.15, 0.9), min_size=0, max_size=2),
    st.sampled_from([-1.0, 1.0]),
)
def test_multiplicity_of_product_form(k0, others, phi):
    roots = []
    for r in others:
        r = round(r, 3)
        if all(abs(r - o) > 0.05 for o in roots):
            roots.append(r)
    parts = [repr(phi), "x" if k0 == 1 else f"x^{k0}"] + [f"(x-{r!r})" for r in roots]
    sys = PWSSystem(ExprField("1", "2"), ExprField("-1", "*".join(parts)))
    assert tangency_at(sys, 0.0).multiplicity == (0, k0)
    for r in roots:
        assert tangency_at(sys, r).multiplicity == (0, 1)


@pytest.mark.parametrize("m", range(1, 7))
def test_visibility_table_parity(m):
    for which in (UPPER, LOWER):
        for lead in (1.0, -1.0):
            for f in (1.0, -1.0):
                v = visibility_from_sign(which, m, lead, f)
                assert v in (("V", "I") if m % 2 else ("L", "R"))
    # odd m: upper visibility flips with the sign of lead*f
    if m % 2:
        assert visibility_from_sign(UPPER, m, 1.0, 1.0) != visibility_from_sign(UPPER, m, -1.0, 1.0)


def test_scenario_types_classify():
    assert tangency_at(sc.make_scenario("S-I", 3).system, 0.0).kind == "VI"
    assert tangency_at(sc.make_scenario("S-V", 1).system, 0.0).kind == "VV"
    assert tangency_at(sc.make_scenario("S-L", 2).system, 0.0).kind == "VL"
    assert tangency_at(sc.make_scenario("S-R", 4).system, 0.0).kind == "VR"
    with pytest.raises(sc.ScenarioError):
        sc.make_scenario("S-I", 4)
    with pytest.raises(sc.ScenarioError):
        sc.make_scenario("S-L", 3)


def test_find_tangencies_and_decomposition():
    sys = PWSSystem(ExprField("1", "1"), ExprField("-1", "(x-0.5)*(x+0.5)"))
    tans = find_tangencies(sys)
    assert [round(t.x, 10) for t in tans] == [-0.5, 0.5]
    dec = decompose(sys)
    labels = [r.label for r in dec.regions]
    assert labels == ["crossing", "sliding", "crossing"]
    # g+ > 0 > g- between the roots: repelling
    assert dec.regions[1].attracting is False


def test_all_crossing_file():
    sys = parse_system_text("upper.fx=1\nupper.fy=-1\nlower.fx=1\nlower.fy=-2\n")
    dec = decompose(sys)
    assert not dec.tangencies and len(dec.regions) == 1 and dec.regions[0].label == "crossing"


def test_system_file_roundtrip(tmp_path):
    sys = parse_system_text(SI3, "si3.txt")
    rec = tangency_at(sys, 0.0)
    assert rec.multiplicity == (1, 3) and rec.vis_lower == "I"
    again = parse_system_text(system_to_text(sys))
    for x in np.linspace(-1, 1, 7):
        assert np.allclose(again.upper(x, 0.3), sys.upper(x, 0.3))
        assert np.allclose(again.lower(x, -0.3), sys.lower(x, -0.3))
    assert again.domain == sys.domain


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("upper.fx = 1\nupper.fy = (x\nlower.fx=1\nlower.fy=1\n", 2, "upper.fy"),
        ("upper.fx = 1\nupper.fx = 2\n", 2, "duplicate"),
        ("upper.fx = 1\nbogus = 2\n", 2, "unknown key"),
        ("upper.fx 1\n", 1, "key = value"),
        ("upper.fx=1\nupper.fy=1\nlower.fx=1\nlower.fy=1\ndomain = 1 2\n", 5, "four numbers"),
        ("upper.fx=1\nupper.fy=1\nlower.fx=1\n", 0, "missing keys"),
        ("upper.fx=1\nupper.fy=1\nlower.fx=1\nlower.fy=1\ndomain = 1 2 -1 1\n", 5, "neighbourhood"),
    ],
)
def test_system_file_errors(text, line, fragment):
    with pytest.raises(SystemFileError) as err:
        parse_system_text(text, "f.txt")
    assert err.value.line == line
    assert fragment in str(err.value)
    assert str(err.value).startswith(f"f.txt:{line}:" if line else "f.txt: ")


def test_tangency_multiplicity_cap_reports_high_order():
    sys = PWSSystem(ExprField("1", "1"), ExprField("-1", "x^9"))
    assert tangency_at(sys, 0.0).multiplicity == (0, 9)


def test_lower_sign_consistency():
    for kind, ms in (("S-I", (1, 3, 5)), ("S-V", (1, 3)), ("S-L", (2, 4)), ("S-R", (2, 4))):
        for m in ms:
            scn = sc.make_scenario(kind, m)
            rec = tangency_at(scn.system, 0.0)
            assert rec.vis_lower == kind[-1], (kind, m)
            assert math.isclose(abs(scn.s), 1.0)
