import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwsgrazing import scenarios as sc
from pwsgrazing import unfold as uf
from pwsgrazing.system import tangency_at

SPEC = uf.CutoffSpec(0.0, 1.0)


def test_eta_values():
    assert uf.eta(0.5, SPEC) == 0.0
    assert uf.eta(0.25, SPEC) == pytest.approx(8.0 / 3.0, rel=1e-15)
    assert uf.eta(1e-9, SPEC) > 1e8
    for x in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            uf.eta(x, SPEC)
    with pytest.raises(ValueError):
        uf.CutoffSpec(1.0, 1.0)


def test_cutoff_values_and_saturation():
    assert uf.cutoff_up(0.0, SPEC) == 0.0
    assert uf.cutoff_up(1.0, SPEC) == 1.0
    assert uf.cutoff_up(0.5, SPEC) == 0.5
    assert uf.cutoff_up(-3.0, SPEC) == 0.0 and uf.cutoff_up(4.0, SPEC) == 1.0
    # near the pole exp(eta) overflows; the value saturates to 0 without warnings
    assert uf.cutoff_up(1e-3, SPEC) < 1e-200


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 1.5))
def test_cutoff_partition_and_range(x):
    u, d = uf.cutoff_up(x, SPEC), uf.cutoff_down(x, SPEC)
    assert 0.0 <= u <= 1.0 and 0.0 <= d <= 1.0
    assert abs(u + d - 1.0) <= 1e-15


@pytest.mark.parametrize("at", [0.0, 1.0])
def test_cutoff_flat_at_breakpoints(at):
    h = 1e-3
    xs = at + h * np.arange(-4, 5)
    v = np.array([uf.cutoff_up(x, SPEC) for x in xs])
    for k in range(1, 5):
        d = np.diff(v, k) / h**k
        assert np.max(np.abs(d[len(d) // 2 - 1 : len(d) // 2 + 1])) < 1e-6


PARAMS = uf.UnfoldingParams.bumps([-0.3, -0.1, 0.1, 0.2, 0.4, 0.45, 0.5], [2e-4, 1e-5, 3e-6])


def test_psi_peaks_and_support():
    b = PARAMS.breakpoints
    for j, hgt in enumerate(PARAMS.heights):
        assert uf.psi(b[2 * j + 1], PARAMS) == hgt
    for x in (-1.0, b[0], b[-1], 0.9):
        assert uf.psi(x, PARAMS) == 0.0
    zero = uf.UnfoldingParams()
    assert all(uf.psi(x, zero) == 0.0 for x in np.linspace(-1, 1, 11))
    bad = uf.UnfoldingParams(0.0, [], 1, [0.2, 0.1, 0.3, 1e-3], [1.0])
    assert not bad.valid and uf.psi(0.15, bad) == 0.0


def _psi_mp(x, params):
    """Independent high-precision bump chain value and x-derivative.

    Rising cutoff 1/(1+exp(eta)) on (k0, k1], falling complement on (k1, k2], ...
    with eta = 1/(x-r1) + 1/(x-r2).
    """
    b = [mpmath.mpf(float(v)) for v in params.breakpoints]
    for j, hgt in enumerate(params.heights):
        lo, top, hi = b[2 * j], b[2 * j + 1], b[2 * j + 2]
        for r1, r2, sign in ((lo, top, 1), (top, hi, -1)):
            if r1 < x <= r2:
                e = 1 / (x - r1) + 1 / (x - r2)
                h = 1 / (1 + mpmath.exp(e))
                dh = mpmath.exp(e) * h * h * (1 / (x - r1) ** 2 + 1 / (x - r2) ** 2)
                return (hgt * h, hgt * dh) if sign > 0 else (hgt * (1 - h), -hgt * dh)
    return mpmath.mpf(0), mpmath.mpf(0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.35, 0.55))
def test_psi_and_prime_match_high_precision(x):
    b = PARAMS.breakpoints
    if np.min(np.abs(b - x)) < 1e-3:
        return
    # 400 digits keep 1 - h exact down to exp(-700), the kernel's clip
    with mpmath.workdps(400):
        xm = mpmath.mpf(x)
        v, dv = _psi_mp(xm, PARAMS)
        if abs(v) > 1e-20:
            # the oracle's closed-form derivative agrees with numerical differentiation
            assert abs(mpmath.diff(lambda t: _psi_mp(t, PARAMS)[0], xm) - dv) <= 1e-20 * abs(dv) + 1e-40
    assert uf.psi(x, PARAMS) == pytest.approx(float(v), rel=1e-12, abs=1e-300)
    assert uf.psi_prime(x, PARAMS) == pytest.approx(float(dv), rel=1e-10, abs=1e-300)


def test_psi_table_shape():
    tab = uf.psi_table(np.linspace(-0.5, 0.6, 23), PARAMS)
    assert tab.shape == (23, 2)


def test_bumps_rejects_wrong_length():
    with pytest.raises(ValueError):
        uf.UnfoldingParams.bumps([0.0, 0.1], [1e-5])
    with pytest.raises(ValueError):
        uf.UnfoldingParams(0.0, [], 2, [0.0, 0.1, 0.2])


def test_params_json_roundtrip():
    p = uf.UnfoldingParams.bumps([0, 0.1, 0.2], [1e-6], alpha=-1e-4, lam=[0.0, 0.02, -0.01])
    q = uf.UnfoldingParams.from_json(p.to_json())
    assert q == p


# ----------------------------------------------------------------------------- systems

BASE = sc.make_scenario("S-I", 3).normal_form


def test_zero_params_reproduce_base():
    sys = uf.build_unfolded(BASE, uf.UnfoldingParams(0.0, [0.0] * 3))
    base = BASE.system()
    for x in np.linspace(-1.5, 1.5, 50):
        for y in np.linspace(-1.5, 1.5, 50):
            assert np.allclose(sys.upper(x, y), base.upper(x, y), atol=1e-14, rtol=0)
            assert np.allclose(sys.lower(x, y), base.lower(x, y), atol=1e-14, rtol=0)


def test_alpha_shift_semantics():
    sys = uf.build_unfolded(BASE, uf.UnfoldingParams(0.01, [0.0] * 3))
    for x, y in [(0.3, 0.2), (-0.7, 1.1)]:
        assert np.allclose(sys.upper(x, y), BASE.upper(x, y + 0.01), atol=1e-15)


def test_lower_field_recomputation():
    lam = [-0.05, 0.0, 0.07]
    p = uf.UnfoldingParams.bumps([-0.3, -0.1, 0.1], [1e-3], lam=lam)
    sys = uf.build_unfolded(BASE, p)
    for x, y in [(-0.2, -0.3), (-0.05, -0.1), (0.02, -0.5)]:
        s, sd = uf.psi(x, p), uf.psi_prime(x, p)
        assert sd != 0.0 or x == 0.02
        fm = -1.0
        phi = -1.0
        g = phi * math.prod(x - li for li in lam) - fm * sd
        assert np.allclose(sys.lower(x, y), (fm, g), rtol=1e-13, atol=1e-15)


def test_transition_tangencies():
    base5 = sc.make_scenario("S-I", 5).normal_form
    delta = 0.02
    sys = uf.build_transition(base5, [i * delta for i in range(5)])
    for i in range(5):
        assert tangency_at(sys, i * delta).multiplicity[1] == 1
    assert uf.build_transition(base5, [0.0] * 5).lower(0.3, -0.2) == base5.system().lower(0.3, -0.2)
    rep = uf.build_transition(base5, [0.01, 0.01, 0.0, 0.2, 0.3])
    assert tangency_at(rep, 0.01).multiplicity[1] == 2


def test_not_normal_form():
    from pwsgrazing.system import parse_system_text

    sys = parse_system_text("upper.fx=1\nupper.fy=-x\nlower.fx=-1\nlower.fy=x+1\n")
    with pytest.raises(uf.NotNormalForm):
        uf.NormalForm.from_system(sys)


def test_normal_form_split():
    from pwsgrazing.system import parse_system_text

    sys = parse_system_text("upper.fx=1\nupper.fy=-x\nlower.fx=-1\nlower.fy=(2+y)*x^3\n")
    nf = uf.NormalForm.from_system(sys)
    assert nf.m == 3


# ----------------------------------------------------------------------------- admissibility


def test_admissibility_cases():
    assert uf.check_admissible(uf.UnfoldingParams()).admissible
    d = 0.05
    good = uf.UnfoldingParams.bumps([0, d, 2 * d, 3 * d, 4 * d], [d**5, d**5])
    assert uf.check_admissible(good).admissible
    bad = uf.UnfoldingParams.bumps([0, d, 2 * d], [d**3])
    rep = uf.check_admissible(bad)
    assert not rep.admissible
    assert any("spacing^4" in v for v in rep.violations)
    wrong_beta = uf.UnfoldingParams.bumps([0, d, 2 * d], [d**5], beta=[2.0])
    assert not uf.check_admissible(wrong_beta).admissible


# ----------------------------------------------------------------------------- distance


def test_distance_identical_is_zero():
    sys = BASE.system()
    assert uf.c1_distance(sys, sys, 40).total == 0.0


def test_distance_alpha_lipschitz_bound():
    base = BASE.system()
    x0, x1, y0, y1 = base.domain
    # Lipschitz constant in y of the upper field over the domain, from jets
    xs, ys = np.linspace(x0, x1, 41), np.linspace(y0, y1, 41)
    L = max(np.max(np.abs(base.upper.jacobian(x, y)[:, 1])) for x in xs for y in ys)
    for a in (1e-3, 5e-4):
        rep = uf.c1_distance(uf.build_unfolded(BASE, uf.UnfoldingParams(a, [0.0] * 3)), base, 60)
        assert rep.total <= 3 * L * a
        assert rep.total == pytest.approx(sum(rep.components.values()))


def test_distance_resolves_narrow_transitions():
    # the cutoff switches within ~spacing^2/8 of the midpoint: a coarse lattice misses psi''
    scn = sc.make_scenario("S-I", 1)
    p = sc.distance_family(scn, 0.02)
    sys = uf.build_unfolded(scn.normal_form, uf.UnfoldingParams(0.0, [0.0], p.d, p.k, p.beta))
    xs = np.linspace(-0.02, 0.02, 400001)
    tab = uf.psi_table(xs, p)
    # the lower g difference is -f- psi' with f- = -1; its x-derivative is psi''
    want = np.max(np.abs(tab[:, 1]) + np.abs(np.gradient(tab[:, 1], xs)))
    fine = uf.c1_distance(sys, scn.system, 60, refine=p).components["lower.g"]
    coarse = uf.c1_distance(sys, scn.system, 60).components["lower.g"]
    assert fine == pytest.approx(want, rel=1e-3)
    assert coarse < 1e-3 * want


def test_distance_decreases_over_halvings():
    scn = sc.make_scenario("S-I", 1)
    rows = sc.distance_sweep(scn, 0.08, 4, 80)
    rho = [r for _, r in rows]
    assert all(b < a for a, b in zip(rho, rho[1:]))


# ----------------------------------------------------------------------------- deformation


def test_deformation_identity_single_start():
    base = sc.make_scenario("S-I", 1).normal_form
    p = uf.UnfoldingParams.bumps([-0.3, -0.1, 0.1], [1e-3], lam=[0.05])
    res = uf.deformation_check(base, [0.05], p, (-0.4, -0.3), 1.0)
    assert res.max_error <= 1e-8 and res.samples > 10
