"""Canonical grazing loops and the bifurcation-count harness."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import expr as ex
from . import maps
from .fields import ExprField, ShiftedField
from .flow import DEFAULT, UPPER, Controls, integrate_arc
from .system import LOWER, PWSSystem, find_tangencies, tangency_at, visibility_from_sign
from .unfold import NormalForm, UnfoldingParams, build_unfolded, check_admissible, psi_table

TYPES = ("S-I", "S-V", "S-L", "S-R")
DOMAIN = (-2.0, 2.0, -2.0, 3.0)


class ScenarioError(ValueError):
    pass


def canonical_upper(mu: float) -> ExprField:
    """Clockwise cycle of radius 1 centred at (0, 1) with radial rate mu."""
    v = "(y-1)"
    rho = f"(1-(x^2+{v}^2))"
    return ExprField(f"{v}+{mu!r}*x*{rho}", f"-x+{mu!r}*{v}*{rho}")


def lower_sign(kind: str, m: int) -> float:
    """Sign s of the lower field (-1, s x^m) realizing the lower visibility."""
    if kind in ("S-I", "S-V"):
        if m % 2 == 0:
            raise ScenarioError(f"type {kind} needs odd m (got m={m})")
        want = "I" if kind == "S-I" else "V"
    elif kind in ("S-L", "S-R"):
        if m % 2 == 1:
            raise ScenarioError(f"type {kind} needs even m (got m={m})")
        want = "L" if kind == "S-L" else "R"
    else:
        raise ScenarioError(f"unknown type {kind!r}")
    for s in (-1.0, 1.0):
        if visibility_from_sign(LOWER, m, s, -1.0) == want:
            return s
    raise ScenarioError("no sign realizes the requested visibility")


@dataclass
class GrazingScenario:
    kind: str
    m: int
    mu: float
    s: float
    system: PWSSystem
    normal_form: NormalForm = field(repr=False, default=None)

    @property
    def ratio(self):
        """sqrt(V22/V12) of the canonical cycle."""
        return math.exp(2.0 * math.pi * self.mu)


def make_scenario(kind: str, m: int, mu: float = 0.1, domain=DOMAIN) -> GrazingScenario:
    if m < 1:
        raise ScenarioError("m must be >= 1")
    if not 0.0 < mu <= 1.0:
        raise ScenarioError("mu must lie in (0, 1]")
    s = lower_sign(kind, m)
    upper = canonical_upper(mu)
    phi = ex.num(s)
    g = ex.mul(phi, ex.Pow(ex.Var("x"), m))
    nf = NormalForm(upper, ex.num(-1.0), phi, m, tuple(domain))
    sys = PWSSystem(upper, ExprField(ex.num(-1.0), g), tuple(domain), name=f"{kind} m={m}")
    rec = tangency_at(sys, 0.0)
    if rec.multiplicity != (1, m) or rec.vis_lower != kind[-1]:
        raise ScenarioError(f"construction check failed: {rec}")
    return GrazingScenario(kind, m, mu, s, sys, nf)




# --------------------------------------------------------------------------- level function


def _is_const(e):
    return ex.is_constant_in(e, "x") and ex.is_constant_in(e, "y")


def level_polynomial(nf: NormalForm, lam):
    """Coefficients of F with F' = phi prod(x - lam) / f-, F(0) = 0.

    Lower orbits of the unfolded system are the curves y = F(x) - psi(x) + c.
    Needs constant phi and f-.
    """
    if not (_is_const(nf.phi) and _is_const(nf.fm)):
        raise ScenarioError("the level function needs constant phi and f-")
    c = ex.evaluate(nf.phi, 0.0, 0.0) / ex.evaluate(nf.fm, 0.0, 0.0)
    return npoly.polyint(npoly.polyfromroots(list(lam)) * c)


def backward_image(upper, x: float, controls: Controls = DEFAULT) -> float:
    """Backward-time return to y = 0 of the upper orbit through (x, 0)."""
    arc = integrate_arc(upper, (x, 0.0), -1, controls, UPPER, t_max=50.0)
    if arc.exit.type != "event":
        raise ScenarioError(f"backward upper orbit from x={x:g} does not return ({arc.exit.type})")
    return arc.exit.x


def forward_image(upper, x: float, controls: Controls = DEFAULT) -> float:
    arc = integrate_arc(upper, (x, 0.0), 1, controls, UPPER, t_max=50.0)
    if arc.exit.type != "event":
        raise ScenarioError(f"upper orbit from x={x:g} does not return ({arc.exit.type})")
    return arc.exit.x


# --------------------------------------------------------------------------- push (alpha, lambda_1)


def push_window(mu: float, a: float):
    """Range of |lambda_1| giving two crossing cycles near the grazing loop.

    Linearizing the upper return as a radial contraction by K = ratio^-2 and
    the lower return as a mirror about lambda_1, the fixed-point equation is
    X^2 (1-K) - 4 K L X - 4 K L^2 + 2 a (1-K) = 0 (lift a = -alpha > 0,
    L = -lambda_1 > 0); it has two positive roots for L in the returned range.
    """
    M2 = math.exp(4.0 * math.pi * mu)
    lo = math.sqrt((M2 - 1.0) ** 2 / (2.0 * M2) * a)
    hi = math.sqrt((M2 - 1.0) * a / 2.0)
    return lo, hi


@dataclass
class PushResult:
    alpha: float
    lam1: float
    window: tuple
    fixed_points: list
    tried: list = field(default_factory=list)

    @property
    def found(self):
        return len(self.fixed_points) >= 2


def _local_grid(a):
    r = math.sqrt(a)
    return np.geomspace(1e-2 * r, 8.0 * r, 90)


def push_search(scn: GrazingScenario, lam_rest, a_max: float, controls: Controls = DEFAULT, levels: int = 7):
    """Log-grid search over (alpha, lambda_1) for two near-grazing crossing cycles.

    ``lam_rest`` are the roots kept fixed. For each lift a on a decreasing
    log grid, |lambda_1| runs over log-spaced points of ``push_window``
    (centre first). A pair is accepted when the two innermost crossing
    cycles are an unstable one inside a stable one; a lone stable cycle next
    to the lifted upper cycle does not count.
    """
    tried = []
    fr = [0.5, 0.35, 0.65, 0.2, 0.8]
    for a in np.geomspace(a_max, a_max * 1e-3, levels):
        lo, hi = push_window(scn.mu, a)
        for f in fr:
            L = lo ** (1.0 - f) * hi**f
            lam = [-L] + list(lam_rest)
            sys = build_unfolded(scn.normal_form, UnfoldingParams(-a, lam))
            xs = _local_grid(a)
            rmap = maps.return_map(sys, (xs[0], xs[-1]), controls=controls, xs=xs)
            try:
                fps, _ = maps.find_fixed_points(rmap, 1e-12)
            except maps.DegenerateMap:
                fps = []
            fps = [f_ for f_ in fps if f_.loop is not None and f_.loop.kind == "crossing-periodic"]
            fps.sort(key=lambda f_: f_.x)
            ok = len(fps) >= 2 and fps[0].stability == "unstable" and fps[1].stability == "stable"
            tried.append({"alpha": -a, "lambda1": -L, "n_fixed": len(fps), "accepted": ok})
            if ok:
                return PushResult(-a, -L, (lo, hi), fps[:2], tried)
    last = tried[-1]
    return PushResult(last["alpha"], last["lambda1"], push_window(scn.mu, -last["alpha"]), [], tried)


# --------------------------------------------------------------------------- bump layout


@dataclass
class HarnessPlan:
    """Unfolding parameters producing nested critical loops around the grazing loop.

    Right of the tangency the visible lower tangencies ``visible`` (local
    maxima of F) are the tops of bumps; their backward upper images
    ``images`` are the tops of bumps on the left. ``levels[j]`` is the value
    of F - psi shared by ``visible[j]`` and ``images[j]`` before the +-offsets
    ``offsets[j]`` are applied to the right tops.
    """

    kind: str
    m: int
    delta: float
    ell: int
    params: UnfoldingParams
    push: PushResult
    visible: list
    images: list
    levels: list
    offsets: list
    level_margin: list
    theta: float
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            "kind": self.kind,
            "m": self.m,
            "delta": self.delta,
            "ell": self.ell,
            "alpha": self.params.alpha,
            "lambda": self.params.lam,
            "d": self.params.d,
            "k": self.params.k,
            "beta": self.params.beta,
            "visible": self.visible,
            "images": self.images,
            "levels": self.levels,
            "offsets": self.offsets,
            "level_margin": self.level_margin,
            "theta": self.theta,
            "push_tried": self.push.tried,
            "notes": self.notes,
        }


def transition_roots(kind: str, m: int, delta: float):
    """Equally spaced roots (i-1) delta; the root at 0 keeps the lower tangency."""
    if kind not in ("S-I", "S-R"):
        raise ScenarioError(f"the nested harness handles S-I and S-R; reduce {kind} first")
    return [i * delta for i in range(m)]


def right_skeleton(F, lam, delta):
    """Right breakpoints 0, V1, m1, V2, ..., Vq, e from the extrema of F."""
    d2 = npoly.polyder(F, 2)
    pos = sorted(v for v in lam if v > 0)
    kinds = ["max" if npoly.polyval(v, d2) < 0 else "min" for v in pos]
    if kinds and kinds[0] != "max":
        raise ScenarioError("first positive root is not a visible tangency")
    pts = pos[:]
    if kinds and kinds[-1] == "max":
        pts.append(pos[-1] + delta)
    return [0.0] + pts


def _flank_margin(F, params, lo, hi, level, n=4000, trim=0.02):
    """max of (F - psi) - level on (lo, hi) minus end pieces of relative size ``trim``."""
    w = hi - lo
    xs = np.linspace(lo + trim * w, hi - trim * w, n)
    G = npoly.polyval(xs, F) - psi_table(xs, params)[:, 0]
    return float(np.max(G - level))


def monotone_height(F, top, zero, n=4000):
    """Largest height h keeping F - h s monotone on the falling flank (top, zero).

    ``s`` is the unit falling cutoff from ``top`` to ``zero``; F - h s has no
    critical point there as long as h |s'| < |F'|.
    """
    unit = UnfoldingParams.bumps([2 * top - zero, top, zero], [1.0])
    xs = np.linspace(top, zero, n + 2)[1:-1]
    sd = np.abs(psi_table(xs, unit)[:, 1])
    fd = np.abs(npoly.polyval(xs, npoly.polyder(F)))
    ok = sd > 0
    return float(np.min(fd[ok] / sd[ok])) if np.any(ok) else math.inf


def plan_harness(
    scn: GrazingScenario,
    delta: float,
    ell: int = 0,
    theta: float = 0.5,
    offset_rel: float = 0.05,
    push_rel: float = 1e-2,
    controls: Controls = DEFAULT,
    push: PushResult | None = None,
) -> HarnessPlan:
    """Bump parameters for a loop through a (1, m) tangency of type S-I or S-R.

    The lift and lambda_1 come from ``push_search`` with lift scale
    ``push_rel * delta^2``. The outermost ``ell`` critical loops are pushed
    towards sliding (offset -a_j) and the rest towards crossing (+a_j).
    """
    m = scn.m
    lam0 = transition_roots(scn.kind, m, delta)
    if push is None:
        push = push_search(scn, lam0[1:], push_rel * delta**2, controls)
    lam = [push.lam1] + lam0[1:]
    notes = []
    if not push.found:
        notes.append("push search found fewer than two near-grazing cycles")
    F = level_polynomial(scn.normal_form, lam)
    Fv = lambda x: float(npoly.polyval(x, F))  # noqa: E731
    right = right_skeleton(F, lam0, delta)
    q = (len(right) - 1) // 2
    if not 0 <= ell <= q:
        raise ScenarioError(f"ell must lie in [0, {q}]")
    upper = ShiftedField(scn.normal_form.upper, push.alpha)
    if q == 0:
        params = UnfoldingParams(push.alpha, lam)
        return HarnessPlan(scn.kind, m, delta, ell, params, push, [], [], [], [], [], theta, notes)
    left = [backward_image(upper, r, controls) for r in right[1:]]
    V = right[1::2]
    W = left[0::2]
    zin = [0.0] + left[1::2]  # inner zero of the left bump j
    breaks = left[::-1] + right
    hl, levels = [], []
    for j in range(q):
        h = min(theta * monotone_height(F, W[j], zin[j]), (1.0 - theta) * (Fv(W[j]) - Fv(zin[j])))
        hl.append(h)
        levels.append(Fv(W[j]) - h)
    hr = [Fv(V[j]) - levels[j] for j in range(q)]
    base = UnfoldingParams.bumps(breaks, hl[::-1] + hr, push.alpha, lam)
    margins = [_flank_margin(F, base, W[j], V[j], levels[j]) for j in range(q)]
    if any(mg >= 0 for mg in margins):
        notes.append("level ordering fails on a bump flank")
    gaps = [levels[0] - Fv(0.0)] + [levels[j] - levels[j - 1] for j in range(1, q)]
    offsets = []
    for j in range(q):
        a_j = offset_rel * min(gaps[j], hl[j])
        offsets.append(-a_j if j >= q - ell else a_j)
    hr = [hr[j] + offsets[j] for j in range(q)]
    params = UnfoldingParams.bumps(breaks, hl[::-1] + hr, push.alpha, lam)
    return HarnessPlan(scn.kind, m, delta, ell, params, push, V, W, levels, offsets, margins, theta, notes)


# --------------------------------------------------------------------------- counting run


def expected_bound(kind: str, m: int, ell: int) -> int:
    """Lower bound on crossing cycles guaranteed with ell sliding loops."""
    if kind == "S-I":
        return m + 1 - ell
    if kind == "S-R":
        return m + 2 - ell
    raise ScenarioError(f"no counting bound for type {kind}")


def count_grid(plan: HarnessPlan, n_far: int = 200, n_vis: int = 25):
    """Landing abscissas for the return map: log-dense near the tangency and near each visible point."""
    r = math.sqrt(max(-plan.params.alpha, 1e-300))
    right = plan.params.breakpoints[-1] if plan.params.d else 10.0 * r
    xs = list(_local_grid(r * r)) + list(np.linspace(8.0 * r, right, n_far))
    span = plan.delta * 0.4
    for v in plan.visible:
        off = np.geomspace(1e-7 * plan.delta, span, n_vis)
        xs += list(v - off) + list(v + off)
    xs = np.unique(np.array(xs))
    return xs[(xs > 0) & (xs < right)]


@dataclass
class HarnessReport:
    kind: str
    m: int
    ell: int
    bound: int
    beta_c: int
    beta_s: int
    satisfied: bool
    nested: bool
    nesting: list
    missing: list
    plan: dict
    admissibility: dict
    elapsed: float = 0.0

    def as_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, default=float)


def _expected_inventory(plan: HarnessPlan):
    """Names of the loops the construction is designed to produce, inner first."""
    names = ["unstable near-grazing cycle", "stable near-grazing cycle"]
    q = len(plan.visible)
    for j in range(q):
        names.append(f"cycle between loop {j} and critical loop {j + 1}")
        if plan.offsets[j] < 0:
            names.append(f"sliding loop at visible point {j + 1} (x={plan.visible[j]:.6g})")
        else:
            names.append(f"cycle near critical loop {j + 1} (x={plan.visible[j]:.6g})")
    return names


def run_theorem1(
    kind: str,
    m: int,
    ell: int = 0,
    delta: float = 0.05,
    mu: float = 0.1,
    controls: Controls | None = None,
    plan: HarnessPlan | None = None,
):
    """Build the nested unfolding for a (1, m) grazing loop and count the loops it bifurcates."""
    import time

    t0 = time.perf_counter()
    controls = controls or DEFAULT.with_(max_time=30.0)
    scn = make_scenario(kind, m, mu)
    if plan is None:
        plan = plan_harness(scn, delta, ell, controls=controls)
    sys = build_unfolded(scn.normal_form, plan.params)
    xs = count_grid(plan)
    window = (float(xs[0]), float(xs[-1]))
    cnt = maps.count_bifurcations(sys, window, controls, xs=xs)
    bound = expected_bound(kind, m, ell)
    areas = [abs(e["area"]) for e in cnt.nesting]
    nested = all(b > a for a, b in zip(areas, areas[1:]))
    expect = _expected_inventory(plan)
    found = len(cnt.nesting)
    missing = expect[found:] if found < len(expect) else []
    adm = check_admissible(plan.params)
    rep = HarnessReport(
        kind,
        m,
        ell,
        bound,
        cnt.beta_c,
        cnt.beta_s,
        cnt.beta_c >= bound and cnt.beta_s >= ell,
        nested,
        cnt.nesting,
        missing,
        plan.as_dict(),
        {"admissible": adm.admissible, "violations": adm.violations},
        time.perf_counter() - t0,
    )
    return rep, cnt, sys


# --------------------------------------------------------------------------- m = 3 shooting analysis


def kappa_h(s, r1):
    return 3.0 * s * s - 4.0 * (1.0 + r1) * s + 6.0 * r1


def kappa_roots(r1):
    """Closed-form simple roots at r2 = 1 (the double root 1 is the tangency itself)."""
    disc = 4.0 * r1 * r1 + 2.0 * r1 - 2.0
    if disc < 0:
        raise ScenarioError(f"complex roots for r1={r1}")
    sq = math.sqrt(disc)
    return (2.0 * r1 - 1.0 + sq) / 3.0, (2.0 * r1 - 1.0 - sq) / 3.0


@dataclass
class KappaProblem:
    r1: float = 2.0
    r2: float = 1.0
    deltas: tuple = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
    branch: str = "backward"  # backward: p2 > p1; forward: p2 < p1
    phi: float = -1.0
    fm: float = -1.0
    p2: list = field(default_factory=list)
    kappa: float = float("nan")
    residual: float = float("nan")

    def __post_init__(self):
        if self.r1 < 0.5:
            raise ScenarioError("r1 must be >= 1/2")
        if self.r2 <= 0:
            raise ScenarioError("r2 must be positive")
        if self.branch not in ("forward", "backward"):
            raise ScenarioError("branch is 'forward' or 'backward'")


def shoot_p2(r1, r2, delta, branch="backward", phi=-1.0, fm=-1.0, rtol=1e-12):
    """Second zero of the lower Cauchy solution through (p1, 0), p1 = -r2 delta.

    Integrates dy/dx = phi/f- (x + r1 delta)(x + delta) x from y(p1) = 0 and
    locates the first return of y to zero on the requested side of p1.
    """
    from scipy.integrate import solve_ivp
    from scipy.optimize import brentq

    c = phi / fm
    p1 = -r2 * delta

    def rhs(x, y):
        return [c * (x + r1 * delta) * (x + delta) * x]

    sgn = 1.0 if branch == "backward" else -1.0
    span = max(4.0 * (r1 + r2), 8.0) * delta
    x_end = p1 + sgn * span
    scale = delta**4 * max(1.0, r1, r2) ** 4
    sol = solve_ivp(rhs, (p1, x_end), [0.0], method="DOP853", rtol=rtol, atol=1e-14 * scale, dense_output=True)
    xs = np.linspace(p1, x_end, 4001)[1:]
    ys = sol.sol(xs)[0]
    # skip the departure: y leaves zero quadratically at a tangency, linearly otherwise
    start = np.argmax(np.abs(ys) > 1e-9 * np.max(np.abs(ys)))
    for i in range(max(start, 1), len(xs)):
        if ys[i - 1] * ys[i] < 0:
            return brentq(lambda u: sol.sol(u)[0], xs[i - 1], xs[i], xtol=1e-16 * delta, rtol=1e-15)
    raise ScenarioError(f"no second intersection for r2={r2} on the {branch} branch")


def richardson(hs, vals):
    """Extrapolate vals(h) to h = 0 by a polynomial in h through all samples."""
    hs = np.asarray(hs, float)
    vals = np.asarray(vals, float)
    deg = len(hs) - 1
    coef = np.polyfit(hs, vals, deg)
    return float(coef[-1])


def kappa_estimate(prob: KappaProblem) -> KappaProblem:
    """kappa = p2'(0) by shooting at each delta plus Richardson extrapolation."""
    prob.p2 = [shoot_p2(prob.r1, prob.r2, d, prob.branch, prob.phi, prob.fm) for d in prob.deltas]
    ratios = [p / (-prob.r2 * d) for p, d in zip(prob.p2, prob.deltas)]
    prob.kappa = richardson(prob.deltas, ratios)
    lhs = prob.kappa**2 * kappa_h(prob.kappa * prob.r2, prob.r1)
    rhs = kappa_h(prob.r2, prob.r1)
    prob.residual = abs(lhs - rhs) / abs(rhs)
    return prob


# --------------------------------------------------------------------------- m = 3 construction


@dataclass
class M3Plan:
    r1: float
    delta: float
    lam: list
    alpha: float
    P1: float
    P2: float
    P2_plus: float
    p11: float
    p21_plus: float
    p12: float
    p22_plus: float
    inequalities: dict
    expected: str  # "(>=4, 0)" or "(>=3, 1)"
    push: PushResult = field(repr=False, default=None)

    def as_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "push"}
        d["push_tried"] = self.push.tried if self.push else []
        return d


def _level_roots(F, level, lo, hi, n=20000):
    xs = np.linspace(lo, hi, n)
    v = npoly.polyval(xs, F) - level
    out = []
    for i in range(1, n):
        if v[i - 1] * v[i] < 0:
            from scipy.optimize import brentq

            out.append(brentq(lambda u: npoly.polyval(u, F) - level, xs[i - 1], xs[i], xtol=1e-17, rtol=1e-15))
    return out


def m3_points(scn, r1, delta, upper, r21=10.0, r22=0.5, controls: Controls = DEFAULT):
    """P1, P2, P2+ and the two test pairs of the m = 3 construction (psi = 0)."""
    lam = [-r1 * delta, -delta, 0.0]
    F = level_polynomial(scn.normal_form, lam)
    lv = npoly.polyval(-delta, F)
    left = _level_roots(F, lv, -(r1 + 6) * delta, -delta - 1e-9 * delta)
    right = _level_roots(F, lv, -delta + 1e-9 * delta, 6 * delta)
    P1 = max(x for x in left if x < -r1 * delta)
    P2 = min(x for x in right if x > 0)
    P2p = backward_image(upper, P2, controls)
    out = {"P1": P1, "P2": P2, "P2_plus": P2p}
    for tag, r2 in (("1", r21), ("2", r22)):
        p1 = -r2 * delta
        p2 = shoot_p2(r1, r2, delta, "backward", float(ex.evaluate(scn.normal_form.phi, 0, 0)), -1.0)
        out[f"p1{tag}"] = p1
        out[f"p2{tag}_plus"] = backward_image(upper, p2, controls)
    return out


def plan_m3(scn: GrazingScenario, r1: float = 2.0, delta: float = 0.05, controls: Controls = DEFAULT, push_rel=1e-2):
    if scn.kind != "S-I" or scn.m != 3:
        raise ScenarioError("the m = 3 construction needs an S-I scenario with m = 3")
    for r in [r1] + [r1 * f for f in (1.5, 2.0, 3.0, 4.0)]:
        if 4 * r * r + 2 * r - 2 <= 0:
            continue
        pts = m3_points(scn, r, delta, scn.normal_form.upper, controls=controls)
        ineq = {
            "P1 < P2+": pts["P1"] < pts["P2_plus"],
            "p11 > p21+": pts["p11"] > pts["p21_plus"],
            "p12 > p22+": pts["p12"] > pts["p22_plus"],
        }
        if all(ineq.values()):
            break
    else:
        raise ScenarioError(f"inequalities fail for every r1 tried at delta={delta}: {ineq}")
    push = push_search(scn, [-r * delta, -delta], push_rel * delta**2, controls)
    lam = [-r * delta, -delta, push.lam1]
    expected = "(>=4, 0)" if pts["P2_plus"] > -delta else "(>=3, 1)"
    return M3Plan(
        r, delta, lam, push.alpha, pts["P1"], pts["P2"], pts["P2_plus"],
        pts["p11"], pts["p21_plus"], pts["p12"], pts["p22_plus"], ineq, expected, push,
    )


def run_m3_construction(scn: GrazingScenario, r1: float = 2.0, delta: float = 0.05, controls: Controls | None = None):
    """Count loops of the m = 3 construction (psi = 0); returns (plan, count, system)."""
    controls = controls or DEFAULT.with_(max_time=30.0)
    plan = plan_m3(scn, r1, delta, controls)
    params = UnfoldingParams(plan.alpha, plan.lam)
    sys = build_unfolded(scn.normal_form, params)
    r = math.sqrt(-plan.alpha)
    far = 6.0 * delta
    xs = list(_local_grid(-plan.alpha)) + list(np.linspace(8.0 * r, far, 200))
    off = np.geomspace(1e-7 * delta, 0.3 * delta, 25)
    xs += list(plan.P2 - off) + list(plan.P2 + off)
    xs = np.unique(np.array(xs))
    xs = xs[(xs > 0) & (xs <= far)]
    cnt = maps.count_bifurcations(sys, (float(xs[0]), float(xs[-1])), controls, xs=xs)
    return plan, cnt, sys


# --------------------------------------------------------------------------- literal nested layout


@dataclass
class Step2Layout:
    """The literal layout: A-points, Cauchy targets and the height table.

    ``theta_bounds`` is (min, max) of Theta_n / delta^m over [A_1, A_{2m-1}]
    for every n used by the table; ``heights`` follows the assignment with
    Theta_{m+1-2i}(A_{2i}) left of the tangency and Theta_{2i-m+1}(A_{2i})
    right of it.
    """

    m: int
    delta: float
    lam: list
    A: list
    M: list
    C: dict
    heights: list
    theta_bounds: dict
    theta_negative: bool
    params: UnfoldingParams = field(repr=False, default=None)

    def as_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "params"}
        d["k"] = self.params.k if self.params else []
        return d


def step2_layout(scn: GrazingScenario, delta: float, controls: Controls = DEFAULT, n_grid: int = 4001) -> Step2Layout:
    m = scn.m
    if scn.kind != "S-I" or m < 5 or m % 2 == 0:
        raise ScenarioError("the literal layout is defined for S-I with odd m >= 5")
    lam = [i * delta for i in range(m)]
    upper = scn.normal_form.upper
    minus = [backward_image(upper, lam[i], controls) for i in range(m - 1, 0, -1)]
    A = minus + lam
    M = [abs(A[n - 1]) / A[2 * m - n - 1] for n in range(1, m)]
    F = level_polynomial(scn.normal_form, lam)
    F1 = float(npoly.polyval(A[0], F))
    C = {n: -(delta**m) * (1.0 + n * delta) for n in range(1, m)}

    def theta(n, x):
        return npoly.polyval(x, F) - F1 + C[n]

    heights = []
    for i in range(1, m):
        n = m + 1 - 2 * i if i <= (m - 1) // 2 else 2 * i - m + 1
        heights.append(float(theta(n, A[2 * i - 1])))
    xs = np.linspace(A[0], A[-1], n_grid)
    used = sorted(set(m + 1 - 2 * i for i in range(1, (m + 1) // 2)) | set(2 * i - m + 1 for i in range((m + 1) // 2, m)))
    bounds = {n: (float(np.min(theta(n, xs)) / delta**m), float(np.max(theta(n, xs)) / delta**m)) for n in used}
    neg = all(b[1] < 0 for b in bounds.values())
    params = UnfoldingParams.bumps(A, heights, 0.0, lam)
    return Step2Layout(m, delta, lam, A, M, C, heights, bounds, neg, params)


def require_zero_k(m: int, params: UnfoldingParams):
    """Bumps are not available for m in {2, 3}: psi must vanish identically."""
    if m in (2, 3) and params.d and any(v != 0.0 for v in params.heights):
        raise ScenarioError(f"nonzero k is invalid for m={m}; psi must be identically zero")


# --------------------------------------------------------------------------- reductions


@dataclass
class Reduction:
    source: str
    target: str
    lam: list
    at_origin: object
    extra: object
    system: PWSSystem = field(repr=False, default=None)


def reduce_type(scn: GrazingScenario, eps: float = 1e-2) -> Reduction:
    """Split one root of the lower product away from the origin.

    S-V (odd m) becomes an S-L loop with a (1, m-1) left tangency at the
    origin plus a visible (0, 1) point; S-R with m = 2 becomes S-I with an
    invisible (1, 1) origin plus a visible (0, 1) point. The side of the
    split is the one whose re-classification matches.
    """
    from .unfold import build_transition

    if scn.kind == "S-V":
        want0, target = ((1, scn.m - 1), "L"), "S-L"
    elif scn.kind == "S-R" and scn.m == 2:
        want0, target = ((1, 1), "I"), "S-I"
    else:
        raise ScenarioError(f"no reduction for {scn.kind} with m={scn.m}")
    seen = []
    for e in (eps, -eps):
        lam = [0.0] * (scn.m - 1) + [e]
        sys = build_transition(scn.normal_form, lam)
        rec0 = tangency_at(sys, 0.0)
        rec1 = tangency_at(sys, e)
        seen.append((e, rec0.kind, rec1.kind))
        if rec0.multiplicity == want0[0] and rec0.vis_lower == want0[1] and rec1.multiplicity == (0, 1) and rec1.vis_lower == "V":
            return Reduction(scn.kind, target, lam, rec0, rec1, sys)
    raise ScenarioError(f"re-classification mismatch after splitting: {seen}")


# --------------------------------------------------------------------------- distance sweeps


def distance_family(scn: GrazingScenario, delta: float) -> UnfoldingParams:
    """psi-only unfolding: one bump of spacing delta, height delta^6, alpha = delta^3, lambda = 0.

    The cutoff switches within ~delta^2 so psi'' ~ height / delta^4; height
    delta^6 makes the C^1 distance O(delta^2).
    """
    return UnfoldingParams.bumps([-delta, 0.0, delta], [delta**6], alpha=delta**3, lam=[0.0] * scn.m)


def distance_sweep(scn: GrazingScenario, delta0: float, halvings: int = 5, grid_n: int = 200):
    """C^1 distance to the base system for delta0, delta0/2, ...; returns [(delta, rho), ...]."""
    from .unfold import c1_distance

    base = scn.system
    rows = []
    for i in range(halvings + 1):
        d = delta0 / 2.0**i
        params = distance_family(scn, d)
        sys = build_unfolded(scn.normal_form, params)
        rows.append((d, c1_distance(sys, base, grid_n, refine=params).total))
    return rows
