"""Transition maps, return maps on y = 0, fixed points and loop counting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import flow as fl
from .fields import Field
from .flow import DEFAULT, Controls, LoopRecord
from .system import PWSSystem, find_roots

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


class SectionMissed(RuntimeError):
    pass


@dataclass(frozen=True)
class Section:
    base: tuple
    direction: tuple = (1.0, 0.0)
    half_width: float = 0.1

    def __post_init__(self):
        n = np.asarray(self.direction, float)
        nrm = float(np.hypot(*n))
        if nrm == 0.0:
            raise ValueError("section direction must be nonzero")
        object.__setattr__(self, "direction", tuple(n / nrm))
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))

    def point(self, r):
        return np.array(self.base) + r * np.array(self.direction)

    def line(self):
        """Coefficients (a, b, c) of the carrier line a*x + b*y + c = 0."""
        nx, ny = self.direction
        bx, by = self.base
        return -ny, nx, ny * bx - nx * by

    def coordinate(self, p):
        return float(np.dot(np.asarray(p) - np.array(self.base), np.array(self.direction)))

    def flipped(self):
        return Section(self.base, tuple(-v for v in self.direction), self.half_width)


# --------------------------------------------------------------------------- transitions


def _line_value(sec: Section, p):
    a, b, c = sec.line()
    return a * p[0] + b * p[1] + c


def _to_section(fld: Field, start, target: Section, direction, controls: Controls, max_hits=16):
    """Arc from ``start`` to the first crossing of ``target`` inside its width."""
    a, b, c = target.line()
    p = np.asarray(start, float)
    z0 = _line_value(target, p)
    sgn_z = 1.0 if z0 > 0 else -1.0
    t_used = 0.0
    arcs = []
    for _ in range(max_hits):
        ev = (a, b, c, -int(sgn_z))
        arc = fl.integrate_arc(
            fld,
            p,
            direction,
            controls,
            regime=fl.FREE,
            t0=t_used,
            t_max=controls.max_time - t_used,
            event=ev,
            dead_t=None if arcs else 0.0,
        )
        arcs.append(arc)
        t_used = arc.t1
        if arc.exit.type != "event":
            raise SectionMissed(f"orbit from {tuple(start)} missed the section ({arc.exit.type})")
        q = arc.end
        s = target.coordinate(q)
        if abs(s) <= target.half_width:
            return arcs, q, s
        p = q
        sgn_z = -sgn_z
    raise SectionMissed(f"orbit from {tuple(start)} crossed the carrier line {max_hits} times outside the section")


def transition_numeric(fld: Field, s0: Section, s1: Section, r: float, controls: Controls = DEFAULT, direction=1):
    """Signed displacement along N1 of the orbit from S0(r) at S1."""
    _, _, s = _to_section(fld, s0.point(r), s1, direction, controls)
    return s


def divergence_integral(fld: Field, arcs) -> float:
    """Integral of div Z along the arcs (Gauss-Legendre on each dense step)."""
    total = 0.0
    for arc in arcs:
        ts, hs, rc = arc._stack()
        if len(ts) == 0:
            continue
        for t0, h in zip(ts, hs):
            tq = arc.t0 + t0 + 0.5 * h * (_GL_X + 1.0)
            pts = arc.at(tq)
            vals = np.array([fld.divergence(px, py) for px, py in pts])
            total += 0.5 * h * float(np.dot(_GL_W, vals))
    return total


@dataclass
class TransitionRecord:
    source: Section
    target: Section
    direction: int
    T: float
    r: list = field(default_factory=list)
    V: list = field(default_factory=list)
    v2_fit: float = float("nan")
    fit_residual: float = float("nan")
    fit_slope: float = float("nan")
    v2_closed: float = float("nan")
    v2_magnitude: float = float("nan")
    base_sign: int = 0
    calibrated_sign: int = 0
    g_x: float = float("nan")
    delta1: float = float("nan")
    delta1_at_base: float = float("nan")
    div_integral: float = float("nan")
    offset: float = 0.0

    def as_dict(self):
        d = asdict(self)
        d["source"] = asdict(self.source)
        d["target"] = asdict(self.target)
        return d


def v2_closed_form(fld: Field, s0: Section, s1: Section, controls: Controls = DEFAULT, direction=1) -> TransitionRecord:
    """Closed-form quadratic coefficient of the transition map.

    Flux transport gives ``V2 = -g_x N01^2 exp(int div) / (2 det(Z(p1), N1))``
    with the determinant at the exit point p1.  The magnitude is returned as
    authoritative; ``base_sign`` is the sign of ``g_x / (2 det(Z(p0), N1))``
    and ``calibrated_sign`` the sign measured from a numeric sample.
    """
    sg = 1 if direction >= 0 else -1
    x0, y0 = s0.base
    f0, g0 = fld(x0, y0)
    jac = fld.jacobian(x0, y0)
    gx = sg * jac[1, 0]
    if abs(g0) > 1e-9 * max(1.0, abs(f0)):
        raise ValueError(f"g must vanish at the section base (g = {g0:g})")
    if gx == 0.0:
        raise ValueError("dg/dx vanishes at the section base")
    arcs, p1, s_base = _to_section(fld, s0.base, s1, direction, controls)
    T = arcs[-1].t1
    div = sg * divergence_integral(fld, arcs)
    n1 = np.array(s1.direction)
    z1 = sg * np.array(fld(*p1))
    z0 = sg * np.array([f0, g0])
    delta1 = float(z1[0] * n1[1] - z1[1] * n1[0])
    delta_b = float(z0[0] * n1[1] - z0[1] * n1[0])
    n01 = s0.direction[0]
    v2 = -gx * n01 * n01 * math.exp(div) / (2.0 * delta1)
    rec = TransitionRecord(s0, s1, sg, T, offset=s_base)
    rec.v2_magnitude = abs(v2)
    rec.g_x = gx
    rec.delta1 = delta1
    rec.delta1_at_base = delta_b
    rec.div_integral = div
    rec.base_sign = int(np.sign(gx / delta_b)) if delta_b != 0.0 else 0
    # sign calibration from one small sample
    r = 1e-3 * s0.half_width / 0.1 if s0.half_width < 0.1 else 1e-3
    vs = transition_numeric(fld, s0, s1, r, controls, direction) - s_base
    rec.calibrated_sign = int(np.sign(vs)) if vs != 0.0 else int(np.sign(v2))
    rec.v2_closed = rec.calibrated_sign * rec.v2_magnitude
    return rec


def fit_v2(r, V, offset=0.0):
    """Quadratic coefficient of V(r) - offset from samples.

    Fits (V - offset)/r^2 = V2 + c3*r + c4*r^2 by least squares; the
    intercept is V2.  Returns ``(V2, residual, loglog_slope)``.
    """
    r = np.asarray(r, float)
    V = np.asarray(V, float) - offset
    if len(r) < 6 or not (np.any(r > 0) and np.any(r < 0)):
        raise ValueError("need at least 6 samples with both signs of r")
    q = V / r**2
    A = np.column_stack([np.ones_like(r), r, r**2])
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - q) ** 2)))
    v2 = float(coef[0])
    if resid > 0.1 * abs(v2):
        raise ValueError(f"samples too noisy: residual {resid:g} vs intercept {v2:g}")
    ar = np.abs(r)
    good = np.abs(V) > 0
    slope = float(np.polyfit(np.log(ar[good]), np.log(np.abs(V[good])), 1)[0])
    return v2, resid, slope


def transition_record(fld: Field, s0: Section, s1: Section, rs=None, controls: Controls = DEFAULT, direction=1):
    rec = v2_closed_form(fld, s0, s1, controls, direction)
    if rs is None:
        mags = np.geomspace(1e-3, 1e-2, 6) * (s0.half_width / 0.1 if s0.half_width < 0.1 else 1.0)
        rs = np.concatenate([-mags[::-1], mags])
    rec.r = [float(v) for v in rs]
    rec.V = [transition_numeric(fld, s0, s1, rr, controls, direction) for rr in rs]
    rec.v2_fit, rec.fit_residual, rec.fit_slope = fit_v2(rec.r, rec.V, rec.offset)
    return rec


@dataclass
class GrazingRatio:
    from_fits: float
    from_divergence: float
    V12: float
    V22: float
    T1: float
    T2: float
    relative_gap: float

    def as_dict(self):
        return asdict(self)


class RatioMismatch(RuntimeError):
    pass


def grazing_ratio(fld: Field, tangent=(0.0, 0.0), far=None, eps=0.1, controls: Controls = DEFAULT, rtol=1e-4):
    """sqrt(V22/V12) for a cycle tangent to y = 0, computed two ways.

    S1/S2 are horizontal sections at the tangent point (left/right halves),
    S3 a horizontal section through ``far``.  S1 -> S3 is followed forward,
    S2 -> S3 backward.  The second path is exp(-1/2 int_{T2}^{T1} div).
    """
    if far is None:
        raise ValueError("a far point (a, b) on the cycle is required")
    s0 = Section(tangent, (1.0, 0.0), eps)
    s3 = Section(far, (1.0, 0.0), eps)
    r1 = transition_record(fld, s0, s3, controls=controls, direction=1)
    r2 = transition_record(fld, s0, s3, controls=controls, direction=-1)
    fits = math.sqrt(r2.v2_fit / r1.v2_fit)
    # the backward record stores the integral of the reversed field's divergence
    div_total = r1.div_integral - r2.div_integral
    integ = math.exp(-0.5 * div_total)
    gap = abs(fits - integ) / abs(integ)
    out = GrazingRatio(fits, integ, r1.v2_fit, r2.v2_fit, r1.T, -r2.T, gap)
    if gap > rtol:
        raise RatioMismatch(f"ratio paths disagree: fits {fits:.10g} vs divergence {integ:.10g}")
    return out


# --------------------------------------------------------------------------- return maps

CROSSING = "crossing"
SLIDING_RET = "sliding"
TANGENCY_HIT = "tangency-hit"
ESCAPE = "escape"


def _annotate(orbit: fl.Orbit, returned: bool):
    if not returned:
        if orbit.status == fl.AT_TANGENCY:
            return TANGENCY_HIT
        return ESCAPE
    if any(a.regime == fl.SLIDING for a in orbit.arcs):
        return SLIDING_RET
    if any(e.tangent and e.type != "touch" for e in orbit.junctions[:-1]):
        return TANGENCY_HIT
    return CROSSING


@dataclass
class ReturnResult:
    x: float
    R: float
    annotation: str
    orbit: fl.Orbit | None = None


def first_return(sys: PWSSystem, x: float, controls: Controls = DEFAULT, keep=False) -> ReturnResult:
    """Next arrival from the upper side after arriving at (x, 0) from above."""
    d = fl.continue_filippov(sys, x, fl.UPPER, 1, controls)
    if d.next_regime is None:
        return ReturnResult(x, math.nan, TANGENCY_HIT)

    def stop(ev, orbit):
        return ev.regime_in == fl.UPPER

    orbit = fl.flow(
        sys, (x, 0.0), 1, controls, regime=d.next_regime, stop_on_closure=False, stop=stop, dead_t=d.dead_t or None
    )
    returned = orbit.status == "stopped"
    ann = _annotate(orbit, returned)
    if d.tangent and ann == CROSSING and d.event_type != "touch":
        ann = TANGENCY_HIT
    if d.next_regime == fl.SLIDING and returned:
        ann = SLIDING_RET
    R = orbit.junctions[-1].x if returned else math.nan
    return ReturnResult(x, R, ann, orbit if keep else None)


@dataclass
class ReturnMap:
    sys: PWSSystem
    interval: tuple
    x: np.ndarray
    R: np.ndarray
    annotation: list
    controls: Controls = DEFAULT

    def evaluate(self, x, keep=False):
        return first_return(self.sys, x, self.controls, keep)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "R", "annotation"])
            for x, r, a in zip(self.x, self.R, self.annotation):
                w.writerow([f"{x:.15g}", f"{r:.15g}", a])


def _return_chunk(args):
    sys, xs, controls = args
    return [first_return(sys, float(x), controls) for x in xs]


def return_map(sys: PWSSystem, interval, n: int = 200, controls: Controls = DEFAULT, xs=None, jobs: int = 1) -> ReturnMap:
    if n < 2 and xs is None:
        raise ValueError("need at least two samples")
    xs = np.linspace(interval[0], interval[1], n) if xs is None else np.asarray(xs, float)
    if jobs > 1 and len(xs) > jobs:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(xs, jobs)
        with ProcessPoolExecutor(jobs) as pool:
            parts = pool.map(_return_chunk, [(sys, c, controls) for c in chunks])
            res = [r for part in parts for r in part]
    else:
        res = [first_return(sys, float(x), controls) for x in xs]
    return ReturnMap(sys, tuple(interval), xs, np.array([r.R for r in res]), [r.annotation for r in res], controls)


@dataclass
class FixedPoint:
    x: float
    stability: str  # stable | unstable | neutral
    slope: float
    residual: float
    loop: LoopRecord | None = None


class DegenerateMap(ValueError):
    pass


def _refine(rmap: ReturnMap, a, fa, b, fb, tol):
    for _ in range(200):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        rm = rmap.evaluate(m)
        if rm.annotation != CROSSING or not math.isfinite(rm.R):
            return None, (a, b)
        fm = rm.R - m
        if fm == 0.0:
            return m, None
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    # discontinuity: the jump does not shrink with the bracket
    if abs(fa - fb) > 1e3 * max(tol, 1e-12) + 10 * (b - a):
        return None, (a, b)
    return (a * fb - b * fa) / (fb - fa) if fb != fa else 0.5 * (a + b), None


def find_fixed_points(rmap: ReturnMap, refine_tol: float = 1e-10, margin: float = 1e-3):
    """Fixed points of R on crossing-annotated runs of samples."""
    xs, Rs, ann = rmap.x, rmap.R, rmap.annotation
    ok = [i for i in range(len(xs)) if ann[i] == CROSSING and math.isfinite(Rs[i])]
    if len(ok) < 2:
        raise ValueError("need at least two crossing samples")
    F = Rs - xs
    if all(abs(F[i]) <= 1e-13 * max(1.0, abs(xs[i])) for i in ok):
        raise DegenerateMap("R(x) = x on all samples: neutral continuum")
    out, boundary = [], []
    for i, j in zip(ok[:-1], ok[1:]):
        if j != i + 1:
            continue
        fa, fb = F[i], F[j]
        if fa == 0.0:
            x_star = xs[i]
        elif fa * fb < 0:
            x_star, bad = _refine(rmap, xs[i], fa, xs[j], fb, refine_tol)
            if x_star is None:
                boundary.append(bad)
                continue
        else:
            continue
        h = 10 * refine_tol
        rp, rm_ = rmap.evaluate(x_star + h), rmap.evaluate(x_star - h)
        if rp.annotation != CROSSING or rm_.annotation != CROSSING:
            boundary.append((x_star - h, x_star + h))
            continue
        slope = (rp.R - rm_.R) / (2 * h)
        if abs(abs(slope) - 1.0) <= margin:
            stab = "neutral"
        else:
            stab = "stable" if abs(slope) < 1.0 else "unstable"
        res = rmap.evaluate(x_star, keep=True)
        fp = FixedPoint(float(x_star), stab, float(slope), float(res.R - x_star))
        fp.loop = _loop_from_return(res)
        out.append(fp)
    return out, boundary


def _loop_from_return(res: ReturnResult) -> LoopRecord | None:
    orbit = res.orbit
    if orbit is None or not orbit.arcs:
        return None
    poly = orbit.polyline(400)
    start = fl.Event(0.0, res.x, 0.0, "crossing", fl.UPPER, orbit.arcs[0].regime)
    js = [start] + orbit.junctions[:-1]
    kind = fl.classify_junctions(js, orbit.arcs)
    return LoopRecord((res.x, 0.0), kind, orbit.arcs, fl.signed_area(poly), js, orbit.t_end)


# --------------------------------------------------------------------------- counting


@dataclass
class BifurcationCount:
    beta_c: int
    beta_s: int
    crossing: list
    sliding: list
    nesting: list  # loops ordered by enclosed area (inner first)
    boundary_candidates: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def loops(self):
        return self.crossing + self.sliding

    def as_dict(self):
        return {
            "beta_c": self.beta_c,
            "beta_s": self.beta_s,
            "fixed_points": [
                {"x": fp.x, "stability": fp.stability, "slope": fp.slope, "area": fp.loop.area if fp.loop else None}
                for fp in self.crossing
            ],
            "sliding_loops": [lp.summary() for lp in self.sliding],
            "nesting": self.nesting,
            "boundary_candidates": [list(b) for b in self.boundary_candidates],
            "notes": self.notes,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, default=float)


def _area_key(area, scale):
    q = 1e-6 * max(abs(scale), 1e-300)
    return round(area / q)


def sliding_loops(sys: PWSSystem, window, controls: Controls = DEFAULT):
    """Closed loops containing sliding, seeded at roots of g+- in the window."""
    seeds = []
    for fld in (sys.upper, sys.lower):
        rs, _ = find_roots(fld, window[0], window[1], 2000)
        seeds.extend(rs)
    out = []
    for xs in sorted(seeds):
        d = fl.start_regime(sys, xs, 1, controls)
        if d.next_regime is None:
            continue
        orbit = fl.flow(sys, (xs, 0.0), 1, controls, regime=d.next_regime)
        if orbit.status != fl.CLOSED:
            continue
        try:
            lp = fl.detect_and_classify_loop(orbit, controls.closure_tol)
        except fl.AmbiguousClosure:
            continue
        if lp is not None and lp.kind == "sliding":
            out.append(lp)
    return out


def count_bifurcations(
    sys: PWSSystem,
    window,
    controls: Controls = DEFAULT,
    n: int = 200,
    refine_tol: float = 1e-10,
    xs=None,
) -> BifurcationCount:
    """Crossing limit cycles (fixed points of R) and sliding loops near a loop."""
    rmap = return_map(sys, window, n, controls, xs=xs)
    ncross = sum(1 for a in rmap.annotation if a == CROSSING)
    fps, boundary = ([], [])
    notes = []
    if ncross >= 2:
        try:
            fps, boundary = find_fixed_points(rmap, refine_tol)
        except DegenerateMap as exc:
            notes.append(str(exc))
    fps = [fp for fp in fps if fp.loop is not None and fp.loop.kind == "crossing-periodic"]
    sl = sliding_loops(sys, window, controls)
    scale = max([abs(fp.loop.area) for fp in fps] + [abs(lp.area) for lp in sl] + [1.0])
    # distinct fixed points are distinct cycles; the key only merges a cycle
    # that returns to the window more than once per period.
    seen, cross = set(), []
    for fp in sorted(fps, key=lambda f: f.x):
        if cross and abs(fp.x - cross[-1].x) <= 100 * refine_tol:
            continue
        k = (_area_key(fp.loop.area, scale), round(fp.loop.period, 6))
        if k in seen:
            continue
        seen.add(k)
        cross.append(fp)
    seen = set(_area_key(fp.loop.area, scale) for fp in cross)
    sld = []
    for lp in sl:
        k = _area_key(lp.area, scale)
        if k not in seen:
            seen.add(k)
            sld.append(lp)
    inv = [("crossing", fp.x, fp.loop.area, fp.stability) for fp in cross]
    inv += [("sliding", lp.closure[0], lp.area, "") for lp in sld]
    inv.sort(key=lambda t: abs(t[2]))
    nesting = [{"kind": k, "x": x, "area": a, "stability": s} for k, x, a, s in inv]
    return BifurcationCount(len(cross), len(sld), cross, sld, nesting, boundary, notes)
