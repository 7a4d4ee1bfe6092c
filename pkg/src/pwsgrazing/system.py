"""Piecewise-smooth planar systems split by the line y = 0.

Boundary analysis: crossing/sliding classification, the Filippov sliding
velocity, and tangency multiplicity with visibility.

Visibility convention (a normalization: the L/R naming is fixed here, not
by any time-orientation rule).  For a side with multiplicity ``m`` at ``x0``, let
``c = (g^(m)(x0)/m!) / f(x0, 0)``.  The tangent orbit is locally
``y ~ c/(m+1) * (x - x0)^(m+1)``.  For odd ``m`` the tangency is visible
(``V``) when that orbit lies in the side's own half-plane, otherwise
invisible (``I``).  For even ``m`` it is ``R`` when the branch lying in the
side's own half-plane is on ``x > x0`` and ``L`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .fields import ExprField, Field

UPPER = 1
LOWER = -1

MAX_ORDER = ex.MAX_JET_ORDER


class SystemError_(ValueError):
    pass


class NotSliding(ValueError):
    pass


class MultiplicityCapExceeded(ValueError):
    pass


@dataclass
class PWSSystem:
    upper: Field
    lower: Field
    domain: tuple = (-2.0, 2.0, -2.0, 3.0)
    name: str = ""

    def __post_init__(self):
        x0, x1, y0, y1 = self.domain
        if not (x0 < 0 < x1 and y0 < 0 < y1):
            raise SystemError_("domain must contain an open neighbourhood of the origin")
        self.domain = tuple(float(v) for v in self.domain)

    @classmethod
    def from_exprs(cls, ufx, ufy, lfx, lfy, domain=(-2.0, 2.0, -2.0, 3.0), name=""):
        return cls(ExprField(ufx, ufy), ExprField(lfx, lfy), domain, name)

    @property
    def box(self):
        return np.array(self.domain, dtype=float)

    def side(self, which: int) -> Field:
        return self.upper if which == UPPER else self.lower

    def g_pair(self, x: float):
        return self.upper(x, 0.0)[1], self.lower(x, 0.0)[1]

    def h(self, x: float) -> float:
        gp, gm = self.g_pair(x)
        return gp * gm

    def contains(self, x, y) -> bool:
        x0, x1, y0, y1 = self.domain
        return x0 <= x <= x1 and y0 <= y <= y1


# --------------------------------------------------------------------------- points


@dataclass
class BoundaryClassification:
    x: float
    label: str  # crossing | sliding | tangent | both-vanish
    h: float
    g_upper: float
    g_lower: float


def classify_point(sys: PWSSystem, x: float, tol: float = 0.0) -> BoundaryClassification:
    fp, gp = sys.upper(x, 0.0)
    fm, gm = sys.lower(x, 0.0)
    h = gp * gm
    scale = max(abs(gp), abs(gm), 1e-300)
    if abs(gp) <= tol * max(scale, 1.0) or abs(gm) <= tol * max(scale, 1.0) or h == 0.0:
        if (gp == 0.0 or abs(gp) <= tol) and fp == 0.0 or (gm == 0.0 or abs(gm) <= tol) and fm == 0.0:
            label = "both-vanish"
        elif fp != 0.0 and fm != 0.0:
            label = "tangent"
        else:
            label = "both-vanish"
    elif h > 0:
        label = "crossing"
    else:
        label = "sliding"
    return BoundaryClassification(float(x), label, float(h), float(gp), float(gm))


@dataclass
class SlidingState:
    x: float
    velocity: float
    attracting: bool
    weight: float  # convexity witness a with a*Z+ + (1-a)*Z- tangent to y=0

    @property
    def attractivity(self):
        return "attracting" if self.attracting else "repelling"


def sliding_velocity(sys: PWSSystem, x: float) -> SlidingState:
    fp, gp = sys.upper(x, 0.0)
    fm, gm = sys.lower(x, 0.0)
    if not gp * gm < 0:
        raise NotSliding(f"x={x} is not in the sliding region (h={gp * gm:g})")
    v = (fp * gm - fm * gp) / (gm - gp)
    a = gm / (gm - gp)
    return SlidingState(float(x), float(v), bool(gp < 0 < gm), float(a))


def sliding_speed(sys: PWSSystem, x: float) -> float:
    """Sliding velocity without the region check (for root bracketing)."""
    fp, gp = sys.upper(x, 0.0)
    fm, gm = sys.lower(x, 0.0)
    den = gm - gp
    if den == 0.0:
        return 0.0
    return (fp * gm - fm * gp) / den


# --------------------------------------------------------------------------- tangency


@dataclass
class TangencyRecord:
    x: float
    m_upper: int
    m_lower: int
    vis_upper: str  # V I L R or none
    vis_lower: str
    lead_upper: float = 0.0  # g^(m)/m! of the upper side (0 when m=0)
    lead_lower: float = 0.0
    f_upper: float = 0.0
    f_lower: float = 0.0

    @property
    def multiplicity(self):
        return (self.m_upper, self.m_lower)

    @property
    def kind(self) -> str:
        """Two-letter code (upper then lower), or a one-sided code like ``-I``."""
        u = self.vis_upper if self.vis_upper != "none" else "-"
        lo = self.vis_lower if self.vis_lower != "none" else "-"
        return u + lo

    def visibility(self, which: int) -> str:
        return self.vis_upper if which == UPPER else self.vis_lower


def visibility_from_sign(which: int, m: int, lead: float, f: float) -> str:
    """Sign table: ``lead`` is g^(m)(x0)/m!, ``f`` the tangential speed."""
    if m == 0:
        return "none"
    c = lead / f
    if m % 2 == 1:
        own = c > 0 if which == UPPER else c < 0
        return "V" if own else "I"
    right = c > 0 if which == UPPER else c < 0
    return "R" if right else "L"


def _multiplicity(derivs: np.ndarray, rel_tol: float):
    coeffs = np.array([d / math.factorial(k) for k, d in enumerate(derivs)])
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return None, 0.0
    thr = rel_tol * scale
    for k, c in enumerate(coeffs):
        if abs(c) > thr:
            return k, float(c)
    return None, 0.0


def _g_derivs(field: Field, x0: float, order: int) -> np.ndarray:
    if field.has_exact_jets(x0):
        return np.asarray(field.g_x_derivatives(x0, order), dtype=float)
    raise ValueError(f"no exact x-derivatives available at x={x0}")


def tangency_at(sys: PWSSystem, x0: float, max_order: int = MAX_ORDER, rel_tol: float = 1e-9) -> TangencyRecord:
    recs = {}
    for which, fld in ((UPPER, sys.upper), (LOWER, sys.lower)):
        d = _g_derivs(fld, x0, max_order)
        m, lead = _multiplicity(d, rel_tol)
        if m is None:
            raise MultiplicityCapExceeded(
                f"all x-derivatives of g up to order {max_order} vanish at x={x0} on the "
                f"{'upper' if which == UPPER else 'lower'} side"
            )
        f = fld.f_at(x0)
        recs[which] = (m, lead, f)
    (mu, lu, fu), (ml, ll, fl) = recs[UPPER], recs[LOWER]
    if mu + ml == 0:
        raise ValueError(f"x={x0} is not a tangent point (g+ and g- both nonzero)")
    if (mu > 0 and fu == 0.0) or (ml > 0 and fl == 0.0):
        raise ValueError(f"x={x0}: f and g vanish together (boundary equilibrium)")
    return TangencyRecord(
        float(x0),
        mu,
        ml,
        visibility_from_sign(UPPER, mu, lu, fu),
        visibility_from_sign(LOWER, ml, ll, fl),
        lu,
        ll,
        float(fu),
        float(fl),
    )


def local_tangent_visibility(sys: PWSSystem, x0: float, which: int) -> str:
    """Visibility of a simple or higher tangency without exact jets.

    Uses the sign of ``y`` along short forward/backward orbits approximated
    by the leading term found from finite-difference derivatives.
    """
    fld = sys.side(which)
    if fld.has_exact_jets(x0):
        d = fld.g_x_derivatives(x0, 6)
        m, lead = _multiplicity(d, 1e-9)
    else:
        h = 1e-5 * max(1.0, abs(x0))
        g = lambda x: fld(x, 0.0)[1]
        d1 = (g(x0 + h) - g(x0 - h)) / (2 * h)
        d2 = (g(x0 + h) - 2 * g(x0) + g(x0 - h)) / h**2
        if abs(d1) * h > 1e-3 * abs(d2) * h * h:
            m, lead = 1, d1
        else:
            m, lead = 2, d2 / 2
    if m is None or m == 0:
        return "none"
    return visibility_from_sign(which, m, lead, fld.f_at(x0))


# --------------------------------------------------------------------------- roots


def _gfun(field: Field):
    return lambda x: field(x, 0.0)[1]


def _dg(field: Field, k: int):
    """k-th x-derivative of g(., 0) as a callable (exact when possible)."""

    def fun(x):
        if field.has_exact_jets(x):
            return float(field.g_x_derivatives(x, k)[k])
        if k == 0:
            return _gfun(field)(x)
        h = 1e-4 * max(1e-3, abs(x)) if k > 1 else 1e-6
        if k == 1:
            g = _gfun(field)
            return (g(x + h) - g(x - h)) / (2 * h)
        return (_dg(field, k - 1)(x + h) - _dg(field, k - 1)(x - h)) / (2 * h)

    return fun


def _refine_root(field: Field, x0: float, window: float, max_order: int, scale: float = 1.0):
    """Polish a (possibly multiple) root of g(., 0) near x0.

    A root of multiplicity j is a simple root of g^(j-1), so the highest
    derivative that changes sign in the window while all lower ones
    (nearly) vanish at its root gives the best estimate.
    """
    xa, xb = x0 - window, x0 + window
    best = x0
    exact = field.has_exact_jets(x0)
    derivs = [_dg(field, k) for k in range(min(max_order, 8 if exact else 3))]
    for j, fun in enumerate(derivs):
        try:
            fa, fb = fun(xa), fun(xb)
        except (ValueError, ZeroDivisionError):
            break
        if fa * fb > 0:
            continue
        if fa == 0.0 or fb == 0.0:
            r = xa if fa == 0.0 else xb
        else:
            r = brentq(fun, xa, xb, xtol=1e-15, rtol=1e-15, maxiter=200)
        ok = all(
            abs(derivs[i](r)) * window**i / math.factorial(i) <= 1e-10 * scale for i in range(j)
        )
        if ok:
            best = r
    return best


def find_roots(field: Field, xa: float, xb: float, grid: int = 1000, tol: float = 1e-12, max_order: int = MAX_ORDER):
    """Roots of g(., 0) on [xa, xb]: sign changes plus touching minima."""
    xs = np.linspace(xa, xb, grid + 1)
    gs = np.array([field(x, 0.0)[1] for x in xs])
    scale = max(np.max(np.abs(gs)), 1e-300)
    dx = (xb - xa) / grid
    cands = []
    for i in range(grid + 1):
        if gs[i] == 0.0:
            cands.append(xs[i])
    for i in range(grid):
        if gs[i] * gs[i + 1] < 0:
            cands.append(brentq(_gfun(field), xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    ag = np.abs(gs)
    for i in range(1, grid):
        if ag[i] <= ag[i - 1] and ag[i] <= ag[i + 1] and gs[i - 1] * gs[i + 1] > 0 and gs[i] * gs[i - 1] > 0:
            cands.append(xs[i])
    out = []
    for c in sorted(cands):
        r = _refine_root(field, c, dx, max_order, scale)
        if not (xa - 1e-12 <= r <= xb + 1e-12):
            continue
        if abs(field(r, 0.0)[1]) > tol * scale:
            continue
        if out and abs(r - out[-1]) <= 1e-9 * max(1.0, abs(r)):
            continue
        out.append(float(r))
    return out, scale


def find_tangencies(sys: PWSSystem, interval=None, grid: int = 1000, max_order: int = MAX_ORDER):
    """Tangency records (and both-vanish points, as ``None`` visibility)."""
    xa, xb = interval if interval is not None else sys.domain[:2]
    roots = []
    for fld in (sys.upper, sys.lower):
        rs, _ = find_roots(fld, xa, xb, grid, max_order=max_order)
        roots.extend(rs)
    roots.sort()
    merged = []
    for r in roots:
        if merged and abs(r - merged[-1]) <= 1e-9 * max(1.0, abs(r)):
            continue
        merged.append(r)
    recs = []
    for r in merged:
        fp = sys.upper.f_at(r)
        fm = sys.lower.f_at(r)
        gp, gm = sys.g_pair(r)
        if fp == 0.0 or fm == 0.0:
            recs.append(BothVanish(r, gp, gm))
            continue
        try:
            recs.append(tangency_at(sys, r, max_order))
        except ValueError:
            recs.append(_fd_tangency(sys, r))
    return recs


@dataclass
class BothVanish:
    x: float
    g_upper: float
    g_lower: float
    kind: str = "both-vanish"


def _fd_tangency(sys: PWSSystem, x0: float) -> TangencyRecord:
    # fallback for closure-composed fields away from flat bump points
    vals = {}
    for which in (UPPER, LOWER):
        fld = sys.side(which)
        g0 = fld(x0, 0.0)[1]
        g_scale = max(abs(g0), 1e-300)
        h = 1e-6 * max(1.0, abs(x0))
        d1 = (fld(x0 + h, 0.0)[1] - fld(x0 - h, 0.0)[1]) / (2 * h)
        if abs(g0) > 1e-10 * max(abs(d1) * h, 1e-300) and abs(g0) > 0 and abs(g0) > abs(d1) * 1e-8:
            vals[which] = (0, 0.0)
        else:
            vals[which] = (1, d1)
    (mu, lu), (ml, ll) = vals[UPPER], vals[LOWER]
    fu, fl = sys.upper.f_at(x0), sys.lower.f_at(x0)
    return TangencyRecord(
        float(x0), mu, ml, visibility_from_sign(UPPER, mu, lu, fu), visibility_from_sign(LOWER, ml, ll, fl), lu, ll, fu, fl
    )


# --------------------------------------------------------------------------- decomposition


@dataclass
class Region:
    x0: float
    x1: float
    label: str  # crossing | sliding
    attracting: bool | None = None


@dataclass
class Decomposition:
    regions: list = field(default_factory=list)
    tangencies: list = field(default_factory=list)


def decompose(sys: PWSSystem, interval=None, grid: int = 1000) -> Decomposition:
    xa, xb = interval if interval is not None else sys.domain[:2]
    tans = find_tangencies(sys, (xa, xb), grid)
    cuts = [xa] + [t.x for t in tans if xa < t.x < xb] + [xb]
    regions = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        gp, gm = sys.g_pair(mid)
        if gp * gm > 0:
            regions.append(Region(a, b, "crossing"))
        elif gp * gm < 0:
            regions.append(Region(a, b, "sliding", bool(gp < 0 < gm)))
        else:
            regions.append(Region(a, b, "degenerate"))
    return Decomposition(regions, tans)


# --------------------------------------------------------------------------- system files

SYSTEM_KEYS = ("upper.fx", "upper.fy", "lower.fx", "lower.fy")


class SystemFileError(ValueError):
    def __init__(self, path, line, msg):
        self.path, self.line, self.msg = path, line, msg
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {msg}")


def parse_system_text(text: str, path: str = "<string>", name: str = "") -> PWSSystem:
    """Parse ``key = value`` lines into a system; ``#`` starts a comment."""
    vals, where = {}, {}
    domain = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemFileError(path, no, f"expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in vals or (key == "domain" and domain is not None):
            raise SystemFileError(path, no, f"duplicate key {key!r}")
        if key == "domain":
            try:
                nums = [float(v) for v in val.replace(",", " ").split()]
            except ValueError:
                raise SystemFileError(path, no, f"domain needs four numbers, got {val!r}") from None
            if len(nums) != 4:
                raise SystemFileError(path, no, f"domain needs four numbers, got {len(nums)}")
            domain = tuple(nums)
            where["domain"] = no
            continue
        if key not in SYSTEM_KEYS:
            raise SystemFileError(path, no, f"unknown key {key!r}")
        try:
            vals[key] = ex.parse(val)
        except ex.ExprSyntaxError as exc:
            raise SystemFileError(path, no, f"{key}: {exc}") from None
        where[key] = no
    missing = [k for k in SYSTEM_KEYS if k not in vals]
    if missing:
        raise SystemFileError(path, 0, f"missing keys: {', '.join(missing)}")
    kw = {"domain": domain} if domain is not None else {}
    try:
        return PWSSystem.from_exprs(vals["upper.fx"], vals["upper.fy"], vals["lower.fx"], vals["lower.fy"], name=name or str(path), **kw)
    except ValueError as exc:
        raise SystemFileError(path, where.get("domain", 0), str(exc)) from None


def load_system(path) -> PWSSystem:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise SystemFileError(path, 0, exc.strerror or str(exc)) from None
    return parse_system_text(text, str(path))


def system_to_text(sys: PWSSystem) -> str:
    """Inverse of ``parse_system_text`` for expression-backed systems."""
    lines = []
    for side, fld in (("upper", sys.upper), ("lower", sys.lower)):
        if not hasattr(fld, "fx"):
            raise ValueError(f"{side} field is not expression backed")
        lines.append(f"{side}.fx = {ex.to_string(fld.fx)}")
        lines.append(f"{side}.fy = {ex.to_string(fld.fy)}")
    lines.append("domain = " + " ".join(f"{v:.17g}" for v in sys.domain))
    return "\n".join(lines) + "\n"
