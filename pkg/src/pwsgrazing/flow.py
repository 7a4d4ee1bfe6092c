"""Event-driven Filippov integration.

Smooth arcs are integrated by the DOPRI5 kernel until they reach y = 0,
leave the domain, or run out of time.  At each boundary event the Filippov
rules pick the next regime: crossing, sliding, re-entry at a visible
tangency, or a flagged stop.  Sliding motion is one-dimensional and is
solved by locating the end of the sliding segment and integrating dt = dx/v.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import kernels
from .system import PWSSystem, find_roots

UPPER = "upper"
LOWER = "lower"
SLIDING = "sliding"
FREE = "free"

# terminal reasons
CLOSED = "closed"
MAX_ARCS = "max-arcs"
TIME_LIMIT = "time-limit"
DOMAIN_EXIT = "domain-exit"
AT_TANGENCY = "orbit terminates at tangency"
NON_UNIQUE = "non-unique"
PSEUDO_EQ = "pseudo-equilibrium"
NUMERICAL = "numerical-failure"


@dataclass(frozen=True)
class Controls:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = 0.25
    max_time: float = 200.0
    max_arcs: int = 200
    deadband: float = 1e-10
    closure_tol: float = 1e-7
    capacity: int = 4096
    g_tol: float = 1e-12
    graze_tol: float = 1e-10

    def with_(self, **kw):
        return replace(self, **kw)


DEFAULT = Controls()


@dataclass
class Event:
    t: float
    x: float
    y: float
    type: str
    regime_in: str = ""
    regime_out: str = ""
    tangent: bool = False
    y_raw: float = 0.0


class Arc:
    """One regime segment of an orbit with its dense output."""

    def __init__(self, regime, t0, entry: Event, sgn=1):
        self.regime = regime
        self.t0 = float(t0)
        self.t1 = float(t0)
        self.entry = entry
        self.exit: Event | None = None
        self.sgn = sgn
        self._ts = []
        self._hs = []
        self._rc = []
        self._slide_x = None
        self._slide_t = None
        self.status = ""

    # smooth arcs ------------------------------------------------------------
    def add_chunk(self, ts, hs, rc, n):
        if n:
            self._ts.append(np.array(ts[:n]))
            self._hs.append(np.array(hs[:n]))
            self._rc.append(np.array(rc[:n]))

    @property
    def n_steps(self):
        return int(sum(len(a) for a in self._ts))

    def _stack(self):
        if not hasattr(self, "_cache") or self._cache[0] != len(self._ts):
            if self._ts:
                ts = np.concatenate(self._ts)
                hs = np.concatenate(self._hs)
                rc = np.concatenate(self._rc)
            else:
                ts = np.zeros(0)
                hs = np.zeros(0)
                rc = np.zeros((0, 5, 2))
            self._cache = (len(self._ts), ts, hs, rc)
        return self._cache[1:]

    def set_slide(self, xs, ts):
        self._slide_x = np.asarray(xs, float)
        self._slide_t = np.asarray(ts, float)

    @property
    def start(self):
        return np.array([self.entry.x, self.entry.y])

    @property
    def end(self):
        return np.array([self.exit.x, self.exit.y]) if self.exit else self.start

    @property
    def duration(self):
        return self.t1 - self.t0

    def at(self, tq):
        """Positions at absolute times ``tq`` inside the arc."""
        tq = np.atleast_1d(np.asarray(tq, float))
        if self.regime == SLIDING:
            if self._slide_x is None or len(self._slide_x) < 2:
                return np.column_stack([np.full(tq.shape, self.entry.x), np.zeros(tq.shape)])
            xs = np.interp(tq, self._slide_t, self._slide_x)
            return np.column_stack([xs, np.zeros_like(xs)])
        ts, hs, rc = self._stack()
        if len(ts) == 0:
            return np.tile(self.start, (len(tq), 1))
        rel = np.clip(tq - self.t0, ts[0], ts[-1] + hs[-1])
        order = np.argsort(rel)
        out = np.empty((len(tq), 2))
        out[order] = kernels.dense_sample(ts, hs, rc, len(ts), rel[order])
        return out

    def sample(self, n=200):
        if self.duration <= 0.0 or not math.isfinite(self.duration):
            if self.regime == SLIDING and self._slide_x is not None:
                xs = self._slide_x
                return np.zeros(len(xs)), xs, np.zeros(len(xs))
            p = self.start
            return np.array([self.t0]), np.array([p[0]]), np.array([p[1]])
        t = np.linspace(self.t0, self.t1, n)
        xy = self.at(t)
        if self.exit is not None:
            xy[-1] = self.end
        xy[0] = self.start
        return t, xy[:, 0], xy[:, 1]

    def polyline(self, n=200):
        if self.regime == SLIDING and self._slide_x is not None:
            return np.column_stack([self._slide_x, np.zeros(len(self._slide_x))])
        _, x, y = self.sample(n)
        return np.column_stack([x, y])

    def __repr__(self):
        ex = self.exit.type if self.exit else "-"
        return f"Arc({self.regime}, t=[{self.t0:.6g}, {self.t1:.6g}], exit={ex})"


@dataclass
class Orbit:
    arcs: list = field(default_factory=list)
    junctions: list = field(default_factory=list)
    status: str = ""
    message: str = ""
    sgn: int = 1

    @property
    def start(self):
        return self.arcs[0].start if self.arcs else None

    @property
    def end(self):
        return self.arcs[-1].end if self.arcs else None

    @property
    def t_end(self):
        return self.arcs[-1].t1 if self.arcs else 0.0

    @property
    def regimes(self):
        return [a.regime for a in self.arcs]

    def continuity_gaps(self):
        return [float(np.hypot(*(a.end - b.start))) for a, b in zip(self.arcs[:-1], self.arcs[1:])]

    def polyline(self, n_per_arc=200):
        pts = [a.polyline(n_per_arc) for a in self.arcs]
        return np.vstack(pts) if pts else np.zeros((0, 2))

    def to_csv(self, path, n_per_arc=200):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arc_index", "regime", "t", "x", "y"])
            for i, a in enumerate(self.arcs):
                t, x, y = a.sample(n_per_arc)
                for tt, xx, yy in zip(t, x, y):
                    w.writerow([i, a.regime, f"{tt:.15g}", f"{xx:.15g}", f"{yy:.15g}"])

    def events_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "type"])
            for e in self.junctions:
                w.writerow([f"{e.t:.15g}", f"{e.x:.15g}", e.type])


# --------------------------------------------------------------------------- smooth arcs


def _timescale(field, x, y):
    fx, fy = field(x, y)
    sp = math.hypot(fx, fy)
    return 1.0 / min(max(sp, 1e-6), 1e6)


def integrate_arc(
    fld,
    start,
    direction: int = 1,
    controls: Controls = DEFAULT,
    regime: str = UPPER,
    box=None,
    t0: float = 0.0,
    t_max: float | None = None,
    event=None,
    dead_t: float | None = None,
) -> Arc:
    """Integrate one smooth arc.

    ``regime`` selects the stopping line: upper arcs stop when y drops to 0,
    lower arcs when y rises to 0, ``free`` arcs only at time/domain limits.
    A custom linear ``event=(a, b, c, dir)`` overrides the regime rule.
    Starting on y = 0 applies the event deadband.
    """
    x0, y0 = float(start[0]), float(start[1])
    if event is not None:
        ev = np.array(event[:3], float)
        ev_dir = int(event[3])
    elif regime == UPPER:
        ev, ev_dir = np.array([0.0, 1.0, 0.0]), -1
    elif regime == LOWER:
        ev, ev_dir = np.array([0.0, 1.0, 0.0]), 1
    else:
        ev, ev_dir = np.zeros(3), 0
    if box is None:
        box = np.array([-1e300, 1e300, -1e300, 1e300])
    box = np.asarray(box, float)
    if dead_t is None:
        on_line = ev_dir != 0 and ev[0] * x0 + ev[1] * y0 + ev[2] == 0.0
        dead_t = controls.deadband * _timescale(fld, x0, y0) if on_line else 0.0
    t_budget = controls.max_time if t_max is None else t_max
    entry = Event(t0, x0, y0, "start")
    arc = Arc(regime, t0, entry, direction)
    t_done = 0.0
    h = 0.0
    x, y = x0, y0
    while True:
        st, n, ts, hs, rc, te, xe, ye, h = kernels.integrate_kernel(
            fld.kernel,
            fld.params,
            x,
            y,
            float(direction),
            t_budget - t_done,
            controls.rtol,
            controls.atol,
            min(controls.max_step, fld.max_step),
            h,
            max(dead_t - t_done, 0.0),
            ev,
            ev_dir,
            box,
            controls.capacity,
        )
        arc.add_chunk(ts[:n] + t_done, hs, rc, n)
        t_done += te
        x, y = xe, ye
        if st != kernels.CAPACITY:
            break
    arc.t1 = t0 + t_done
    arc.status = kernels.STATUS_NAMES[st]
    if st == kernels.EVENT:
        y_snap = 0.0 if (event is None and regime in (UPPER, LOWER)) else y
        arc.exit = Event(arc.t1, x, y_snap, "event", regime, y_raw=y)
    elif st == kernels.DOMAIN_EXIT:
        arc.exit = Event(arc.t1, x, y, DOMAIN_EXIT, regime)
    elif st == kernels.TIME_LIMIT:
        arc.exit = Event(arc.t1, x, y, TIME_LIMIT, regime)
    else:
        arc.exit = Event(arc.t1, x, y, NUMERICAL, regime)
        arc.status = kernels.STATUS_NAMES[st]
    return arc


def _probe(fld, x, sgn, controls):
    """Sign of y a short time after leaving (x, 0) along ``sgn * fld``."""
    tau = 1e-5 * _timescale(fld, x, 0.0)
    arc = integrate_arc(fld, (x, 0.0), sgn, controls.with_(max_step=tau), regime=FREE, t_max=tau)
    y = arc.exit.y
    return 0 if y == 0.0 else (1 if y > 0 else -1)


# --------------------------------------------------------------------------- Filippov rules


@dataclass
class Decision:
    next_regime: str | None
    event_type: str
    reason: str = ""
    tangent: bool = False
    dead_t: float = 0.0


def _shallow_dip(fld, x, g, sgn, side, depth_tol):
    """Skip time if the arc only dips below the line by less than depth_tol.

    ``side`` is +1 for an upper arc.  Near a visible tangency the excursion
    depth is about g^2 / (2 dg/dt); returns the time to skip, or 0.
    """
    if depth_tol <= 0.0:
        return 0.0
    f = sgn * fld.f_at(x)
    jac = fld.jacobian(x, 0.0)
    gdot = sgn * (jac[1, 0] * f + jac[1, 1] * g)
    if gdot * side <= 0.0:
        return 0.0
    depth = g * g / (2.0 * abs(gdot))
    if depth > depth_tol:
        return 0.0
    return 2.5 * abs(g) / abs(gdot)


def _gscale(sys: PWSSystem):
    sc = getattr(sys, "_gscale_cache", None)
    if sc is None:
        xs = np.linspace(sys.domain[0], sys.domain[1], 201)
        sc = max(max(abs(sys.upper(x, 0.0)[1]), abs(sys.lower(x, 0.0)[1])) for x in xs)
        sc = max(sc, 1e-300)
        object.__setattr__(sys, "_gscale_cache", sc)
    return sc


def _eff_g(sys, x, sgn):
    fp, gp = sys.upper(x, 0.0)
    fm, gm = sys.lower(x, 0.0)
    return sgn * fp, sgn * gp, sgn * fm, sgn * gm


def _slide_direction_ok(sys, x, sgn, tol):
    """Can sliding start at the boundary point x (adjacent attracting segment
    whose velocity points away from x)?  Returns the slide start or None."""
    eps = max(1e-9, 1e-9 * abs(x))
    for side in (-1.0, 1.0):
        xs = x + side * eps
        _, gp, _, gm = _eff_g(sys, xs, sgn)
        if gp < 0 < gm:
            fp, gpx, fm, gmx = _eff_g(sys, xs, sgn)
            v = (fp * gmx - fm * gpx) / (gmx - gpx)
            if v * side > 0:
                return xs
    return None


def continue_filippov(sys: PWSSystem, x: float, arrived: str, sgn: int = 1, controls: Controls = DEFAULT) -> Decision:
    """Next regime after an arc from ``arrived`` reached (x, 0)."""
    fp, gp, fm, gm = _eff_g(sys, x, sgn)
    tol = controls.g_tol * _gscale(sys)
    zp = abs(gp) <= tol
    zm = abs(gm) <= tol
    tangent = zp or zm
    if arrived == UPPER:
        if zp:
            # touching the line from above: stay up if the upper orbit re-enters
            if _probe(sys.upper, x, sgn, controls) > 0:
                return Decision(UPPER, "tangency", "visible upper tangency", True)
            if not zm and gm < 0:
                return Decision(LOWER, "crossing", "", True)
            if not zm and gm > 0:
                return Decision(SLIDING, "sliding-entry", "", True)
            return Decision(None, "tangency", AT_TANGENCY, True)
        skip = _shallow_dip(sys.upper, x, gp, sgn, 1, controls.graze_tol)
        if skip > 0.0:
            return Decision(UPPER, "touch", "shallow dip under a visible upper tangency", True, skip)
        if zm:
            if _probe(sys.lower, x, sgn, controls) < 0:
                return Decision(LOWER, "crossing", "visible lower tangency", True)
            if _slide_direction_ok(sys, x, sgn, tol) is not None:
                return Decision(SLIDING, "sliding-entry", "", True)
            return Decision(None, "tangency", AT_TANGENCY, True)
        if gm < 0:
            return Decision(LOWER, "crossing")
        return Decision(SLIDING, "sliding-entry")
    if arrived == LOWER:
        if zm:
            if _probe(sys.lower, x, sgn, controls) < 0:
                return Decision(LOWER, "tangency", "visible lower tangency", True)
            if not zp and gp > 0:
                return Decision(UPPER, "crossing", "", True)
            if not zp and gp < 0:
                return Decision(SLIDING, "sliding-entry", "", True)
            return Decision(None, "tangency", AT_TANGENCY, True)
        skip = _shallow_dip(sys.lower, x, gm, sgn, -1, controls.graze_tol)
        if skip > 0.0:
            return Decision(LOWER, "touch", "shallow dip under a visible lower tangency", True, skip)
        if zp:
            if _probe(sys.upper, x, sgn, controls) > 0:
                return Decision(UPPER, "crossing", "visible upper tangency", True)
            if _slide_direction_ok(sys, x, sgn, tol) is not None:
                return Decision(SLIDING, "sliding-entry", "", True)
            return Decision(None, "tangency", AT_TANGENCY, True)
        if gp > 0:
            return Decision(UPPER, "crossing")
        return Decision(SLIDING, "sliding-entry")
    raise ValueError(f"unknown arrival regime {arrived!r}")


def start_regime(sys: PWSSystem, x: float, sgn: int = 1, controls: Controls = DEFAULT) -> Decision:
    """Regime for an orbit starting on the switching line."""
    fp, gp, fm, gm = _eff_g(sys, x, sgn)
    tol = controls.g_tol * _gscale(sys)
    if abs(gp) <= tol or abs(gm) <= tol:
        up = _probe(sys.upper, x, sgn, controls) > 0 if abs(gp) <= tol else gp > 0
        down = _probe(sys.lower, x, sgn, controls) < 0 if abs(gm) <= tol else gm < 0
        if up and not down:
            return Decision(UPPER, "start", tangent=True)
        if down and not up:
            return Decision(LOWER, "start", tangent=True)
        if up and down:
            return Decision(None, "start", NON_UNIQUE, True)
        if _slide_direction_ok(sys, x, sgn, tol) is not None:
            return Decision(SLIDING, "start", tangent=True)
        return Decision(None, "start", AT_TANGENCY, True)
    if gp > 0 and gm > 0:
        return Decision(UPPER, "start")
    if gp < 0 and gm < 0:
        return Decision(LOWER, "start")
    if gp < 0 < gm:
        return Decision(SLIDING, "start")
    return Decision(None, "start", NON_UNIQUE)


# --------------------------------------------------------------------------- sliding


def _roots_cache(sys: PWSSystem, grid=4000):
    rs = getattr(sys, "_sigma_roots", None)
    if rs is None:
        xa, xb = sys.domain[:2]
        rs = []
        for fld in (sys.upper, sys.lower):
            r, _ = find_roots(fld, xa, xb, grid)
            rs.extend(r)
        rs = np.array(sorted(rs))
        object.__setattr__(sys, "_sigma_roots", rs)
    return rs


def slide(sys: PWSSystem, x0: float, sgn: int = 1, controls: Controls = DEFAULT, t0: float = 0.0, t_max=None):
    """Sliding arc from x0 (inside an attracting segment of ``sgn * Z``).

    Returns ``(arc, end_reason)`` where the reason is ``boundary``,
    ``pseudo-equilibrium``, ``domain-exit`` or ``time-limit``.
    """

    def hh(x):
        _, gp, _, gm = _eff_g(sys, x, sgn)
        return gp * gm

    def vel(x):
        fp, gp, fm, gm = _eff_g(sys, x, sgn)
        den = gm - gp
        return 0.0 if den == 0.0 else (fp * gm - fm * gp) / den

    entry = Event(t0, x0, 0.0, "sliding-entry", regime_out=SLIDING)
    arc = Arc(SLIDING, t0, entry, sgn)
    v0 = vel(x0)
    if v0 == 0.0:
        arc.set_slide([x0], [t0])
        arc.t1 = math.inf
        arc.exit = Event(math.inf, x0, 0.0, PSEUDO_EQ, SLIDING)
        return arc, PSEUDO_EQ
    dirn = 1.0 if v0 > 0 else -1.0
    xa, xb = sys.domain[:2]
    edge = xb if dirn > 0 else xa
    roots = _roots_cache(sys)
    cand = roots[roots > x0] if dirn > 0 else roots[roots < x0][::-1]
    x_end, reason = edge, DOMAIN_EXIT
    for r in cand:
        if abs(r - x0) <= 1e-14 * max(1.0, abs(r)):
            continue
        beyond = r + dirn * max(1e-9, 1e-9 * abs(r))
        if hh(beyond) < 0:
            _, gp, _, gm = _eff_g(sys, beyond, sgn)
            if gp < 0 < gm:
                continue
        x_end, reason = float(r), "boundary"
        break
    # fall back to a fine scan near x0 in case the cached grid missed a root
    xs = np.linspace(x0, x_end, 257)
    hv = np.array([hh(x) for x in xs[1:-1]])
    bad = np.nonzero(hv >= 0)[0]
    if len(bad):
        j = bad[0] + 1
        hj = hh(xs[j])
        x_end = brentq(hh, xs[j - 1], xs[j], xtol=1e-15, rtol=1e-15) if hj > 0 else xs[j]
        reason = "boundary"
        xs = np.linspace(x0, x_end, 257)
    vs = np.array([vel(x) for x in xs])
    flip = np.nonzero(vs[1:] * dirn <= 0)[0]
    if len(flip):
        j = flip[0] + 1
        if vs[j] == 0.0:
            x_pe = xs[j]
        else:
            x_pe = brentq(vel, xs[j - 1], xs[j], xtol=1e-15, rtol=1e-15)
        xs = np.linspace(x0, x_pe, 257)
        arc.set_slide(xs, np.full(len(xs), math.inf))
        arc._slide_t[0] = t0
        arc.t1 = math.inf
        arc.exit = Event(math.inf, x_pe, 0.0, PSEUDO_EQ, SLIDING)
        return arc, PSEUDO_EQ
    inv = lambda x: 1.0 / abs(vel(x))
    cum = [0.0]
    for a, b in zip(xs[:-1], xs[1:]):
        cum.append(cum[-1] + quad(inv, min(a, b), max(a, b), epsabs=1e-14, epsrel=1e-12, limit=200)[0])
    ts = t0 + np.array(cum)
    budget = controls.max_time if t_max is None else t_max
    if ts[-1] - t0 > budget:
        k = int(np.searchsorted(ts - t0, budget))
        xs, ts = xs[: k + 1], ts[: k + 1]
        reason = TIME_LIMIT
    arc.set_slide(xs, ts)
    arc.t1 = float(ts[-1])
    etype = "sliding-exit" if reason == "boundary" else reason
    arc.exit = Event(arc.t1, float(xs[-1]), 0.0, etype, SLIDING, tangent=reason == "boundary")
    return arc, reason


def _exit_side(sys, x, sgn, controls):
    """Regime after sliding reaches the boundary point x."""
    fp, gp, fm, gm = _eff_g(sys, x, sgn)
    tol = 1e-8 * _gscale(sys)
    if abs(gp) <= abs(gm) and abs(gp) <= tol * 1e4:
        return UPPER if _probe(sys.upper, x, sgn, controls) > 0 else None
    if abs(gm) <= tol * 1e4:
        return LOWER if _probe(sys.lower, x, sgn, controls) < 0 else None
    return UPPER if abs(gp) < abs(gm) else LOWER


# --------------------------------------------------------------------------- driver


def _same_junction(a: Event, b: Event, tol):
    return a.regime_in == b.regime_in and a.regime_out == b.regime_out and abs(a.x - b.x) <= tol


def flow(
    sys: PWSSystem,
    start,
    direction: int = 1,
    controls: Controls = DEFAULT,
    max_arcs: int | None = None,
    regime: str | None = None,
    stop_on_closure: bool = True,
    stop=None,
    dead_t: float | None = None,
) -> Orbit:
    """Concatenate arcs from ``start`` under the Filippov rules.

    ``stop(event, orbit)`` may return True to end the orbit at a junction.
    """
    max_arcs = controls.max_arcs if max_arcs is None else max_arcs
    sgn = 1 if direction >= 0 else -1
    x, y = float(start[0]), float(start[1])
    orbit = Orbit(sgn=sgn)
    box = sys.box
    if not sys.contains(x, y):
        orbit.status = DOMAIN_EXIT
        orbit.message = "start outside the domain"
        return orbit
    if regime is None:
        if y > 0:
            regime = UPPER
        elif y < 0:
            regime = LOWER
        else:
            d = start_regime(sys, x, sgn, controls)
            if d.next_regime is None:
                orbit.status = d.reason
                orbit.message = f"cannot start at x={x:g}: {d.reason}"
                return orbit
            regime = d.next_regime
    t = 0.0
    dead = dead_t
    tol = controls.closure_tol * max(1.0, sys.domain[1] - sys.domain[0])
    for _ in range(max_arcs):
        remaining = controls.max_time - t
        if remaining <= 0:
            orbit.status = TIME_LIMIT
            break
        if regime == SLIDING:
            arc, reason = slide(sys, x, sgn, controls, t0=t, t_max=remaining)
            orbit.arcs.append(arc)
            t = arc.t1
            x = arc.exit.x
            if reason != "boundary":
                orbit.status = reason
                break
            nxt = _exit_side(sys, x, sgn, controls)
            dead = None
            ev = Event(t, x, 0.0, "sliding-exit", SLIDING, nxt or "", True)
            arc.exit = ev
            orbit.junctions.append(ev)
            if nxt is None:
                orbit.status = AT_TANGENCY
                break
        else:
            fld = sys.upper if regime == UPPER else sys.lower
            arc = integrate_arc(
                fld, (x, y), sgn, controls, regime, box=box, t0=t, t_max=remaining, dead_t=dead or None
            )
            dead = None
            orbit.arcs.append(arc)
            t = arc.t1
            x, y = arc.exit.x, arc.exit.y
            if arc.exit.type != "event":
                orbit.status = arc.exit.type if arc.exit.type != NUMERICAL else NUMERICAL
                orbit.message = arc.status
                break
            d = continue_filippov(sys, x, regime, sgn, controls)
            ev = arc.exit
            ev.type = d.event_type
            ev.regime_out = d.next_regime or ""
            ev.tangent = d.tangent
            orbit.junctions.append(ev)
            if d.next_regime is None:
                orbit.status = d.reason
                orbit.message = f"stopped at x={x:.12g}: {d.reason}"
                break
            nxt = d.next_regime
            dead = d.dead_t
        y = 0.0
        junction = orbit.junctions[-1]
        if stop is not None and stop(junction, orbit):
            orbit.status = "stopped"
            break
        if stop_on_closure and any(_same_junction(junction, e, tol) for e in orbit.junctions[:-1]):
            orbit.status = CLOSED
            break
        regime = nxt
    else:
        orbit.status = MAX_ARCS
    return orbit


# --------------------------------------------------------------------------- loops


@dataclass
class LoopRecord:
    closure: tuple
    kind: str  # crossing-periodic | sliding | critical | crossing-nonsliding | grazing
    arcs: list
    area: float
    junctions: list
    period: float = float("nan")

    @property
    def diameter(self):
        pts = np.vstack([a.polyline(64) for a in self.arcs])
        return float(np.max(np.ptp(pts, axis=0)))

    def polyline(self, n_per_arc=400):
        return np.vstack([a.polyline(n_per_arc) for a in self.arcs])

    def switching_points(self):
        return [e for e in self.junctions if e.regime_in != e.regime_out]

    def summary(self):
        return {
            "kind": self.kind,
            "closure_x": self.closure[0],
            "closure_y": self.closure[1],
            "area": self.area,
            "period": self.period,
            "switching_points": [
                {"x": e.x, "type": e.type, "from": e.regime_in, "to": e.regime_out, "tangent": e.tangent}
                for e in self.switching_points()
            ],
            "regimes": [a.regime for a in self.arcs],
        }


class AmbiguousClosure(ValueError):
    pass


def signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def classify_junctions(junctions, arcs) -> str:
    if any(a.regime == SLIDING for a in arcs):
        return "sliding"
    sw = [e for e in junctions if e.regime_in != e.regime_out]
    if not sw:
        return "grazing"
    if any(e.tangent for e in sw):
        return "critical"
    if all(e.type == "crossing" for e in sw):
        return "crossing-periodic"
    return "crossing-nonsliding"


def _return_to_start(orbit: Orbit, tol):
    """Time and arc index where the orbit first returns to its start point."""
    p0 = orbit.arcs[0].start
    left = False
    g = 0.3819660112501051
    for ia, arc in enumerate(orbit.arcs):
        if not math.isfinite(arc.t1) or arc.t1 <= arc.t0:
            continue
        t, xs, ys = arc.sample(max(400, 20 * arc.n_steps))
        d = np.hypot(xs - p0[0], ys - p0[1])
        for i in range(1, len(d) - 1):
            if not left:
                left = d[i] > 100 * tol
                continue
            if not (d[i] <= d[i - 1] and d[i] <= d[i + 1]):
                continue
            f = lambda tt: float(np.hypot(*(arc.at(tt)[0] - p0)))
            a, b = t[i - 1], t[i + 1]
            c, dd = a + g * (b - a), b - g * (b - a)
            fc, fd = f(c), f(dd)
            for _ in range(100):
                if fc < fd:
                    b, dd, fd = dd, c, fc
                    c = a + g * (b - a)
                    fc = f(c)
                else:
                    a, c, fc = c, dd, fd
                    dd = b - g * (b - a)
                    fd = f(dd)
                if b - a < 1e-14 * max(1.0, abs(b)):
                    break
            tm = 0.5 * (a + b)
            if f(tm) <= tol:
                return ia, tm
    return None


def detect_and_classify_loop(orbit: Orbit, tol: float | None = None) -> LoopRecord | None:
    """Find the first closed loop in an orbit and classify it."""
    if not orbit.arcs:
        return None
    if tol is None:
        tol = DEFAULT.closure_tol
    js = orbit.junctions
    # junction-based closure
    for j in range(1, len(js)):
        matches = [i for i in range(j) if _same_junction(js[i], js[j], tol)]
        if not matches:
            continue
        if len(matches) > 1:
            xs = ", ".join(f"{js[i].x:.12g}" for i in matches)
            raise AmbiguousClosure(f"two closure candidates within tol at x = {xs}")
        i = matches[0]
        arcs = _arcs_between(orbit, js[i], js[j])
        jset = js[i + 1 : j + 1]
        poly = np.vstack([a.polyline(400) for a in arcs])
        return LoopRecord(
            (js[j].x, js[j].y), classify_junctions(jset, arcs), arcs, signed_area(poly), jset, js[j].t - js[i].t
        )
    found = _return_to_start(orbit, tol)
    if found is None:
        return None
    ia, tm = found
    arcs = list(orbit.arcs[:ia])
    last = orbit.arcs[ia]
    sub = Arc(last.regime, last.t0, last.entry, last.sgn)
    sub._ts, sub._hs, sub._rc = last._ts, last._hs, last._rc
    sub.t1 = tm
    p = last.at(tm)[0]
    sub.exit = Event(tm, p[0], p[1], "closure", last.regime, last.regime)
    arcs.append(sub)
    jset = [e for e in js if e.t <= tm]
    poly = np.vstack([a.polyline(400) for a in arcs])
    kind = classify_junctions(jset, arcs)
    if kind == "grazing" and not _touches(arcs):
        kind = "smooth"
    return LoopRecord(tuple(arcs[0].start), kind, arcs, signed_area(poly), jset, tm - arcs[0].t0)


def _touches(arcs, tol=1e-6):
    """True when some smooth arc comes within ``tol`` of y = 0 (refined near the sampled minimum)."""
    from scipy.optimize import minimize_scalar

    for a in arcs:
        if a.regime == SLIDING:
            return True
        t, _, ys = a.sample(2000)
        i = int(np.argmin(np.abs(ys)))
        if abs(ys[i]) < tol:
            return True
        lo, hi = t[max(i - 1, 0)], t[min(i + 1, len(t) - 1)]
        if hi > lo:
            res = minimize_scalar(lambda tt: abs(a.at(tt)[0][1]), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun < tol:
                return True
    return False


def _arcs_between(orbit, ja: Event, jb: Event):
    out = []
    for a in orbit.arcs:
        if a.t0 >= ja.t - 1e-15 and a.t1 <= jb.t + 1e-15 and (a.t1 > a.t0 or a.regime == SLIDING):
            if a.entry.t >= ja.t - 1e-15:
                out.append(a)
    return out
