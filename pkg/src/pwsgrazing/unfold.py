"""Perturbation scaffolding for a grazing loop through a (1, m) tangency.

Cutoffs ``h*``/``h_*``, the bump chain ``psi(x, k)``, the unfolded and
transition systems, admissibility of the bump parameters, the C1 distance
between two systems, and the shift identity relating the lower orbits of
the unfolded and transition systems.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from . import kernels
from .fields import ExprField, PolyLowerField, ShiftedField
from .flow import DEFAULT, FREE, Controls, integrate_arc
from .system import PWSSystem

HEIGHT_EXPONENT = 5


@dataclass(frozen=True)
class CutoffSpec:
    r1: float
    r2: float

    def __post_init__(self):
        if not self.r1 < self.r2:
            raise ValueError(f"cutoff breakpoints must satisfy r1 < r2 (got {self.r1}, {self.r2})")


def eta(x: float, spec: CutoffSpec) -> float:
    if not spec.r1 < x < spec.r2:
        raise ValueError(f"eta is defined only strictly inside ({spec.r1}, {spec.r2}); x={x}")
    return kernels.eta_value(float(x), spec.r1, spec.r2)


def cutoff_up(x: float, spec: CutoffSpec) -> float:
    return kernels.hstar_pair(float(x), spec.r1, spec.r2)[0]


def cutoff_down(x: float, spec: CutoffSpec) -> float:
    return 1.0 - kernels.hstar_pair(float(x), spec.r1, spec.r2)[0]


@dataclass
class UnfoldingParams:
    alpha: float = 0.0
    lam: list = field(default_factory=list)
    d: int = 0
    k: list = field(default_factory=list)
    beta: list = field(default_factory=list)

    def __post_init__(self):
        self.lam = [float(v) for v in self.lam]
        self.k = [float(v) for v in self.k]
        self.beta = [float(v) for v in self.beta]
        if self.d and len(self.k) != 3 * self.d + 1:
            raise ValueError(f"k must have 3d+1 = {3 * self.d + 1} entries, got {len(self.k)}")

    @property
    def m(self):
        return len(self.lam)

    @property
    def breakpoints(self):
        return np.array(self.k[: 2 * self.d + 1])

    @property
    def heights(self):
        return np.array(self.k[2 * self.d + 1 :])

    @property
    def valid(self) -> bool:
        """Strictly ordered breakpoints (the nonzero branch of psi)."""
        if self.d == 0:
            return False
        b = self.breakpoints
        return bool(np.all(np.diff(b) > 0))

    @property
    def kvec(self):
        return np.array(self.k) if self.d else np.zeros(1)

    def to_json(self):
        return json.dumps({"alpha": self.alpha, "lambda": self.lam, "d": self.d, "k": self.k, "beta": self.beta})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text) if isinstance(text, str) else text
        return cls(obj.get("alpha", 0.0), obj.get("lambda", []), obj.get("d", 0), obj.get("k", []), obj.get("beta", []))

    @classmethod
    def bumps(cls, breaks, heights, alpha=0.0, lam=(), beta=None):
        breaks = list(breaks)
        heights = list(heights)
        d = len(heights)
        if len(breaks) != 2 * d + 1:
            raise ValueError("need 2d+1 breakpoints for d heights")
        if beta is None:
            b = np.asarray(breaks)
            beta = [(b[2 * i + 2] - b[2 * i + 1]) / (b[2 * i + 1] - b[2 * i]) for i in range(d)]
        return cls(alpha, list(lam), d, breaks + heights, list(beta))


def psi(x, params: UnfoldingParams) -> float:
    return kernels.psi_pair(float(x), params.kvec, params.d, 1.0 if params.valid else 0.0)[0]


def psi_prime(x, params: UnfoldingParams) -> float:
    return kernels.psi_pair(float(x), params.kvec, params.d, 1.0 if params.valid else 0.0)[1]


def psi_table(xs, params: UnfoldingParams):
    return kernels.psi_array(np.asarray(xs, float), params.kvec, params.d, 1.0 if params.valid else 0.0)


# --------------------------------------------------------------------------- normal form


class NotNormalForm(ValueError):
    pass


def _x_power(e):
    if isinstance(e, ex.Var) and e.name == "x":
        return 1
    if isinstance(e, ex.Pow) and isinstance(e.base, ex.Var) and e.base.name == "x":
        return e.exponent
    return 0


def _factors(e, out):
    if isinstance(e, ex.BinOp) and e.op == "*":
        _factors(e.left, out)
        _factors(e.right, out)
    else:
        out.append(e)


def split_normal_form(g):
    """Write a lower y-component as ``phi(x, y) * x^m``.

    Recognizes products whose x-power factors are explicit; returns
    ``(phi, m)`` and checks phi(0, 0) != 0.
    """
    g = ex.parse(g) if isinstance(g, str) else g
    sign = 1.0
    while isinstance(g, ex.Neg):
        sign = -sign
        g = g.arg
    facs = []
    _factors(g, facs)
    m = 0
    rest = []
    for f in facs:
        p = _x_power(f)
        if p:
            m += p
        else:
            rest.append(f)
    if m == 0:
        raise NotNormalForm("lower y-component has no explicit x^m factor")
    phi = ex.num(sign)
    for f in rest:
        phi = ex.mul(phi, f)
    if ex.evaluate(phi, 0.0, 0.0) == 0.0:
        raise NotNormalForm("phi(0, 0) vanishes")
    return phi, m


@dataclass
class NormalForm:
    """Base system with lower field ``(fm, phi * x^m)``."""

    upper: ExprField
    fm: ex.Expr
    phi: ex.Expr
    m: int
    domain: tuple = (-2.0, 2.0, -2.0, 3.0)

    @classmethod
    def from_system(cls, sys: PWSSystem):
        if not isinstance(sys.lower, ExprField) or not isinstance(sys.upper, ExprField):
            raise NotNormalForm("base system must be given by expressions")
        phi, m = split_normal_form(sys.lower.fy)
        return cls(sys.upper, sys.lower.fx, phi, m, sys.domain)

    def system(self):
        g = ex.mul(self.phi, ex.Pow(ex.Var("x"), self.m))
        return PWSSystem(self.upper, ExprField(self.fm, g), self.domain)


def _as_nf(base):
    return base if isinstance(base, NormalForm) else NormalForm.from_system(base)


def build_unfolded(base, params: UnfoldingParams) -> PWSSystem:
    nf = _as_nf(base)
    lam = params.lam if params.lam else [0.0] * nf.m
    if len(lam) != nf.m:
        raise ValueError(f"lambda must have m = {nf.m} entries")
    upper = ShiftedField(nf.upper, params.alpha) if params.alpha != 0.0 else nf.upper
    lower = PolyLowerField(nf.fm, nf.phi, lam, params.kvec if params.d else None, params.valid)
    return PWSSystem(upper, lower, nf.domain)


def build_transition(base, lam) -> PWSSystem:
    return build_unfolded(base, UnfoldingParams(0.0, list(lam)))


# --------------------------------------------------------------------------- admissibility


@dataclass
class AdmissibilityReport:
    admissible: bool
    branch: str  # zero | bumps
    violations: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    height_bounds: list = field(default_factory=list)


def check_admissible(params: UnfoldingParams, beta_rtol: float = 1e-9) -> AdmissibilityReport:
    if not params.valid:
        return AdmissibilityReport(True, "zero")
    b = params.breakpoints
    hs = params.heights
    rep = AdmissibilityReport(True, "bumps")
    for i in range(params.d):
        rise = b[2 * i + 1] - b[2 * i]
        fall = b[2 * i + 2] - b[2 * i + 1]
        ratio = fall / rise
        rep.ratios.append(ratio)
        if params.beta:
            bi = params.beta[i]
            if bi <= 0:
                rep.violations.append(f"beta_{i + 1} must be positive")
            elif abs(ratio - bi) > beta_rtol * max(1.0, abs(bi)):
                rep.violations.append(f"ratio clause: fall/rise = {ratio:.6g} != beta_{i + 1} = {bi:.6g}")
        bound = rise**HEIGHT_EXPONENT
        rep.height_bounds.append(bound)
        if abs(hs[i]) > bound:
            rep.violations.append(
                f"o(spacing^4) clause: |height_{i + 1}| = {abs(hs[i]):.3g} > spacing^{HEIGHT_EXPONENT} = {bound:.3g}"
            )
    rep.admissible = not rep.violations
    return rep


# --------------------------------------------------------------------------- distance


@dataclass
class DistanceReport:
    grid: int
    components: dict
    total: float
    failures: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def _grid_vals(fld, xs, ys):
    return fld.grid(xs, ys)


def transition_nodes(params: UnfoldingParams, n: int = 201, span: float = 12.0):
    """Abscissas resolving every cutoff transition of psi, plus the finest width.

    On (a, b) the cutoff switches within ~(b-a)^2/8 of the midpoint, far
    below a coarse lattice spacing, so the sup of psi' and psi'' needs
    nodes there.
    """
    if not params.d or not params.valid:
        return np.empty(0), math.inf
    b = params.breakpoints
    nodes, wmin = [], math.inf
    for lo, hi in zip(b[:-1], b[1:]):
        w = (hi - lo) ** 2 / 8.0
        wmin = min(wmin, w)
        mid = 0.5 * (lo + hi)
        nodes.append(mid + w * np.linspace(-span, span, n))
        nodes.append(np.linspace(lo, hi, n))
    xs = np.concatenate(nodes)
    return xs[(xs > b[0]) & (xs < b[-1])], wmin


def c1_distance(sys_a: PWSSystem, sys_b: PWSSystem, grid_n: int = 200, step: float = 1e-6, refine=None) -> DistanceReport:
    """Sup over a lattice of |P-Q| + |dP/dx - dQ/dx| + |dP/dy - dQ/dy| per component.

    ``refine`` (UnfoldingParams) adds the x-nodes of ``transition_nodes``
    and shrinks the difference step below the narrowest transition.
    """
    if tuple(sys_a.domain) != tuple(sys_b.domain):
        raise ValueError("systems must share the domain")
    x0, x1, y0, y1 = sys_a.domain
    xs = np.linspace(x0, x1, grid_n)
    ys = np.linspace(y0, y1, grid_n)
    if refine is not None:
        extra, wmin = transition_nodes(refine)
        xs = np.unique(np.concatenate([xs, extra[(extra > x0) & (extra < x1)]]))
        step = min(step, wmin / 50.0)
    comps = {}
    failures = []
    for name, fa, fb in (("upper", sys_a.upper, sys_b.upper), ("lower", sys_a.lower, sys_b.lower)):
        d0 = _grid_vals(fa, xs, ys) - _grid_vals(fb, xs, ys)
        dxp = _grid_vals(fa, xs + step, ys) - _grid_vals(fb, xs + step, ys)
        dxm = _grid_vals(fa, xs - step, ys) - _grid_vals(fb, xs - step, ys)
        dyp = _grid_vals(fa, xs, ys + step) - _grid_vals(fb, xs, ys + step)
        dym = _grid_vals(fa, xs, ys - step) - _grid_vals(fb, xs, ys - step)
        ddx = (dxp - dxm) / (2 * step)
        ddy = (dyp - dym) / (2 * step)
        tot = np.abs(d0) + np.abs(ddx) + np.abs(ddy)
        bad = ~np.isfinite(tot)
        if np.any(bad):
            for i, j, c in zip(*np.nonzero(bad)):
                failures.append({"component": name, "x": float(xs[i]), "y": float(ys[j])})
            tot = np.where(bad, 0.0, tot)
        comps[f"{name}.f"] = float(np.max(tot[:, :, 0]))
        comps[f"{name}.g"] = float(np.max(tot[:, :, 1]))
    return DistanceReport(grid_n, comps, float(sum(comps.values())), failures)


# --------------------------------------------------------------------------- deformation identity


@dataclass
class DeformationResult:
    max_error: float
    horizon: float
    truncated: bool
    samples: int


def deformation_check(base, lam, params: UnfoldingParams, start, horizon: float, controls: Controls = DEFAULT, n: int = 200):
    """Sup discrepancy of  gt(t, x0, y0 - psi(x0)) = gh(t, x0, y0) - (0, psi(gh_1(t))).

    ``gh`` is the lower orbit of the transition system and ``gt`` that of
    the unfolded system (same lambda, alpha playing no role below the line).
    """
    trans = build_transition(base, lam)
    unf = build_unfolded(base, UnfoldingParams(0.0, list(lam), params.d, params.k, params.beta))
    x0, y0 = float(start[0]), float(start[1])
    arc_h = integrate_arc(trans.lower, (x0, y0), 1, controls, FREE, t_max=horizon)
    arc_t = integrate_arc(unf.lower, (x0, y0 - psi(x0, params)), 1, controls, FREE, t_max=horizon)
    T = min(arc_h.t1, arc_t.t1)
    t = np.linspace(0.0, T, n)
    ph = arc_h.at(t)
    pt = arc_t.at(t)
    # stay below the line for both orbits
    below = (ph[:, 1] < 0) & (pt[:, 1] < 0)
    truncated = T < horizon
    if not np.all(below):
        k = int(np.argmin(below))
        truncated = True
        t, ph, pt = t[:k], ph[:k], pt[:k]
        T = float(t[-1]) if len(t) else 0.0
    if len(t) == 0:
        return DeformationResult(0.0, 0.0, True, 0)
    shift = psi_table(ph[:, 0], params)[:, 0]
    pred = np.column_stack([ph[:, 0], ph[:, 1] - shift])
    err = float(np.max(np.abs(pred - pt)))
    return DeformationResult(err, T, truncated, len(t))
