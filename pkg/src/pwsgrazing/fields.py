"""Planar vector fields with compiled right-hand sides.

A :class:`Field` owns generated Python source for ``rhs(x, y, p)`` and a
parameter vector ``p``.  The source is compiled once (numba when enabled)
and cached by text, so families that differ only in parameters share one
kernel.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import expr as ex
from . import kernels
from ._accel import HAS_NUMBA, njit

_FD_STEP = 1e-6


@lru_cache(maxsize=None)
def _compile(source: str):
    ns = {
        "sin": math.sin,
        "cos": math.cos,
        "exp": math.exp,
        "psi_pair": kernels.psi_pair,
    }
    exec(source, ns)
    py = ns["rhs"]
    if HAS_NUMBA:
        return py, njit(py)
    return py, py


class Field:
    """Smooth planar field ``(f, g)``; subclasses provide the source."""

    source: str
    params: np.ndarray
    # largest step that still resolves the narrowest feature of the field
    max_step: float = math.inf

    def __init__(self, source: str, params=None):
        self.source = source
        self.params = np.zeros(1) if params is None else np.asarray(params, dtype=float)
        self._py, self._kernel = _compile(source)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_py", None)
        state.pop("_kernel", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._py, self._kernel = _compile(self.source)

    @property
    def kernel(self):
        return self._kernel

    def __call__(self, x: float, y: float):
        return self._py(float(x), float(y), self.params)

    def f(self, x, y):
        return self(x, y)[0]

    def g(self, x, y):
        return self(x, y)[1]

    def grid(self, xs, ys):
        return kernels.field_grid(self._kernel, self.params, np.asarray(xs, float), np.asarray(ys, float))

    # partials: exact jets where available, otherwise central differences
    def jacobian(self, x, y):
        h = _FD_STEP
        fxp, gxp = self(x + h, y)
        fxm, gxm = self(x - h, y)
        fyp, gyp = self(x, y + h)
        fym, gym = self(x, y - h)
        return np.array(
            [[(fxp - fxm) / (2 * h), (fyp - fym) / (2 * h)], [(gxp - gxm) / (2 * h), (gyp - gym) / (2 * h)]]
        )

    def divergence(self, x, y):
        jac = self.jacobian(x, y)
        return jac[0, 0] + jac[1, 1]

    def g_x_derivatives(self, x0: float, order: int) -> np.ndarray:
        """``d^k g / dx^k (x0, 0)`` for k = 0..order; exact or an error."""
        raise NotImplementedError(f"{type(self).__name__} has no exact jets")

    def has_exact_jets(self, x0: float) -> bool:
        return False

    def f_at(self, x0):
        return self(x0, 0.0)[0]


class ExprField(Field):
    """Field given by two expressions."""

    def __init__(self, fx, fy):
        self.fx = ex.parse(fx) if isinstance(fx, str) else fx
        self.fy = ex.parse(fy) if isinstance(fy, str) else fy
        src = (
            "def rhs(x, y, p):\n"
            f"    return {ex.to_source(self.fx)}, {ex.to_source(self.fy)}\n"
        )
        super().__init__(src)

    def jets(self, x, y, order):
        return ex.jet(self.fx, x, y, order), ex.jet(self.fy, x, y, order)

    def jacobian(self, x, y):
        jf, jg = self.jets(x, y, 1)
        return np.array([[jf[1, 0], jf[0, 1]], [jg[1, 0], jg[0, 1]]])

    def has_exact_jets(self, x0):
        return True

    def g_x_derivatives(self, x0, order):
        return ex.jet(self.fy, x0, 0.0, order).x_derivatives()

    def f_at(self, x0):
        return ex.evaluate(self.fx, x0, 0.0)

    def scaled(self, c: float) -> "ExprField":
        """Time reparametrization ``c * (f, g)``."""
        return ExprField(ex.mul(ex.num(c), self.fx), ex.mul(ex.num(c), self.fy))

    def rotated(self, angle: float) -> "ExprField":
        """Field conjugated by a rotation of the plane by ``angle``."""
        c, s = math.cos(angle), math.sin(angle)
        # pull back coordinates: (x, y) = R (u, v) -> (u, v) = R^T (x, y)
        u = ex.add(ex.mul(ex.num(c), ex.Var("x")), ex.mul(ex.num(s), ex.Var("y")))
        v = ex.add(ex.mul(ex.num(-s), ex.Var("x")), ex.mul(ex.num(c), ex.Var("y")))
        fu = ex.substitute(self.fx, u, v)
        gu = ex.substitute(self.fy, u, v)
        fx = ex.sub(ex.mul(ex.num(c), fu), ex.mul(ex.num(s), gu))
        fy = ex.add(ex.mul(ex.num(s), fu), ex.mul(ex.num(c), gu))
        return ExprField(fx, fy)

    def __repr__(self):
        return f"ExprField({ex.to_string(self.fx)!r}, {ex.to_string(self.fy)!r})"


class PolyLowerField(Field):
    """Lower field ``(fm(x, y+s), phi(x, y+s) * prod(x - lam_i) - fm * s')``.

    ``s`` is the bump chain of :mod:`pwsgrazing.unfold` evaluated from the
    parameter vector, so the unshifted transition field is the case
    ``valid = 0``.  Parameter layout: ``[lam_1..lam_m, valid, k_1..k_{3d+1}]``.
    """

    def __init__(self, fm, phi, lam, k=None, valid=False):
        self.fm = ex.parse(fm) if isinstance(fm, str) else fm
        self.phi = ex.parse(phi) if isinstance(phi, str) else phi
        self.lam = np.asarray(lam, dtype=float)
        m = len(self.lam)
        k = np.zeros(1) if k is None or len(k) == 0 else np.asarray(k, dtype=float)
        self.k = k
        self.d = (len(k) - 1) // 3 if len(k) > 1 else 0
        self.valid = bool(valid) and self.d > 0
        d = self.d
        src = (
            "def rhs(x, y, p):\n"
            f"    s, sd = psi_pair(x, p[{m + 1}:], {d}, p[{m}])\n"
            "    yy = y + s\n"
            f"    fm = {ex.to_source(self.fm, 'x', 'yy')}\n"
            "    prod = 1.0\n"
            f"    for i in range({m}):\n"
            "        prod *= x - p[i]\n"
            f"    return fm, ({ex.to_source(self.phi, 'x', 'yy')}) * prod - fm * sd\n"
        )
        params = np.concatenate([self.lam, [1.0 if self.valid else 0.0], k])
        super().__init__(src, params)
        if self.valid:
            # cutoff transitions are about a tenth of a bump flank wide
            self.max_step = float(np.min(np.diff(k[: 2 * d + 1]))) / 100.0

    @property
    def m(self):
        return len(self.lam)

    def psi(self, x):
        return kernels.psi_pair(float(x), self.params[self.m + 1 :], self.d, self.params[self.m])

    def _psi_flat(self, x0, tol=1e-300):
        if not self.valid:
            return True, 0.0
        k = self.k[: 2 * self.d + 1]
        if x0 <= k[0] or x0 >= k[-1]:
            return True, 0.0
        s, sd = self.psi(x0)
        near_break = np.min(np.abs(k - x0)) <= 1e-12 * max(1.0, abs(x0))
        return (near_break or abs(sd) <= tol), s

    def has_exact_jets(self, x0):
        return self._psi_flat(x0)[0]

    def g_x_derivatives(self, x0, order):
        flat, s = self._psi_flat(x0)
        if not flat:
            raise ValueError(
                f"exact x-derivatives of the unfolded lower field need a flat bump at x={x0}"
            )
        # bump locally constant: g(x, 0) = phi(x, s) * prod(x - lam)
        jp = ex.jet(ex.substitute(self.phi, y=ex.num(s)), x0, 0.0, order).x_derivatives()
        poly = np.poly1d(np.poly(self.lam)) if len(self.lam) else np.poly1d([1.0])
        pd = []
        q = poly
        for _ in range(order + 1):
            pd.append(q(x0))
            q = q.deriv()
        out = np.zeros(order + 1)
        for n in range(order + 1):
            out[n] = sum(math.comb(n, j) * jp[j] * pd[n - j] for j in range(n + 1))
        return out

    def f_at(self, x0):
        flat, s = self._psi_flat(x0)
        return ex.evaluate(self.fm, x0, s)


class ShiftedField(Field):
    """``base(x, y + alpha)`` for an expression field."""

    def __init__(self, base: ExprField, alpha: float):
        self.base = base
        self.alpha = float(alpha)
        src = (
            "def rhs(x, y, p):\n"
            "    yy = y + p[0]\n"
            f"    return {ex.to_source(base.fx, 'x', 'yy')}, {ex.to_source(base.fy, 'x', 'yy')}\n"
        )
        super().__init__(src, np.array([self.alpha]))

    def has_exact_jets(self, x0):
        return True

    def g_x_derivatives(self, x0, order):
        return ex.jet(self.base.fy, x0, self.alpha, order).x_derivatives()

    def jacobian(self, x, y):
        return self.base.jacobian(x, y + self.alpha)

    def f_at(self, x0):
        return ex.evaluate(self.base.fx, x0, self.alpha)
