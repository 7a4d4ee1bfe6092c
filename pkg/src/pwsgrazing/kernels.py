"""Hot numeric kernels.

Everything here is restricted to the numba-compatible subset of Python so
that :func:`pwsgrazing._accel.njit` can compile it; with numba disabled the
same functions run as ordinary Python.

The integrator is the Dormand-Prince 5(4) pair with Hairer's free
fourth-order dense output.  Field right-hand sides have the signature
``rhs(x, y, p) -> (f, g)`` where ``p`` is a float64 parameter vector.
"""

import math

import numpy as np

from ._accel import njit

# status codes returned by integrate_kernel
EVENT = 0
TIME_LIMIT = 1
DOMAIN_EXIT = 2
STEP_UNDERFLOW = 3
CAPACITY = 4
NONFINITE = 5

STATUS_NAMES = {
    EVENT: "event",
    TIME_LIMIT: "time-limit",
    DOMAIN_EXIT: "domain-exit",
    STEP_UNDERFLOW: "step-underflow",
    CAPACITY: "capacity",
    NONFINITE: "nonfinite",
}

ETA_CLIP = 700.0

# Dormand-Prince coefficients
C2, C3, C4, C5 = 0.2, 0.3, 0.8, 8.0 / 9.0
A21 = 0.2
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
A71, A73, A74, A75, A76 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)
D1 = -12715105075.0 / 11282082432.0
D3 = 87487479700.0 / 32700410799.0
D4 = -10690763975.0 / 1880347072.0
D5 = 701980252875.0 / 199316789632.0
D6 = -1453857185.0 / 822651844.0
D7 = 69997945.0 / 29380423.0


@njit
def _stage(rhs, p, x, y, sgn):
    f, g = rhs(x, y, p)
    return sgn * f, sgn * g


@njit
def dopri_step(rhs, p, x, y, k1x, k1y, h, sgn):
    """One Dormand-Prince step; returns new state, k7, error, dense coeffs."""
    k2x, k2y = _stage(rhs, p, x + h * A21 * k1x, y + h * A21 * k1y, sgn)
    k3x, k3y = _stage(
        rhs, p, x + h * (A31 * k1x + A32 * k2x), y + h * (A31 * k1y + A32 * k2y), sgn
    )
    k4x, k4y = _stage(
        rhs,
        p,
        x + h * (A41 * k1x + A42 * k2x + A43 * k3x),
        y + h * (A41 * k1y + A42 * k2y + A43 * k3y),
        sgn,
    )
    k5x, k5y = _stage(
        rhs,
        p,
        x + h * (A51 * k1x + A52 * k2x + A53 * k3x + A54 * k4x),
        y + h * (A51 * k1y + A52 * k2y + A53 * k3y + A54 * k4y),
        sgn,
    )
    k6x, k6y = _stage(
        rhs,
        p,
        x + h * (A61 * k1x + A62 * k2x + A63 * k3x + A64 * k4x + A65 * k5x),
        y + h * (A61 * k1y + A62 * k2y + A63 * k3y + A64 * k4y + A65 * k5y),
        sgn,
    )
    xn = x + h * (A71 * k1x + A73 * k3x + A74 * k4x + A75 * k5x + A76 * k6x)
    yn = y + h * (A71 * k1y + A73 * k3y + A74 * k4y + A75 * k5y + A76 * k6y)
    k7x, k7y = _stage(rhs, p, xn, yn, sgn)
    ex = h * (E1 * k1x + E3 * k3x + E4 * k4x + E5 * k5x + E6 * k6x + E7 * k7x)
    ey = h * (E1 * k1y + E3 * k3y + E4 * k4y + E5 * k5y + E6 * k6y + E7 * k7y)
    r = np.empty((5, 2))
    r[0, 0] = x
    r[0, 1] = y
    r[1, 0] = xn - x
    r[1, 1] = yn - y
    r[2, 0] = h * k1x - r[1, 0]
    r[2, 1] = h * k1y - r[1, 1]
    r[3, 0] = r[1, 0] - h * k7x - r[2, 0]
    r[3, 1] = r[1, 1] - h * k7y - r[2, 1]
    r[4, 0] = h * (D1 * k1x + D3 * k3x + D4 * k4x + D5 * k5x + D6 * k6x + D7 * k7x)
    r[4, 1] = h * (D1 * k1y + D3 * k3y + D4 * k4y + D5 * k5y + D6 * k6y + D7 * k7y)
    return xn, yn, k7x, k7y, ex, ey, r


@njit
def dense_eval(r, theta):
    s = 1.0 - theta
    x = r[0, 0] + theta * (r[1, 0] + s * (r[2, 0] + theta * (r[3, 0] + s * r[4, 0])))
    y = r[0, 1] + theta * (r[1, 1] + s * (r[2, 1] + theta * (r[3, 1] + s * r[4, 1])))
    return x, y


@njit
def _zval(r, theta, ea, eb, ec):
    x, y = dense_eval(r, theta)
    return ea * x + eb * y + ec


@njit
def _outside(x, y, box):
    return x < box[0] or x > box[1] or y < box[2] or y > box[3]


@njit
def _bisect_theta(r, lo, hi, ea, eb, ec, zlo_sign):
    # z(lo) has sign zlo_sign, z(hi) the opposite
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        zm = _zval(r, mid, ea, eb, ec)
        if zm * zlo_sign > 0.0:
            lo = mid
        else:
            hi = mid
    return lo, hi


NSAMP = 16
_GOLD = 0.3819660112501051


@njit
def _golden_min(r, a, b, ea, eb, ec, zs):
    """Minimise ``zs * z(theta)`` on [a, b] (unimodal bracket)."""
    c = a + _GOLD * (b - a)
    d = b - _GOLD * (b - a)
    fc = zs * _zval(r, c, ea, eb, ec)
    fd = zs * _zval(r, d, ea, eb, ec)
    for _ in range(80):
        if fc <= fd:
            b = d
            d = c
            fd = fc
            c = a + _GOLD * (b - a)
            fc = zs * _zval(r, c, ea, eb, ec)
        else:
            a = c
            c = d
            fc = fd
            d = b - _GOLD * (b - a)
            fd = zs * _zval(r, d, ea, eb, ec)
        if b - a < 1e-15:
            break
    if fc <= fd:
        return c, fc * zs
    return d, fd * zs


@njit
def integrate_kernel(
    rhs,
    p,
    x0,
    y0,
    sgn,
    t_max,
    rtol,
    atol,
    max_step,
    h0,
    dead_t,
    ev,
    ev_dir,
    box,
    cap,
):
    """Adaptive DOPRI5 integration with one linear event.

    The event function is ``z = ev[0]*x + ev[1]*y + ev[2]``; ``ev_dir`` is
    -1 to stop when z goes from positive to non-positive, +1 for negative to
    non-negative, 0 to disable.  Events within ``dead_t`` of the start are
    ignored.  Time runs forward; ``sgn=-1`` integrates the reversed field.

    Returns ``(status, n, ts, hs, rcont, t_end, x_end, y_end, h_last)``.
    """
    ts = np.empty(cap)
    hs = np.empty(cap)
    rc = np.empty((cap, 5, 2))
    t = 0.0
    x = x0
    y = y0
    k1x, k1y = _stage(rhs, p, x, y, sgn)
    if not (math.isfinite(k1x) and math.isfinite(k1y)):
        return NONFINITE, 0, ts, hs, rc, t, x, y, h0
    h = h0
    if h <= 0.0:
        nrm = math.sqrt(k1x * k1x + k1y * k1y)
        h = 0.01 / max(nrm, 1e-12)
    h = min(h, max_step, t_max)
    ea = ev[0]
    eb = ev[1]
    ec = ev[2]
    n = 0
    hmin = 1e-15 * max(1.0, t_max)
    while True:
        if n >= cap:
            return CAPACITY, n, ts, hs, rc, t, x, y, h
        if t_max - t <= 1e-15 * max(1.0, t_max):
            return TIME_LIMIT, n, ts, hs, rc, t, x, y, h
        h = min(h, t_max - t)
        xn, yn, k7x, k7y, ex, ey, r = dopri_step(rhs, p, x, y, k1x, k1y, h, sgn)
        if not (math.isfinite(xn) and math.isfinite(yn) and math.isfinite(k7x) and math.isfinite(k7y)):
            h *= 0.25
            if h < hmin:
                return NONFINITE, n, ts, hs, rc, t, x, y, h
            continue
        sx = atol + rtol * max(abs(x), abs(xn))
        sy = atol + rtol * max(abs(y), abs(yn))
        err = math.sqrt(0.5 * ((ex / sx) ** 2 + (ey / sy) ** 2))
        if err > 1.0:
            fac = max(0.2, 0.9 * err ** (-0.2))
            h *= fac
            if h < hmin:
                return STEP_UNDERFLOW, n, ts, hs, rc, t, x, y, h
            continue
        # accepted step
        ts[n] = t
        hs[n] = h
        rc[n] = r
        n += 1
        # event search on dense output over (max(t, dead_t), t+h]
        if ev_dir != 0:
            th_lo = 0.0
            if t < dead_t:
                th_lo = min(1.0, (dead_t - t) / h)
            if th_lo < 1.0:
                zs = -float(ev_dir)  # sign of z before the event
                prev = th_lo
                zprev = _zval(r, prev, ea, eb, ec)
                found = False
                lo = 0.0
                hi = 1.0
                if zprev * zs <= 0.0 and th_lo > 0.0:
                    # orbit already on the far side once the deadband ends
                    found = True
                    hi = th_lo
                prev2 = prev
                zprev2 = zprev
                for q in range(1, NSAMP + 1):
                    if found:
                        break
                    th = th_lo + (1.0 - th_lo) * q / NSAMP
                    zq = _zval(r, th, ea, eb, ec)
                    if zprev * zs > 0.0 and zq * zs <= 0.0:
                        found = True
                        lo, hi = _bisect_theta(r, prev, th, ea, eb, ec, zs)
                        break
                    if q >= 2 and zs * zprev < zs * zprev2 and zs * zprev <= zs * zq:
                        # shallow dip between samples: minimise zs*z on it
                        tmin, zmin = _golden_min(r, prev2, th, ea, eb, ec, zs)
                        if zmin * zs <= 0.0:
                            found = True
                            lo, hi = _bisect_theta(r, prev2, tmin, ea, eb, ec, zs)
                            break
                    prev2 = prev
                    zprev2 = zprev
                    prev = th
                    zprev = zq
                if found:
                    te = t + hi * h
                    # polish with fresh steps from the step start
                    xe, ye = dense_eval(r, hi)
                    dt = hi * h
                    for _it in range(4):
                        if dt <= 0.0:
                            break
                        xa, ya, _a, _b, _c, _d, _r = dopri_step(rhs, p, x, y, k1x, k1y, dt, sgn)
                        fa, ga = _stage(rhs, p, xa, ya, sgn)
                        z = ea * xa + eb * ya + ec
                        zd = ea * fa + eb * ga
                        xe = xa
                        ye = ya
                        if zd == 0.0 or abs(z) < 1e-300:
                            break
                        corr = -z / zd
                        if abs(corr) > 0.5 * h:
                            break
                        dt += corr
                        if abs(corr) <= 1e-16 * max(1.0, abs(dt)):
                            xa, ya, _a, _b, _c, _d, _r = dopri_step(rhs, p, x, y, k1x, k1y, dt, sgn)
                            xe = xa
                            ye = ya
                            break
                    te = t + dt
                    hs[n - 1] = dt
                    # re-fit dense coefficients over the shortened step
                    xa, ya, _a, _b, _c, _d, r2 = dopri_step(rhs, p, x, y, k1x, k1y, dt, sgn)
                    rc[n - 1] = r2
                    return EVENT, n, ts, hs, rc, te, xe, ye, h
        if _outside(xn, yn, box):
            # locate the box exit by bisection on theta
            lo = 0.0
            hi = 1.0
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                xm, ym = dense_eval(r, mid)
                if _outside(xm, ym, box):
                    hi = mid
                else:
                    lo = mid
            xe, ye = dense_eval(r, hi)
            hs[n - 1] = hi * h
            xa, ya, _a, _b, _c, _d, r2 = dopri_step(rhs, p, x, y, k1x, k1y, hi * h, sgn)
            rc[n - 1] = r2
            return DOMAIN_EXIT, n, ts, hs, rc, t + hi * h, xe, ye, h
        t += h
        x = xn
        y = yn
        k1x = k7x
        k1y = k7y
        fac = min(10.0, max(0.2, 0.9 * max(err, 1e-10) ** (-0.2)))
        h = min(h * fac, max_step)


@njit
def dense_sample(ts, hs, rc, n, tq):
    """Evaluate the dense output at query times ``tq`` (sorted)."""
    out = np.empty((tq.shape[0], 2))
    j = 0
    for i in range(tq.shape[0]):
        tt = tq[i]
        while j < n - 1 and tt > ts[j] + hs[j]:
            j += 1
        th = (tt - ts[j]) / hs[j] if hs[j] > 0.0 else 0.0
        th = min(1.0, max(0.0, th))
        x, y = dense_eval(rc[j], th)
        out[i, 0] = x
        out[i, 1] = y
    return out


# --------------------------------------------------------------------------- cutoffs


@njit
def eta_value(x, r1, r2):
    return 1.0 / (x - r1) + 1.0 / (x - r2)


@njit
def hstar_triple(x, r1, r2):
    """Rising cutoff h, its complement 1 - h and dh/dx, free of cancellation."""
    if x <= r1:
        return 0.0, 1.0, 0.0
    if x >= r2:
        return 1.0, 0.0, 0.0
    e = eta_value(x, r1, r2)
    if e >= ETA_CLIP:
        return 0.0, 1.0, 0.0
    if e <= -ETA_CLIP:
        return 1.0, 0.0, 0.0
    h = 1.0 / (1.0 + math.exp(e))
    hc = math.exp(e) * h  # 1 - h without rounding to zero near h = 1
    dh = h * hc * (1.0 / (x - r1) ** 2 + 1.0 / (x - r2) ** 2)
    return h, hc, dh


@njit
def hstar_pair(x, r1, r2):
    """Rising cutoff and its derivative."""
    h, _, dh = hstar_triple(x, r1, r2)
    return h, dh


@njit
def psi_pair(x, k, d, valid):
    """Bump chain value and x-derivative; ``k`` has length 3d+1."""
    if valid == 0.0 or d == 0:
        return 0.0, 0.0
    if x <= k[0] or x > k[2 * d]:
        return 0.0, 0.0
    for i in range(d):
        a = k[2 * i]
        b = k[2 * i + 1]
        c = k[2 * i + 2]
        hgt = k[2 * d + 1 + i]
        if x > a and x <= b:
            h, _, dh = hstar_triple(x, a, b)
            return hgt * h, hgt * dh
        if x > b and x <= c:
            _, hc, dh = hstar_triple(x, b, c)
            return hgt * hc, -hgt * dh
    return 0.0, 0.0


@njit
def psi_array(xs, k, d, valid):
    out = np.empty((xs.shape[0], 2))
    for i in range(xs.shape[0]):
        s, sd = psi_pair(xs[i], k, d, valid)
        out[i, 0] = s
        out[i, 1] = sd
    return out


@njit
def field_grid(rhs, p, xs, ys):
    """Evaluate a field on the tensor grid ``xs x ys``; shape (nx, ny, 2)."""
    out = np.empty((xs.shape[0], ys.shape[0], 2))
    for i in range(xs.shape[0]):
        for j in range(ys.shape[0]):
            f, g = rhs(xs[i], ys[j], p)
            out[i, j, 0] = f
            out[i, j, 1] = g
    return out
