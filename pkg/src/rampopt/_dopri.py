"""Compiled Dormand-Prince 5(4) kernel for dpsi/dt = -i (H0 + g(t) Hc) psi.

The equation is integrated in the interaction picture of the diagonal of
H0 (an exact change of variables that leaves every amplitude modulus
unchanged), which removes the fast free phases from the step-size control.

The Butcher tableau, error weights and dense-output polynomial are taken
from :class:`scipy.integrate.RK45`; step-size control follows the same
rules, so a single-column run reproduces ``solve_ivp(method="RK45")`` up
to the spline evaluation.

Several columns can be propagated together. They share one step sequence
whose error norm is the maximum over columns.

Steps never straddle a point where g(t) is not smooth: the spline
breakpoints (jumps of the third derivative) and the times where the
spline crosses a clamp bound (kinks). Straddling a kink costs the method
its order and lets the global error grow far beyond the tolerance.
"""
import numba
import numpy as np
from scipy.integrate import RK45

_C = np.ascontiguousarray(RK45.C, dtype=np.float64)
_A = np.ascontiguousarray(RK45.A, dtype=np.float64)
_B = np.ascontiguousarray(RK45.B, dtype=np.float64)
_E = np.ascontiguousarray(RK45.E, dtype=np.float64)
_P = np.ascontiguousarray(RK45.P, dtype=np.float64)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

OK = 0
STEP_UNDERFLOW = 1
TOO_MANY_STEPS = 2
NON_FINITE = 3


@numba.njit(cache=True, nogil=True)
def _fields(t, breaks, coeffs, g_min, g_max, out):
    nseg = breaks.size - 1
    i = 0
    while i < nseg - 1 and t >= breaks[i + 1]:
        i += 1
    dt = t - breaks[i]
    for col in range(coeffs.shape[0]):
        g = ((coeffs[col, 0, i] * dt + coeffs[col, 1, i]) * dt + coeffs[col, 2, i]) * dt + coeffs[col, 3, i]
        if g < g_min:
            g = g_min
        elif g > g_max:
            g = g_max
        out[col] = g


@numba.njit(cache=True, nogil=True)
def _rhs(t, y, diag, offdiag, has_offdiag, hc, breaks, coeffs, g_min, g_max, g, out):
    # interaction picture w.r.t. diag: y = exp(i diag t) psi, so
    # dy/dt = -i exp(i diag t) (offdiag + g hc) exp(-i diag t) y
    _fields(t, breaks, coeffs, g_min, g_max, g)
    n, ncol = y.shape
    ph = np.empty(n, dtype=np.complex128)
    for r in range(n):
        ph[r] = np.exp(-1j * diag[r] * t)
    z = np.empty_like(y)
    for r in range(n):
        for col in range(ncol):
            z[r, col] = ph[r] * y[r, col]
    hz = np.dot(hc, z)
    if has_offdiag:
        vz = np.dot(offdiag, z)
        for r in range(n):
            c = np.conj(ph[r])
            for col in range(ncol):
                out[r, col] = -1j * c * (vz[r, col] + g[col] * hz[r, col])
    else:
        for r in range(n):
            c = np.conj(ph[r])
            for col in range(ncol):
                out[r, col] = -1j * g[col] * c * hz[r, col]


@numba.njit(cache=True, nogil=True)
def _cubic(a, b, c, d, s):
    return ((a * s + b) * s + c) * s + d


@numba.njit(cache=True, nogil=True)
def _bound_crossings(a, b, c, d, width, out, n_out):
    """Append the sign changes of a*s^3 + b*s^2 + c*s + d on (0, width) to `out`."""
    cuts = np.empty(4)
    cuts[0] = 0.0
    nc = 1
    if a != 0.0:
        disc = b * b - 3.0 * a * c
        if disc > 0.0:
            r = np.sqrt(disc)
            s1 = (-b - r) / (3.0 * a)
            s2 = (-b + r) / (3.0 * a)
            if s1 > s2:
                s1, s2 = s2, s1
            for s in (s1, s2):
                if 0.0 < s < width:
                    cuts[nc] = s
                    nc += 1
    elif b != 0.0:
        s = -c / (2.0 * b)
        if 0.0 < s < width:
            cuts[nc] = s
            nc += 1
    cuts[nc] = width
    nc += 1
    for j in range(nc - 1):
        lo = cuts[j]
        hi = cuts[j + 1]
        f_lo = _cubic(a, b, c, d, lo)
        f_hi = _cubic(a, b, c, d, hi)
        if f_lo * f_hi >= 0.0:
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            f_mid = _cubic(a, b, c, d, mid)
            if f_mid * f_lo > 0.0:
                lo = mid
                f_lo = f_mid
            else:
                hi = mid
        out[n_out] = 0.5 * (lo + hi)
        n_out += 1
    return n_out


@numba.njit(cache=True, nogil=True)
def field_kinks(breaks, coeffs, g_min, g_max, t_end, merge_tol):
    """Sorted interior times where some column's field is not smooth.

    Points closer than `merge_tol` are replaced by the midpoint of their
    cluster, so nearly identical columns do not multiply the step count.
    """
    ncol = coeffs.shape[0]
    nseg = breaks.size - 1
    raw = np.empty(max(1, nseg - 1 + ncol * nseg * 6))
    n = 0
    for i in range(1, nseg):
        raw[n] = breaks[i]
        n += 1
    for col in range(ncol):
        for i in range(nseg):
            width = breaks[i + 1] - breaks[i]
            for bound in (g_min, g_max):
                start = n
                n = _bound_crossings(coeffs[col, 0, i], coeffs[col, 1, i], coeffs[col, 2, i],
                                     coeffs[col, 3, i] - bound, width, raw, n)
                for j in range(start, n):
                    raw[j] += breaks[i]
    pts = np.sort(raw[:n])
    out = np.empty(n)
    m = 0
    j = 0
    while j < n:
        k = j
        while k + 1 < n and pts[k + 1] - pts[k] < merge_tol:
            k += 1
        t = 0.5 * (pts[j] + pts[k])
        if merge_tol < t < t_end - merge_tol:
            out[m] = t
            m += 1
        j = k + 1
    return out[:m]


@numba.njit(cache=True, nogil=True)
def _error_norm(err, y, y_new, rtol, atol):
    n, ncol = y.shape
    worst = 0.0
    for col in range(ncol):
        acc = 0.0
        for r in range(n):
            scale = atol + max(abs(y[r, col]), abs(y_new[r, col])) * rtol
            v = abs(err[r, col]) / scale
            acc += v * v
        val = np.sqrt(acc / n)
        if val > worst:
            worst = val
    return worst


@numba.njit(cache=True, nogil=True)
def _rms_scaled(v, y, rtol, atol):
    n, ncol = y.shape
    acc = 0.0
    for col in range(ncol):
        for r in range(n):
            scale = atol + abs(y[r, col]) * rtol
            w = abs(v[r, col]) / scale
            acc += w * w
    return np.sqrt(acc / (n * ncol))


@numba.njit(cache=True, nogil=True)
def dopri5(diag, offdiag, has_offdiag, hc, y0, breaks, coeffs, g_min, g_max,
           t_end, t_samples, stops, rtol, atol, max_steps):
    """Integrate and return ``(samples, n_accepted, n_rejected, status, t_fail)``.

    ``samples[s]`` is the interaction-picture state at ``t_samples[s]``;
    the caller multiplies by ``exp(-i diag t)``. Steps end exactly on
    every time in the sorted array `stops`.
    """
    n, ncol = y0.shape
    ns = t_samples.size
    samples = np.zeros((ns, n, ncol), dtype=np.complex128)
    K = np.zeros((7, n, ncol), dtype=np.complex128)
    g = np.zeros(ncol)
    y = y0.copy()
    y_new = np.empty_like(y)
    tmp = np.empty_like(y)
    err = np.empty_like(y)

    t = 0.0
    si = 0
    while si < ns and t_samples[si] <= 0.0:
        samples[si] = y
        si += 1

    _rhs(t, y, diag, offdiag, has_offdiag, hc, breaks, coeffs, g_min, g_max, g, K[0])

    # initial step, as scipy's select_initial_step with order 4
    d0 = _rms_scaled(y, y, rtol, atol)
    d1 = _rms_scaled(K[0], y, rtol, atol)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, t_end)
    for r in range(n):
        for col in range(ncol):
            tmp[r, col] = y[r, col] + h * K[0, r, col]
    _rhs(h, tmp, diag, offdiag, has_offdiag, hc, breaks, coeffs, g_min, g_max, g, K[1])
    for r in range(n):
        for col in range(ncol):
            err[r, col] = K[1, r, col] - K[0, r, col]
    d2 = _rms_scaled(err, y, rtol, atol) / h
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h, h1, t_end)

    n_acc = 0
    n_rej = 0
    stop_i = 0
    while t < t_end:
        while stop_i < stops.size and stops[stop_i] <= t:
            stop_i += 1
        t_next_stop = stops[stop_i] if stop_i < stops.size else t_end
        if n_acc + n_rej >= max_steps:
            return samples, n_acc, n_rej, TOO_MANY_STEPS, t
        min_step = 10.0 * abs(np.nextafter(t, np.inf) - t)
        rejected = False
        while True:
            if h < min_step:
                return samples, n_acc, n_rej, STEP_UNDERFLOW, t
            h_wanted = h
            t_new = t + h
            if t_new >= t_next_stop:
                t_new = t_next_stop
            h = t_new - t
            for s in range(1, 6):
                for r in range(n):
                    for col in range(ncol):
                        acc = y[r, col]
                        for j in range(s):
                            acc += h * _A[s, j] * K[j, r, col]
                        tmp[r, col] = acc
                _rhs(t + _C[s] * h, tmp, diag, offdiag, has_offdiag, hc,
                     breaks, coeffs, g_min, g_max, g, K[s])
            for r in range(n):
                for col in range(ncol):
                    acc = y[r, col]
                    for j in range(6):
                        acc += h * _B[j] * K[j, r, col]
                    y_new[r, col] = acc
            _rhs(t_new, y_new, diag, offdiag, has_offdiag, hc,
                 breaks, coeffs, g_min, g_max, g, K[6])
            for r in range(n):
                for col in range(ncol):
                    acc = 0.0j
                    for j in range(7):
                        acc += _E[j] * K[j, r, col]
                    err[r, col] = h * acc
            en = _error_norm(err, y, y_new, rtol, atol)
            if not np.isfinite(en):
                return samples, n_acc, n_rej, NON_FINITE, t
            if en < 1.0:
                if en == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * en ** -0.2)
                if rejected:
                    factor = min(1.0, factor)
                h_next = h * factor
                if t_new == t_next_stop and h < h_wanted:
                    # a step shortened to land on a stop says nothing about the next one
                    h_next = max(h_next, h_wanted if not rejected else h)
                break
            h *= max(MIN_FACTOR, SAFETY * en ** -0.2)
            rejected = True
            n_rej += 1

        # dense output for samples in (t, t_new]
        while si < ns and t_samples[si] <= t_new:
            if t_samples[si] >= t_new:
                samples[si] = y_new
            else:
                x = (t_samples[si] - t) / h
                p1 = x
                p2 = x * x
                p3 = p2 * x
                p4 = p3 * x
                for r in range(n):
                    for col in range(ncol):
                        acc = 0.0j
                        for j in range(7):
                            q = _P[j, 0] * p1 + _P[j, 1] * p2 + _P[j, 2] * p3 + _P[j, 3] * p4
                            acc += q * K[j, r, col]
                        samples[si, r, col] = y[r, col] + h * acc
            si += 1

        t = t_new
        y[:, :] = y_new
        K[0] = K[6]
        h = h_next
        n_acc += 1

    return samples, n_acc, n_rej, OK, t
