"""Inverse-Hessian BFGS with a strong Wolfe line search.

Line search follows the bracketing/zoom scheme of Nocedal & Wright
(Algorithms 3.5 and 3.6) with safeguarded cubic interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class BFGSResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    ngev: int
    status: str
    line_search_failed: bool = False

    @property
    def gradient_norm(self):
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


class _Counted:
    def __init__(self, f, grad):
        self.f = f
        self.grad = grad
        self.nfev = 0
        self.ngev = 0

    def value(self, x):
        self.nfev += 1
        v = float(self.f(x))
        return v if np.isfinite(v) else np.inf

    def gradient(self, x):
        self.ngev += 1
        return np.asarray(self.grad(x), dtype=float)


def _cubic_min(a, fa, dfa, b, fb, dfb):
    """Minimizer of the cubic interpolating (a, fa, dfa), (b, fb, dfb), or None."""
    d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - dfa * dfb
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = dfb - dfa + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (dfb + d2 - d1) / denom
    return x if np.isfinite(x) else None


def strong_wolfe(fun, x, p, f0, g0, c1=1e-4, c2=0.9, alpha0=1.0, alpha_max=50.0, max_iter=30):
    """Step length satisfying the strong Wolfe conditions along descent direction `p`.

    Returns ``(alpha, f_alpha, g_alpha)`` or ``None`` if no acceptable step was found.
    """
    dphi0 = float(g0 @ p)
    if dphi0 >= 0:
        return None

    cache = {}

    def phi(a):
        if a not in cache:
            cache[a] = [fun.value(x + a * p), None]
        return cache[a][0]

    def dphi(a):
        entry = cache.setdefault(a, [fun.value(x + a * p), None])
        if entry[1] is None:
            entry[1] = fun.gradient(x + a * p)
        return float(entry[1] @ p), entry[1]

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        for _ in range(max_iter):
            a = None
            if d_hi is not None and np.isfinite(f_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            if a is None and np.isfinite(f_hi):
                # quadratic through f_lo, d_lo, f_hi
                denom = 2.0 * (f_hi - f_lo - d_lo * (hi - lo))
                if denom > 0:
                    a = lo - d_lo * (hi - lo) ** 2 / denom
            span = hi - lo
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * abs(span)
            if a is None or not (left + margin <= a <= right - margin):
                a = lo + 0.5 * span
            if abs(span) < 1e-16 * max(1.0, abs(lo)):
                return None
            f_a = phi(a)
            if f_a > f0 + c1 * a * dphi0 or f_a >= f_lo:
                hi, f_hi, d_hi = a, f_a, None
                continue
            d_a, g_a = dphi(a)
            if abs(d_a) <= -c2 * dphi0:
                return a, f_a, g_a
            if d_a * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = a, f_a, d_a
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = min(alpha0, alpha_max)
    for i in range(max_iter):
        f_a = phi(a)
        if f_a > f0 + c1 * a * dphi0 or (i > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a, None)
        d_a, g_a = dphi(a)
        if abs(d_a) <= -c2 * dphi0:
            return a, f_a, g_a
        if d_a >= 0:
            return zoom(a, f_a, d_a, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a = min(2.0 * a, alpha_max)
        if a == a_prev:
            return None
    return None


def bfgs_minimize(f, grad, x0, gtol=1e-8, ftol=1e-12, max_iter=500, c1=1e-4, c2=0.9,
                  curvature_eps=1e-12):
    """Minimize `f` from `x0` with the BFGS inverse-Hessian update.

    Stops when the gradient infinity-norm falls below `gtol`, when an
    accepted step lowers `f` by less than `ftol`, or after `max_iter`
    iterations. Curvature pairs with ``y.s <= curvature_eps`` are skipped.
    A failed line search ends the run and returns the best iterate with
    ``line_search_failed`` set instead of raising.
    """
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValidationError("BFGS start point must be finite")
    fun = _Counted(f, grad)
    fx = fun.value(x)
    if not np.isfinite(fx):
        raise ValidationError("objective is not finite at the start point")
    g = fun.gradient(x)
    n = x.size
    h_inv = np.eye(n)
    first = True

    def done(status, nit, failed=False):
        return BFGSResult(x=x, fun=fx, grad=g, nit=nit, nfev=fun.nfev, ngev=fun.ngev,
                          status=status, line_search_failed=failed)

    for k in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            return done("gradient norm below tolerance", k)
        p = -h_inv @ g
        if g @ p >= 0:
            # lost positive definiteness; restart from steepest descent
            h_inv = np.eye(n)
            first = True
            p = -g
        alpha0 = min(1.0, 1.0 / np.max(np.abs(g))) if first else 1.0
        step = strong_wolfe(fun, x, p, fx, g, c1=c1, c2=c2, alpha0=alpha0)
        if step is None:
            if not first:
                # retry once along steepest descent with a fresh metric
                h_inv = np.eye(n)
                first = True
                p = -g
                step = strong_wolfe(fun, x, p, fx, g, c1=c1, c2=c2,
                                    alpha0=min(1.0, 1.0 / np.max(np.abs(g))))
            if step is None:
                return done("line search failed", k, failed=True)
        alpha, f_new, g_new = step
        s = alpha * p
        y = g_new - g
        decrease = fx - f_new
        x, fx, g = x + s, f_new, g_new
        ys = float(y @ s)
        if ys > curvature_eps:
            if first:
                h_inv = (ys / float(y @ y)) * np.eye(n)
            rho = 1.0 / ys
            hy = h_inv @ y
            h_inv = (h_inv - rho * (np.outer(s, hy) + np.outer(hy, s))
                     + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
            first = False
        if decrease < ftol:
            return done("objective decrease below tolerance", k + 1)
    return done("iteration limit reached", max_iter)
