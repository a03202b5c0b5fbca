"""Bounded spline control fields g(t)."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError


@dataclass(frozen=True)
class RangeScenario:
    """Experimentally accessible interval [g_min, g_max]."""

    g_min: float
    g_max: float

    def __post_init__(self):
        if not (np.isfinite(self.g_min) and np.isfinite(self.g_max)):
            raise ValidationError("range bounds must be finite")
        if not self.g_min < self.g_max:
            raise ValidationError(f"range requires g_min < g_max, got [{self.g_min}, {self.g_max}]")

    @property
    def width(self):
        return self.g_max - self.g_min

    def contains(self, values):
        v = np.asarray(values, dtype=float)
        return bool(np.all((v >= self.g_min) & (v <= self.g_max)))

    def clip(self, values):
        return np.clip(values, self.g_min, self.g_max)


@dataclass(frozen=True, eq=False)
class ControlProtocol:
    """Knot values of g at equally spaced times including both endpoints.

    With one knot the field is constant; with no knots it is the constant
    `baseline`. Knots outside the range are only accepted with
    ``enforce_range=False`` (noisy protocols); evaluation always clamps.
    """

    duration: float
    knots: np.ndarray
    range: RangeScenario
    baseline: float = 0.0
    enforce_range: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise ValidationError(f"duration must be positive, got {self.duration!r}")
        knots = np.array(self.knots, dtype=float).ravel()
        if not np.all(np.isfinite(knots)):
            raise ValidationError("knots must be finite")
        if self.enforce_range and not self.range.contains(knots):
            raise ValidationError(
                f"knots leave the range [{self.range.g_min}, {self.range.g_max}]: {knots}"
            )
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def m_points(self):
        return self.knots.size

    def knot_times(self):
        return knot_times(self.duration, self.m_points)

    def with_knots(self, knots, enforce_range=None):
        enforce = self.enforce_range if enforce_range is None else enforce_range
        return ControlProtocol(self.duration, knots, self.range, self.baseline, enforce)

    def spline_pieces(self):
        """Piecewise-polynomial form ``(breaks, coeffs)`` of the unclamped spline.

        ``coeffs[j, i]`` multiplies ``(t - breaks[i]) ** (3 - j)`` on
        interval i, matching :class:`scipy.interpolate.PPoly`.
        """
        return spline_pieces(self.duration, self.knots, self.baseline)

    def to_record(self):
        return {
            "duration": float(self.duration),
            "range": [float(self.range.g_min), float(self.range.g_max)],
            "knots": [float(v) for v in self.knots],
        }

    @classmethod
    def from_record(cls, record, baseline=0.0, enforce_range=True):
        try:
            g_min, g_max = record["range"]
            return cls(float(record["duration"]), np.asarray(record["knots"], dtype=float),
                       RangeScenario(float(g_min), float(g_max)), baseline, enforce_range)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed protocol record: {exc}") from exc


def knot_times(duration, m_points):
    if m_points <= 1:
        return np.zeros(m_points)
    return np.linspace(0.0, duration, m_points)


@functools.lru_cache(maxsize=256)
def _spline_basis(duration, m):
    """Breaks and the linear map knots -> coefficients, shape (4, m-1, m)."""
    # not-a-knot is scipy's default; for two points it degenerates to a line
    spline = CubicSpline(knot_times(duration, m), np.eye(m), bc_type="not-a-knot", axis=0)
    basis = np.zeros((4, m - 1, m))
    basis[-spline.c.shape[0]:] = spline.c
    breaks = np.asarray(spline.x, dtype=float)
    breaks.setflags(write=False)
    basis.setflags(write=False)
    return breaks, basis


def spline_pieces(duration, knots, baseline=0.0):
    knots = np.asarray(knots, dtype=float)
    m = knots.size
    if m <= 1:
        value = knots[0] if m == 1 else baseline
        return np.array([0.0, duration]), np.array([[0.0], [0.0], [0.0], [value]])
    breaks, basis = _spline_basis(float(duration), m)
    return breaks, basis @ knots


def _eval_pieces(breaks, coeffs, t):
    i = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, coeffs.shape[1] - 1)
    dt = t - breaks[i]
    return ((coeffs[0, i] * dt + coeffs[1, i]) * dt + coeffs[2, i]) * dt + coeffs[3, i]


def eval_field(p, t, clamp=True):
    """g(t) for scalar or array `t` in [0, duration], clamped to the range."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > p.duration) or not np.all(np.isfinite(t_arr)):
        raise ValidationError(f"evaluation time outside [0, {p.duration}]")
    breaks, coeffs = p.spline_pieces()
    g = _eval_pieces(breaks, coeffs, t_arr)
    if clamp:
        g = np.clip(g, p.range.g_min, p.range.g_max)
    return float(g) if np.ndim(g) == 0 else g


def to_unconstrained(knots, bounds):
    """Map knots in [g_min, g_max] to unbounded coordinates u (inverse tanh box)."""
    knots = np.asarray(knots, dtype=float)
    eps = 1e-9 * bounds.width
    inner = np.clip(knots, bounds.g_min + eps, bounds.g_max - eps)
    return np.arctanh(2.0 * (inner - bounds.g_min) / bounds.width - 1.0)


def from_unconstrained(u, bounds):
    """g = g_min + width * (1 + tanh(u)) / 2; always inside the closed range."""
    u = np.asarray(u, dtype=float)
    g = bounds.g_min + bounds.width * 0.5 * (1.0 + np.tanh(u))
    return np.clip(g, bounds.g_min, bounds.g_max)


def resample(p, m_points):
    """Knot values of `p`'s (clamped) field on a grid of `m_points` knots."""
    if m_points < 1:
        raise ValidationError("m_points must be positive")
    if m_points == 1:
        return np.array([eval_field(p, 0.5 * p.duration)])
    return np.asarray(eval_field(p, knot_times(p.duration, m_points)), dtype=float)
