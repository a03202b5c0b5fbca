"""Fidelity maximization over spline knots and duration scans.

The objective is ``1 - F`` as a function of unconstrained coordinates u,
with knots ``g = from_unconstrained(u, range)``. Gradients are central
finite differences; all 2M probes of one gradient are propagated as a
batch on a shared step sequence.
"""
from __future__ import annotations

import functools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bfgs import bfgs_minimize
from .control import (ControlProtocol, RangeScenario, from_unconstrained, knot_times,
                      resample, to_unconstrained)
from .errors import BracketError, IntegrationError, NumericalError, ValidationError
from .models import (FermionModelParams, ThreeComponentParams, TwoQubitParams, build_model,
                     make_scenario_states)
from .propagator import ATOL, RTOL, make_evaluator, propagate, propagate_many

log = logging.getLogger(__name__)

DEFAULT_M_SCHEDULE = (2, 3, 5, 7, 9, 12, 16, 20)
FD_STEP = 1e-5


def worker_count():
    """Thread count for independent tasks, from ``RAMPOPT_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("RAMPOPT_WORKERS", "1")))
    except ValueError:
        raise ValidationError("RAMPOPT_WORKERS must be an integer") from None


@dataclass(frozen=True)
class Scenario:
    """One transfer problem: model, couplings g1 -> g2, accessible range.

    ``g_offset`` redefines the drift as ``h0 + g_offset * hc``; g1, g2 and
    the range are then measured relative to it.
    """

    params: object
    g1: float
    g2: float
    range: RangeScenario
    fidelity_mode: str = "auto"
    threshold: float = 0.99
    g_offset: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.params, (TwoQubitParams, FermionModelParams, ThreeComponentParams)):
            raise ValidationError(f"unsupported model parameters {type(self.params).__name__}")
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold!r}")
        if self.fidelity_mode not in ("auto", "pure", "reduced"):
            raise ValidationError(f"unknown fidelity mode {self.fidelity_mode!r}")
        if not (np.isfinite(self.g1) and np.isfinite(self.g2)):
            raise ValidationError("g1 and g2 must be finite")

    def with_params(self, params):
        return replace(self, params=params)

    def with_range(self, g_min, g_max):
        return replace(self, range=RangeScenario(g_min, g_max))


@dataclass(frozen=True, eq=False)
class Problem:
    scenario: Scenario
    model: object
    ini: np.ndarray
    tar: np.ndarray
    evaluator: object

    @property
    def initial_fidelity(self):
        return float(self.evaluator(self.ini))


@functools.lru_cache(maxsize=16)
def prepare(scenario):
    """Build the model, initial/target states and fidelity functional (cached)."""
    model = build_model(scenario.params)
    if scenario.g_offset:
        model = model.shifted(scenario.g_offset)
    ini, tar = make_scenario_states(model, scenario.g1, scenario.g2)
    evaluator = make_evaluator(model, tar, scenario.fidelity_mode)
    return Problem(scenario, model, ini, tar, evaluator)


class FidelityObjective:
    """u -> 1 - F(T) for fixed scenario, duration and knot count."""

    def __init__(self, problem, duration, m_points, rtol=RTOL, atol=ATOL):
        if m_points < 1:
            raise ValidationError("m_points must be >= 1")
        self.problem = problem
        self.duration = float(duration)
        self.m_points = int(m_points)
        self.range = problem.scenario.range
        self.rtol = rtol
        self.atol = atol
        self.nfev = 0

    def protocol(self, u):
        return ControlProtocol(self.duration, from_unconstrained(u, self.range), self.range,
                               baseline=self.problem.scenario.g1)

    def fidelity(self, u):
        p = self.protocol(u)
        tr = propagate(self.problem.model, p, self.problem.ini, n_samples=2,
                       evaluator=self.problem.evaluator, rtol=self.rtol, atol=self.atol)
        return tr.final_fidelity

    def __call__(self, u):
        self.nfev += 1
        try:
            return 1.0 - self.fidelity(np.asarray(u, dtype=float))
        except IntegrationError as exc:
            log.debug("objective rejected: %s", exc)
            return np.inf

    def batch(self, points):
        """Objective values for the rows of `points`, propagated together."""
        self.nfev += len(points)
        protocols = [self.protocol(u) for u in points]
        try:
            finals = propagate_many(self.problem.model, protocols, self.problem.ini,
                                    rtol=self.rtol, atol=self.atol)
        except IntegrationError as exc:
            log.debug("batch rejected: %s", exc)
            return np.full(len(points), np.inf)
        ev = self.problem.evaluator
        return np.array([1.0 - ev(finals[:, i]) for i in range(finals.shape[1])])


def gradient_fd(f, u, h=FD_STEP, f_batch=None):
    """Central-difference gradient with step `h` per coordinate.

    If `f_batch` is given it receives all 2n probe points at once and
    returns their values in order (+h e_0, -h e_0, +h e_1, ...).
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    probes = np.repeat(u[None, :], 2 * n, axis=0)
    for i in range(n):
        probes[2 * i, i] += h
        probes[2 * i + 1, i] -= h
    if f_batch is not None:
        values = np.asarray(f_batch(probes), dtype=float)
    else:
        values = np.array([f(p) for p in probes], dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericalError("objective is not finite at a finite-difference probe")
    return (values[0::2] - values[1::2]) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class OptimizationOutcome:
    best_fidelity: float
    knots: np.ndarray
    duration: float
    m_points: int
    restarts_used: int
    iterations: int
    gradient_norm: float
    trajectory: object
    range: RangeScenario
    seed: int = 0
    scenario: Optional[Scenario] = None
    status: str = ""
    start_fidelities: tuple = field(default=())

    def protocol(self):
        return ControlProtocol(self.duration, self.knots, self.range,
                               baseline=self.scenario.g1 if self.scenario else 0.0)


def _start_points(scenario, duration, m_points, n_restarts, seed, warm_start):
    bounds = scenario.range
    t = knot_times(duration, m_points) if m_points > 1 else np.array([0.5 * duration])
    ramp = bounds.clip(scenario.g1 + (scenario.g2 - scenario.g1) * t / duration)
    starts = []
    if warm_start is not None:
        warm = np.asarray(warm_start, dtype=float)
        if warm.size != m_points:
            raise ValidationError(f"warm start has {warm.size} knots, expected {m_points}")
        starts.append(bounds.clip(warm))
    starts.append(ramp)
    for i in range(n_restarts):
        gen = np.random.default_rng(np.random.SeedSequence([int(seed), int(m_points), i]))
        starts.append(gen.uniform(bounds.g_min, bounds.g_max, m_points))
    return starts


def _run_start(problem, duration, m_points, knots0, bfgs_options, rtol, atol):
    obj = FidelityObjective(problem, duration, m_points, rtol=rtol, atol=atol)
    u0 = to_unconstrained(knots0, problem.scenario.range)
    try:
        res = bfgs_minimize(obj, lambda u: gradient_fd(obj, u, f_batch=obj.batch), u0,
                            **bfgs_options)
    except (NumericalError, ValidationError) as exc:
        return None, str(exc)
    return res, res.status


def optimize_at(scenario, duration, m_points, n_restarts=10, seed=0, warm_start=None,
                rtol=RTOL, atol=ATOL, n_samples=201, workers=None, **bfgs_options):
    """Best protocol over multistart BFGS at fixed duration and knot count.

    Starts are: the optional `warm_start` knots, a clipped linear ramp from
    g1 toward g2, and `n_restarts` uniform random knot sets seeded by
    ``(seed, m_points, index)``.
    """
    if int(m_points) != m_points or m_points < 1:
        raise ValidationError(f"m_points must be a positive integer, got {m_points!r}")
    if not duration > 0:
        raise ValidationError(f"duration must be positive, got {duration!r}")
    problem = prepare(scenario)
    starts = _start_points(scenario, duration, int(m_points), int(n_restarts), seed, warm_start)
    task = functools.partial(_run_start, problem, float(duration), int(m_points),
                             bfgs_options=bfgs_options, rtol=rtol, atol=atol)
    n_workers = workers or worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(task, starts))
    else:
        results = [task(s) for s in starts]

    best = None
    for res, _ in results:
        if res is not None and np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        detail = "; ".join(f"start {i}: {msg}" for i, (_, msg) in enumerate(results))
        raise NumericalError(f"all optimization starts failed ({detail})")

    knots = from_unconstrained(best.x, scenario.range)
    protocol = ControlProtocol(float(duration), knots, scenario.range, baseline=scenario.g1)
    trajectory = propagate(problem.model, protocol, problem.ini, n_samples=n_samples,
                           evaluator=problem.evaluator, rtol=rtol, atol=atol)
    return OptimizationOutcome(
        best_fidelity=trajectory.final_fidelity,
        knots=knots,
        duration=float(duration),
        m_points=int(m_points),
        restarts_used=len(starts),
        iterations=int(best.nit),
        gradient_norm=best.gradient_norm,
        trajectory=trajectory,
        range=scenario.range,
        seed=int(seed),
        scenario=scenario,
        status=best.status,
        start_fidelities=tuple(1.0 - r.fun if r is not None else float("nan") for r, _ in results),
    )


@dataclass(frozen=True, eq=False)
class Escalation:
    """Result of increasing M at fixed T."""

    f_max: float
    m_used: int
    outcome: OptimizationOutcome
    history: tuple  # (M, best fidelity at that M, running maximum)


def escalate_m(scenario, duration, m_schedule=DEFAULT_M_SCHEDULE, eps_m=1e-4, n_restarts=10,
               seed=0, **options):
    """Raise M along `m_schedule` until the fidelity gain drops below `eps_m`.

    Each M is warm-started from the best protocol so far, resampled onto
    the new knot grid. The reported maximum is non-decreasing in M.
    """
    schedule = [int(m) for m in m_schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError(f"m_schedule must be strictly ascending, got {m_schedule!r}")
    best = None
    history = []
    for m in schedule:
        warm = resample(best.protocol(), m) if best is not None else None
        out = optimize_at(scenario, duration, m, n_restarts=n_restarts, seed=seed,
                          warm_start=warm, **options)
        gain = out.best_fidelity - (best.best_fidelity if best is not None else -np.inf)
        if best is None or out.best_fidelity > best.best_fidelity:
            best = out
        history.append((m, out.best_fidelity, best.best_fidelity))
        log.info("T=%.4f M=%d F=%.10f (best %.10f)", duration, m, out.best_fidelity,
                 best.best_fidelity)
        if len(history) > 1 and gain < eps_m:
            break
    return Escalation(best.best_fidelity, best.m_points, best, tuple(history))


@dataclass(frozen=True, eq=False)
class QSLEstimate:
    t_qsl: float
    threshold: float
    scan: tuple  # (T, best fidelity, M used), sorted by T
    resolution: float
    outcome: Optional[OptimizationOutcome] = None
    at_floor: bool = False


def _bisect_duration(evaluate, problem, threshold, t_bracket, resolution):
    lo, hi = (float(v) for v in t_bracket)
    if not (0 < lo < hi):
        raise ValidationError(f"duration bracket must satisfy 0 < lo < hi, got {t_bracket!r}")
    if not resolution > 0:
        raise ValidationError("resolution must be positive")
    scan = {}

    def probe(t):
        if t not in scan:
            scan[t] = evaluate(t)
        return scan[t][0]

    if threshold <= problem.initial_fidelity:
        log.warning("threshold %.6g is met without evolution; returning bracket floor", threshold)
        return lo, scan, True
    if probe(hi) < threshold:
        raise BracketError(
            f"fidelity {scan[hi][0]:.6f} at T={hi} stays below {threshold}; widen the bracket"
        )
    if probe(lo) >= threshold:
        return lo, scan, True
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if probe(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    return hi, scan, False


def min_duration_for(scenario, m_points, threshold, t_bracket, resolution=0.01, n_restarts=10,
                     seed=0, **options):
    """Smallest T (to `resolution`) at which optimize_at with fixed M reaches `threshold`."""
    problem = prepare(scenario)

    def evaluate(t):
        out = optimize_at(scenario, t, m_points, n_restarts=n_restarts, seed=seed, **options)
        return out.best_fidelity, m_points, out

    t_min, scan, floor = _bisect_duration(evaluate, problem, threshold, t_bracket, resolution)
    return _estimate(t_min, threshold, scan, resolution, floor)


def estimate_qsl(scenario, threshold=None, m_schedule=DEFAULT_M_SCHEDULE, t_bracket=(0.1, 10.0),
                 resolution=0.01, eps_m=1e-4, n_restarts=10, seed=0, **options):
    """Quantum speed limit estimate: bisection on T with M escalation at each probe."""
    threshold = scenario.threshold if threshold is None else float(threshold)
    problem = prepare(scenario)

    def evaluate(t):
        esc = escalate_m(scenario, t, m_schedule, eps_m=eps_m, n_restarts=n_restarts,
                         seed=seed, **options)
        return esc.f_max, esc.m_used, esc.outcome

    t_min, scan, floor = _bisect_duration(evaluate, problem, threshold, t_bracket, resolution)
    return _estimate(t_min, threshold, scan, resolution, floor)


def _estimate(t_min, threshold, scan, resolution, floor):
    rows = tuple((t, f, m) for t, (f, m, _) in sorted(scan.items()))
    outcome = scan[t_min][2] if t_min in scan else None
    return QSLEstimate(t_min, threshold, rows, resolution, outcome, floor)


def _cutoffs(params):
    if isinstance(params, FermionModelParams):
        return (params.cutoff_c,)
    if isinstance(params, ThreeComponentParams):
        return (params.base.cutoff_c, params.cutoff_k)
    return ()


def reevaluate_protocol(outcome, params, scenario=None, n_samples=201, rtol=RTOL, atol=ATOL):
    """Propagate the fixed optimized knots under a model with larger cutoffs."""
    scenario = scenario or outcome.scenario
    if scenario is None:
        raise ValidationError("outcome carries no scenario; pass one explicitly")
    old, new = _cutoffs(scenario.params), _cutoffs(params)
    if type(params) is not type(scenario.params):
        raise ValidationError("alternative parameters must describe the same model family")
    if any(b < a for a, b in zip(old, new)):
        raise ValidationError(f"alternative cutoffs {new} are smaller than the original {old}")
    problem = prepare(scenario.with_params(params))
    return propagate(problem.model, outcome.protocol(), problem.ini, n_samples=n_samples,
                     evaluator=problem.evaluator, rtol=rtol, atol=atol)
