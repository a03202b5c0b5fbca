"""Monte-Carlo robustness of optimized protocols under Gaussian knot noise."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, NumericalError, ValidationError
from .optimizer import prepare, worker_count
from .propagator import ATOL, RTOL, propagate

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.Philox(SeedSequence([seed, realization]))"
MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float
    n_realizations: int = 100
    seed: int = 0
    clamp_noisy: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"sigma must be finite and >= 0, got {self.sigma!r}")
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise ValidationError("n_realizations must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass(frozen=True, eq=False)
class NoiseReport:
    sigma: float
    mean_f: float
    std_f: float
    sem_f: float
    samples: np.ndarray
    n_failed: int = 0
    rng: str = RNG_NAME

    @property
    def valid(self):
        total = self.samples.size + self.n_failed
        return self.n_failed <= MAX_FAILURE_FRACTION * total

    @classmethod
    def from_samples(cls, sigma, samples, n_failed=0):
        samples = np.asarray(samples, dtype=float)
        mean, std, sem = summarize(samples)
        return cls(float(sigma), mean, std, sem, samples, int(n_failed))

    def to_record(self):
        return {
            "sigma": self.sigma,
            "mean_f": self.mean_f,
            "std_f": self.std_f,
            "sem_f": self.sem_f,
            "n_failed": self.n_failed,
            "rng": self.rng,
            "samples": [float(v) for v in self.samples],
        }


def summarize(samples):
    """Mean, sample standard deviation (ddof=1) and standard error of the mean."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(np.mean(samples))
    std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    return mean, std, std / np.sqrt(n)


def realization_rng(seed, index):
    """Generator for realization `index`; depends only on ``(seed, index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def perturb_knots(knots, sigma, rng, clamp=False, bounds=None):
    """Add i.i.d. Normal(0, sigma^2) noise to every knot; clip to `bounds` if `clamp`."""
    knots = np.asarray(knots, dtype=float)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        noisy = knots.copy()
    else:
        noisy = knots + rng.normal(0.0, sigma, size=knots.shape)
    if clamp:
        if bounds is None:
            raise ValidationError("clamping needs a range")
        noisy = bounds.clip(noisy)
    return noisy


def noise_ensemble(outcome, cfg, scenario=None, rtol=RTOL, atol=ATOL, workers=None):
    """Final fidelities of `cfg.n_realizations` perturbed copies of `outcome`'s protocol.

    Knots leave the range unless ``cfg.clamp_noisy``; the evaluated field
    is clamped either way. Failed propagations are counted, and the
    report is flagged invalid when more than 5% fail.
    """
    scenario = scenario or outcome.scenario
    if scenario is None:
        raise ValidationError("outcome carries no scenario; pass one explicitly")
    problem = prepare(scenario)
    base = outcome.protocol()

    def one(i):
        noisy = perturb_knots(base.knots, cfg.sigma, realization_rng(cfg.seed, i),
                              clamp=cfg.clamp_noisy, bounds=base.range)
        protocol = base.with_knots(noisy, enforce_range=False)
        try:
            return propagate(problem.model, protocol, problem.ini, n_samples=2,
                             evaluator=problem.evaluator, rtol=rtol, atol=atol).final_fidelity
        except IntegrationError as exc:
            log.warning("realization %d failed: %s", i, exc)
            return None

    n_workers = workers or worker_count()
    indices = range(int(cfg.n_realizations))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            values = list(pool.map(one, indices))
    else:
        values = [one(i) for i in indices]
    samples = [v for v in values if v is not None]
    report = NoiseReport.from_samples(cfg.sigma, samples, len(values) - len(samples))
    if not report.valid:
        log.warning("sigma=%g: %d of %d realizations failed", cfg.sigma, report.n_failed,
                    cfg.n_realizations)
    return report


def noise_sweep(outcome, sigmas, n_realizations=100, seed=0, clamp_noisy=False, scenario=None,
                **options):
    """One report per sigma, all sharing the realization seeds."""
    reports = []
    for sigma in sigmas:
        cfg = NoiseConfig(float(sigma), n_realizations, seed, clamp_noisy)
        reports.append(noise_ensemble(outcome, cfg, scenario=scenario, **options))
    if not reports:
        raise ValidationError("empty sigma list")
    return reports


def sweep_csv(reports):
    """CSV text with header ``sigma,mean_f,std_f,sem_f``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sigma", "mean_f", "std_f", "sem_f"])
    for r in reports:
        writer.writerow([repr(float(r.sigma)), repr(r.mean_f), repr(r.std_f), repr(r.sem_f)])
    return buf.getvalue()


def check_report(report):
    """Raise NumericalError if the report's aggregates disagree with its samples."""
    mean, std, sem = summarize(report.samples)
    for name, stored, fresh in (("mean_f", report.mean_f, mean), ("std_f", report.std_f, std),
                                ("sem_f", report.sem_f, sem)):
        if not (stored == fresh or (np.isnan(stored) and np.isnan(fresh))):
            raise NumericalError(f"{name} {stored!r} does not match samples ({fresh!r})")
