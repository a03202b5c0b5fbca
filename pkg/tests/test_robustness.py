import numpy as np
import pytest

from rampopt import robustness
from rampopt.control import RangeScenario
from rampopt.errors import IntegrationError, NumericalError, ValidationError
from rampopt.models import TwoQubitParams
from rampopt.optimizer import Scenario, optimize_at
from rampopt.robustness import (NoiseConfig, NoiseReport, check_report, noise_ensemble,
                                noise_sweep, perturb_knots, realization_rng, summarize,
                                sweep_csv)

SYM = Scenario(TwoQubitParams(), 0.0, 4.0, RangeScenario(-2.0, 2.0))


@pytest.fixture(scope="module")
def outcome():
    return optimize_at(SYM, 2.6, 6, n_restarts=3, seed=1)


def test_config_validation():
    with pytest.raises(ValidationError):
        NoiseConfig(-0.1)
    with pytest.raises(ValidationError):
        NoiseConfig(0.1, n_realizations=0)
    with pytest.raises(ValidationError):
        NoiseConfig(0.1, seed=-1)


def test_zero_sigma_leaves_knots_unchanged():
    knots = np.array([0.1, -0.4, 1.9])
    np.testing.assert_array_equal(perturb_knots(knots, 0.0, realization_rng(0, 0)), knots)


def test_perturbation_statistics():
    rng = realization_rng(7, 0)
    samples = np.array([perturb_knots(np.array([0.3]), 0.05, rng)[0] for _ in range(100_000)])
    assert np.std(samples - 0.3) == pytest.approx(0.05, rel=0.02)
    assert abs(np.mean(samples - 0.3)) < 5 * 0.05 / np.sqrt(1e5)


def test_clamped_perturbation_stays_in_range():
    r = RangeScenario(-0.5, 0.5)
    out = perturb_knots(np.zeros(1000), 10.0, realization_rng(0, 1), clamp=True, bounds=r)
    assert r.contains(out)
    with pytest.raises(ValidationError):
        perturb_knots(np.zeros(3), 1.0, realization_rng(0, 1), clamp=True)


def test_zero_sigma_reproduces_optimized_fidelity(outcome):
    report = noise_ensemble(outcome, NoiseConfig(0.0, 3, 0))
    np.testing.assert_array_equal(report.samples, outcome.best_fidelity)
    assert report.mean_f == outcome.best_fidelity
    assert report.std_f == 0.0 and report.sem_f == 0.0


def test_report_statistics_are_consistent(outcome):
    report = noise_ensemble(outcome, NoiseConfig(0.05, 12, 3))
    assert report.samples.size == 12 and report.valid
    assert report.mean_f == pytest.approx(np.mean(report.samples), abs=1e-12)
    assert report.std_f == pytest.approx(np.std(report.samples, ddof=1), abs=1e-12)
    assert report.sem_f == pytest.approx(report.std_f / np.sqrt(12), abs=1e-12)
    check_report(report)
    rebuilt = NoiseReport.from_samples(report.sigma, report.to_record()["samples"])
    assert (rebuilt.mean_f, rebuilt.std_f, rebuilt.sem_f) == (report.mean_f, report.std_f,
                                                              report.sem_f)
    assert "Philox" in report.rng


def test_tampered_report_is_detected():
    report = NoiseReport(0.1, 0.5, 0.0, 0.0, np.array([0.5, 0.6]))
    with pytest.raises(NumericalError):
        check_report(report)


def test_realizations_depend_only_on_seed_and_index(outcome):
    a = noise_ensemble(outcome, NoiseConfig(0.05, 3, 11))
    b = noise_ensemble(outcome, NoiseConfig(0.05, 5, 11))
    np.testing.assert_array_equal(a.samples, b.samples[:3])
    c = noise_ensemble(outcome, NoiseConfig(0.05, 5, 11), workers=3)
    np.testing.assert_array_equal(b.samples, c.samples)
    d = noise_ensemble(outcome, NoiseConfig(0.05, 3, 12))
    assert not np.array_equal(a.samples, d.samples)


def test_noise_does_not_help(outcome):
    for sigma in (0.02, 0.1):
        r = noise_ensemble(outcome, NoiseConfig(sigma, 20, 0))
        assert r.mean_f <= outcome.best_fidelity + 2 * r.sem_f


def test_failures_are_counted(outcome, monkeypatch):
    calls = {"n": 0}
    real = robustness.propagate

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] % 4 == 0:
            raise IntegrationError("forced", time=0.1)
        return real(*args, **kwargs)

    monkeypatch.setattr(robustness, "propagate", flaky)
    report = noise_ensemble(outcome, NoiseConfig(0.01, 8, 0))
    assert report.n_failed == 2 and report.samples.size == 6
    assert not report.valid


def test_sweep_csv(outcome):
    reports = noise_sweep(outcome, [0.0, 0.05], n_realizations=2)
    lines = sweep_csv(reports).splitlines()
    assert lines[0] == "sigma,mean_f,std_f,sem_f"
    assert len(lines) == 3
    with pytest.raises(ValidationError):
        noise_sweep(outcome, [])


def test_summarize_single_sample():
    assert summarize([0.7]) == (0.7, 0.0, 0.0)
