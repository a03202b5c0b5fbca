"""Adaptive Runge-Kutta propagation under H(g(t)) and temporal fidelities."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import _dopri
from .control import eval_field
from .core import fidelity_pure, target_weight
from .errors import IntegrationError, ValidationError

RTOL = 1e-9
ATOL = 1e-12
N_SAMPLES = 201
NORM_TOL = 1e-8
MAX_STEPS = 5_000_000
# kinks of batched columns closer than this fraction of T share one step boundary
KINK_MERGE = 1e-10


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    fidelities: np.ndarray
    final_state: np.ndarray
    norm_drift: float
    fields: np.ndarray
    n_steps: int = 0

    @property
    def final_fidelity(self):
        return float(self.fidelities[-1])

    def to_csv(self):
        """CSV text with header ``t,g,F``, one row per sample."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "g", "F"])
        for t, g, f in zip(self.times, self.fields, self.fidelities):
            writer.writerow([repr(float(t)), repr(float(g)), repr(float(f))])
        return buf.getvalue()


class PureFidelity:
    """|<tar|psi>|^2."""

    mode = "pure"

    def __init__(self, tar):
        self.tar = np.asarray(tar, dtype=complex)

    def __call__(self, psi):
        return fidelity_pure(self.tar, psi)


class ReducedFidelity:
    """[<tar| Tr_last |psi><psi| |tar>]^2 for a bipartite state."""

    mode = "reduced"

    def __init__(self, tar, dim_trace):
        self.tar = np.asarray(tar, dtype=complex)
        self.dim_trace = int(dim_trace)

    def __call__(self, psi):
        w = min(1.0, max(0.0, target_weight(psi, self.tar, self.dim_trace)))
        return w * w


def make_evaluator(model, tar, mode="auto"):
    """Fidelity functional matching the model: reduced for product bases."""
    if mode == "auto":
        mode = "reduced" if len(model.dims) > 1 else "pure"
    if mode == "pure":
        if np.shape(tar)[0] != model.dim:
            raise ValidationError("pure fidelity needs a target of full dimension")
        return PureFidelity(tar)
    if mode == "reduced":
        if len(model.dims) < 2:
            raise ValidationError("reduced fidelity requires a product basis")
        return ReducedFidelity(tar, model.dims[-1])
    raise ValidationError(f"unknown fidelity mode {mode!r}")


def _run_kernel(model, psi0, breaks, coeffs, g_min, g_max, duration, t_samples, rtol, atol):
    """Propagate the columns of `psi0` and return full-dimension samples ``[s, dim, col]``."""
    support = np.flatnonzero(np.any(psi0 != 0, axis=1))
    if support.size == 0:
        raise ValidationError("initial state is zero")
    idx, h0, hc = model.restricted(support)
    y0 = np.ascontiguousarray(psi0[idx])
    diag = np.ascontiguousarray(np.diag(h0).real)
    offdiag = h0 - np.diag(np.diag(h0))
    has_offdiag = bool(np.any(offdiag != 0))
    stops = _dopri.field_kinks(breaks, coeffs, float(g_min), float(g_max), float(duration),
                               KINK_MERGE * float(duration))
    samples, n_acc, n_rej, status, t_fail = _dopri.dopri5(
        diag, offdiag, has_offdiag, hc, y0, breaks, coeffs, float(g_min), float(g_max),
        float(duration), t_samples, stops, float(rtol), float(atol), MAX_STEPS,
    )
    if status != _dopri.OK:
        reason = {
            _dopri.STEP_UNDERFLOW: "step size underflow",
            _dopri.TOO_MANY_STEPS: "step limit exceeded",
            _dopri.NON_FINITE: "non-finite state",
        }[status]
        raise IntegrationError(f"propagation failed at t={t_fail:.6g}: {reason}", time=t_fail)
    samples *= np.exp(-1j * np.outer(t_samples, diag))[:, :, None]
    if idx.size == model.dim:
        return samples, n_acc
    full = np.zeros((t_samples.size, model.dim, psi0.shape[1]), dtype=complex)
    full[:, idx, :] = samples
    return full, n_acc


def propagate(model, protocol, psi0, n_samples=N_SAMPLES, evaluator=None, tar=None,
              rtol=RTOL, atol=ATOL):
    """Integrate the Schrodinger equation over [0, T] with a 5(4) Runge-Kutta pair.

    Parameters
    ----------
    model : ModelInstance
    protocol : ControlProtocol
    psi0 : array
        Initial state on the model basis.
    n_samples : int
        Number of equally spaced output times (>= 2), endpoints included.
    evaluator : callable, optional
        Fidelity functional applied to each sampled state. Defaults to the
        model-appropriate functional of `tar`; with neither given the
        fidelity with `psi0` is recorded.

    Raises
    ------
    IntegrationError
        On step-size underflow or when the norm drifts by more than 1e-8.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.ndim != 1 or psi0.shape[0] != model.dim:
        raise ValidationError(f"initial state has shape {psi0.shape}, model dim is {model.dim}")
    if int(n_samples) != n_samples or n_samples < 2:
        raise ValidationError("n_samples must be an integer >= 2")
    if evaluator is None:
        evaluator = make_evaluator(model, tar) if tar is not None else PureFidelity(psi0)
    times = np.linspace(0.0, protocol.duration, int(n_samples))
    breaks, coeffs = protocol.spline_pieces()
    samples, n_steps = _run_kernel(
        model, psi0[:, None], breaks, coeffs[None], protocol.range.g_min, protocol.range.g_max,
        protocol.duration, times, rtol, atol,
    )
    states = samples[:, :, 0]
    norms = np.linalg.norm(states, axis=1)
    drift = float(np.max(np.abs(norms - np.linalg.norm(psi0))))
    if drift > NORM_TOL:
        raise IntegrationError(f"norm drift {drift:.3e} exceeds {NORM_TOL:g}", time=protocol.duration)
    fidelities = np.array([evaluator(s) for s in states])
    return Trajectory(
        times=times,
        fidelities=fidelities,
        final_state=states[-1].copy(),
        norm_drift=drift,
        fields=np.asarray(eval_field(protocol, times), dtype=float),
        n_steps=int(n_steps),
    )


def final_fidelity(model, protocol, ini, tar, mode="auto", rtol=RTOL, atol=ATOL):
    """F(T) of `protocol` for the transfer ini -> tar."""
    evaluator = make_evaluator(model, tar, mode)
    return propagate(model, protocol, ini, n_samples=2, evaluator=evaluator,
                     rtol=rtol, atol=atol).final_fidelity


def propagate_many(model, protocols, psi0, rtol=RTOL, atol=ATOL):
    """Final states ``[dim, n]`` for protocols sharing duration, knot count and range.

    All columns advance on one common step sequence, which keeps
    finite-difference probes of the same point free of step-selection noise.
    """
    if not protocols:
        return np.zeros((model.dim, 0), dtype=complex)
    first = protocols[0]
    pieces = [p.spline_pieces() for p in protocols]
    for p in protocols:
        if p.duration != first.duration or p.m_points != first.m_points or p.range != first.range:
            raise ValidationError("batched protocols must share duration, knot count and range")
    breaks = pieces[0][0]
    coeffs = np.ascontiguousarray(np.stack([c for _, c in pieces]))
    psi0 = np.asarray(psi0, dtype=complex)
    y0 = np.repeat(psi0[:, None], len(protocols), axis=1)
    samples, _ = _run_kernel(
        model, y0, breaks, coeffs, first.range.g_min, first.range.g_max,
        first.duration, np.array([first.duration]), rtol, atol,
    )
    return samples[-1]
