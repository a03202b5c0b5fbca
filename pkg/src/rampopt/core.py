"""Dense quantum linear algebra on plain numpy arrays.

States are 1-D complex arrays, operators 2-D complex arrays. The helpers
``as_state``, ``as_hermitian`` and ``as_density`` validate the invariants
the rest of the package relies on; everything else is a pure function.

Tensor ordering convention: composite indices are row-major with the last
subsystem fastest, i.e. ``index = i_keep * dim_trace + i_trace``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegeneracyError, NumericalError, ValidationError

NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-12


def as_state(amplitudes, normalize=False):
    """Return `amplitudes` as a complex unit vector.

    With ``normalize=False`` the input must already have unit norm
    (within 1e-10); otherwise it is rescaled.
    """
    psi = np.array(amplitudes, dtype=complex).ravel()
    if psi.size == 0:
        raise ValidationError("state must have positive dimension")
    norm = np.linalg.norm(psi)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValidationError("state has zero or non-finite norm")
    if normalize:
        psi /= norm
    elif abs(norm - 1.0) > NORM_TOL:
        raise ValidationError(f"state is not normalized (|psi| = {norm!r})")
    return psi


def as_hermitian(entries, tol=HERMITIAN_TOL):
    """Return `entries` as a complex square array after checking H = H^dagger."""
    h = np.asarray(entries, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] == 0:
        raise ValidationError(f"operator must be a non-empty square matrix, got {h.shape}")
    dev = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if dev > tol:
        raise ValidationError(f"operator is not Hermitian (max deviation {dev:.3e})")
    return h


def as_density(entries, tol=1e-10):
    """Return `entries` as a validated density matrix (Hermitian, unit trace, PSD)."""
    rho = as_hermitian(entries, tol=tol)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"density matrix trace is {tr!r}, expected 1")
    lowest = np.linalg.eigvalsh(rho)[0]
    if lowest < -tol:
        raise ValidationError(f"density matrix has negative eigenvalue {lowest!r}")
    return rho


def fix_phase(psi):
    """Rotate the global phase so the largest-magnitude component is real positive."""
    psi = np.asarray(psi, dtype=complex)
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])


@dataclass(frozen=True)
class Spectrum:
    """Lowest eigenpairs of a Hermitian operator, energies ascending.

    ``states[:, i]`` is the i-th eigenvector with the phase convention of
    :func:`fix_phase`.
    """

    energies: np.ndarray
    states: np.ndarray

    def state(self, i):
        return self.states[:, i]


def spectrum(h, n_levels=None):
    """Dense Hermitian eigendecomposition, optionally truncated to `n_levels`."""
    h = as_hermitian(h)
    dim = h.shape[0]
    n = dim if n_levels is None else min(int(n_levels), dim)
    if n < 1:
        raise ValidationError("n_levels must be at least 1")
    try:
        if n == dim:
            energies, vecs = np.linalg.eigh(h)
        else:
            energies, vecs = scipy.linalg.eigh(h, subset_by_index=[0, n - 1])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"Hermitian eigensolver failed on dim {dim}: {exc}") from exc
    vecs = np.column_stack([fix_phase(vecs[:, i]) for i in range(n)])
    return Spectrum(energies=np.asarray(energies, dtype=float), states=vecs)


def ground_state(h):
    """Lowest eigenvalue and phase-fixed eigenvector of `h`.

    Raises
    ------
    DegeneracyError
        If the gap to the first excited level is below
        ``1e-10 * max(1, |E0|)``.
    """
    h = as_hermitian(h)
    spec = spectrum(h, n_levels=min(2, h.shape[0]))
    e0 = float(spec.energies[0])
    if len(spec.energies) > 1:
        gap = spec.energies[1] - e0
        if gap < 1e-10 * max(1.0, abs(e0)):
            raise DegeneracyError(f"ground state is degenerate (gap {gap:.3e} at E0={e0:.6f})")
    return e0, spec.states[:, 0].copy()


def _check_dims(a, b):
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def fidelity_pure(a, b):
    """Squared overlap |<a|b>|^2 of two state vectors."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_dims(a, b)
    return float(min(1.0, abs(np.vdot(a, b)) ** 2))


def expectation(h, s, imag_tol=1e-10):
    """Real expectation value <s|h|s>."""
    h = np.asarray(h, dtype=complex)
    s = np.asarray(s, dtype=complex)
    _check_dims(h, s)
    value = np.vdot(s, h @ s)
    if abs(value.imag) > imag_tol * max(1.0, abs(value.real)):
        raise NumericalError(f"expectation has imaginary part {value.imag:.3e}; operator not Hermitian?")
    return float(value.real)


def partial_trace_last(s, dim_keep, dim_trace):
    """Reduced density matrix of the first factor of a bipartite pure state."""
    s = np.asarray(s, dtype=complex)
    if dim_keep < 1 or dim_trace < 1 or dim_keep * dim_trace != s.shape[0]:
        raise ValidationError(
            f"cannot factor dim {s.shape[0]} as {dim_keep} x {dim_trace}"
        )
    psi = s.reshape(dim_keep, dim_trace)
    return psi @ psi.conj().T


def target_weight(s, tar, dim_trace):
    """<tar|Tr_last(|s><s|)|tar> without forming the reduced density matrix."""
    s = np.asarray(s, dtype=complex)
    tar = np.asarray(tar, dtype=complex)
    psi = s.reshape(tar.shape[0], dim_trace)
    amp = tar.conj() @ psi
    return float(np.vdot(amp, amp).real)


def fidelity_mixed(rho, tar):
    """Reduced-state fidelity ``[<tar|rho|tar>]^2``.

    Returns
    -------
    fidelity : float
        The squared target weight.
    overlap : float
        The unsquared target weight ``<tar|rho|tar>``, for diagnostics.
    """
    rho = np.asarray(rho, dtype=complex)
    tar = np.asarray(tar, dtype=complex)
    _check_dims(rho, tar)
    overlap = float(np.vdot(tar, rho @ tar).real)
    overlap = min(1.0, max(0.0, overlap))
    return overlap**2, overlap


def commutator(a, b):
    return a @ b - b @ a
