"""Drift/control Hamiltonian pairs for the supported model families.

Units
-----
* two-qubit: hbar = Delta = 1, time in hbar/Delta.
* fermion mixtures: hbar = omega = m_B = 1, time in 1/omega, lengths in
  sqrt(hbar / (m_B omega)). The contact prefactor sqrt(hbar^3 omega / m_B)
  is then 1 and the coupling g is dimensionless.

Fermion Fock basis
------------------
A two-component configuration is ``(a, (p, q))`` with the heavy particle in
orbital ``a`` and the two identical light fermions in orbitals ``p < q``,
i.e. ``b_p^dag b_q^dag |0>``. Configurations are ordered lexicographically
with ``a`` slowest. The three-component basis is the product with ``K``
spectator orbitals, spectator index fastest.
"""
from __future__ import annotations

import functools
import hashlib
import os
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import roots_hermite

from .core import as_state, ground_state
from .errors import ValidationError

MAX_ORBITAL = 200

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class TwoQubitParams:
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError(f"delta must be positive, got {self.delta!r}")


@dataclass(frozen=True)
class FermionModelParams:
    mass_ratio: float = 40.0 / 6.0
    cutoff_c: int = 14

    def __post_init__(self):
        if not self.mass_ratio > 0:
            raise ValidationError(f"mass_ratio must be positive, got {self.mass_ratio!r}")
        if int(self.cutoff_c) != self.cutoff_c or self.cutoff_c < 2:
            raise ValidationError(f"cutoff_c must be an integer >= 2, got {self.cutoff_c!r}")
        if self.cutoff_c > MAX_ORBITAL:
            raise ValidationError(f"cutoff_c must be below {MAX_ORBITAL}")


@dataclass(frozen=True)
class ThreeComponentParams:
    base: FermionModelParams = field(default_factory=FermionModelParams)
    cutoff_k: int = 2
    g_spectator: float = 0.0

    def __post_init__(self):
        if int(self.cutoff_k) != self.cutoff_k or self.cutoff_k < 1:
            raise ValidationError(f"cutoff_k must be an integer >= 1, got {self.cutoff_k!r}")
        if self.cutoff_k > MAX_ORBITAL:
            raise ValidationError(f"cutoff_k must be below {MAX_ORBITAL}")
        if not np.isfinite(self.g_spectator):
            raise ValidationError("g_spectator must be finite")


@dataclass(frozen=True, eq=False)
class ModelInstance:
    """H(g) = h0 + g * hc on a fixed basis.

    Attributes
    ----------
    dims : tuple of int
        Subsystem dimensions; ``(dim,)`` for a single system and
        ``(dim_ab, K)`` for the three-component product basis.
    system : ModelInstance or None
        For the three-component model, the two-component model that defines
        the target state.
    """

    family: str
    params: object
    h0: np.ndarray
    hc: np.ndarray
    basis: tuple
    dims: tuple
    system: Optional["ModelInstance"] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.h0.shape != self.hc.shape or self.h0.shape[0] != self.h0.shape[1]:
            raise ValidationError("h0 and hc must be square with equal shape")
        if int(np.prod(self.dims)) != self.h0.shape[0]:
            raise ValidationError(f"dims {self.dims} do not match operator size {self.h0.shape[0]}")
        self.h0.setflags(write=False)
        self.hc.setflags(write=False)

    @property
    def dim(self):
        return self.h0.shape[0]

    def hamiltonian(self, g):
        return self.h0 + g * self.hc

    def shifted(self, g_offset):
        """Same model with the drift redefined as h0 + g_offset * hc."""
        system = self.system.shifted(g_offset) if self.system is not None else None
        return replace(self, h0=self.h0 + g_offset * self.hc, system=system, _cache={})

    def invariant_blocks(self):
        """Labels of the blocks left invariant by both h0 and hc.

        Two basis states share a label when they are connected through
        non-zero matrix elements of either operator, so the dynamics never
        leaves the union of blocks touched by the initial state.
        """
        if "blocks" not in self._cache:
            pattern = csr_matrix((self.h0 != 0) | (self.hc != 0))
            _, labels = connected_components(pattern, directed=False)
            self._cache["blocks"] = labels
        return self._cache["blocks"]

    def restricted(self, support):
        """(indices, h0, hc) restricted to the invariant blocks touching `support`."""
        labels = self.invariant_blocks()
        key = tuple(sorted(set(labels[np.asarray(support)].tolist())))
        cached = self._cache.get(("restricted", key))
        if cached is None:
            idx = np.flatnonzero(np.isin(labels, key))
            if idx.size == self.dim:
                cached = (idx, self.h0, self.hc)
            else:
                sub = np.ix_(idx, idx)
                cached = (idx, np.ascontiguousarray(self.h0[sub]), np.ascontiguousarray(self.hc[sub]))
            self._cache[("restricted", key)] = cached
        return cached


# ---------------------------------------------------------------------------
# two-qubit model
# ---------------------------------------------------------------------------

def build_two_qubit(p=TwoQubitParams()):
    """Two coupled qubits in the basis |uu>, |ud>, |du>, |dd>."""
    sx1 = np.kron(PAULI_X, IDENTITY_2)
    sx2 = np.kron(IDENTITY_2, PAULI_X)
    sz1 = np.kron(PAULI_Z, IDENTITY_2)
    sz2 = np.kron(IDENTITY_2, PAULI_Z)
    h0 = -p.delta / (2.0 * np.sqrt(2.0)) * (sx1 + sx2 + sz1 + sz2)
    hc = -p.delta * (sz1 @ sz2)
    return ModelInstance(
        family="two_qubit",
        params=p,
        h0=h0,
        hc=hc,
        basis=("uu", "ud", "du", "dd"),
        dims=(4,),
    )


# ---------------------------------------------------------------------------
# harmonic-oscillator orbitals and contact integrals
# ---------------------------------------------------------------------------

def _hermite_table(nmax, y, gaussian):
    """Rows 0..nmax of normalized Hermite functions (or their polynomial part) at y."""
    y = np.asarray(y, dtype=float)
    out = np.empty((nmax + 1,) + y.shape)
    out[0] = np.pi**-0.25 * (np.exp(-0.5 * y * y) if gaussian else 1.0)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for n in range(1, nmax):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * y * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def ho_orbitals(nmax, mass, x):
    """Table ``[n, ...]`` of oscillator eigenfunctions psi_n(x), n = 0..nmax."""
    if not 0 <= nmax < MAX_ORBITAL:
        raise ValidationError(f"orbital index must lie in [0, {MAX_ORBITAL}), got {nmax}")
    if not mass > 0:
        raise ValidationError("mass must be positive")
    x = np.asarray(x, dtype=float)
    return mass**0.25 * _hermite_table(nmax, np.sqrt(mass) * x, gaussian=True)


def ho_orbital(n, mass, x):
    """n-th oscillator eigenfunction for a particle of the given mass.

    ``psi_n(x) = mass**(1/4) * h_n(sqrt(mass) * x)`` with ``h_n`` the
    unit-mass Hermite function, evaluated by the three-term recurrence.
    """
    if int(n) != n or not 0 <= n < MAX_ORBITAL:
        raise ValidationError(f"orbital index must lie in [0, {MAX_ORBITAL}), got {n!r}")
    return ho_orbitals(int(n), mass, x)[int(n)]


def _gauss_hermite_factors(n_a, n_b, mass_a, mass_b, n_nodes):
    s, w = roots_hermite(n_nodes)
    total = mass_a + mass_b
    x = s / np.sqrt(total)
    # psi_n(x) exp(m x^2 / 2) is a polynomial, so the four-fold product times
    # exp(s^2) is integrated exactly by the rule.
    pa = mass_a**0.25 * _hermite_table(n_a - 1, np.sqrt(mass_a) * x, gaussian=False)
    pb = mass_b**0.25 * _hermite_table(n_b - 1, np.sqrt(mass_b) * x, gaussian=False)
    return pa, pb, w / np.sqrt(total)


def delta_integral(i, k, j, l, mass_a, mass_b):
    """Contact matrix element  int psi^a_i psi^a_k psi^b_j psi^b_l dx."""
    idx = (i, k, j, l)
    if any(int(v) != v or not 0 <= v < MAX_ORBITAL for v in idx):
        raise ValidationError(f"orbital indices must lie in [0, {MAX_ORBITAL}), got {idx}")
    if not (mass_a > 0 and mass_b > 0):
        raise ValidationError("masses must be positive")
    if sum(idx) % 2:
        return 0.0
    n_nodes = sum(idx) + 8
    pa, pb, w = _gauss_hermite_factors(max(i, k) + 1, max(j, l) + 1, mass_a, mass_b, n_nodes)
    return float(np.sum(w * pa[i] * pa[k] * pb[j] * pb[l]))


def _compute_delta_table(n_a, n_b, mass_a, mass_b):
    n_nodes = 2 * (n_a - 1) + 2 * (n_b - 1) + 8
    pa, pb, w = _gauss_hermite_factors(n_a, n_b, mass_a, mass_b, n_nodes)
    table = np.einsum("in,kn,jn,ln,n->ikjl", pa, pa, pb, pb, w, optimize=True)
    ia = np.arange(n_a)
    ib = np.arange(n_b)
    parity = (ia[:, None, None, None] + ia[None, :, None, None]
              + ib[None, None, :, None] + ib[None, None, None, :]) % 2
    table[parity == 1] = 0.0
    return table


def _cache_path(directory, n_a, n_b, mass_a, mass_b):
    tag = f"{mass_a!r}_{mass_b!r}_{n_a}_{n_b}".encode()
    return Path(directory) / f"delta_{hashlib.sha256(tag).hexdigest()[:16]}.npz"


def _load_cached_table(path, key):
    try:
        with np.load(path) as data:
            table = data["table"]
            stored_key = str(data["key"])
            checksum = str(data["sha256"])
    except (OSError, KeyError, ValueError):
        return None
    if stored_key != key or hashlib.sha256(table.tobytes()).hexdigest() != checksum:
        return None
    return table


@functools.lru_cache(maxsize=32)
def delta_table(n_a, n_b, mass_a, mass_b, cache_dir=None):
    """All contact integrals ``T[i, k, j, l]`` with i, k < n_a and j, l < n_b.

    If `cache_dir` (or the ``RAMPOPT_CACHE_DIR`` environment variable) is
    set, tables are stored there as ``.npz`` files with a SHA-256 checksum
    and regenerated when missing or corrupt.
    """
    cache_dir = cache_dir or os.environ.get("RAMPOPT_CACHE_DIR")
    key = f"{mass_a!r}|{mass_b!r}|{n_a}|{n_b}"
    if cache_dir:
        path = _cache_path(cache_dir, n_a, n_b, mass_a, mass_b)
        table = _load_cached_table(path, key)
        if table is None:
            table = _compute_delta_table(n_a, n_b, mass_a, mass_b)
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez(path, table=table, key=key,
                     sha256=hashlib.sha256(table.tobytes()).hexdigest())
    else:
        table = _compute_delta_table(n_a, n_b, mass_a, mass_b)
    table.setflags(write=False)
    return table


# ---------------------------------------------------------------------------
# two- and three-component fermion mixtures
# ---------------------------------------------------------------------------

def fock_basis(cutoff_c):
    """Configurations ``(a, (p, q))`` with a < C and p < q < C, a slowest."""
    pairs = list(combinations(range(cutoff_c), 2))
    return tuple((a, pair) for a in range(cutoff_c) for pair in pairs)


def _basis_arrays(basis):
    a = np.array([c[0] for c in basis])
    p = np.array([c[1][0] for c in basis])
    q = np.array([c[1][1] for c in basis])
    return a, p, q


def _pair_one_body(o, p, q):
    """<p q| sum_bb' o[b, b'] b_b^dag b_b' |p' q'> for all pairs of configurations.

    ``o`` is indexed as ``o[row_config, col_config, b, b']`` via the callable
    signature ``o(b_rows, b_cols)`` returning a (n, n) array.
    """
    dq = q[:, None] == q[None, :]
    dp = p[:, None] == p[None, :]
    dqp = q[:, None] == p[None, :]
    dpq = p[:, None] == q[None, :]
    return (o(p[:, None], p[None, :]) * dq
            + o(q[:, None], q[None, :]) * dp
            - o(p[:, None], q[None, :]) * dqp
            - o(q[:, None], p[None, :]) * dpq)


def _two_component_parts(p):
    c = int(p.cutoff_c)
    basis = fock_basis(c)
    a, bp, bq = _basis_arrays(basis)
    h0 = np.diag((a + 0.5) + (bp + 0.5) + (bq + 0.5)).astype(complex)
    table = delta_table(c, c, float(p.mass_ratio), 1.0)
    ar, ac = a[:, None], a[None, :]
    hc = _pair_one_body(lambda br, bc: table[ar, ac, br, bc], bp, bq)
    return basis, h0, hc.astype(complex)


def build_two_component(p=FermionModelParams()):
    """Heavy particle plus two identical light fermions with contact coupling.

    h0 is diagonal (oscillator energies); hc is sum_i delta(x - y_i) in the
    antisymmetrized Fock basis.
    """
    basis, h0, hc = _two_component_parts(p)
    return ModelInstance(
        family="two_component",
        params=p,
        h0=h0,
        hc=hc,
        basis=basis,
        dims=(len(basis),),
    )


def build_three_component(p=ThreeComponentParams()):
    """Two-component mixture plus a distinguishable spectator of mass m_B.

    The spectator couples with fixed strength G to both components through
    h0; the control term only acts on the two-component factor.
    """
    system = build_two_component(p.base)
    c = int(p.base.cutoff_c)
    k = int(p.cutoff_k)
    d = system.dim
    a, bp, bq = _basis_arrays(system.basis)
    mu = float(p.base.mass_ratio)
    g = float(p.g_spectator)

    dim = d * k
    h0 = np.zeros((dim, dim), dtype=complex)
    # h0 = h0_ab x 1 + 1 x diag(k + 1/2) + G (V_AC + V_BC); assemble per spectator block.
    if g != 0.0:
        t_ac = delta_table(c, k, mu, 1.0)
        t_bc = delta_table(c, k, 1.0, 1.0)
        same_a = a[:, None] == a[None, :]
        # delta(z - x) leaves the light pair untouched; delta(z - y_i) leaves A untouched
        same_pair = (bp[:, None] == bp[None, :]) & (bq[:, None] == bq[None, :])
        ar, ac = a[:, None], a[None, :]
    for kr in range(k):
        for kc in range(k):
            block = np.zeros((d, d))
            if kr == kc:
                block += np.diag(np.diag(system.h0).real + kr + 0.5)
            if g != 0.0:
                v_ac = t_ac[ar, ac, kr, kc] * same_pair
                v_bc = same_a * _pair_one_body(lambda br, bc: t_bc[br, bc, kr, kc], bp, bq)
                block += g * (v_ac + v_bc)
            h0[kr::k, kc::k] = block
    hc = np.kron(system.hc, np.eye(k))
    basis = tuple((cfg, orb) for cfg in system.basis for orb in range(k))
    return ModelInstance(
        family="three_component",
        params=p,
        h0=h0,
        hc=hc,
        basis=basis,
        dims=(d, k),
        system=system,
    )


def build_model(params):
    """Dispatch on the parameter type."""
    if isinstance(params, TwoQubitParams):
        return build_two_qubit(params)
    if isinstance(params, FermionModelParams):
        return build_two_component(params)
    if isinstance(params, ThreeComponentParams):
        return build_three_component(params)
    raise ValidationError(f"unknown model parameters {type(params).__name__}")


def embed_with_spectator(ab, k, orbital=0):
    """Product state |ab> (x) |orbital> with the spectator index fastest."""
    if int(k) != k or k < 1:
        raise ValidationError(f"spectator cutoff must be a positive integer, got {k!r}")
    if int(orbital) != orbital or not 0 <= orbital < k:
        raise ValidationError(f"spectator orbital {orbital!r} outside [0, {k})")
    phi = np.zeros(int(k), dtype=complex)
    phi[int(orbital)] = 1.0
    return np.kron(as_state(ab), phi)


def make_scenario_states(model, g1, g2):
    """Initial and target states ``(ini, tar)`` for the transfer g1 -> g2.

    For the three-component model the initial state is the two-component
    ground state at g1 with the spectator in its lowest orbital, and the
    target is the two-component ground state at g2 (the spectator is left
    unconstrained).
    """
    if model.system is not None:
        _, ab = ground_state(model.system.hamiltonian(g1))
        _, tar = ground_state(model.system.hamiltonian(g2))
        return embed_with_spectator(ab, model.dims[-1], 0), tar
    _, ini = ground_state(model.hamiltonian(g1))
    _, tar = ground_state(model.hamiltonian(g2))
    return ini, tar
