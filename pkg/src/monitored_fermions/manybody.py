"""Exact trajectories in the half-filling sector: staggered t-V chain and SYK.

Configurations are integers whose bit ``j`` is the occupation of site ``j``
(0-based). Basis states are built by applying creation operators in
increasing site order, ``|n> = (c_0^dag)^n_0 (c_1^dag)^n_1 ... |0>``, and every
matrix element below follows from that single convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import NoConvergence, OddSize, SizeLimit
from .trajectory import NoiseStream

MAX_TV_SITES = 22
MAX_SYK_SITES = 20
NORM_TOL = 1e-12


def popcount(x):
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


def _below(x, site):
    """Number of occupied sites strictly below ``site`` in configuration ``x``."""
    return popcount(np.asarray(x, dtype=np.int64) & ((np.int64(1) << site) - 1))


@dataclass
class SectorBasis:
    """Fixed-particle-number sector with rank/unrank maps."""

    L: int
    N: int
    configs: np.ndarray = field(init=False, repr=False)
    _schmidt: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.N <= self.L:
            raise ValueError("particle number outside [0, L]")
        confs = [sum(1 << s for s in occ) for occ in combinations(range(self.L), self.N)]
        self.configs = np.array(sorted(confs), dtype=np.int64)

    @classmethod
    def half_filling(cls, L: int) -> "SectorBasis":
        if L % 2:
            raise OddSize(f"half filling needs an even number of sites, got {L}")
        return cls(L, L // 2)

    @property
    def dim(self) -> int:
        return len(self.configs)

    def rank(self, config):
        config = np.asarray(config, dtype=np.int64)
        idx = np.searchsorted(self.configs, config)
        idx_c = np.minimum(idx, self.dim - 1)
        if np.any(self.configs[idx_c] != config):
            raise KeyError("configuration outside the sector")
        return idx

    def unrank(self, index):
        return self.configs[index]

    def occupations(self) -> np.ndarray:
        """(dim, L) matrix of site occupations."""
        return ((self.configs[:, None] >> np.arange(self.L)) & 1).astype(float)

    def neel_index(self) -> int:
        # sites 2, 4, ... in 1-based labels are the odd 0-based bits
        return int(self.rank(sum(1 << s for s in range(1, self.L, 2))))


def neel_vector(basis: SectorBasis) -> np.ndarray:
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.neel_index()] = 1.0
    return psi


def hopping_elements(basis: SectorBasis, i: int, j: int):
    """Nonzero elements of ``c_i^dag c_j`` (``i != j``): (rows, cols, signs)."""
    x = basis.configs
    ok = ((x >> j) & 1 == 1) & ((x >> i) & 1 == 0)
    src = x[ok]
    dst = src ^ (np.int64(1) << i) ^ (np.int64(1) << j)
    lo, hi = min(i, j), max(i, j)
    between = ((np.int64(1) << hi) - 1) ^ ((np.int64(1) << (lo + 1)) - 1)
    signs = 1.0 - 2.0 * (popcount(src & between) % 2)
    return basis.rank(dst), np.flatnonzero(ok), signs


def build_tv_hamiltonian(L: int, t: float = 1.0, W: float = 1.0, V: float = 1.0,
                         basis: SectorBasis | None = None) -> sp.csr_matrix:
    """Staggered t-V ring in the half-filling sector.

    ``sum_j [-(t/2)(c_j^dag c_{j+1} + h.c.) + W (-1)^j n_j + V (n_j - 1/2)(n_{j+1} - 1/2)]``
    with 1-based ``j``, so 0-based site ``s`` carries the field ``W (-1)^(s+1)``.
    """
    if L % 2:
        raise OddSize(f"half filling needs an even number of sites, got {L}")
    if L > MAX_TV_SITES:
        raise SizeLimit(f"t-V sector limited to L <= {MAX_TV_SITES}")
    basis = SectorBasis.half_filling(L) if basis is None else basis
    n = basis.occupations()
    stagger = W * (-1.0) ** (np.arange(L) + 1)
    diag = n @ stagger
    rows, cols, vals = [], [], []
    for s in range(L):
        r = (s + 1) % L
        diag = diag + V * (n[:, s] - 0.5) * (n[:, r] - 0.5)
        for a, b in ((s, r), (r, s)):
            dst, src, sg = hopping_elements(basis, a, b)
            rows.append(dst)
            cols.append(src)
            vals.append(-0.5 * t * sg)
    rows.append(np.arange(basis.dim))
    cols.append(np.arange(basis.dim))
    vals.append(diag)
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    ).tocsr()
    H.sum_duplicates()
    H.eliminate_zeros()
    return H.astype(complex)


@dataclass
class SykCouplings:
    """Complex SYK couplings ``J[i, j, k, l]`` (antisymmetric in ij and in kl)."""

    L: int
    J: float
    seed: int
    tensor: np.ndarray = field(repr=False)

    def pair_matrix(self) -> np.ndarray:
        """Hermitian matrix ``A[(i<j), (k<l)] = J[i, j, k, l]``."""
        i, j = np.triu_indices(self.L, 1)
        return self.tensor[i[:, None], j[:, None], i[None, :], j[None, :]]

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "J": self.J,
            "seed": self.seed,
            "real": self.tensor.real.tolist(),
            "imag": self.tensor.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SykCouplings":
        t = np.asarray(d["real"]) + 1j * np.asarray(d["imag"])
        return cls(int(d["L"]), float(d["J"]), int(d["seed"]), t)


def sample_syk_couplings(L: int, J: float = 1.0, seed: int = 0) -> SykCouplings:
    """Gaussian couplings with ``<<|J_ij,kl|^2>> = J^2``.

    Independent draws live on ordered pairs ``P = (i<j)``, ``Q = (k<l)`` with
    ``P <= Q``; Hermiticity ``J_ij,kl = J_kl,ij^*`` fixes the rest and forces
    the ``P == Q`` entries to be real.
    """
    if L > MAX_SYK_SITES:
        raise SizeLimit(f"SYK limited to L <= {MAX_SYK_SITES}")
    rng = NoiseStream(seed, 0).generator
    n_pairs = L * (L - 1) // 2
    z = (rng.standard_normal((n_pairs, n_pairs)) + 1j * rng.standard_normal((n_pairs, n_pairs)))
    A = np.triu(z * (J / np.sqrt(2)), 1)
    A = A + A.conj().T + np.diag(J * rng.standard_normal(n_pairs))
    i, j = np.triu_indices(L, 1)
    T = np.zeros((L, L, L, L), dtype=complex)
    I, Jj, K, Ll = i[:, None], j[:, None], i[None, :], j[None, :]
    T[I, Jj, K, Ll] = A
    T[Jj, I, K, Ll] = -A
    T[I, Jj, Ll, K] = -A
    T[Jj, I, Ll, K] = A
    return SykCouplings(L, float(J), int(seed), T)


def build_syk_hamiltonian(couplings: SykCouplings, basis: SectorBasis | None = None,
                          chunk: int = 4096) -> sp.csr_matrix:
    """``L^-3/2 sum_ijkl J_ij,kl c_i^dag c_j^dag c_k c_l`` in the half-filling sector.

    Each nonzero element passes through a configuration ``m`` with two fewer
    particles: ``<m + P| c_i^dag c_j^dag c_k c_l |m + Q> = -tau_m(P) tau_m(Q)``
    where ``tau_m(x, y) = (-1)^(n_<x(m) + n_<y(m))``. The four index orderings
    of each pair pair contribute equally, hence the factor 4.
    """
    L = couplings.L
    if L > MAX_SYK_SITES:
        raise SizeLimit(f"SYK limited to L <= {MAX_SYK_SITES}")
    basis = SectorBasis.half_filling(L) if basis is None else basis
    A = couplings.pair_matrix()
    pair_id = np.full((L, L), -1)
    iu, ju = np.triu_indices(L, 1)
    pair_id[iu, ju] = np.arange(len(iu))
    inner = SectorBasis(L, basis.N - 2).configs
    n_empty = L - basis.N + 2
    sel = np.array(list(combinations(range(n_empty), 2)))
    pref = 4.0 / L**1.5
    H = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for start in range(0, len(inner), chunk):
        m = inner[start:start + chunk]
        empty = ((m[:, None] >> np.arange(L)) & 1) == 0
        sites = np.nonzero(empty)[1].reshape(len(m), n_empty)
        x, y = sites[:, sel[:, 0]], sites[:, sel[:, 1]]
        pid = pair_id[x, y]
        target = basis.rank(m[:, None] | (np.int64(1) << x) | (np.int64(1) << y))
        parity = (_below(m[:, None], x) + _below(m[:, None], y)) % 2
        tau = 1.0 - 2.0 * parity
        vals = -tau[:, :, None] * tau[:, None, :] * A[pid[:, :, None], pid[:, None, :]]
        rows = np.broadcast_to(target[:, :, None], vals.shape)
        cols = np.broadcast_to(target[:, None, :], vals.shape)
        H = H + sp.coo_matrix(
            (pref * vals.ravel(), (rows.ravel(), cols.ravel())), shape=H.shape
        ).tocsr()
    H = (H + H.conj().T) * 0.5
    H.sum_duplicates()
    return H.tocsr()


def krylov_propagate(H, psi: np.ndarray, dt: float, tol: float = 1e-12, m_max: int = 30,
                     return_estimate: bool = False):
    """``exp(-i H dt) psi`` by Lanczos with full re-orthogonalisation.

    The subspace grows until the a posteriori estimate
    ``beta * h_{m+1,m} * |e_m^T exp(-i T_m dt) e_1|`` drops below ``tol`` or the
    Lanczos recursion breaks down (the subspace is then invariant and the
    result exact). The output is renormalised to unit norm.
    """
    beta = np.linalg.norm(psi)
    if dt == 0 or beta == 0:
        return (psi.copy(), 0.0) if return_estimate else psi.copy()
    dim = psi.shape[0]
    m_max = min(m_max, dim)
    V = np.empty((m_max + 1, dim), dtype=complex)
    V[0] = psi / beta
    alphas, betas = [], []
    scale = None
    for j in range(m_max):
        w = H @ V[j]
        a = np.vdot(V[j], w).real
        w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        alphas.append(a)
        scale = max(scale or 0.0, abs(a), b)
        evals, evecs = eigh_tridiagonal(np.array(alphas), np.array(betas)) if j else (
            np.array(alphas), np.ones((1, 1)))
        y = evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())
        breakdown = b <= 1e-14 * max(scale, 1.0)
        estimate = 0.0 if breakdown else beta * b * abs(y[-1])
        if breakdown or estimate < tol:
            out = V[: j + 1].T @ y
            out /= np.linalg.norm(out)
            return (out, estimate) if return_estimate else out
        betas.append(b)
        V[j + 1] = w / b
    raise NoConvergence(f"Krylov estimate {estimate:.2e} above tol after {m_max} vectors")


def dephasing_step(psi, increments, gamma, dt, basis: SectorBasis,
                   occupations_before=None, occ=None) -> np.ndarray:
    """Onsite dephasing factor, diagonal in the configuration basis, then renormalise."""
    if gamma == 0:
        return psi.copy()
    occ = basis.occupations() if occ is None else occ
    if occupations_before is None:
        occupations_before = (np.abs(psi) ** 2) @ occ
    a = np.asarray(increments) + (2 * occupations_before - 1) * gamma * dt
    out = psi * np.exp(occ @ a)
    return out / np.linalg.norm(out)


def _schmidt_blocks(basis: SectorBasis, ell: int):
    if ell not in basis._schmidt:
        a = basis.configs & ((1 << ell) - 1)
        b = basis.configs >> ell
        na = popcount(a)
        blocks = []
        for k in np.unique(na):
            sel = np.flatnonzero(na == k)
            ua, ra = np.unique(a[sel], return_inverse=True)
            ub, rb = np.unique(b[sel], return_inverse=True)
            blocks.append((sel, ra, rb, len(ua), len(ub)))
        basis._schmidt[ell] = blocks
    return basis._schmidt[ell]


def entanglement_entropy_statevector(psi: np.ndarray, basis: SectorBasis, ell: int) -> float:
    """Von Neumann entropy of sites ``0..ell-1``.

    The sector vector is split into one (A-configurations x B-configurations)
    matrix per particle number in A; the Schmidt spectrum is the union of their
    squared singular values.
    """
    if not 1 <= ell < basis.L:
        raise ValueError(f"subsystem size {ell} outside [1, {basis.L - 1}]")
    s = 0.0
    for sel, ra, rb, na, nb in _schmidt_blocks(basis, ell):
        M = np.zeros((na, nb), dtype=complex)
        M[ra, rb] = psi[sel]
        p = np.linalg.svd(M, compute_uv=False) ** 2
        p = p[p > 0]
        s -= float(np.sum(p * np.log(p)))
    return s


def ipr(psi: np.ndarray) -> float:
    return float(np.sum(np.abs(psi) ** 4))


def random_phase_state(basis: SectorBasis, rng: np.random.Generator) -> np.ndarray:
    phases = rng.uniform(0.0, 2 * np.pi, basis.dim)
    return np.exp(-1j * phases) / np.sqrt(basis.dim)


def page_reference(L: int, n_samples: int = 48, seed: int = 0, return_stderr: bool = False):
    """Mean half-chain entropy of equal-amplitude random-phase sector states."""
    basis = SectorBasis.half_filling(L)
    vals = np.array([
        entanglement_entropy_statevector(
            random_phase_state(basis, NoiseStream(seed, k).generator), basis, L // 2)
        for k in range(n_samples)
    ])
    mean = float(vals.mean())
    if return_stderr:
        err = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
        return mean, err
    return mean


def sector_dimension(L: int) -> int:
    return comb(L, L // 2)


class ManyBodyEngine:
    """Monitored trajectory in the half-filling sector.

    Each composite step takes ``<n_j>`` on the incoming state, propagates with
    ``exp(-i H dt)`` (Krylov by default, or a cached eigendecomposition for
    small sectors), applies the dephasing factor and renormalises.
    """

    def __init__(self, H, basis: SectorBasis, gamma=0.0, dt=0.01, psi=None,
                 propagator="krylov", krylov_tol=1e-12, krylov_m_max=30):
        if propagator not in ("krylov", "eig"):
            raise ValueError(f"unknown propagator {propagator!r}")
        self.H = H
        self.basis = basis
        self.gamma = float(gamma)
        self.dt = float(dt)
        self.psi = neel_vector(basis) if psi is None else np.asarray(psi, dtype=complex)
        self.n_channels = basis.L
        self.occ = basis.occupations()
        self.propagator = propagator
        self.krylov_tol = krylov_tol
        self.krylov_m_max = krylov_m_max
        if propagator == "eig":
            dense = H.toarray() if sp.issparse(H) else np.asarray(H)
            w, v = np.linalg.eigh(dense)
            # one dense matvec per step instead of two
            self._U = (v * np.exp(-1j * self.dt * w)) @ v.conj().T

    def _propagate(self, psi):
        if self.propagator == "eig":
            return self._U @ psi
        return krylov_propagate(self.H, psi, self.dt, self.krylov_tol, self.krylov_m_max)

    def step(self, increments):
        before = (np.abs(self.psi) ** 2) @ self.occ
        psi = self._propagate(self.psi)
        self.psi = dephasing_step(psi, increments, self.gamma, self.dt, self.basis, before, self.occ)

    def entropy(self, ell):
        return entanglement_entropy_statevector(self.psi, self.basis, ell)

    def ipr(self):
        return ipr(self.psi)
