"""Stroboscopic two-leg ladder: Bloch unitaries, random projective sweeps, FLN.

Modes are stored chain-major, ``index = sigma * L + j`` with ``sigma = 0`` the
System chain and ``sigma = 1`` the Ancilla, so the System block of the
correlation matrix is ``D[:L, :L]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, SingularResolvent, SpectrumOutOfRange
from .observables import SPECTRUM_TOL
from .trajectory import NoiseStream

POLE_TOL = 1e-12
IMAG_TOL = 1e-9
SWEEP_ORDER = "site-major, chain-minor: (0,S), (0,A), (1,S), (1,A), ..."


@dataclass(frozen=True)
class LadderParams:
    t1: float = 1.0
    t2: float = 1.0
    t12: float = np.pi / 2
    p1: float = 0.0
    p2: float = 0.0
    tau_u: float = 1.0
    N_st: int = 250
    m: int = 5

    def __post_init__(self):
        for name in ("p1", "p2"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if self.N_st < 0 or self.m < 1:
            raise ValueError("need N_st >= 0 and m >= 1")


def init_random_halffilling(L: int, stream: NoiseStream) -> np.ndarray:
    """Product state with ``L`` particles on a uniformly random subset of the ``2L`` modes."""
    occ = stream.generator.choice(2 * L, size=L, replace=False)
    d = np.zeros(2 * L)
    d[occ] = 1.0
    return np.diag(d).astype(complex)


def real_space_hamiltonian(params: LadderParams, L: int) -> np.ndarray:
    """Single-particle matrix of the periodic ladder (bonds accumulate for ``L = 2``)."""
    h = np.zeros((2 * L, 2 * L))
    for sigma, t in ((0, params.t1), (1, params.t2)):
        for j in range(L):
            a, b = sigma * L + j, sigma * L + (j + 1) % L
            h[a, b] += t
            h[b, a] += t
    for j in range(L):
        h[j, L + j] += params.t12
        h[L + j, j] += params.t12
    return h


def bloch_unitaries(params: LadderParams, L: int) -> np.ndarray:
    """``exp(-i H_k tau_u)`` for every momentum, from ``H_k = a0 + az sz + ax sx``."""
    k = 2 * np.pi * np.arange(L) / L
    a0 = (params.t1 + params.t2) * np.cos(k)
    az = (params.t1 - params.t2) * np.cos(k)
    ax = np.full(L, float(params.t12))
    r = np.hypot(az, ax)
    tau = params.tau_u
    c = np.cos(r * tau)
    # sin(r tau) / r, finite at r = 0
    s = tau * np.sinc(r * tau / np.pi)
    u = np.empty((L, 2, 2), dtype=complex)
    u[:, 0, 0] = c - 1j * s * az
    u[:, 1, 1] = c + 1j * s * az
    u[:, 0, 1] = u[:, 1, 0] = -1j * s * ax
    return u * np.exp(-1j * a0 * tau)[:, None, None]


def bloch_step_matrix(params: LadderParams, L: int) -> np.ndarray:
    """``R[(s,m), (s',n)] = (1/L) sum_k exp(-ik(m-n)) U_k[s, s']``."""
    uk = bloch_unitaries(params, L)
    k = 2 * np.pi * np.arange(L) / L
    d = np.arange(L)[:, None] - np.arange(L)[None, :]
    phase = np.exp(-1j * k[:, None, None] * d[None])
    R = np.einsum("kmn,kab->ambn", phase, uk) / L
    return R.reshape(2 * L, 2 * L)


def unitary_update(D: np.ndarray, R: np.ndarray) -> np.ndarray:
    return R.conj().T @ D @ R


def project_mode(D: np.ndarray, mode: int, outcome: int) -> np.ndarray:
    """Correlation matrix after projecting ``n_mode`` onto ``outcome``.

    Raises :class:`DegenerateDenominator` when the outcome has (numerically)
    zero probability.
    """
    p1 = D[mode, mode].real
    col = D[:, mode].copy()
    row = D[mode, :].copy()
    out = D.copy()
    if outcome == 1:
        if p1 <= POLE_TOL:
            raise DegenerateDenominator(f"<n> = {p1:.3e} on mode {mode}")
        out -= np.outer(col, row) / p1
        out[mode, mode] += 1.0
    else:
        if 1.0 - p1 <= POLE_TOL:
            raise DegenerateDenominator(f"1 - <n> = {1 - p1:.3e} on mode {mode}")
        col[mode] -= 1.0
        row[mode] -= 1.0
        out += np.outer(col, row) / (1.0 - p1)
        out[mode, mode] -= 1.0
    # the projected mode is exactly definite
    out[mode, :] = 0.0
    out[:, mode] = 0.0
    out[mode, mode] = float(outcome)
    return out


def projective_sweep(D: np.ndarray, p1: float, p2: float, stream: NoiseStream,
                     record: list | None = None) -> np.ndarray:
    """Sequential random measurements of every mode in :data:`SWEEP_ORDER`.

    Each mode draws ``z`` in (0, 1]; if ``z <= p_sigma`` a second draw ``q``
    decides the outcome (1 when ``q <= <n>``). An outcome sitting on its pole
    is replaced by the certain one. ``record`` collects ``(mode, outcome)``.
    """
    L = D.shape[0] // 2
    probs = (p1, p2)
    for j in range(L):
        for sigma in (0, 1):
            z = stream.uniform_open_closed()
            if z > probs[sigma]:
                continue
            q = stream.uniform_open_closed()
            mode = sigma * L + j
            n = D[mode, mode].real
            outcome = 1 if q <= n else 0
            if outcome == 1 and n <= POLE_TOL:
                outcome = 0
            elif outcome == 0 and 1.0 - n <= POLE_TOL:
                outcome = 1
            D = project_mode(D, mode, outcome)
            if record is not None:
                record.append((mode, outcome))
    return D


def fln(D: np.ndarray, ell: int | None = None, system_only: bool = False,
        return_spectra: bool = False):
    """Fermionic logarithmic negativity between the first ``ell`` System sites and the rest of the System.

    Parameters
    ----------
    D : ndarray
        Full ``2L x 2L`` ladder correlation matrix, or the ``L x L`` System
        block when ``system_only`` is set.
    ell : int, optional
        Size of subsystem A; defaults to ``L // 2``.
    return_spectra : bool
        Also return the eigenvalues ``mu`` of ``Gamma_x`` and ``lam`` of ``D_1``.

    Notes
    -----
    With ``Gamma_- = Gamma_+^dag`` and ``M = 1 + Gamma_+ Gamma_+^dag``,
    ``Gamma_x = M^-1 X X^dag / 2`` and ``1 - Gamma_x = M^-1 Y Y^dag / 2`` where
    ``X = 1 - Gamma_+`` and ``Y = 1 + Gamma_+``. Both are similar to the
    commuting Hermitian pair ``Z Z^dag / 2``, ``W W^dag / 2`` with
    ``Z = M^-1/2 X``, ``W = M^-1/2 Y``, which sum to the identity. On a common
    eigenvector ``q`` one gets ``sqrt(mu) = |Z^dag q| / sqrt(2)`` and
    ``sqrt(1 - mu) = |W^dag q| / sqrt(2)`` without square-rooting a rounded
    eigenvalue, which keeps product states at zero to machine precision.
    """
    D1 = np.asarray(D) if system_only else np.asarray(D)[: D.shape[0] // 2, : D.shape[0] // 2]
    L = D1.shape[0]
    ell = L // 2 if ell is None else int(ell)
    if not 1 <= ell < L:
        raise ValueError(f"subsystem size {ell} outside [1, {L - 1}]")
    D1 = 0.5 * (D1 + D1.conj().T)
    g = 2 * D1 - np.eye(L)
    A, B = slice(0, ell), slice(ell, L)
    gp = np.block([[g[A, A], 1j * g[A, B]], [1j * g[B, A], -g[B, B]]])
    w, vecs = np.linalg.eigh(np.eye(L) + gp @ gp.conj().T)
    if not np.all(np.isfinite(w)) or w.min() <= 0 or w.max() / w.min() > 1e12:
        raise SingularResolvent("1 + Gamma_+ Gamma_- is numerically singular")
    m_isqrt = (vecs / np.sqrt(w)) @ vecs.conj().T
    Z = m_isqrt @ (np.eye(L) - gp)
    W = m_isqrt @ (np.eye(L) + gp)
    K = 0.5 * Z @ Z.conj().T
    _, q = np.linalg.eigh(0.5 * (K + K.conj().T))
    sq_mu = np.linalg.norm(Z.conj().T @ q, axis=0) / np.sqrt(2)
    sq_nu = np.linalg.norm(W.conj().T @ q, axis=0) / np.sqrt(2)
    mu = sq_mu**2
    if mu.size and (mu.max() > 1 + SPECTRUM_TOL or np.abs(mu + sq_nu**2 - 1).max() > IMAG_TOL):
        raise SpectrumOutOfRange("Gamma_x spectrum outside [0, 1]")
    lam = np.clip(np.linalg.eigvalsh(D1), 0.0, 1.0)
    value = float(np.sum(np.log(sq_mu + sq_nu)) + 0.5 * np.sum(np.log((1 - lam) ** 2 + lam**2)))
    if return_spectra:
        return value, mu, lam
    return value


@dataclass(frozen=True)
class ProtocolResult:
    value: float
    stderr: float
    n_traj: int
    per_trajectory: np.ndarray


def run_cycles(D, params: LadderParams, stream: NoiseStream, n_cycles: int, R=None):
    """Alternate the unitary period and the measurement sweep ``n_cycles`` times."""
    L = D.shape[0] // 2
    R = bloch_step_matrix(params, L) if R is None else R
    for _ in range(n_cycles):
        D = projective_sweep(unitary_update(D, R), params.p1, params.p2, stream)
    return D


def run_trajectory_fln(params: LadderParams, L: int, stream: NoiseStream, ell: int | None = None) -> float:
    """FLN averaged over the ``m`` cycles that follow ``N_st`` transient cycles."""
    R = bloch_step_matrix(params, L)
    D = init_random_halffilling(L, stream)
    D = run_cycles(D, params, stream, params.N_st, R)
    vals = []
    for _ in range(params.m):
        D = run_cycles(D, params, stream, 1, R)
        vals.append(fln(D, ell))
    return float(np.mean(vals))


def run_protocol(params: LadderParams, L: int, master_seed: int = 0, n_traj: int = 150,
                 ell: int | None = None, first_index: int = 0) -> ProtocolResult:
    """Ensemble of ladder trajectories, one noise stream per trajectory index."""
    vals = np.array([
        run_trajectory_fln(params, L, NoiseStream(master_seed, first_index + r), ell)
        for r in range(n_traj)
    ])
    err = float(vals.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
    return ProtocolResult(float(vals.mean()), err, n_traj, vals)
