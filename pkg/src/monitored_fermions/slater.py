"""Slater-determinant trajectories of the dephased tight-binding ring.

The state is an L x N isometry ``U`` whose columns are the occupied orbitals,
``|psi> = prod_k (sum_j U[j, k] c_j^dag) |0>``. Hopping rotates the columns,
monitoring ``n_j`` rescales the rows, and a QR restores the isometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._linalg import isometry_defect, positive_qr
from .errors import NumericalBreakdown, OddSize
from .observables import CorrelationSpectrum, entanglement_entropy, entropy_from_spectrum
from .trajectory import NoiseStream, TrajectorySeries, wiener_increments

ISOMETRY_TOL = 1e-10


@dataclass
class SlaterState:
    orbitals: np.ndarray

    @property
    def L(self) -> int:
        return self.orbitals.shape[0]

    @property
    def N(self) -> int:
        return self.orbitals.shape[1]

    def copy(self) -> "SlaterState":
        return SlaterState(self.orbitals.copy())


@dataclass(frozen=True)
class HoppingHamiltonian:
    """``H = -(J/2) sum_j (c_j^dag c_{j+1} + h.c.)`` on a ring."""

    L: int
    J: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if self.boundary != "periodic":
            raise ValueError("only periodic rings are supported")
        if self.L < 2:
            raise ValueError("need at least two sites")

    def matrix(self) -> np.ndarray:
        h = np.zeros((self.L, self.L))
        for j in range(self.L):
            k = (j + 1) % self.L
            h[j, k] += -self.J / 2
            h[k, j] += -self.J / 2
        return h

    def mode_energies(self) -> np.ndarray:
        """Eigenvalues on the numpy FFT grid, ``-J cos(2 pi k / L)``."""
        return -self.J * np.cos(2 * np.pi * np.arange(self.L) / self.L)


@lru_cache(maxsize=32)
def _fourier_phases(L: int, J: float, dt: float) -> np.ndarray:
    return np.exp(-1j * dt * HoppingHamiltonian(L, J).mode_energies())[:, None]


def init_neel(L: int) -> SlaterState:
    """Neel state: one orbital on every even site (1-based), i.e. indices 1, 3, ..."""
    if L % 2:
        raise OddSize(f"Neel state needs an even number of sites, got {L}")
    u = np.zeros((L, L // 2), dtype=complex)
    u[np.arange(1, L, 2), np.arange(L // 2)] = 1.0
    return SlaterState(u)


def unitary_step(state: SlaterState, H: HoppingHamiltonian, dt: float) -> SlaterState:
    """``U <- exp(-i h dt) U`` applied in Fourier space (the ring is circulant)."""
    if dt == 0 or H.J == 0:
        return state.copy()
    phases = _fourier_phases(H.L, float(H.J), float(dt))
    u = np.fft.ifft(phases * np.fft.fft(state.orbitals, axis=0), axis=0)
    return SlaterState(u)


def occupations(state: SlaterState) -> np.ndarray:
    u = state.orbitals
    return np.einsum("ij,ij->i", u.conj(), u).real


def measurement_step(
    state: SlaterState,
    increments: np.ndarray,
    gamma: float,
    dt: float,
    occupations_before: np.ndarray | None = None,
) -> SlaterState:
    """Dephasing factor ``exp(sum_j [dW_j + (2<n_j> - 1) gamma dt] n_j)``.

    Row ``j`` of the orbital matrix is scaled by the exponential of its
    coefficient, then the frame is re-orthonormalised. ``<n_j>`` is taken from
    ``occupations_before`` when given (the composite step passes the values of
    the state at the start of the step), otherwise from ``state``.
    """
    if gamma == 0:
        return state.copy()
    occ = occupations(state) if occupations_before is None else occupations_before
    alpha = np.asarray(increments) + (2 * occ - 1) * gamma * dt
    u = state.orbitals * np.exp(alpha)[:, None]
    return SlaterState(positive_qr(u))


def correlation_matrix(state: SlaterState) -> np.ndarray:
    """``D[i, j] = <c_i^dag c_j>``."""
    u = state.orbitals
    return u.conj() @ u.T


def slater_entropy(state: SlaterState, ell: int) -> float:
    # only the l x l block is needed: D_AA = conj(U_A) U_A^T
    ua = state.orbitals[:ell]
    return entanglement_entropy(ua.conj() @ ua.T, np.arange(ell))


class SlaterEngine:
    """Composite step of the monitored tight-binding chain.

    One step applies ``exp(-i H dt)`` followed by the dephasing factor with
    ``<n_j>`` evaluated on the state at the beginning of the step.
    """

    def __init__(self, L, J=1.0, gamma=0.0, dt=0.01, state=None, check_every=100):
        self.hamiltonian = HoppingHamiltonian(L, J)
        self.gamma = float(gamma)
        self.dt = float(dt)
        self.state = init_neel(L) if state is None else state
        self.n_channels = L
        self.check_every = check_every
        self.steps = 0

    def step(self, increments):
        occ = occupations(self.state)
        s = unitary_step(self.state, self.hamiltonian, self.dt)
        self.state = measurement_step(s, increments, self.gamma, self.dt, occ)
        self.steps += 1
        if self.check_every and self.steps % self.check_every == 0:
            defect = isometry_defect(self.state.orbitals)
            if defect > ISOMETRY_TOL:
                raise NumericalBreakdown(f"isometry defect {defect:.2e} after {self.steps} steps")

    def correlation(self):
        return correlation_matrix(self.state)

    def entropy(self, ell):
        return slater_entropy(self.state, ell)


def run_slater_ensemble(L, J, gamma, schedule, master_seed, n_traj, ell, first_index=0,
                        check_every=100):
    """Half-chain entropy series of ``n_traj`` trajectories advanced together.

    Same arithmetic and noise streams as driving :class:`SlaterEngine` through
    :func:`run_trajectory` one trajectory at a time, with the orbitals of all
    trajectories stacked in one ``(n_traj, L, N)`` array so that the FFT, the
    row scaling and the QR run as batched calls.
    """
    dt = schedule.dt
    H = HoppingHamiltonian(L, J)
    phases = _fourier_phases(L, float(J), float(dt))[None]
    u = np.repeat(init_neel(L).orbitals[None], n_traj, axis=0)
    streams = [NoiseStream(master_seed, first_index + r) for r in range(n_traj)]
    sample_steps = schedule.sample_steps()
    values = np.empty((n_traj, len(sample_steps)))

    def record(k):
        ua = u[:, :ell]
        lam = np.linalg.eigvalsh(ua.conj() @ np.swapaxes(ua, 1, 2))
        for r in range(n_traj):
            values[r, k] = entropy_from_spectrum(CorrelationSpectrum(lam[r]))

    record(0)
    k = 1
    for step in range(1, schedule.n_steps + 1):
        occ = np.einsum("rij,rij->ri", u.conj(), u).real
        if dt != 0 and H.J != 0:
            u = np.fft.ifft(phases * np.fft.fft(u, axis=1), axis=1)
        inc = np.stack([wiener_increments(s, L, gamma, dt) for s in streams])
        if gamma != 0:
            u = positive_qr(u * np.exp(inc + (2 * occ - 1) * gamma * dt)[:, :, None])
        if check_every and step % check_every == 0:
            defect = isometry_defect(u)
            if defect > ISOMETRY_TOL:
                raise NumericalBreakdown(f"isometry defect {defect:.2e} after {step} steps")
        if k < len(sample_steps) and step == sample_steps[k]:
            record(k)
            k += 1
    times = sample_steps * dt
    return [TrajectorySeries(times=times, values={"entropy": values[r]}) for r in range(n_traj)]

