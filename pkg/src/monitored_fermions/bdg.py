"""Gaussian (Bogoliubov) trajectories of the monitored Kitaev ring.

Conventions
-----------
With ``Psi = (c_1..c_L, c_1^dag..c_L^dag)`` the state is the vacuum of the
quasiparticles ``gamma = U^dag c + V^dag c^dag``, equivalently
``c = U gamma + V^* gamma^dag``. Then

* ``G = <c^dag c> = V V^dag`` and ``F = <c c> = U V^dag``;
* ``U^dag U + V^dag V = 1`` and ``U^T V + V^T U = 0``;
* a quadratic operator ``X = 1/2 Psi^dag K Psi + const`` acts on the frame as
  ``[U; V] -> expm(-K^dag) [U; V]``, so a unitary ``exp(-i H dt)`` maps to
  ``expm(-i K_H dt)`` and a Hermitian measurement factor ``exp(X)`` to
  ``expm(-K_X)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import hermitian_expm, isometry_defect, positive_qr
from .errors import NumericalBreakdown, OddSize
from .observables import NAMBU, CorrelationSpectrum, clamp_spectrum, entropy_from_spectrum

UNITARITY_TOL = 1e-9


@dataclass
class BdGState:
    u: np.ndarray
    v: np.ndarray

    @property
    def L(self) -> int:
        return self.u.shape[0]

    @property
    def frame(self) -> np.ndarray:
        return np.vstack([self.u, self.v])

    @classmethod
    def from_frame(cls, frame: np.ndarray) -> "BdGState":
        L = frame.shape[0] // 2
        return cls(frame[:L].copy(), frame[L:].copy())

    def copy(self) -> "BdGState":
        return BdGState(self.u.copy(), self.v.copy())

    def unitarity_defect(self) -> float:
        return isometry_defect(self.frame)

    def pairing_defect(self) -> float:
        m = self.u.T @ self.v
        return float(np.abs(m + m.T).max())

    def bogoliubov_matrix(self) -> np.ndarray:
        return np.block([[self.u, self.v.conj()], [self.v, self.u.conj()]])

    def parity(self) -> float:
        """Fermion parity ``<prod_j (1 - 2 n_j)>`` of the quasiparticle vacuum."""
        return float(np.linalg.det(self.bogoliubov_matrix()).real)

    def z_matrix(self) -> np.ndarray:
        """``Z = -(U^dag)^{-1} V^dag`` (only defined when U is invertible)."""
        return -np.linalg.solve(self.u.conj().T, self.v.conj().T)


def vacuum(L: int) -> BdGState:
    return BdGState(np.eye(L, dtype=complex), np.zeros((L, L), dtype=complex))


def neel_state(L: int) -> BdGState:
    if L % 2:
        raise OddSize(f"Neel state needs an even number of sites, got {L}")
    occ = np.zeros(L, dtype=bool)
    occ[1::2] = True
    return BdGState(np.diag((~occ).astype(complex)), np.diag(occ.astype(complex)))


@dataclass
class QuadraticOperator:
    """``sum_ij hop_ij c_i^dag c_j + 1/2 sum_ij (pair_ij c_i^dag c_j^dag + h.c.) + constant``."""

    hop: np.ndarray
    pair: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        self.hop = np.asarray(self.hop, dtype=complex)
        self.pair = np.asarray(self.pair, dtype=complex)
        if np.abs(self.hop - self.hop.conj().T).max() > 1e-12:
            raise ValueError("hop must be Hermitian")
        if np.abs(self.pair + self.pair.T).max() > 1e-12:
            raise ValueError("pair must be antisymmetric")

    @property
    def L(self) -> int:
        return self.hop.shape[0]

    def nambu(self) -> np.ndarray:
        return nambu_representation(self)

    def expectation(self, G: np.ndarray, F: np.ndarray) -> float:
        # <c_i^dag c_j^dag> = conj(F_ji)
        return float(
            np.sum(self.hop * G).real + np.sum(self.pair * F.T.conj()).real + self.constant
        )


def nambu_representation(op: QuadraticOperator) -> np.ndarray:
    """BdG matrix ``K`` with ``op = 1/2 Psi^dag K Psi + tr(hop)/2 + constant``."""
    return np.block([[op.hop, op.pair], [-op.pair.conj(), -op.hop.T]])


def build_kitaev(L: int, J: float = 1.0, h: float = 0.0) -> QuadraticOperator:
    """Kitaev ring ``-sum_j [J (c_j^dag c_{j+1} + c_j^dag c_{j+1}^dag + h.c.) + 2 h n_j]``."""
    if L < 2:
        raise ValueError("need at least two sites")
    hop = np.zeros((L, L), dtype=complex)
    pair = np.zeros((L, L), dtype=complex)
    for j in range(L):
        k = (j + 1) % L
        hop[j, k] += -J
        hop[k, j] += -J
        # -J c_j^dag c_k^dag  ->  pair[j, k] = -J, pair[k, j] = +J
        pair[j, k] += -J
        pair[k, j] += J
        hop[j, j] += -2 * h
    return QuadraticOperator(hop, pair)


def number_operator(L: int, j: int) -> QuadraticOperator:
    hop = np.zeros((L, L))
    hop[j, j] = 1.0
    return QuadraticOperator(hop, np.zeros((L, L)))


def ring_distance(L: int) -> np.ndarray:
    i = np.arange(L)
    d = np.abs(i[:, None] - i[None, :])
    return np.minimum(d, L - d)


@dataclass(frozen=True)
class LongRangeKernel:
    f: np.ndarray
    alpha: float
    kac: float

    @property
    def L(self) -> int:
        return self.f.shape[0]

    @property
    def p(self) -> np.ndarray:
        """``m_i^2 = p_i``: the measured operators square to ``sum_l f_il^2``."""
        return (self.f**2).sum(axis=1)


def kac_coefficients(L: int, alpha: float) -> LongRangeKernel:
    """``f_ij = (1 + D_ij)^-alpha / N(alpha)`` with the Kac factor
    ``N(alpha) = (L - 1)^-1 sum_ij (1 + D_ij)^-alpha`` and ``D`` the ring distance."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if L < 2:
        raise ValueError("need at least two sites")
    w = (1.0 + ring_distance(L)) ** (-float(alpha))
    kac = w.sum() / (L - 1)
    return LongRangeKernel(w / kac, float(alpha), float(kac))


def majorana_bilinear(M: np.ndarray) -> QuadraticOperator:
    """``sum_ij M_ij (c_i - c_i^dag)(c_j + c_j^dag)`` for real ``M``."""
    M = np.asarray(M, dtype=float)
    return QuadraticOperator(-(M + M.T), -(M - M.T), float(np.trace(M)))


def longrange_operator(kernel: LongRangeKernel, i: int) -> QuadraticOperator:
    """The measured operator ``m_i = sum_j f_ij (c_i - c_i^dag)(c_j + c_j^dag)``."""
    M = np.zeros_like(kernel.f)
    M[i] = kernel.f[i]
    return majorana_bilinear(M)


def pair_correlations(state: BdGState) -> tuple[np.ndarray, np.ndarray]:
    """``G[i, j] = <c_i^dag c_j>`` and ``F[i, j] = <c_i c_j>``."""
    vh = state.v.conj().T
    return state.v @ vh, state.u @ vh


def longrange_expectations(kernel: LongRangeKernel, G: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``<m_i>`` by Wick contraction of ``(c_i - c_i^dag)(c_j + c_j^dag)``."""
    E = F + np.eye(G.shape[0]) - G.T - G - F.T.conj()
    return np.einsum("ij,ij->i", kernel.f, E).real


def _apply(state: BdGState, m: np.ndarray) -> BdGState:
    return BdGState.from_frame(m @ state.frame)


def unitary_step(state: BdGState, H: QuadraticOperator, dt: float) -> BdGState:
    if dt == 0:
        return state.copy()
    return _apply(state, hermitian_expm(nambu_representation(H), -1j * dt))


def _restore(frame: np.ndarray) -> BdGState:
    return BdGState.from_frame(positive_qr(frame))


def measurement_step_onsite(
    state: BdGState,
    increments: np.ndarray,
    gamma: float,
    dt: float,
    occupations_before: np.ndarray | None = None,
) -> BdGState:
    """Onsite dephasing factor ``exp(sum_j a_j n_j)``, ``a_j = dW_j + (2<n_j> - 1) gamma dt``.

    ``sum_j a_j n_j`` has the diagonal BdG matrix ``diag(a, -a)``, so the frame
    rows are simply rescaled before the QR.
    """
    if gamma == 0:
        return state.copy()
    return _restore(_onsite_frame(state, increments, gamma, dt, occupations_before))


def _onsite_frame(state, increments, gamma, dt, occupations_before=None):
    if occupations_before is None:
        occupations_before = np.einsum("ij,ij->i", state.v, state.v.conj()).real
    a = np.asarray(increments) + (2 * occupations_before - 1) * gamma * dt
    return np.vstack([state.u * np.exp(-a)[:, None], state.v * np.exp(a)[:, None]])


def measurement_step_longrange(
    state: BdGState,
    increments: np.ndarray,
    kernel: LongRangeKernel,
    gamma: float,
    dt: float,
    expectations_before: np.ndarray | None = None,
) -> BdGState:
    """Long-range factor ``exp(sum_i a_i m_i)`` with ``a_i = dW_i + 2 <m_i> gamma dt``.

    The measured operators square to a constant, hence no ``q`` shift. The
    summed generator is Hermitian because every ``a_i`` is real.
    """
    if gamma == 0:
        return state.copy()
    return _restore(_longrange_frame(state, increments, kernel, gamma, dt, expectations_before))


def _longrange_frame(state, increments, kernel, gamma, dt, expectations_before=None):
    if expectations_before is None:
        expectations_before = longrange_expectations(kernel, *pair_correlations(state))
    a = np.asarray(increments) + 2 * expectations_before * gamma * dt
    K = nambu_representation(majorana_bilinear(a[:, None] * kernel.f))
    return hermitian_expm(K, -1.0) @ state.frame


def nambu_spectrum(state: BdGState, ell: int) -> CorrelationSpectrum:
    L = state.L
    rows = np.concatenate([np.arange(ell), L + np.arange(ell)])
    w = state.frame[rows]
    return CorrelationSpectrum(clamp_spectrum(np.linalg.eigvalsh(w @ w.conj().T)), NAMBU)


def bdg_entropy(state: BdGState, ell: int) -> float:
    return entropy_from_spectrum(nambu_spectrum(state, ell))


class BdGEngine:
    """Monitored Kitaev ring with onsite (``n_j``) or long-range monitoring.

    Each composite step evaluates the measured expectations on the incoming
    state, applies the cached unitary propagator, then the measurement factor
    and a QR on the stacked ``[U; V]`` frame.
    """

    def __init__(
        self,
        L,
        J=1.0,
        h=0.0,
        gamma=0.0,
        dt=0.05,
        monitoring="onsite",
        alpha=None,
        state=None,
        check_every=100,
        debug=False,
        hamiltonian=None,
    ):
        if monitoring not in ("onsite", "longrange"):
            raise ValueError(f"unknown monitoring {monitoring!r}")
        self.L = L
        # any quadratic Hamiltonian may replace the Kitaev ring
        self.hamiltonian = build_kitaev(L, J, h) if hamiltonian is None else hamiltonian
        self.gamma = float(gamma)
        self.dt = float(dt)
        self.monitoring = monitoring
        self.kernel = kac_coefficients(L, alpha) if monitoring == "longrange" else None
        self.state = neel_state(L) if state is None else state
        self.n_channels = L
        self.propagator = hermitian_expm(nambu_representation(self.hamiltonian), -1j * self.dt)
        self.check_every = check_every
        self.debug = debug
        self.steps = 0

    def step(self, increments):
        s = self.state
        if self.monitoring == "onsite":
            before = np.einsum("ij,ij->i", s.v, s.v.conj()).real
        else:
            before = longrange_expectations(self.kernel, *pair_correlations(s))
        s = _apply(s, self.propagator)
        if self.gamma == 0:
            new = s
        else:
            if self.monitoring == "onsite":
                frame = _onsite_frame(s, increments, self.gamma, self.dt, before)
            else:
                frame = _longrange_frame(s, increments, self.kernel, self.gamma, self.dt, before)
            new = _restore(frame)
        self.steps += 1
        if self.check_every and self.steps % self.check_every == 0:
            defect = new.unitarity_defect()
            if defect > UNITARITY_TOL:
                raise NumericalBreakdown(f"u^dag u + v^dag v deviates by {defect:.2e}")
            if self.debug and self.gamma != 0:
                self._check_z(BdGState.from_frame(frame), new)
        self.state = new

    @staticmethod
    def _check_z(raw, restored):
        # QR must leave Z = -(U^dag)^-1 V^dag untouched; Z is undefined for singular U
        if np.linalg.cond(raw.u) > 1e8:
            return
        if np.abs(raw.z_matrix() - restored.z_matrix()).max() > 1e-8:
            raise NumericalBreakdown("QR re-orthonormalisation changed the Z matrix")

    def correlations(self):
        return pair_correlations(self.state)

    def entropy(self, ell):
        return bdg_entropy(self.state, ell)
