"""Entanglement entropy of Gaussian states from correlation spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import SpectrumOutOfRange

CLAMP_EPS = 1e-12
# eigen-solvers on monitored states drift slightly outside [0, 1]; anything
# beyond this is a genuine error rather than roundoff
SPECTRUM_TOL = 1e-9
HERMITICITY_TOL = 1e-8

U1 = "u1-restricted"
NAMBU = "nambu-restricted"


@dataclass(frozen=True)
class CorrelationSpectrum:
    eigenvalues: np.ndarray
    kind: str = U1

    def __post_init__(self):
        if self.kind not in (U1, NAMBU):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")


def clamp_spectrum(values, tol: float = SPECTRUM_TOL) -> np.ndarray:
    """Clip eigenvalues into [0, 1], refusing values further out than ``tol``."""
    values = np.asarray(values, dtype=float)
    if values.size and (values.min() < -tol or values.max() > 1 + tol):
        raise SpectrumOutOfRange(
            f"correlation eigenvalues span [{values.min():.3e}, {values.max():.3e}]"
        )
    values = np.clip(values, 0.0, 1.0)
    values[values < CLAMP_EPS] = 0.0
    values[values > 1 - CLAMP_EPS] = 1.0
    return values


def binary_entropy(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return -(xlogy(lam, lam) + xlogy(1 - lam, 1 - lam))


def entropy_from_spectrum(spec: CorrelationSpectrum) -> float:
    """Von Neumann entropy of a Gaussian reduced state from its spectrum.

    Nambu spectra contain each mode twice, as ``(lam, 1 - lam)``; the sum is
    halved to undo the double counting.
    """
    lam = clamp_spectrum(spec.eigenvalues)
    s = float(binary_entropy(lam).sum())
    return 0.5 * s if spec.kind == NAMBU else s


def _check_hermitian(m, what):
    defect = np.abs(m - m.conj().T).max() if m.size else 0.0
    if defect > HERMITICITY_TOL:
        raise ValueError(f"{what} is not Hermitian (defect {defect:.2e})")


def _sites(partition, L):
    if np.isscalar(partition):
        ell = int(partition)
        if not 1 <= ell < L:
            raise ValueError(f"subsystem size {ell} outside [1, {L - 1}]")
        return np.arange(ell)
    sites = np.asarray(partition, dtype=int)
    if sites.size == 0 or sites.min() < 0 or sites.max() >= L:
        raise ValueError("partition sites out of range")
    return sites


def nambu_correlation(G: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``<Psi Psi^dagger>`` for ``Psi = (c_1..c_L, c_1^dag..c_L^dag)``.

    ``G[i, j] = <c_i^dag c_j>`` and ``F[i, j] = <c_i c_j>``.
    """
    L = G.shape[0]
    return np.block([[np.eye(L) - G.T, F], [F.conj().T, G]])


def restrict_and_diagonalize(corr, partition) -> CorrelationSpectrum:
    """Spectrum of the correlation matrix restricted to a subsystem.

    Parameters
    ----------
    corr : ndarray or (G, F) tuple
        Either the number-conserving matrix ``<c_i^dag c_j>`` or the pair
        ``(G, F)`` of a state with pairing.
    partition : int or sequence of int
        An integer ``l`` selects sites ``0..l-1``; otherwise explicit indices.
    """
    if isinstance(corr, tuple):
        G, F = (np.asarray(x) for x in corr)
        L = G.shape[0]
        sites = _sites(partition, L)
        full = nambu_correlation(G, F)
        idx = np.concatenate([sites, sites + L])
        block = full[np.ix_(idx, idx)]
        _check_hermitian(block, "Nambu correlation block")
        return CorrelationSpectrum(clamp_spectrum(np.linalg.eigvalsh(block)), NAMBU)
    D = np.asarray(corr)
    sites = _sites(partition, D.shape[0])
    block = D[np.ix_(sites, sites)]
    _check_hermitian(block, "correlation block")
    return CorrelationSpectrum(clamp_spectrum(np.linalg.eigvalsh(block)), U1)


def entanglement_entropy(corr, partition) -> float:
    return entropy_from_spectrum(restrict_and_diagonalize(corr, partition))


def subsystem_size(spec, L: int) -> int:
    """Resolve ``"L/2"``, ``"L/4"`` or an explicit integer into a subsystem size."""
    if isinstance(spec, str):
        s = spec.replace(" ", "")
        if s.startswith("L/"):
            return max(1, L // int(s[2:]))
        spec = int(s)
    return int(spec)
