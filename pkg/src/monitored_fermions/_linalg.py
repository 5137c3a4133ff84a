"""Small dense linear-algebra helpers shared by the Gaussian engines."""

from __future__ import annotations

import numpy as np

from .errors import NumericalBreakdown

# |R_kk| below this fraction of max|R_kk| means the frame lost rank
RANK_TOL = 1e-13


def positive_qr(x: np.ndarray) -> np.ndarray:
    """Orthonormalise the columns of ``x``; gauge fixed so that diag(R) > 0.

    The positive-diagonal QR factor is unique, so two runs that feed the same
    matrix get bit-identical frames. Stacks of matrices (``x.ndim > 2``) are
    handled matrix by matrix.
    """
    q, r = np.linalg.qr(x)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    mag = np.abs(d)
    if not np.all(np.isfinite(mag)) or np.any(mag.min(axis=-1) <= RANK_TOL * mag.max(axis=-1)):
        raise NumericalBreakdown("frame became rank deficient during re-orthonormalisation")
    return q * (d / mag)[..., None, :]


def isometry_defect(x: np.ndarray) -> float:
    n = x.shape[-1]
    gram = np.swapaxes(x.conj(), -1, -2) @ x
    return float(np.abs(gram - np.eye(n)).max())


def hermitian_expm(h: np.ndarray, scale: complex) -> np.ndarray:
    """``exp(scale * h)`` for Hermitian ``h`` through its eigendecomposition."""
    if np.iscomplexobj(h) and not h.imag.any():
        # real symmetric generators (e.g. Majorana bilinears) take the cheaper real solver
        h = h.real
    w, v = np.linalg.eigh(h)
    return (v * np.exp(scale * w)) @ v.conj().T
