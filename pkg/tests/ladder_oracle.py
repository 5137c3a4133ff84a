"""Dense Fock-space replay of the ladder protocol.

The ``2L`` ladder modes use chain-major order (System sites first), so tracing
the last ``L`` Jordan-Wigner factors removes the Ancilla.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from fockspace import annihilators, fermionic_negativity, partial_trace_last
from monitored_fermions import ladder
from monitored_fermions.trajectory import NoiseStream


def correlation(psi, c):
    n = len(c)
    return np.array([[np.vdot(psi, c[i].T @ c[j] @ psi) for j in range(n)] for i in range(n)])


def exact_fln(psi, L, ell):
    rho = partial_trace_last(np.outer(psi, psi.conj()), L, 2 * L)
    return fermionic_negativity(rho, ell, L - ell)


def replay(params, L, seed, n_cycles, ell=None):
    """Run ``n_cycles`` of the protocol and compare both measurement branches at every step.

    Returns the largest deviation seen between the correlation-matrix FLN and
    the density-matrix FLN, together with the largest correlation mismatch.
    """
    ell = L // 2 if ell is None else ell
    n = 2 * L
    c = annihilators(n)
    num = [x.T @ x for x in c]
    eye = np.eye(2**n)
    h = ladder.real_space_hamiltonian(params, L)
    R = ladder.bloch_step_matrix(params, L)
    U = expm(-1j * params.tau_u * sum(h[a, b] * c[a].T @ c[b] for a in range(n) for b in range(n)))
    stream = NoiseStream(seed, 0)
    D = ladder.init_random_halffilling(L, stream)
    occ = np.flatnonzero(np.diag(D).real > 0.5)
    psi = np.zeros(2**n, dtype=complex)
    psi[sum(1 << (n - 1 - m) for m in occ)] = 1.0
    worst_fln = worst_corr = 0.0
    n_checked = 0
    for _ in range(n_cycles):
        D = ladder.unitary_update(D, R)
        psi = U @ psi
        worst_fln = max(worst_fln, abs(ladder.fln(D, ell) - exact_fln(psi, L, ell)))
        worst_corr = max(worst_corr, np.abs(D - correlation(psi, c)).max())
        record = []
        D_after = ladder.projective_sweep(D, params.p1, params.p2, stream, record)
        for mode, outcome in record:
            for branch in (0, 1):
                proj = num[mode] if branch else eye - num[mode]
                phi = proj @ psi
                norm = np.linalg.norm(phi)
                if norm < 1e-6:
                    continue
                phi /= norm
                Db = ladder.project_mode(D, mode, branch)
                worst_fln = max(worst_fln, abs(ladder.fln(Db, ell) - exact_fln(phi, L, ell)))
                worst_corr = max(worst_corr, np.abs(Db - correlation(phi, c)).max())
                n_checked += 1
            proj = num[mode] if outcome else eye - num[mode]
            psi = proj @ psi
            psi /= np.linalg.norm(psi)
            D = ladder.project_mode(D, mode, outcome)
        assert np.allclose(D, D_after)
    return worst_fln, worst_corr, n_checked
