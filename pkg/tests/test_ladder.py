import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import chisquare

from ladder_oracle import replay
from monitored_fermions import ladder
from monitored_fermions.errors import DegenerateDenominator
from monitored_fermions.trajectory import NoiseStream


def literal_fln(D1, ell):
    """Direct route: eigenvalues of the non-Hermitian product, square roots of rounded values."""
    L = D1.shape[0]
    g = 2 * D1 - np.eye(L)
    A, B = slice(0, ell), slice(ell, L)
    gp = np.block([[g[A, A], 1j * g[A, B]], [1j * g[B, A], -g[B, B]]])
    gm = np.block([[g[A, A], -1j * g[A, B]], [-1j * g[B, A], -g[B, B]]])
    gx = 0.5 * (np.eye(L) - np.linalg.solve(np.eye(L) + gp @ gm, gp + gm))
    mu = np.clip(np.linalg.eigvals(gx).real, 0, 1)
    lam = np.clip(np.linalg.eigvalsh(D1), 0, 1)
    return np.sum(np.log(np.sqrt(mu) + np.sqrt(1 - mu))) + 0.5 * np.sum(np.log((1 - lam) ** 2 + lam**2))


def random_gaussian_D(n, n_occ, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    u = q[:, :n_occ]
    return u.conj() @ u.T


def test_params_validation():
    with pytest.raises(ValueError):
        ladder.LadderParams(p1=1.5)
    with pytest.raises(ValueError):
        ladder.LadderParams(m=0)


def test_bloch_step_equals_dense_exponential():
    for p in (ladder.LadderParams(t2=0.4), ladder.LadderParams(t1=0.7, t2=0.7, t12=0.3, tau_u=2.5)):
        for L in (2, 3, 6):
            R = ladder.bloch_step_matrix(p, L)
            h = ladder.real_space_hamiltonian(p, L)
            assert np.abs(R - expm(-1j * p.tau_u * h)).max() < 1e-13


def test_bloch_unitaries_are_unitary_at_zero_gap():
    # t1 = t2 and t12 = 0 puts r = 0 at every momentum
    u = ladder.bloch_unitaries(ladder.LadderParams(t12=0.0), 4)
    assert np.allclose(u @ u.conj().transpose(0, 2, 1), np.eye(2))


def test_unitary_update_keeps_spectrum_and_trace():
    p = ladder.LadderParams(t2=0.3)
    D = ladder.init_random_halffilling(5, NoiseStream(0))
    D2 = ladder.unitary_update(D, ladder.bloch_step_matrix(p, 5))
    assert np.trace(D2).real == pytest.approx(5)
    assert np.allclose(np.linalg.eigvalsh(D2), np.linalg.eigvalsh(D), atol=1e-12)


def test_random_halffilling_is_uniform():
    counts = np.zeros(6)
    for k in range(3000):
        counts += np.diag(ladder.init_random_halffilling(3, NoiseStream(1, k))).real
    assert counts.sum() == 9000
    assert chisquare(counts).pvalue > 1e-3


def test_project_mode_rules():
    D = random_gaussian_D(6, 3, 0)
    for outcome in (0, 1):
        out = ladder.project_mode(D, 2, outcome)
        assert out[2, 2] == outcome and not out[2, [0, 1, 3, 4, 5]].any()
        assert np.allclose(out @ out, out, atol=1e-12)
        assert np.trace(out).real == pytest.approx(3, abs=1e-12)
    empty = np.diag([0.0, 1.0]).astype(complex)
    with pytest.raises(DegenerateDenominator):
        ladder.project_mode(empty, 0, 1)
    with pytest.raises(DegenerateDenominator):
        ladder.project_mode(empty, 1, 0)


def test_sweep_with_zero_rates_does_nothing():
    D = random_gaussian_D(8, 4, 1)
    rec = []
    assert np.array_equal(ladder.projective_sweep(D, 0.0, 0.0, NoiseStream(0), rec), D)
    assert rec == []


def test_full_rate_sweep_visits_modes_in_order():
    rec = []
    D = ladder.projective_sweep(random_gaussian_D(6, 3, 2), 1.0, 1.0, NoiseStream(3), rec)
    assert [m for m, _ in rec] == [0, 3, 1, 4, 2, 5]
    assert np.allclose(D, np.diag(np.diag(D)))
    assert sum(o for _, o in rec) == 3


def test_pole_outcomes_are_forced():
    D = np.diag([1.0, 0.0, 1.0, 0.0]).astype(complex)
    rec = []
    out = ladder.projective_sweep(D, 1.0, 1.0, NoiseStream(5), rec)
    assert np.array_equal(out, D)
    assert dict(rec) == {0: 1, 1: 0, 2: 1, 3: 0}


@pytest.mark.parametrize("seed", [0, 1])
def test_protocol_matches_fock_space_on_every_branch(seed):
    p = ladder.LadderParams(t2=0.4, p1=0.5, p2=0.5)
    worst_fln, worst_corr, n = replay(p, 3, seed, 3)
    assert n > 0
    assert worst_fln < 1e-10
    assert worst_corr < 1e-12


def test_fln_of_product_state_is_zero():
    D = ladder.init_random_halffilling(4, NoiseStream(2))
    assert abs(ladder.fln(D)) < 1e-14


def test_fln_bell_pair():
    D1 = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert ladder.fln(D1, 1, system_only=True) == pytest.approx(np.log(2), abs=1e-14)


def test_fln_agrees_with_literal_formula_on_generic_states():
    for seed in range(5):
        D = random_gaussian_D(8, 4, seed)
        D1 = D[:4, :4]
        for ell in (1, 2, 3):
            assert ladder.fln(D1, ell, system_only=True) == pytest.approx(literal_fln(D1, ell), abs=1e-7)


def test_fln_spectra_and_symmetry():
    D = random_gaussian_D(10, 5, 7)
    val, mu, lam = ladder.fln(D, 2, return_spectra=True)
    assert val >= 0
    assert np.all((mu > -1e-12) & (mu < 1 + 1e-12)) and len(lam) == 5
    # exchanging the roles of A and B leaves the negativity unchanged
    D1 = D[:5, :5]
    perm = np.r_[2:5, 0:2]
    swapped = D1[np.ix_(perm, perm)]
    assert ladder.fln(D1, 2, system_only=True) == pytest.approx(ladder.fln(swapped, 3, system_only=True), abs=1e-10)
    with pytest.raises(ValueError):
        ladder.fln(D, 0)


def test_run_protocol_is_reproducible():
    p = ladder.LadderParams(t2=0.5, p1=0.3, p2=0.3, N_st=5, m=2)
    a = ladder.run_protocol(p, 4, master_seed=1, n_traj=3)
    b = ladder.run_protocol(p, 4, master_seed=1, n_traj=3)
    assert np.array_equal(a.per_trajectory, b.per_trajectory)
    assert a.value >= 0 and a.stderr >= 0 and a.n_traj == 3
    tail = ladder.run_protocol(p, 4, master_seed=1, n_traj=1, first_index=2)
    assert tail.per_trajectory[0] == a.per_trajectory[2]
