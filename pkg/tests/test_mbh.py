import numpy as np
import pytest
from scipy.linalg import expm

from mbhtdv.errors import NumericsError, LatticeError
from mbhtdv.lattice import LatticeSpec
from mbhtdv.bhparams import compute_bh_params
from mbhtdv.fock import (enumerate_basis, build_mbh_parts, build_mbh_hamiltonian,
                         fock_state, MBHState, SparseHamiltonian)
from mbhtdv.mbh import (ground_state, evolve, site_populations, band_populations,
                        fidelity, expectation, g_constant, g_linear, g_sinusoidal,
                        dt_halving_defect)


@pytest.fixture(scope="module")
def model_s10():
    spec = LatticeSpec(10.0, 4)
    params = compute_bh_params(spec, 3, g=0.2)
    basis = enumerate_basis(4, 3, 6)
    h1, hu = build_mbh_parts(params, basis)
    return params, basis, h1, hu


def combined(h1, hu, g):
    return SparseHamiltonian(h1.dimension, (h1.matrix + g * hu.matrix).tocsr())


def test_ground_state_matches_dense(model_s10):
    params, _, _, _ = model_s10
    p1 = params.truncated(1)
    basis = enumerate_basis(4, 1, 6)
    h1, hu = build_mbh_parts(p1, basis)
    h = combined(h1, hu, 0.2)
    energy, state = ground_state(h, basis)
    dense = np.linalg.eigvalsh(h.toarray())
    assert abs(energy - dense[0]) < 1e-10
    assert abs(np.linalg.norm(state.amplitudes) - 1.0) < 1e-10


def test_ground_state_free_bosons_condense(model_s10):
    params, _, _, _ = model_s10
    p1 = params.truncated(1)
    basis = enumerate_basis(4, 1, 6)
    h1, _ = build_mbh_parts(p1, basis)
    energy, _ = ground_state(SparseHamiltonian(basis.dimension, h1.matrix), basis)
    assert energy == pytest.approx(6 * (params.E[0] - 2 * params.J[0]), abs=1e-9)


def test_ground_state_monotone_in_bands(model_s10):
    params, basis, h1, hu = model_s10
    energies = []
    for nm in (1, 2, 3):
        p = params.truncated(nm)
        b = enumerate_basis(4, nm, 6)
        h1n, hun = build_mbh_parts(p, b)
        e, _ = ground_state(combined(h1n, hun, 0.2), b)
        energies.append(e)
    assert energies[1] <= energies[0] + 1e-10
    assert energies[2] <= energies[1] + 1e-10


def test_ground_state_deterministic(model_s10):
    _, basis, h1, hu = model_s10
    h = combined(h1, hu, 0.2)
    e1, s1 = ground_state(h, basis)
    e2, s2 = ground_state(h, basis)
    assert e1 == e2
    assert np.array_equal(s1.amplitudes, s2.amplitudes)


def test_populations_on_fock_states(model_s10):
    _, basis, _, _ = model_s10
    occ = np.zeros((4, 3), dtype=int)
    occ[0, 0] = 2; occ[1, 0] = 2; occ[2, 0] = 1; occ[3, 0] = 1
    state = fock_state(basis, occ.reshape(-1))
    assert np.allclose(site_populations(state), [2, 2, 1, 1], atol=1e-12)
    assert np.allclose(band_populations(state), [6, 0, 0], atol=1e-12)
    # superposition averages linearly
    occ2 = occ[[2, 3, 0, 1]]
    other = fock_state(basis, occ2.reshape(-1))
    both = MBHState((state.amplitudes + other.amplitudes) / np.sqrt(2), basis)
    assert np.allclose(site_populations(both), [1.5, 1.5, 1.5, 1.5], atol=1e-12)
    assert site_populations(both).sum() == pytest.approx(6.0, abs=1e-10)


def test_fidelity_properties(model_s10):
    _, basis, _, _ = model_s10
    occ = np.zeros((4, 3), dtype=int); occ[:, 0] = [2, 2, 1, 1]
    a = fock_state(basis, occ.reshape(-1))
    occ2 = np.zeros((4, 3), dtype=int); occ2[:, 0] = [1, 1, 2, 2]
    b = fock_state(basis, occ2.reshape(-1))
    assert fidelity(a, a) == pytest.approx(1.0)
    assert fidelity(a, b) == pytest.approx(0.0)
    rotated = MBHState(np.exp(0.73j) * a.amplitudes, basis)
    assert fidelity(a, rotated) == pytest.approx(1.0)
    small = enumerate_basis(2, 1, 2)
    with pytest.raises(LatticeError):
        fidelity(a, fock_state(small, [1, 1]))


def test_evolve_stationary_state(model_s10):
    params, _, _, _ = model_s10
    p1 = params.truncated(1)
    basis = enumerate_basis(4, 1, 6)
    h1, hu = build_mbh_parts(p1, basis)
    energy, gs = ground_state(combined(h1, hu, 0.2), basis)
    traj = evolve(h1, hu, 0.2, gs, 2.0, 1e-3, basis=basis)
    assert np.abs(traj.observables["fidelity_initial"] - 1).max() < 1e-8
    assert np.abs(traj.observables["energy"] - energy).max() < 1e-8


def test_evolve_conserves_energy_and_norm(model_s10):
    _, basis, h1, hu = model_s10
    rng = np.random.default_rng(2)
    v = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    psi0 = MBHState(v / np.linalg.norm(v), basis)
    traj = evolve(h1, hu, 0.2, psi0, 1.0, 1e-3, basis=basis)
    e = traj.observables["energy"]
    assert np.abs(e - e[0]).max() / abs(e[0]) < 1e-8
    assert np.abs(traj.observables["norm"] - 1).max() < 1e-6
    # population sum tracks N |psi|^2 identically
    pops = traj.observables["site_populations"]
    norms = traj.observables["norm"]
    assert np.abs(pops.sum(axis=1) - 6.0 * norms**2).max() < 1e-10


def test_evolve_linear(model_s10):
    # propagation acts linearly on superpositions
    params, _, _, _ = model_s10
    p1 = params.truncated(1)
    basis = enumerate_basis(4, 1, 6)
    h1, hu = build_mbh_parts(p1, basis)
    rng = np.random.default_rng(3)
    v1 = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    v2 = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    v1 /= np.linalg.norm(v1)
    v2 /= np.linalg.norm(v2)
    alpha, beta = 0.6, 0.8j
    mix = alpha * v1 + beta * v2
    mix /= np.linalg.norm(mix)
    sched = g_linear(0.2, 1.0, 0.5)
    kw = dict(t_final=0.5, dt=1e-3, basis=basis, center_energy=False)
    f1 = evolve(h1, hu, sched, MBHState(v1, basis), **kw).meta["final_state"]
    f2 = evolve(h1, hu, sched, MBHState(v2, basis), **kw).meta["final_state"]
    fm = evolve(h1, hu, sched, MBHState(mix, basis), **kw).meta["final_state"]
    recon = alpha * f1.amplitudes + beta * f2.amplitudes
    recon /= np.linalg.norm(recon)
    assert np.abs(recon - fm.amplitudes).max() < 1e-9


def test_evolve_time_reversal(model_s10):
    _, basis, h1, hu = model_s10
    rng = np.random.default_rng(4)
    v = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    psi0 = MBHState(v / np.linalg.norm(v), basis)
    tau = 0.5
    sched = g_linear(0.2, 1.0, tau)
    fwd = evolve(h1, hu, sched, psi0, tau, 1e-3).meta["final_state"]
    neg_h1 = SparseHamiltonian(basis.dimension, (-h1.matrix).tocsr())
    neg_hu = SparseHamiltonian(basis.dimension, (-hu.matrix).tocsr())
    back = evolve(neg_h1, neg_hu, lambda t: sched(tau - t), fwd, tau, 1e-3).meta["final_state"]
    assert fidelity(back, psi0) > 1 - 1e-6


def test_evolve_rabi_against_exponential_stepper():
    # driven two-particle single site against a scaling-and-squaring oracle
    spec = LatticeSpec(25.0, 1)
    params = compute_bh_params(spec, 3, g=1.0)
    basis = enumerate_basis(1, 3, 2)
    h1, hu = build_mbh_parts(params, basis)
    psi0 = fock_state(basis, [2, 0, 0])
    sched = g_sinusoidal(1.0, 0.1, 16.0)
    traj = evolve(h1, hu, sched, psi0, 5.0, 2e-4, basis=basis)
    h1d, hud = h1.toarray(), hu.toarray()
    psi = psi0.amplitudes.copy()
    dto = 1e-4
    for k in range(int(round(5.0 / dto))):
        tm = (k + 0.5) * dto
        psi = expm(-1j * dto * (h1d + sched(tm) * hud)) @ psi
    overlap = abs(np.vdot(psi, traj.meta["final_state"].amplitudes))
    assert 1 - overlap < 1e-6
    # the drive actually depletes the initial state
    assert traj.observables["fidelity_initial"].min() < 0.999


def test_evolve_norm_abort():
    # an exploding step size must abort with a diagnostic, not return garbage
    spec = LatticeSpec(25.0, 1)
    params = compute_bh_params(spec, 3, g=1.0)
    basis = enumerate_basis(1, 3, 2)
    h1, hu = build_mbh_parts(params, basis)
    psi0 = fock_state(basis, [2, 0, 0])
    with pytest.raises(NumericsError):
        evolve(h1, hu, 1.0, psi0, 10.0, 0.2, basis=basis, center_energy=False)


def test_dt_halving_certificate(model_s10):
    _, basis, h1, hu = model_s10
    occ = np.zeros((4, 3), dtype=int); occ[:, 0] = [2, 2, 1, 1]
    psi0 = fock_state(basis, occ.reshape(-1))
    defect = dt_halving_defect(h1, hu, 0.2, psi0, 1.0, 1e-3, basis=basis)
    assert abs(defect) < 1e-7


def test_snapshots_carry_true_phase(model_s10):
    # snapshot states must include the energy-shift phase so overlaps between
    # runs with different shifts agree
    params, _, _, _ = model_s10
    p1 = params.truncated(1)
    basis = enumerate_basis(4, 1, 6)
    h1, hu = build_mbh_parts(p1, basis)
    rng = np.random.default_rng(9)
    v = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    psi0 = MBHState(v / np.linalg.norm(v), basis)
    a = evolve(h1, hu, 0.2, psi0, 0.4, 1e-3, store_states=True,
               snapshot_stride=200, center_energy=True)
    b = evolve(h1, hu, 0.2, psi0, 0.4, 1e-3, store_states=True,
               snapshot_stride=200, center_energy=False)
    # a wrong re-phasing convention would give an O(1) mismatch here; the
    # residual is the integrator difference between the two runs
    for (ta, va), (tb, vb) in zip(a.snapshots, b.snapshots):
        assert ta == tb
        assert np.abs(va - vb).max() < 1e-7
