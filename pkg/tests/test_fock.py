import numpy as np
import pytest

from mbhtdv.errors import DimensionLimitError, LatticeError
from mbhtdv.bhparams import BHParams
from mbhtdv.fock import (enumerate_basis, fock_dimension, apply_ladder,
                         fock_state, build_mbh_parts, build_mbh_hamiltonian,
                         bond_list, export_coordinate_text, SparseHamiltonian,
                         ZERO_SENTINEL)


def symmetric_test_tensor(nb, seed=0):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((nb, nb, nb, nb))
    U = U + U.transpose(1, 0, 2, 3)
    U = U + U.transpose(0, 1, 3, 2)
    U = U + U.transpose(2, 3, 0, 1)
    idx = np.arange(nb)
    s4 = (idx[:, None, None, None] + idx[None, :, None, None]
          + idx[None, None, :, None] + idx[None, None, None, :])
    U[s4 % 2 == 1] = 0.0
    return U


def test_dimensions():
    assert enumerate_basis(4, 1, 6).dimension == 84
    assert enumerate_basis(4, 3, 6).dimension == 12376
    assert enumerate_basis(1, 3, 2).dimension == 6


def test_dimension_limit():
    with pytest.raises(DimensionLimitError):
        enumerate_basis(10, 5, 20, limit=1000)


def test_states_ordered_and_rank_inverse():
    basis = enumerate_basis(3, 2, 4)
    states = basis.states
    # strict lexicographic order
    for i in range(1, basis.dimension):
        assert tuple(states[i - 1]) < tuple(states[i])
    assert np.array_equal(basis.rank_many(states), np.arange(basis.dimension))


def test_index_validation():
    basis = enumerate_basis(2, 2, 3)
    with pytest.raises(LatticeError):
        basis.index([1, 1, 1])      # wrong mode count
    with pytest.raises(LatticeError):
        basis.index([1, 1, 1, 1])   # wrong particle number


def test_ladder_zero_sentinel():
    basis = enumerate_basis(1, 3, 2)
    idx = basis.index([0, 2, 0])
    assert apply_ladder(basis, idx, 0, 0, "annihilate") == ZERO_SENTINEL


def test_ladder_create_then_annihilate():
    basis = enumerate_basis(2, 2, 3)
    for idx in range(basis.dimension):
        occ = basis.states[idx]
        n = occ[1]
        up, amp_c = apply_ladder(basis, idx, 0, 1, "create")
        # rank in the (N+1)-particle space; undo it there by the amplitude rule
        assert amp_c == pytest.approx(np.sqrt(n + 1))
        plus = enumerate_basis(2, 2, 4)
        down, amp_a = apply_ladder(plus, up, 0, 1, "annihilate")
        assert down == idx
        assert amp_c * amp_a == pytest.approx(n + 1)


def test_number_operator_diagonals():
    basis = enumerate_basis(2, 3, 4)
    for idx in range(0, basis.dimension, 7):
        occ = basis.occupations[idx]
        for site in range(2):
            assert basis.site_number_diagonal(site)[idx] == occ[site].sum()
        for band in range(3):
            assert basis.band_number_diagonal(band)[idx] == occ[:, band].sum()


def test_bond_lists():
    assert bond_list(1, True) == []
    assert bond_list(2, True) == [(0, 1)]
    assert bond_list(3, True) == [(0, 1), (1, 2), (2, 0)]
    assert bond_list(4, False) == [(0, 1), (1, 2), (2, 3)]


def test_single_band_bh_against_hand_matrix():
    # two sites, two bosons: the matrix is small enough to write down
    basis = enumerate_basis(2, 1, 2)
    J, U, E0 = 0.7, 1.3, 0.2
    params = BHParams(J=np.array([J]), E=np.array([E0]),
                      U=np.ones((1, 1, 1, 1)), g=U, num_bands=1)
    H = build_mbh_hamiltonian(params, basis, periodic=True).toarray()
    r2 = np.sqrt(2.0)
    hand = np.array([[2 * E0 + U, -J * r2, 0.0],
                     [-J * r2, 2 * E0, -J * r2],
                     [0.0, -J * r2, 2 * E0 + U]])
    assert np.abs(H - hand).max() < 1e-12
    assert np.allclose(np.linalg.eigvalsh(H), np.linalg.eigvalsh(hand), atol=1e-12)


def test_single_mode_diagonal():
    # one site, two particles, no hopping: single entry 2 E + g U
    basis = enumerate_basis(1, 1, 2)
    params = BHParams(J=np.array([0.5]), E=np.array([1.1]),
                      U=np.full((1, 1, 1, 1), 0.7), g=2.0, num_bands=1)
    H = build_mbh_hamiltonian(params, basis, periodic=True).toarray()
    assert H.shape == (1, 1)
    assert H[0, 0] == pytest.approx(2 * 1.1 + 2.0 * 0.7)


def test_hermiticity_random_tensor():
    params = BHParams(J=np.array([0.3, -0.8, 1.2]), E=np.array([1.0, 3.0, 7.0]),
                      U=symmetric_test_tensor(3), g=1.7, num_bands=3)
    basis = enumerate_basis(3, 3, 4)
    H = build_mbh_hamiltonian(params, basis, periodic=True)
    assert H.hermiticity_defect() < 1e-12
    assert np.abs(H.matrix.diagonal().imag).max() == 0.0


def test_parity_block_structure():
    # interaction cannot connect states differing in odd-parity-band occupation parity
    params = BHParams(J=np.array([0.3, -0.8, 1.2]), E=np.array([1.0, 3.0, 7.0]),
                      U=symmetric_test_tensor(3, seed=3), g=1.0, num_bands=3)
    basis = enumerate_basis(2, 3, 3)
    H = build_mbh_hamiltonian(params, basis, periodic=True).toarray()
    parity = basis.occupations[:, :, 1].sum(axis=1) % 2
    mask = parity[:, None] != parity[None, :]
    assert np.abs(H[mask]).max() < 1e-14


def test_band_embedding_consistency():
    # acting with the (n+1)-band Hamiltonian on an n-band state reproduces the
    # n-band action plus couplings only into states occupying the new band
    rng = np.random.default_rng(5)
    U3 = symmetric_test_tensor(3, seed=8)
    params3 = BHParams(J=np.array([0.4, -0.6, 0.9]), E=np.array([1.0, 2.5, 4.5]),
                       U=U3, g=0.8, num_bands=3)
    params2 = BHParams(J=params3.J[:2].copy(), E=params3.E[:2].copy(),
                       U=U3[:2, :2, :2, :2].copy(), g=0.8, num_bands=2)
    b2 = enumerate_basis(3, 2, 3)
    b3 = enumerate_basis(3, 3, 3)
    H2 = build_mbh_hamiltonian(params2, b2, periodic=True).toarray()
    H3 = build_mbh_hamiltonian(params3, b3, periodic=True).toarray()
    # embedding map: pad each 2-band occupation with zeros in band 3
    pad3 = np.zeros((b2.dimension, 3, 3), dtype=int)
    occ2 = b2.occupations
    pad3[:, :, :2] = occ2
    emb_idx = b3.rank_many(pad3.reshape(b2.dimension, -1))
    v = rng.standard_normal(b2.dimension)
    w3 = H3[:, emb_idx] @ v
    w2 = H2 @ v
    assert np.abs(w3[emb_idx] - w2).max() < 1e-12
    # all other amplitude lands on states that occupy the new band
    rest = np.setdiff1d(np.arange(b3.dimension), emb_idx)
    occupies_new = b3.occupations[rest, :, 2].sum(axis=1) > 0
    touched = np.abs(w3[rest]) > 1e-14
    assert (occupies_new | ~touched).all()


def test_coordinate_export(tmp_path):
    basis = enumerate_basis(2, 1, 2)
    params = BHParams(J=np.array([1.0]), E=np.array([0.0]),
                      U=np.ones((1, 1, 1, 1)), g=1.0, num_bands=1)
    H = build_mbh_hamiltonian(params, basis, periodic=True)
    path = tmp_path / "h.txt"
    export_coordinate_text(H, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("# dimension 3")
    assert len(lines) == 1 + H.matrix.nnz


def test_parts_recombine():
    params = BHParams(J=np.array([0.3, -0.8]), E=np.array([1.0, 3.0]),
                      U=symmetric_test_tensor(2, seed=4), g=2.5, num_bands=2)
    basis = enumerate_basis(3, 2, 3)
    h1, hu = build_mbh_parts(params, basis)
    full = build_mbh_hamiltonian(params, basis)
    diff = (h1.matrix + 2.5 * hu.matrix - full.matrix)
    assert np.abs(diff.toarray()).max() < 1e-12
