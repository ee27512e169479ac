"""Number-conserving multiband bosonic Fock spaces and the lattice Hamiltonian.

A basis state is an occupation array n[site][band] with fixed total particle
number; states are stored flattened over modes (mode = site*num_bands + band)
and ordered lexicographically.  Ranking/unranking is combinatorial (no
hashing) so state order is reproducible across runs and platforms.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .errors import DimensionLimitError, LatticeError, NumericsError

DEFAULT_DIMENSION_LIMIT = 5_000_000


def fock_dimension(num_sites, num_bands, total_particles):
    return math.comb(total_particles + num_sites * num_bands - 1, total_particles)


def _compositions(total, slots):
    """All weak compositions of `total` into `slots` parts, lexicographic."""
    if slots == 1:
        return np.array([[total]], dtype=np.uint8)
    blocks = []
    for first in range(total + 1):
        tail = _compositions(total - first, slots - 1)
        head = np.full((tail.shape[0], 1), first, dtype=np.uint8)
        blocks.append(np.hstack([head, tail]))
    return np.vstack(blocks)


def _ranking_table(num_modes, max_total):
    """S[K, R, v] = number of compositions with first part < v, R particles, K+1 slots.

    More precisely, with K remaining slots after the current one, S[K, R, v]
    counts states whose current entry is below v given R particles left; the
    lexicographic rank of a state is the sum of table lookups along its modes.
    """
    # D[K, R] = compositions of R into K parts
    D = np.zeros((num_modes + 1, max_total + 2), dtype=np.int64)
    D[0, 0] = 1
    for K in range(1, num_modes + 1):
        for R in range(max_total + 2):
            D[K, R] = math.comb(R + K - 1, K - 1)
    S = np.zeros((num_modes + 1, max_total + 2, max_total + 3), dtype=np.int64)
    for K in range(num_modes + 1):
        for R in range(max_total + 2):
            run = 0
            for v in range(max_total + 3):
                S[K, R, v] = run
                if v <= R:
                    run += D[K, R - v]
    return S


@dataclass
class FockBasis:
    num_sites: int
    num_bands: int
    total_particles: int
    states: np.ndarray = field(repr=False)        # (dim, L*N_bands) uint8, lexicographic
    _rank_table: np.ndarray = field(repr=False)   # supports totals up to N+1

    @property
    def dimension(self):
        return self.states.shape[0]

    @property
    def num_modes(self):
        return self.num_sites * self.num_bands

    @property
    def occupations(self):
        """States reshaped to (dim, num_sites, num_bands)."""
        return self.states.reshape(self.dimension, self.num_sites, self.num_bands)

    def rank_many(self, occ):
        """Lexicographic rank of each occupation row (valid for totals <= N+1)."""
        occ = np.asarray(occ, dtype=np.int64)
        if occ.ndim == 1:
            occ = occ[None, :]
        M = self.num_modes
        remaining = np.cumsum(occ[:, ::-1], axis=1)[:, ::-1]
        slots_after = M - 1 - np.arange(M)
        return self._rank_table[slots_after[None, :], remaining, occ].sum(axis=1)

    def index(self, occupation):
        """Rank of one occupation array (site-major flattening accepted)."""
        occ = np.asarray(occupation, dtype=np.int64).reshape(-1)
        if occ.shape[0] != self.num_modes:
            raise LatticeError(f"occupation needs {self.num_modes} modes")
        if occ.sum() != self.total_particles:
            raise LatticeError("occupation does not match the basis particle number")
        return int(self.rank_many(occ)[0])

    def site_number_diagonal(self, site):
        return self.occupations[:, site, :].sum(axis=1).astype(float)

    def band_number_diagonal(self, band):
        return self.occupations[:, :, band].sum(axis=1).astype(float)


def enumerate_basis(num_sites, num_bands, total_particles,
                    limit=DEFAULT_DIMENSION_LIMIT):
    """Complete ordered fixed-N basis for L sites with N_bands bands each."""
    if num_sites < 1 or num_bands < 1 or total_particles < 1:
        raise LatticeError("sites, bands and particle number must all be positive")
    dim = fock_dimension(num_sites, num_bands, total_particles)
    if dim > limit:
        raise DimensionLimitError(
            f"Fock dimension {dim} exceeds limit {limit} "
            f"(L={num_sites}, bands={num_bands}, N={total_particles})"
        )
    states = _compositions(total_particles, num_sites * num_bands)
    table = _ranking_table(num_sites * num_bands, total_particles + 1)
    return FockBasis(num_sites, num_bands, total_particles, states, table)


ZERO_SENTINEL = (-1, 0.0)


def apply_ladder(basis, state_index, site, band, kind):
    """Act with a single creation/annihilation operator on a basis state.

    Returns (new_index, amplitude); creation indexes into the basis with one
    more particle, annihilation into the one with one fewer (the ranking is
    purely combinatorial so no target basis needs to be materialized).
    Annihilating an empty mode returns the zero sentinel (-1, 0.0).
    """
    occ = basis.states[state_index].astype(np.int64)
    mode = site * basis.num_bands + band
    n = occ[mode]
    if kind == "annihilate":
        if n == 0:
            return ZERO_SENTINEL
        occ[mode] = n - 1
        return int(basis.rank_many(occ)[0]), math.sqrt(n)
    if kind == "create":
        occ[mode] = n + 1
        return int(basis.rank_many(occ)[0]), math.sqrt(n + 1)
    raise LatticeError(f"ladder kind must be 'create' or 'annihilate', got {kind!r}")


@dataclass
class MBHState:
    """Complex amplitude vector over a FockBasis."""

    amplitudes: np.ndarray
    basis: FockBasis | None = None

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self):
        return MBHState(self.amplitudes / self.norm(), self.basis)


def fock_state(basis, occupation):
    """Unit-amplitude state on one occupation array."""
    vec = np.zeros(basis.dimension, dtype=complex)
    vec[basis.index(occupation)] = 1.0
    return MBHState(vec, basis)


@dataclass
class SparseHamiltonian:
    dimension: int
    matrix: sparse.csr_matrix = field(repr=False)
    hermitian: bool = True

    def hermiticity_defect(self):
        diff = self.matrix - self.matrix.T.conj()
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def toarray(self):
        return self.matrix.toarray()


def bond_list(num_sites, periodic):
    """Nearest-neighbor bonds; on a periodic two-site ring the bond counts once."""
    if num_sites == 1:
        return []
    if num_sites == 2:
        return [(0, 1)]
    bonds = [(k, k + 1) for k in range(num_sites - 1)]
    if periodic:
        bonds.append((num_sites - 1, 0))
    return bonds


def _hopping_entries(basis, band_hoppings, bonds):
    """COO entries of -sum_bonds sum_b J_b (bdag_k b_l + h.c.)."""
    occ = basis.states.astype(np.int64)
    dim = basis.dimension
    nb = basis.num_bands
    all_rows, all_cols, all_data = [], [], []
    idx = np.arange(dim)
    for (k, l) in bonds:
        for b in range(nb):
            J = band_hoppings[b]
            if J == 0.0:
                continue
            for src, dst in ((k, l), (l, k)):
                m_src = src * nb + b
                m_dst = dst * nb + b
                n_src = occ[:, m_src]
                mask = n_src > 0
                if not mask.any():
                    continue
                amp = np.sqrt(n_src[mask] * (occ[mask, m_dst] + 1.0))
                new_occ = occ[mask].copy()
                new_occ[:, m_src] -= 1
                new_occ[:, m_dst] += 1
                all_rows.append(basis.rank_many(new_occ))
                all_cols.append(idx[mask])
                all_data.append(-J * amp)
    return all_rows, all_cols, all_data


def _interaction_entries(basis, u_tensor, prefactor=0.5):
    """COO entries of (prefactor) * sum_k sum_abcd U[a,b,c,d] bdag_a bdag_b b_c b_d.

    Uses the (a,b) and (c,d) exchange symmetry of U to iterate ordered pairs
    with multiplicity; entries with zero tensor element are skipped (parity).
    """
    occ = basis.states.astype(np.int64)
    dim = basis.dimension
    nb = basis.num_bands
    idx = np.arange(dim)
    pairs = [(a, b) for a in range(nb) for b in range(a, nb)]
    all_rows, all_cols, all_data = [], [], []
    for site in range(basis.num_sites):
        base = site * nb
        for (c, d) in pairs:
            ann_mult = 1.0 if c == d else 2.0
            n_d = occ[:, base + d]
            mask0 = n_d > 0
            if not mask0.any():
                continue
            occ1 = occ[mask0].copy()
            amp1 = np.sqrt(occ1[:, base + d].astype(float))
            occ1[:, base + d] -= 1
            n_c = occ1[:, base + c]
            mask1 = n_c > 0
            if not mask1.any():
                continue
            occ1 = occ1[mask1]
            amp1 = amp1[mask1] * np.sqrt(occ1[:, base + c].astype(float))
            occ1[:, base + c] -= 1
            src_idx = idx[mask0][mask1]
            for (a, b) in pairs:
                u = u_tensor[a, b, c, d]
                if u == 0.0:
                    continue
                cre_mult = 1.0 if a == b else 2.0
                occ2 = occ1.copy()
                amp2 = amp1 * np.sqrt(occ2[:, base + b] + 1.0)
                occ2[:, base + b] += 1
                amp2 = amp2 * np.sqrt(occ2[:, base + a] + 1.0)
                occ2[:, base + a] += 1
                all_rows.append(basis.rank_many(occ2))
                all_cols.append(src_idx)
                all_data.append(prefactor * ann_mult * cre_mult * u * amp2)
    return all_rows, all_cols, all_data


def _assemble(dim, rows, cols, data, diagonal=None):
    if diagonal is not None:
        rows.append(np.arange(dim))
        cols.append(np.arange(dim))
        data.append(diagonal)
    if rows:
        mat = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        ).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
    else:
        mat = sparse.csr_matrix((dim, dim))
    return mat


def build_single_particle_part(params, basis, periodic=True):
    """Hopping plus on-site band energies (the g-independent Hamiltonian part)."""
    if params.num_bands != basis.num_bands:
        raise LatticeError(
            f"parameter bands ({params.num_bands}) != basis bands ({basis.num_bands})"
        )
    bonds = bond_list(basis.num_sites, periodic)
    rows, cols, data = _hopping_entries(basis, params.J, bonds)
    diag = basis.states.astype(float) @ np.tile(params.E, basis.num_sites)
    mat = _assemble(basis.dimension, rows, cols, data, diagonal=diag)
    return SparseHamiltonian(basis.dimension, mat)


def build_interaction_part(params, basis):
    """On-site interaction per unit g: (1/2) sum U[a,b,c,d] bdag bdag b b."""
    if params.num_bands != basis.num_bands:
        raise LatticeError(
            f"parameter bands ({params.num_bands}) != basis bands ({basis.num_bands})"
        )
    rows, cols, data = _interaction_entries(basis, params.U)
    mat = _assemble(basis.dimension, rows, cols, data)
    return SparseHamiltonian(basis.dimension, mat)


def build_mbh_parts(params, basis, periodic=True):
    """The decomposition H(g) = H_1 + g * H_U with both parts assembled once."""
    return (build_single_particle_part(params, basis, periodic),
            build_interaction_part(params, basis))


def build_mbh_hamiltonian(params, basis, periodic=True):
    """Full lattice Hamiltonian at the coupling stored in `params`."""
    h1, hu = build_mbh_parts(params, basis, periodic)
    mat = (h1.matrix + params.g * hu.matrix).tocsr()
    return SparseHamiltonian(basis.dimension, mat)


def export_coordinate_text(hamiltonian, path):
    """Debug export: one 'row col value' line per stored entry."""
    coo = hamiltonian.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# dimension {hamiltonian.dimension}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
