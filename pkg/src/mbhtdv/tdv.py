"""Variational lattice dynamics with one (or D) time-dependent modes per site.

Each site k carries D orthonormal modes, linear combinations of the fixed
band Wannier functions with coefficients d[k, a, kappa] (a = band index up to
N_V, kappa = variational mode index).  The many-body state is a Fock vector C
over the reduced basis of L sites with D modes each.  Mode coefficients and
Fock amplitudes evolve together: the modes by a projected nonlinear equation,
the amplitudes by the reduced Hamiltonian with instantaneous hopping, on-site
energy, and interaction coefficients.  Time evolution is supported for D = 1;
for D >= 2 only ground states (variational minimization) are provided.

The projector that drives each mode's motion removes the component along the
current mode, so mode norms are conserved identically and band-parity sectors
of the coefficients never mix (the interaction tensor vanishes for odd band
index sums).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionLimitError, LatticeError, NumericsError
from .fock import MBHState, enumerate_basis, bond_list, fock_dimension
from .mbh import Trajectory

_TEMPLATE_BYTE_BUDGET = 400_000_000

_space_cache = {}


class _ReducedSpace:
    """Operator templates over the reduced Fock basis (L sites, D modes each).

    Stores dense matrices for every one-body pair b^dag_{k mu} b_{k nu},
    every on-site quartic b^dag b^dag b b, and every bond pair, so that
    Hamiltonians and density matrices are cheap tensor contractions.
    """

    def __init__(self, num_sites, num_modes, total_particles, periodic=True):
        dim = fock_dimension(num_sites, num_modes, total_particles)
        need = (num_sites * (num_modes**2 + num_modes**4 + num_modes**2)
                + 2 * len(bond_list(num_sites, periodic)) * num_modes**2) * dim * dim * 8
        if need > _TEMPLATE_BYTE_BUDGET:
            raise DimensionLimitError(
                f"reduced-space templates would need {need / 1e6:.0f} MB "
                f"(L={num_sites}, D={num_modes}, N={total_particles})"
            )
        self.basis = enumerate_basis(num_sites, num_modes, total_particles)
        self.num_sites = num_sites
        self.num_modes = num_modes
        self.total_particles = total_particles
        self.periodic = periodic
        self.bonds = bond_list(num_sites, periodic)
        d = self.basis.dimension
        D = num_modes
        self.site_pair = np.zeros((num_sites, D, D, d, d))
        for k in range(num_sites):
            for mu in range(D):
                for nu in range(D):
                    self.site_pair[k, mu, nu] = self._pair_matrix((k, mu), (k, nu))
        self.bond_pair = np.zeros((len(self.bonds), D, D, d, d))
        for b, (k, l) in enumerate(self.bonds):
            for mu in range(D):
                for nu in range(D):
                    self.bond_pair[b, mu, nu] = self._pair_matrix((k, mu), (l, nu))
        self.site_quartic = np.zeros((num_sites, D, D, D, D, d, d))
        for k in range(num_sites):
            for ka in range(D):
                for la in range(D):
                    for mu in range(D):
                        for nu in range(D):
                            self.site_quartic[k, ka, la, mu, nu] = self._quartic_matrix(
                                k, ka, la, mu, nu)
        if D == 1:
            # single-mode fast path: number operators are diagonal
            occ = self.basis.occupations[:, :, 0].astype(float)
            self.number_diag = occ.T.copy()                       # (L, dim)
            self.quartic_diag = (occ * (occ - 1.0)).T.copy()      # (L, dim)
            self.hop_mats = self.bond_pair[:, 0, 0].copy()        # (B, dim, dim)

    def _pair_matrix(self, create, annihilate):
        """Dense matrix of b^dag_{create} b_{annihilate}."""
        basis = self.basis
        occ = basis.states.astype(np.int64)
        m_c = create[0] * self.num_modes + create[1]
        m_a = annihilate[0] * self.num_modes + annihilate[1]
        n_a = occ[:, m_a]
        mask = n_a > 0
        out = np.zeros((basis.dimension, basis.dimension))
        if not mask.any():
            return out
        new = occ[mask].copy()
        amp = np.sqrt(new[:, m_a].astype(float))
        new[:, m_a] -= 1
        amp = amp * np.sqrt(new[:, m_c] + 1.0)
        new[:, m_c] += 1
        rows = basis.rank_many(new)
        out[rows, np.arange(basis.dimension)[mask]] = amp
        return out

    def _quartic_matrix(self, site, ka, la, mu, nu):
        """Dense matrix of b^dag_ka b^dag_la b_mu b_nu, all on one site."""
        basis = self.basis
        occ = basis.states.astype(np.int64)
        base = site * self.num_modes
        out = np.zeros((basis.dimension, basis.dimension))
        cols = np.arange(basis.dimension)
        n_nu = occ[:, base + nu]
        mask = n_nu > 0
        if not mask.any():
            return out
        new = occ[mask].copy()
        amp = np.sqrt(new[:, base + nu].astype(float))
        new[:, base + nu] -= 1
        mask2 = new[:, base + mu] > 0
        if not mask2.any():
            return out
        new = new[mask2]
        amp = amp[mask2] * np.sqrt(new[:, base + mu].astype(float))
        new[:, base + mu] -= 1
        amp = amp * np.sqrt(new[:, base + la] + 1.0)
        new[:, base + la] += 1
        amp = amp * np.sqrt(new[:, base + ka] + 1.0)
        new[:, base + ka] += 1
        rows = basis.rank_many(new)
        out[rows, cols[mask][mask2]] = amp
        return out

    def hamiltonian(self, j_bond, e_site, u_site):
        """Dense reduced Hamiltonian from per-bond/per-site coefficient blocks."""
        h = np.einsum("kmn,kmnij->ij", e_site, self.site_pair, optimize=True).astype(complex)
        h += 0.5 * np.einsum("kabmn,kabmnij->ij", u_site, self.site_quartic, optimize=True)
        if len(self.bonds):
            hop = np.einsum("bmn,bmnij->ij", j_bond, self.bond_pair, optimize=True)
            h -= hop + hop.conj().T
        return h

    def rdm1_site(self, C):
        return np.einsum("i,kmnij,j->kmn", C.conj(), self.site_pair, C, optimize=True)

    def rdm1_bond(self, C):
        if not len(self.bonds):
            return np.zeros((0, self.num_modes, self.num_modes), dtype=complex)
        return np.einsum("i,bmnij,j->bmn", C.conj(), self.bond_pair, C, optimize=True)

    def rdm2_site(self, C):
        return np.einsum("i,kabmnij,j->kabmn", C.conj(), self.site_quartic, C, optimize=True)

    def hamiltonian_single_mode(self, j_bond, e_site, u_site):
        """hamiltonian() specialized to D = 1 scalar coefficients."""
        dim = self.basis.dimension
        h = np.zeros((dim, dim), dtype=complex)
        diag = e_site @ self.number_diag + 0.5 * (u_site @ self.quartic_diag)
        np.fill_diagonal(h, diag)
        for b in range(len(self.bonds)):
            h -= j_bond[b] * self.hop_mats[b]
            h -= np.conj(j_bond[b]) * self.hop_mats[b].T
        return h

    def densities_single_mode(self, C):
        """(rho_kk, rho_bond, rho_kkkk) for D = 1 without building matrices."""
        probs = np.abs(C) ** 2
        rho_kk = self.number_diag @ probs
        rho_bond = np.array([np.vdot(C, self.hop_mats[b] @ C)
                             for b in range(len(self.bonds))])
        rho_kkkk = self.quartic_diag @ probs
        return rho_kk, rho_bond, rho_kkkk

    def site_number(self, C):
        probs = np.abs(C) ** 2
        occ = self.basis.occupations.sum(axis=2).astype(float)
        return probs @ occ


def reduced_space(num_sites, num_modes, total_particles, periodic=True):
    key = (num_sites, num_modes, total_particles, periodic)
    if key not in _space_cache:
        _space_cache[key] = _ReducedSpace(*key)
    return _space_cache[key]


@dataclass
class TDVState:
    """Per-site mode frames d[k, band, mode] plus reduced Fock amplitudes C."""

    d: np.ndarray
    C: np.ndarray
    params: object        # BHParams providing J, E, U (per unit g) and g
    periodic: bool = True
    particles: int | None = None   # needed when not inferable from len(C)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=complex)
        if self.d.ndim == 2:
            self.d = self.d[:, :, None]
        self.C = np.asarray(self.C, dtype=complex)
        self._n_cache = self.particles

    @property
    def num_sites(self):
        return self.d.shape[0]

    @property
    def num_bands(self):
        return self.d.shape[1]

    @property
    def num_variational_modes(self):
        return self.d.shape[2]

    @property
    def space(self):
        return reduced_space(self.num_sites, self.num_variational_modes,
                             self.total_particles, self.periodic)

    @property
    def total_particles(self):
        # inferred from the reduced-basis dimension the C vector lives over
        if self._n_cache is None:
            for n in range(1, 2000):
                if fock_dimension(self.num_sites, self.num_variational_modes,
                                  n) == self.C.shape[0]:
                    self._n_cache = n
                    break
            else:
                raise LatticeError("cannot infer particle number from C length")
        return self._n_cache

    def frame_defect(self):
        overlaps = np.einsum("kam,kan->kmn", self.d.conj(), self.d)
        eye = np.eye(self.num_variational_modes)
        return float(np.abs(overlaps - eye).max())

    def validate(self, tol=1e-8):
        if self.frame_defect() > tol:
            raise NumericsError(f"mode frames not orthonormal (defect {self.frame_defect():.2e})")
        cerr = abs(np.linalg.norm(self.C) - 1.0)
        if cerr > tol:
            raise NumericsError(f"Fock amplitudes not normalized (off by {cerr:.2e})")

    def copy(self):
        return TDVState(self.d.copy(), self.C.copy(), self.params, self.periodic,
                        self.total_particles)


def tdv_fock_state(params, num_sites, site_counts, site_bands, num_bands,
                   num_modes=1, periodic=True):
    """Product Fock start: site k holds site_counts[k] particles in band site_bands[k]."""
    if len(site_counts) != num_sites or len(site_bands) != num_sites:
        raise LatticeError("need one count and one band per site")
    n_total = int(sum(site_counts))
    d = np.zeros((num_sites, num_bands, num_modes), dtype=complex)
    for k in range(num_sites):
        if site_bands[k] >= num_bands:
            raise LatticeError(f"band {site_bands[k]} outside the {num_bands}-band frame")
        d[k, site_bands[k], 0] = 1.0
        for extra in range(1, num_modes):
            band = 0 if site_bands[k] != 0 else extra
            d[k, band, extra] = 1.0
    space = reduced_space(num_sites, num_modes, n_total, periodic)
    occ = np.zeros((num_sites, num_modes), dtype=int)
    occ[:, 0] = site_counts
    C = np.zeros(space.basis.dimension, dtype=complex)
    C[space.basis.index(occ.reshape(-1))] = 1.0
    return TDVState(d, C, params, periodic, n_total)


def tdv_parameters(state, params=None, g=None):
    """Instantaneous reduced-model coefficients from the mode frames.

    For D = 1 returns (J_bond complex per bond, E_site real per site, U_site
    real per site, g included); for D >= 2 the analogous per-bond/per-site
    coefficient blocks with mode indices, shapes (B,D,D), (L,D,D),
    (L,D,D,D,D).
    """
    params = params if params is not None else state.params
    gval = params.g if g is None else float(g)
    j_bond, e_site, u_site = _parameter_blocks(state.d, params, gval,
                                               bond_list(state.num_sites, state.periodic))
    if state.num_variational_modes == 1:
        return (j_bond[:, 0, 0],
                e_site[:, 0, 0].real.copy(),
                u_site[:, 0, 0, 0, 0].real.copy())
    return j_bond, e_site, u_site


def _parameter_blocks(d, params, gval, bonds):
    J, E, U = params.J, params.E, params.U
    nb = params.num_bands
    if d.shape[1] != nb:
        raise LatticeError(f"frame has {d.shape[1]} bands but parameters have {nb}")
    e_site = np.einsum("kam,a,kan->kmn", d.conj(), E, d)
    if bonds:
        ks = [k for (k, _) in bonds]
        ls = [l for (_, l) in bonds]
        j_bond = np.einsum("bam,a,ban->bmn", d[ks].conj(), J, d[ls])
    else:
        j_bond = np.zeros((0, d.shape[2], d.shape[2]), dtype=complex)
    u_site = gval * np.einsum("abcd,kam,kbn,kco,kdp->kmnop",
                              U, d.conj(), d.conj(), d, d, optimize=True)
    return j_bond, e_site, u_site


def build_reduced_hamiltonian(state, params=None, g=None):
    """Dense reduced Hamiltonian at the state's instantaneous coefficients."""
    params = params if params is not None else state.params
    gval = params.g if g is None else float(g)
    j_bond, e_site, u_site = _parameter_blocks(state.d, params, gval,
                                               bond_list(state.num_sites, state.periodic))
    return state.space.hamiltonian(j_bond, e_site, u_site)


@dataclass
class TDVDensities:
    rho1: np.ndarray        # (L, L) one-body site matrix <b_k^dag b_l>
    rho2_diag: np.ndarray   # (L,) on-site <b^dag b^dag b b>


def tdv_densities(C, space):
    """One-body site density matrix and on-site pair correlator (D = 1)."""
    if space.num_modes != 1:
        raise LatticeError("tdv_densities is defined for the single-mode reduced space")
    L = space.num_sites
    rho1 = np.zeros((L, L), dtype=complex)
    for k in range(L):
        rho1[k, k] = np.einsum("i,ij,j->", C.conj(), space.site_pair[k, 0, 0], C)
    for b, (k, l) in enumerate(space.bonds):
        val = np.einsum("i,ij,j->", C.conj(), space.bond_pair[b, 0, 0], C)
        rho1[k, l] = val
        rho1[l, k] = np.conj(val)
    rho2 = np.array([np.einsum("i,ij,j->", C.conj(), space.site_quartic[k, 0, 0, 0, 0], C).real
                     for k in range(L)])
    return TDVDensities(rho1=rho1, rho2_diag=rho2)


RHO_SINGULAR_THRESHOLD = 1e-12


def _cubic_contraction(u_flat, dd):
    """cubic[k, a] = sum_bcd U[a,b,c,d] conj(dd[k,b]) dd[k,c] dd[k,d]."""
    L, nb = dd.shape
    q = (dd.conj()[:, :, None, None] * dd[:, None, :, None] * dd[:, None, None, :])
    return q.reshape(L, -1) @ u_flat.T


def _rhs_arrays(dd, C, space, params, gval, e_ref=0.0):
    """Time derivatives of (d[:, :, 0], C) for the single-mode ansatz.

    `e_ref` shifts the amplitude equation by a constant (a global phase on C,
    invisible to every density and to overlap magnitudes); the mode equation
    is invariant under such shifts through its projector.
    """
    J, E = params.J, params.E
    u_flat = params.U.reshape(params.num_bands, -1)
    rho_kk, rho_bond, rho_kkkk = space.densities_single_mode(C)
    if rho_kk.min() < RHO_SINGULAR_THRESHOLD:
        k_bad = int(np.argmin(rho_kk))
        raise NumericsError(
            f"site occupation rho_kk = {rho_kk[k_bad]:.2e} at site {k_bad} "
            "is singular for the mode equation"
        )

    cubic = gval * _cubic_contraction(u_flat, dd)
    y = E[None, :] * dd + (rho_kkkk / rho_kk)[:, None] * cubic
    for b, (k, l) in enumerate(space.bonds):
        # rho_bond[b] = <bdag_k b_l>; the neighbor terms carry rho_kl/rho_kk
        y[k] += (rho_bond[b] / rho_kk[k]) * (-J) * dd[l]
        y[l] += (np.conj(rho_bond[b]) / rho_kk[l]) * (-J) * dd[k]
    # projector: remove the component along the current mode
    y -= dd * (dd.conj() * y).sum(axis=1)[:, None]
    d_dot = -1j * y

    e_site = (np.abs(dd) ** 2) @ E
    u_site = np.real((dd.conj() * cubic).sum(axis=1))
    if space.bonds:
        ks = [k for (k, _) in space.bonds]
        ls = [l for (_, l) in space.bonds]
        j_bond = ((dd[ks].conj() * J[None, :]) * dd[ls]).sum(axis=1)
    else:
        j_bond = np.zeros(0, dtype=complex)
    h = space.hamiltonian_single_mode(j_bond, e_site, u_site)
    c_dot = -1j * (h @ C - e_ref * C)
    return d_dot, c_dot, h


def tdv_rhs(state, params=None, g=None):
    """(d_dot, C_dot) of the coupled mode/amplitude equations (D = 1 only)."""
    if state.num_variational_modes != 1:
        raise LatticeError("time evolution is only defined for the single-mode ansatz")
    params = params if params is not None else state.params
    gval = params.g if g is None else float(g)
    d_dot, c_dot, _ = _rhs_arrays(state.d[:, :, 0], state.C, state.space, params, gval)
    return d_dot, c_dot


def _pair_overlap_fidelity(dd0, C0, occ, dd, C):
    """|<Psi(0)|Psi(t)>| for single-mode product states over the same counts."""
    s = np.einsum("ka,ka->k", dd0.conj(), dd)
    factors = np.prod(s[None, :] ** occ, axis=1)
    return abs(np.sum(C0.conj() * C * factors))


def evolve_tdv(state0, g_of_t, t_final, dt=1e-3, *, params=None,
               observable_stride=1, snapshot_stride=100, store_states=False,
               drift_tol=1e-6):
    """RK4 on the coupled (d, C) system for the single-mode ansatz.

    Tracks site/band populations, energy, Fock-amplitude norm, frame
    orthonormality drift, and the overlap with the initial state; aborts if
    norm or orthonormality drifts beyond `drift_tol`.
    """
    if state0.num_variational_modes != 1:
        raise LatticeError("time evolution is only defined for the single-mode ansatz")
    if dt <= 0:
        raise LatticeError("dt must be positive")
    params = params if params is not None else state0.params
    if callable(g_of_t):
        g_fun = g_of_t
    else:
        g_val = float(g_of_t)
        g_fun = lambda t: g_val
    state0.validate()
    space = state0.space
    occ = space.basis.states.astype(float)

    dd = state0.d[:, :, 0].copy()
    C = state0.C.copy()
    dd0, C0 = dd.copy(), C.copy()
    L, nb = dd.shape

    # center the amplitude equation on the initial energy (global phase only)
    _, _, h_init = _rhs_arrays(dd, C, space, params, g_fun(0.0))
    e_ref = float(np.real(np.vdot(C, h_init @ C)))

    def rhs(t, dd_c):
        ddx, Cx = dd_c
        d_dot, c_dot, h = _rhs_arrays(ddx, Cx, space, params, g_fun(t), e_ref)
        return (d_dot, c_dot), h

    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        n_steps = int(np.ceil(t_final / dt))

    times, norms, defects, energies, fids = [], [], [], [], []
    site_series, band_series = [], []
    snapshots = []

    def record(step, t, h):
        cnorm = np.linalg.norm(C)
        defect = np.abs(np.einsum("ka,ka->k", dd.conj(), dd) - 1.0).max()
        if abs(cnorm - 1.0) > drift_tol or defect > drift_tol:
            raise NumericsError(
                f"drift exceeded at t = {t:.6g}: |C| off by {abs(cnorm - 1.0):.2e}, "
                f"frame defect {defect:.2e}"
            )
        times.append(t)
        norms.append(cnorm)
        defects.append(defect)
        energies.append(float(np.real(np.vdot(C, h @ C))))
        fids.append(_pair_overlap_fidelity(dd0, C0, occ, dd, C))
        pops = space.site_number(C)
        site_series.append(pops)
        band_series.append((pops[:, None] * np.abs(dd) ** 2).sum(axis=0))
        if store_states and step % snapshot_stride == 0:
            snapshots.append((t, TDVState(dd.copy(), C * np.exp(-1j * e_ref * t),
                                          params, state0.periodic,
                                          state0.total_particles)))

    (k1, h0) = rhs(0.0, (dd, C))
    record(0, 0.0, h0)
    for step in range(n_steps):
        t = step * dt
        k2, _ = rhs(t + dt / 2, (dd + (dt / 2) * k1[0], C + (dt / 2) * k1[1]))
        k3, _ = rhs(t + dt / 2, (dd + (dt / 2) * k2[0], C + (dt / 2) * k2[1]))
        k4, _ = rhs(t + dt, (dd + dt * k3[0], C + dt * k3[1]))
        dd = dd + (dt / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        C = C + (dt / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        t_next = (step + 1) * dt
        k1, h_next = rhs(t_next, (dd, C))
        if (step + 1) % observable_stride == 0 or step + 1 == n_steps:
            record(step + 1, t_next, h_next)

    final = TDVState(dd, C * np.exp(-1j * e_ref * n_steps * dt), params,
                     state0.periodic, state0.total_particles)
    return Trajectory(
        times=np.array(times),
        observables={
            "norm": np.array(norms),
            "frame_defect": np.array(defects),
            "energy": np.array(energies),
            "fidelity_initial": np.array(fids),
            "site_populations": np.array(site_series),
            "band_populations": np.array(band_series),
        },
        snapshots=snapshots,
        meta={
            "dt": dt,
            "t_final": n_steps * dt,
            "steps": n_steps,
            "final_state": final,
            "integrator": "rk4",
        },
    )


# ---------------------------------------------------------------------------
# variational ground states
# ---------------------------------------------------------------------------

def _frame_energy(d, params, gval, bonds, rho1_site, rho1_bond, rho2_site):
    if d.shape[2] == 1:
        dd = d[:, :, 0]
        rho_kk = rho1_site[:, 0, 0].real
        rho2 = rho2_site[:, 0, 0, 0, 0].real
        cubic = gval * _cubic_contraction(params.U.reshape(params.num_bands, -1), dd)
        energy = rho_kk @ ((np.abs(dd) ** 2) @ params.E)
        energy += 0.5 * (rho2 @ np.real((dd.conj() * cubic).sum(axis=1)))
        for b, (k, l) in enumerate(bonds):
            j_b = ((dd[k].conj() * params.J) * dd[l]).sum()
            energy += 2.0 * np.real(-j_b * rho1_bond[b, 0, 0])
        return float(energy)
    energy = 0.0
    J, E, U = params.J, params.E, params.U
    for k in range(d.shape[0]):
        e_k = (d[k].conj().T * E[None, :]) @ d[k]
        energy += float(np.sum(e_k * rho1_site[k]).real)
        u_k = _site_u_block(U, d[k], gval)
        energy += 0.5 * float(np.sum(u_k * rho2_site[k]).real)
    for b, (k, l) in enumerate(bonds):
        j_b = (d[k].conj().T * J[None, :]) @ d[l]
        energy += 2.0 * float(np.real(-np.sum(j_b * rho1_bond[b])))
    return float(energy)


def _site_u_block(U, d_site, gval):
    """g * U contracted with two conjugated and two plain frame columns."""
    t = np.tensordot(U, d_site.conj(), axes=([0], [0]))     # (b, c, d, m)
    t = np.tensordot(t, d_site.conj(), axes=([0], [0]))     # (c, d, m, n)
    t = np.tensordot(t, d_site, axes=([0], [0]))            # (d, m, n, o)
    t = np.tensordot(t, d_site, axes=([0], [0]))            # (m, n, o, p)
    return gval * t


def _frame_gradient(d, params, gval, bonds, rho1_site, rho1_bond, rho2_site):
    """Derivative of the energy with respect to conj(d[k, a, mode])."""
    J, E, U = params.J, params.E, params.U
    if d.shape[2] == 1:
        dd = d[:, :, 0]
        rho_kk = rho1_site[:, 0, 0].real
        rho2 = rho2_site[:, 0, 0, 0, 0].real
        cubic = gval * _cubic_contraction(U.reshape(params.num_bands, -1), dd)
        grad = rho_kk[:, None] * (E[None, :] * dd) + rho2[:, None] * cubic
        for b, (k, l) in enumerate(bonds):
            grad[k] += -J * dd[l] * rho1_bond[b, 0, 0]
            grad[l] += -J * dd[k] * np.conj(rho1_bond[b, 0, 0])
        return grad[:, :, None]
    L, nb, D = d.shape
    grad = np.zeros_like(d)
    u_mat = U.reshape(nb, nb**3)
    for k in range(L):
        grad[k] = (d[k] @ rho1_site[k].T) * E[:, None]
        # w[(b,c,dd),(l,m,n)] = conj(d[b,l]) d[c,m] d[dd,n]
        w = (d[k].conj()[:, None, None, :, None, None]
             * d[k][None, :, None, None, :, None]
             * d[k][None, None, :, None, None, :]).reshape(nb**3, D**3)
        a_block = u_mat @ w                                    # (a, (l,m,n))
        grad[k] += gval * (a_block @ rho2_site[k].reshape(D, D**3).T)
    for b, (k, l) in enumerate(bonds):
        grad[k] += -J[:, None] * (d[l] @ rho1_bond[b].T)
        grad[l] += -J[:, None] * (d[k] @ rho1_bond[b].conj())
    return grad


def _tangent_project(d, grad):
    sym = np.einsum("kam,kan->kmn", d.conj(), grad)
    sym = 0.5 * (sym + np.conj(np.swapaxes(sym, 1, 2)))
    return grad - np.einsum("kan,kmn->kam", d, sym)


def _retract(d):
    """Closest orthonormal frame (per-site polar decomposition)."""
    out = np.empty_like(d)
    for k in range(d.shape[0]):
        u, _, vh = np.linalg.svd(d[k], full_matrices=False)
        out[k] = u @ vh
    return out


def _minimize_frames(d, params, gval, bonds, rdms, max_iters=300, gtol=1e-9):
    """Projected gradient descent with backtracking on the frame manifold."""
    rho1_site, rho1_bond, rho2_site = rdms
    energy = _frame_energy(d, params, gval, bonds, *rdms)
    eta = 0.05 / max(1.0, np.abs(params.E).max())
    for _ in range(max_iters):
        grad = _frame_gradient(d, params, gval, bonds, *rdms)
        tangent = _tangent_project(d, grad)
        gnorm2 = float(np.vdot(tangent, tangent).real)
        if math.sqrt(gnorm2) < gtol:
            break
        accepted = False
        while eta > 1e-15:
            trial = _retract(d - eta * tangent)
            e_trial = _frame_energy(trial, params, gval, bonds, *rdms)
            if e_trial <= energy - 1e-4 * eta * gnorm2:
                d, energy = trial, e_trial
                eta = min(eta * 1.3, 1.0)
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
    return d, energy


def _reduced_hamiltonian_from_frames(space, d, params, gval):
    if space.num_modes == 1:
        dd = d[:, :, 0]
        u_flat = params.U.reshape(params.num_bands, -1)
        cubic = gval * _cubic_contraction(u_flat, dd)
        e_site = (np.abs(dd) ** 2) @ params.E
        u_site = np.real((dd.conj() * cubic).sum(axis=1))
        if space.bonds:
            ks = [k for (k, _) in space.bonds]
            ls = [l for (_, l) in space.bonds]
            j_bond = ((dd[ks].conj() * params.J[None, :]) * dd[ls]).sum(axis=1)
        else:
            j_bond = np.zeros(0, dtype=complex)
        return space.hamiltonian_single_mode(j_bond, e_site, u_site)
    jb, es, us = _parameter_blocks(d, params, gval, space.bonds)
    return space.hamiltonian(jb, es, us)


def _reduced_rdms(space, C):
    if space.num_modes == 1:
        rho_kk, rho_bond, rho2 = space.densities_single_mode(C)
        return (rho_kk.astype(complex)[:, None, None],
                rho_bond[:, None, None],
                rho2.astype(complex)[:, None, None, None, None])
    return space.rdm1_site(C), space.rdm1_bond(C), space.rdm2_site(C)


def _start_frame(num_sites, num_bands, num_modes, start, seed, warm=None):
    if start == 0:
        d = np.zeros((num_sites, num_bands, num_modes), dtype=complex)
        for m in range(num_modes):
            d[:, m, m] = 1.0
        return d
    if warm is not None and start == 1:
        return warm
    rng = np.random.default_rng([seed, start])
    raw = (rng.standard_normal((num_sites, num_bands, num_modes))
           + 1j * rng.standard_normal((num_sites, num_bands, num_modes)))
    return _retract(raw)


def tdv_ground_state(params, num_sites, total_particles, num_modes=1, num_bands=None,
                     *, periodic=True, num_starts=16, seed=0, max_sweeps=500,
                     sweep_tol=1e-10, g=None):
    """Minimize the variational energy over mode frames and Fock amplitudes.

    Alternates exact diagonalization of the reduced Hamiltonian (for C at
    fixed frames) with projected gradient descent on the frames (at fixed C),
    from `num_starts` deterministic starting frames; returns the best
    (energy, state) with a per-start convergence log in the info dict.
    """
    if num_modes not in (1, 2):
        raise LatticeError("ground-state search supports 1 or 2 variational modes")
    num_bands = params.num_bands if num_bands is None else num_bands
    if num_bands < num_modes:
        raise LatticeError("need at least as many bands as variational modes")
    p = params.truncated(num_bands) if num_bands != params.num_bands else params
    gval = p.g if g is None else float(g)
    space = reduced_space(num_sites, num_modes, total_particles, periodic)
    bonds = space.bonds

    warm = None
    if num_modes == 2:
        # warm start: best single-mode solution padded with an orthogonal column
        _, d1_state, _ = tdv_ground_state(p, num_sites, total_particles, 1, num_bands,
                                          periodic=periodic, num_starts=max(4, num_starts // 4),
                                          seed=seed, max_sweeps=max_sweeps,
                                          sweep_tol=sweep_tol, g=gval)
        warm = np.zeros((num_sites, num_bands, 2), dtype=complex)
        warm[:, :, 0] = d1_state.d[:, :, 0]
        warm[:, 1, 1] = 1.0
        warm = _retract(warm)

    best = None
    logs = []
    for start in range(num_starts):
        d = _start_frame(num_sites, num_bands, num_modes, start, seed, warm)
        energies = []
        converged = False
        e_prev = np.inf
        for sweep in range(max_sweeps):
            h = _reduced_hamiltonian_from_frames(space, d, p, gval)
            vals, vecs = np.linalg.eigh(h)
            energy, C = float(vals[0]), vecs[:, 0]
            rdms = _reduced_rdms(space, C)
            d, _ = _minimize_frames(d, p, gval, bonds, rdms)
            energies.append(energy)
            decrease = e_prev - energy
            if decrease < sweep_tol:
                converged = True
                break
            if (best is not None and decrease < 1e-9
                    and energy < best[0] + 1e-9):
                # already polishing the minimum another start reached
                converged = True
                break
            e_prev = energy
        vals, vecs = np.linalg.eigh(_reduced_hamiltonian_from_frames(space, d, p, gval))
        energy, C = float(vals[0]), vecs[:, 0]
        pivot = np.argmax(np.abs(C))
        C = C * np.exp(-1j * np.angle(C[pivot]))
        logs.append({"start": start, "energies": energies, "converged": converged})
        if best is None or energy < best[0] - 1e-14:
            best = (energy, TDVState(d, C.astype(complex), p.with_g(gval), periodic,
                                     total_particles), start)

    energy, state, best_start = best
    info = {
        "converged": any(lg["converged"] for lg in logs),
        "best_start": best_start,
        "log": logs,
        "seed": seed,
        "num_starts": num_starts,
    }
    return energy, state, info


# ---------------------------------------------------------------------------
# embedding into the full multiband Fock space
# ---------------------------------------------------------------------------

def _local_patterns(num_bands, max_total):
    from .fock import _compositions
    pats = [np.zeros((1, num_bands), dtype=np.int64)]
    for n in range(1, max_total + 1):
        pats.append(_compositions(n, num_bands).astype(np.int64))
    lp = np.vstack(pats)
    codes = lp @ ((max_total + 1) ** np.arange(num_bands, dtype=np.int64))
    order = np.argsort(codes)
    return lp, codes[order], order


def _condensate_amplitudes(lp, d_col, factorials):
    """Amplitudes of (sum_a d_a bdag_a)^n / sqrt(n!) |0> over local patterns."""
    totals = lp.sum(axis=1)
    coeff = np.sqrt(factorials[totals] / np.prod(factorials[lp], axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        powers = np.where(lp > 0, d_col[None, :] ** lp, 1.0)
    return coeff * np.prod(powers, axis=1)


def embed_to_mbh(state, basis):
    """Expand a variational state over a full multiband Fock basis.

    The basis must keep at least as many bands as the state's frame; the
    result is normalized (the frames are orthonormal, so the expansion is an
    isometry).
    """
    if basis.num_bands < state.num_bands:
        raise LatticeError(
            f"target basis has {basis.num_bands} bands, frame needs {state.num_bands}"
        )
    if basis.num_sites != state.num_sites:
        raise LatticeError("site counts differ between state and target basis")
    N = state.total_particles
    if basis.total_particles != N:
        raise LatticeError("particle numbers differ between state and target basis")
    L, nb = basis.num_sites, basis.num_bands
    d = np.zeros((L, nb, state.num_variational_modes), dtype=complex)
    d[:, :state.num_bands, :] = state.d

    lp, sorted_codes, order = _local_patterns(nb, N)
    factorials = np.array([math.factorial(n) for n in range(N + 1)], dtype=float)
    occ = basis.occupations.astype(np.int64)
    codes = occ.reshape(-1, nb) @ ((N + 1) ** np.arange(nb, dtype=np.int64))
    pattern_idx = order[np.searchsorted(sorted_codes, codes)].reshape(basis.dimension, L)
    site_totals = occ.sum(axis=2)

    red_basis = state.space.basis
    if state.num_variational_modes == 1:
        reduced_idx = red_basis.rank_many(site_totals)
        amp = state.C[reduced_idx].copy()
        for k in range(L):
            table = _condensate_amplitudes(lp, d[k, :, 0], factorials)
            amp *= table[pattern_idx[:, k]]
    else:
        amp = np.zeros(basis.dimension, dtype=complex)
        red_occ = red_basis.occupations
        table_cache = {}
        for r in range(red_basis.dimension):
            if abs(state.C[r]) < 1e-300:
                continue
            term = np.full(basis.dimension, state.C[r], dtype=complex)
            ok = np.ones(basis.dimension, dtype=bool)
            for k in range(L):
                split = tuple(int(v) for v in red_occ[r, k])
                key = (k, split)
                if key not in table_cache:
                    table_cache[key] = _split_condensate_amplitudes(
                        lp, d[k], split, factorials)
                table = table_cache[key]
                term *= table[pattern_idx[:, k]]
                ok &= site_totals[:, k] == sum(split)
            amp[ok] += term[ok]
    # the expansion is an isometry: the output norm must match ||C|| up to
    # the input frame's own orthonormality defect
    norm = np.linalg.norm(amp)
    expected = np.linalg.norm(state.C)
    tol = 1e-10 + 10.0 * N * state.frame_defect()
    if abs(norm - expected) > tol:
        raise NumericsError(
            f"embedding norm {norm:.12f} inconsistent with input norm {expected:.12f}"
        )
    return MBHState(amp, basis)


def _split_condensate_amplitudes(lp, d_site, split, factorials):
    """Local amplitudes of prod_kappa (mode_kappa^dag)^{n_kappa}/sqrt(n_kappa!) |0>."""
    nb = lp.shape[1]
    n_pat = lp.shape[0]
    totals = lp.sum(axis=1)
    code_of = {tuple(row): i for i, row in enumerate(lp)}
    vec = np.zeros(n_pat, dtype=complex)
    vec[code_of[tuple([0] * nb)]] = 1.0
    for kappa, count in enumerate(split):
        for _ in range(count):
            new = np.zeros_like(vec)
            for i in np.nonzero(vec)[0]:
                pat = lp[i]
                for a in range(nb):
                    target = pat.copy()
                    target[a] += 1
                    j = code_of.get(tuple(target))
                    if j is not None:
                        new[j] += vec[i] * d_site[a, kappa] * math.sqrt(pat[a] + 1)
            vec = new
        vec = vec / np.sqrt(factorials[count]) if count else vec
    return vec


def tdv_energy(state, params=None, g=None):
    """<H> of the reduced model at the state's coefficients."""
    h = build_reduced_hamiltonian(state, params, g)
    return float(np.real(np.vdot(state.C, h @ state.C)))


def random_tdv_state(params, num_sites, total_particles, num_bands, num_modes=1,
                     periodic=True, seed=0):
    """Orthonormal random frames with random normalized amplitudes (testing aid)."""
    rng = np.random.default_rng(seed)
    d = _retract(rng.standard_normal((num_sites, num_bands, num_modes))
                 + 1j * rng.standard_normal((num_sites, num_bands, num_modes)))
    space = reduced_space(num_sites, num_modes, total_particles, periodic)
    C = rng.standard_normal(space.basis.dimension) + 1j * rng.standard_normal(space.basis.dimension)
    C /= np.linalg.norm(C)
    p = params.truncated(num_bands) if num_bands != params.num_bands else params
    return TDVState(d, C, p, periodic, total_particles)


def psi13_overlap_bound(scan_points=2001):
    """Largest overlap of the two-particle band-0/band-2 pair state with any
    single-mode product state of the same particle number.

    Scans mode mixtures (alpha, beta) on the unit circle and refines the best
    point by golden-section search; returns the maximizer and the value.
    """
    from .bhparams import BHParams
    basis = enumerate_basis(1, 3, 2)
    target = np.zeros(basis.dimension, dtype=complex)
    target[basis.index([1, 0, 1])] = 1.0
    params = BHParams(J=np.zeros(3), E=np.arange(3.0), U=np.zeros((3, 3, 3, 3)),
                      g=0.0, num_bands=3)

    def overlap(theta):
        d = np.array([[np.cos(theta), 0.0, np.sin(theta)]], dtype=complex)
        st = TDVState(d, np.array([1.0 + 0.0j]), params, periodic=True, particles=2)
        emb = embed_to_mbh(st, basis)
        return abs(np.vdot(target, emb.amplitudes))

    thetas = np.linspace(0.0, np.pi / 2, scan_points)
    vals = np.array([overlap(t) for t in thetas])
    i = int(np.argmax(vals))
    lo = thetas[max(i - 1, 0)]
    hi = thetas[min(i + 1, scan_points - 1)]
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, dpt = b - phi * (b - a), a + phi * (b - a)
    fc, fd = overlap(c), overlap(dpt)
    for _ in range(200):
        if fc > fd:
            b, dpt, fd = dpt, c, fc
            c = b - phi * (b - a)
            fc = overlap(c)
        else:
            a, c, fc = c, dpt, fd
            dpt = a + phi * (b - a)
            fd = overlap(dpt)
        if b - a < 1e-12:
            break
    theta = (a + b) / 2
    return {
        "value": overlap(theta),
        "alpha": float(np.cos(theta)),
        "beta": float(np.sin(theta)),
    }
