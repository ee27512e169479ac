"""Hubbard parameters of the lattice: hoppings, band energies, interaction tensor.

Conventions: the lattice Hamiltonian carries nearest-neighbor terms
``-J^b (bdag_i b_{i+1} + h.c.)`` per band, so J for the lowest band is
positive while excited bands may have either sign (stored signed).  The
on-site interaction tensor U[a,b,c,d] is stored per unit coupling g; the
physical interaction is g*U.  Band indices are 0-based (band 0 = lowest).
"""

import itertools
from dataclasses import dataclass, replace

import numpy as np
import scipy.constants

from .errors import LatticeError, NumericsError
from .lattice import wannier_value


@dataclass(frozen=True)
class BHParams:
    J: np.ndarray       # (N,) signed nearest-neighbor hopping per band, E_R
    E: np.ndarray       # (N,) on-site (band-averaged) energies, E_R
    U: np.ndarray       # (N,N,N,N) on-site overlap integrals per unit g, 1/a
    g: float            # coupling, E_R * a
    num_bands: int
    meta: dict | None = None

    def with_g(self, g):
        return replace(self, g=float(g))

    def truncated(self, num_bands):
        """Restrict to the lowest `num_bands` bands (Wannier modes are per-band)."""
        if num_bands > self.num_bands:
            raise LatticeError(f"cannot truncate {self.num_bands} bands to {num_bands}")
        n = num_bands
        return replace(
            self,
            J=self.J[:n].copy(),
            E=self.E[:n].copy(),
            U=self.U[:n, :n, :n, :n].copy(),
            num_bands=n,
        )


def tunneling(spectrum, band, r=1):
    """Hopping matrix element at site separation r from the band dispersion.

    Returns -(1/L) sum_q exp(i q r) E_band(q); r=1 is the nearest-neighbor
    hopping J (positive for band 0), r=0 returns minus the band average.
    """
    if r < 0:
        raise LatticeError("separation r must be >= 0")
    phases = np.exp(1j * spectrum.quasimomenta * r)
    val = -(phases * spectrum.energies[band]).sum() / spectrum.spec.num_sites_L
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise NumericsError(f"tunneling not real: imaginary part {val.imag:.2e}")
    return float(val.real)


def onsite_energy(spectrum, band):
    """Band-averaged on-site energy, (1/L) sum_q E_band(q)."""
    return float(spectrum.energies[band].mean())


def _simpson_weights(num_intervals, h):
    # composite Simpson over [0, L] with an even number of intervals
    w = np.ones(num_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _wannier_grid_values(wannier, num_bands, grid_per_site):
    L = wannier.spec.num_sites_L
    num_intervals = grid_per_site * L
    x = np.linspace(0.0, float(L), num_intervals + 1)
    values = np.empty((num_bands, num_intervals + 1))
    for b in range(num_bands):
        values[b] = wannier_value(wannier, b, 0, x)
    return x, values


def _quartic_integrals(wannier, num_bands, grid_per_site):
    L = wannier.spec.num_sites_L
    x, w = _wannier_grid_values(wannier, num_bands, grid_per_site)
    weights = _simpson_weights(grid_per_site * L, x[1] - x[0])
    return np.einsum("ag,bg,cg,dg,g->abcd", w, w, w, w, weights, optimize=True)


def interaction_tensor(wannier, num_bands, grid_per_site=2048):
    """On-site quartic Wannier integrals U[a,b,c,d] (per unit g), one site.

    Composite Simpson on a uniform ring grid.  Convergence is certified by
    recomputing at half resolution; entries whose band-index sum is odd are
    exactly zero by parity and are zeroed, and the tensor is symmetrized over
    its exact permutation group (real functions).
    """
    if num_bands > wannier.bands_count:
        raise LatticeError(f"only {wannier.bands_count} bands available")
    u = _quartic_integrals(wannier, num_bands, grid_per_site)
    u_half = _quartic_integrals(wannier, num_bands, max(grid_per_site // 2, 64))
    defect = np.abs(u - u_half).max()
    if defect > 1e-8:
        raise NumericsError(
            f"interaction quadrature not converged: halving changes entries by {defect:.2e}"
        )

    idx = np.arange(num_bands)
    parity_odd = (idx[:, None, None, None] + idx[None, :, None, None]
                  + idx[None, None, :, None] + idx[None, None, None, :]) % 2 == 1
    u[parity_odd] = 0.0
    sym = np.zeros_like(u)
    for perm in [(0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
                 (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0)]:
        sym += np.transpose(u, perm)
    return sym / 8.0


def effective_g(scattering_length, transverse_freq, *, mass, wavelength):
    """1D coupling from s-wave scattering under tight transverse confinement.

    g = 2*hbar*a_s*Omega in SI units, converted to the internal E_R*a unit
    system of a lattice with the given wavelength (a = wavelength/2) and atom
    mass.  All inputs in SI.
    """
    for name, val in [("scattering_length", scattering_length),
                      ("transverse_freq", transverse_freq),
                      ("mass", mass), ("wavelength", wavelength)]:
        if val is None or not np.isfinite(val) or val < 0:
            raise LatticeError(f"effective_g needs a finite non-negative {name}")
    if mass == 0 or wavelength == 0:
        raise LatticeError("effective_g needs nonzero mass and wavelength")
    hbar = scipy.constants.hbar
    a = wavelength / 2.0
    recoil = hbar**2 * np.pi**2 / (2.0 * mass * a**2)
    return 2.0 * hbar * scattering_length * transverse_freq / (recoil * a)


def scattering_length_from_g(g, *, transverse_freq, mass, wavelength):
    """Invert effective_g for the scattering length (SI)."""
    hbar = scipy.constants.hbar
    a = wavelength / 2.0
    recoil = hbar**2 * np.pi**2 / (2.0 * mass * a**2)
    if transverse_freq <= 0:
        raise LatticeError("transverse frequency must be positive to invert")
    return g * recoil * a / (2.0 * hbar * transverse_freq)


def compute_bh_params(spec, num_bands, spectrum=None, wannier=None, g=1.0,
                      grid_per_site=2048):
    """Assemble all Hubbard parameters for the lowest `num_bands` bands."""
    from .lattice import solve_bloch, build_wannier

    if spectrum is None:
        spectrum = solve_bloch(spec, num_bands)
    if wannier is None:
        wannier = build_wannier(spectrum)
    J = np.array([tunneling(spectrum, b, 1) for b in range(num_bands)])
    E = np.array([onsite_energy(spectrum, b) for b in range(num_bands)])
    U = interaction_tensor(wannier, num_bands, grid_per_site)
    meta = {
        "s": spec.depth_s,
        "L": spec.num_sites_L,
        "n_max": spec.plane_wave_cutoff,
        "num_bands": num_bands,
        "grid_per_site": grid_per_site,
    }
    return BHParams(J=J, E=E, U=U, g=float(g), num_bands=num_bands, meta=meta)
