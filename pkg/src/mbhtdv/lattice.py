"""Band structure and Wannier functions of a finite 1D sinusoidal lattice.

Internal units: energies in recoil energies E_R, lengths in lattice constants
a (half the laser wavelength), time in hbar/E_R, hbar = 1.  The potential is
``s * sin^2(pi*x)`` with wells at integer x; an L-site ring has circumference
L and carries quasimomenta q_j = 2*pi*j/L (in 1/a).

In a plane-wave basis e^{i(q + 2*pi*n)x}/sqrt(L) the one-particle Hamiltonian
at quasimomentum q is tridiagonal: diagonal ``(q/pi + 2n)^2 + s/2`` and
off-diagonal ``-s/4`` (energies in E_R).  Wannier functions are built as the
L-point quasimomentum sum of phase-fixed Bloch states; for the symmetric
potential the phase at each (q, band) is fixed so that the Bloch function's
value (even-parity bands) or slope (odd-parity bands) at the well center is
real and positive, which makes every Wannier function real with definite
parity about its site.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import LatticeError

# Wannier phase fixing is ill-conditioned when bands touch; s = 0 is exactly
# degenerate at the zone boundaries, so a small minimum depth is enforced.
MIN_WANNIER_DEPTH = 0.1


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry and depth of the lattice; lattice constant is the length unit."""

    depth_s: float
    num_sites_L: int
    plane_wave_cutoff: int = 16
    lattice_constant: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.depth_s) or self.depth_s < 0:
            raise LatticeError(f"lattice depth must be finite and >= 0, got {self.depth_s}")
        if self.num_sites_L < 1:
            raise LatticeError(f"need at least one site, got {self.num_sites_L}")
        if self.plane_wave_cutoff < 4:
            raise LatticeError(f"plane_wave_cutoff must be >= 4, got {self.plane_wave_cutoff}")
        if self.lattice_constant != 1.0:
            raise LatticeError("internal units fix the lattice constant to 1")


@dataclass(frozen=True)
class BlochSpectrum:
    """Band energies and (unphased) Bloch eigenvectors on the L-point ring.

    energies[b, j] is the energy of band b (0 = lowest) at quasimomentum
    q_j; eigenvectors[b, j, :] holds the real plane-wave coefficients over
    reciprocal indices n = -n_max .. n_max.
    """

    spec: LatticeSpec
    num_bands: int
    quasimomenta: np.ndarray      # (L,) q_j = 2*pi*j/L in 1/a
    q_scaled: np.ndarray          # (L,) q_j/pi folded into (-1, 1]
    energies: np.ndarray          # (num_bands, L)
    eigenvectors: np.ndarray      # (num_bands, L, 2*n_max+1) real
    recip_indices: np.ndarray     # (2*n_max+1,) integers -n_max..n_max


def _bloch_diagonals(spec, q_scaled):
    n = np.arange(-spec.plane_wave_cutoff, spec.plane_wave_cutoff + 1)
    diag = (q_scaled + 2.0 * n) ** 2 + spec.depth_s / 2.0
    off = np.full(len(n) - 1, -spec.depth_s / 4.0)
    return diag, off


def _tridiag_apply(diag, off, v):
    out = diag * v
    out[:-1] += off * v[1:]
    out[1:] += off * v[:-1]
    return out


def solve_bloch(spec, num_bands):
    """Diagonalize the lattice at every ring quasimomentum.

    Returns the lowest `num_bands` eigenpairs per quasimomentum, sorted in
    energy.  Each eigenpair is checked against the residual ||Hv - Ev||.
    """
    n_pw = 2 * spec.plane_wave_cutoff + 1
    if num_bands < 1:
        raise LatticeError("num_bands must be positive")
    if num_bands > 2 * spec.plane_wave_cutoff - 1:
        raise LatticeError(
            f"cutoff {spec.plane_wave_cutoff} too small for {num_bands} bands"
        )

    L = spec.num_sites_L
    j = np.arange(L)
    quasimomenta = 2.0 * np.pi * j / L
    q_scaled = 2.0 * j / L
    q_scaled = np.where(q_scaled > 1.0, q_scaled - 2.0, q_scaled)

    energies = np.empty((num_bands, L))
    vectors = np.empty((num_bands, L, n_pw))
    for jj in range(L):
        diag, off = _bloch_diagonals(spec, q_scaled[jj])
        vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, num_bands - 1))
        energies[:, jj] = vals
        vectors[:, jj, :] = vecs.T
        for b in range(num_bands):
            resid = _tridiag_apply(diag, off, vecs[:, b]) - vals[b] * vecs[:, b]
            if np.linalg.norm(resid) >= 1e-10:
                raise LatticeError(
                    f"eigenpair residual {np.linalg.norm(resid):.2e} at q index {jj}, band {b}"
                )

    return BlochSpectrum(
        spec=spec,
        num_bands=num_bands,
        quasimomenta=quasimomenta,
        q_scaled=q_scaled,
        energies=energies,
        eigenvectors=vectors,
        recip_indices=np.arange(-spec.plane_wave_cutoff, spec.plane_wave_cutoff + 1),
    )


@dataclass(frozen=True)
class WannierBasis:
    """Real localized orthonormal modes, one per band and site.

    coefficients[b, j, n] are the phase-fixed Bloch coefficients; the Wannier
    function of band b at site i is
        w_i^b(x) = (1/L) sum_{j,n} coefficients[b, j, n]
                   * exp(i*(q_j + 2*pi*n)*x) * exp(-i*q_j*i).
    Band 0 is even about the site center, band 1 odd, and so on, with sign
    fixed positive at (or just right of) the center.
    """

    spec: LatticeSpec
    bands_count: int
    quasimomenta: np.ndarray
    q_scaled: np.ndarray
    recip_indices: np.ndarray
    coefficients: np.ndarray      # (bands, L, n_pw) complex, phase fixed
    site_positions: np.ndarray    # (L,) x_i = i


def build_wannier(spectrum):
    """Fix Bloch phases of a spectrum and package the Wannier coefficients."""
    spec = spectrum.spec
    if spec.depth_s < MIN_WANNIER_DEPTH:
        raise LatticeError(
            f"lattice depth {spec.depth_s} below {MIN_WANNIER_DEPTH}; "
            "bands are (nearly) degenerate and the Wannier phases are ill-defined"
        )
    _check_degeneracies(spectrum)

    nb, L, n_pw = spectrum.eigenvectors.shape
    coeff = np.empty((nb, L, n_pw), dtype=complex)
    n = spectrum.recip_indices
    for b in range(nb):
        for jj in range(L):
            c = spectrum.eigenvectors[b, jj, :]
            if b % 2 == 0:
                # even-parity band: Bloch value at the well center real positive
                metric = c.sum()
                phase = 1.0 if metric > 0 else -1.0
            else:
                # odd-parity band: slope at the well center real positive
                metric = ((spectrum.q_scaled[jj] + 2.0 * n) * c).sum()
                phase = -1.0j if metric > 0 else 1.0j
            if abs(metric) < 1e-9 * np.linalg.norm(c):
                raise LatticeError(
                    f"cannot fix Bloch phase for band {b} at q index {jj}: "
                    "center value/slope vanishes"
                )
            coeff[b, jj, :] = phase * c

    return WannierBasis(
        spec=spec,
        bands_count=nb,
        quasimomenta=spectrum.quasimomenta,
        q_scaled=spectrum.q_scaled,
        recip_indices=spectrum.recip_indices,
        coefficients=coeff,
        site_positions=np.arange(L, dtype=float),
    )


def _check_degeneracies(spectrum):
    e = spectrum.energies
    if spectrum.num_bands > 1:
        gaps = e[1:, :] - e[:-1, :]
        if gaps.min() < 1e-9:
            b, jj = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise LatticeError(
                f"bands {b} and {b + 1} degenerate at q index {jj} "
                f"(gap {gaps[b, jj]:.2e}); cannot fix Wannier phases"
            )


def _plane_wave_matrix(basis, x):
    """exp(i k x) for every plane wave of the ring, shape (L, n_pw, len(x))."""
    k = np.pi * (basis.q_scaled[:, None] + 2.0 * basis.recip_indices[None, :])
    return np.exp(1j * k[:, :, None] * np.asarray(x, dtype=float)[None, None, :])


def wannier_value(basis, band, site, x, imag_tol=1e-10):
    """Evaluate w_site^band on a position grid (returns a real array).

    Positions are taken modulo the ring automatically since the plane-wave
    sum is L-periodic.  Translation covariance is exact: the value at x is
    computed as the site-0 function at x - site.
    """
    if band >= basis.bands_count:
        raise LatticeError(f"band {band} not available (have {basis.bands_count})")
    x = np.atleast_1d(np.asarray(x, dtype=float)) - basis.site_positions[site]
    phases = _plane_wave_matrix(basis, x)
    values = np.einsum("jn,jng->g", basis.coefficients[band], phases) / basis.spec.num_sites_L
    max_imag = np.abs(values.imag).max() if values.size else 0.0
    if max_imag > imag_tol:
        raise LatticeError(f"Wannier function not real: max imaginary part {max_imag:.2e}")
    return values.real


def wannier_overlap(basis, band_a, site_a, band_b, site_b):
    """<w_a | w_b> from the plane-wave coefficients (no quadrature)."""
    L = basis.spec.num_sites_L
    phase = np.exp(1j * basis.quasimomenta * (basis.site_positions[site_a] - basis.site_positions[site_b]))
    per_q = np.einsum("jn,jn->j", basis.coefficients[band_a].conj(), basis.coefficients[band_b])
    return np.sum(phase * per_q) / L


def wannier_h_element(basis, spectrum, band_a, site_a, band_b, site_b):
    """<w_a | h | w_b> with h the one-particle lattice Hamiltonian.

    Bloch states diagonalize h, so the element is band-diagonal up to
    roundoff; this evaluates the full quasimomentum sum without assuming it.
    """
    L = basis.spec.num_sites_L
    out = 0.0 + 0.0j
    phase = np.exp(1j * basis.quasimomenta * (basis.site_positions[site_a] - basis.site_positions[site_b]))
    for jj in range(L):
        diag, off = _bloch_diagonals(basis.spec, basis.q_scaled[jj])
        hv = _tridiag_apply(diag, off, basis.coefficients[band_b, jj])
        out += phase[jj] * np.vdot(basis.coefficients[band_a, jj], hv)
    return out / L
