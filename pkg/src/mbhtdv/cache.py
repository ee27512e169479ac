"""Versioned JSON caches for band-structure, Wannier, and Hubbard data.

Python's json round-trips binary64 floats exactly (shortest repr), so a cache
hit reloads bit-identical arrays.  Files are keyed by the physical inputs
(depth, sites, cutoff, bands, grid) and refuse to load on key mismatch.
"""

import json
import os

import numpy as np

from .errors import ConfigError
from .lattice import LatticeSpec, BlochSpectrum, WannierBasis
from .bhparams import BHParams

FORMAT_VERSION = 1


def _complex_out(arr):
    return {"real": np.real(arr).tolist(), "imag": np.imag(arr).tolist()}


def _complex_in(obj):
    return np.array(obj["real"], dtype=float) + 1j * np.array(obj["imag"], dtype=float)


def wannier_cache_name(s, L, n_max, num_bands):
    return f"wannier_s{s:g}_L{L}_n{n_max}_b{num_bands}.json"


def params_cache_name(s, L, n_max, num_bands, grid_per_site):
    return f"params_s{s:g}_L{L}_n{n_max}_b{num_bands}_q{grid_per_site}.json"


def save_wannier(path, spectrum, wannier):
    spec = spectrum.spec
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "wannier",
        "key": {"s": spec.depth_s, "L": spec.num_sites_L,
                "n_max": spec.plane_wave_cutoff, "num_bands": spectrum.num_bands},
        "quasimomenta": spectrum.quasimomenta.tolist(),
        "q_scaled": spectrum.q_scaled.tolist(),
        "energies": spectrum.energies.tolist(),
        "eigenvectors": spectrum.eigenvectors.tolist(),
        "coefficients": _complex_out(wannier.coefficients),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return path


def load_wannier(path, expected_key=None):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION or payload.get("kind") != "wannier":
        raise ConfigError(f"{path}: not a wannier cache of format {FORMAT_VERSION}")
    key = payload["key"]
    if expected_key is not None and key != expected_key:
        raise ConfigError(f"{path}: cache key {key} does not match request {expected_key}")
    spec = LatticeSpec(key["s"], key["L"], key["n_max"])
    energies = np.array(payload["energies"], dtype=float)
    spectrum = BlochSpectrum(
        spec=spec,
        num_bands=key["num_bands"],
        quasimomenta=np.array(payload["quasimomenta"], dtype=float),
        q_scaled=np.array(payload["q_scaled"], dtype=float),
        energies=energies,
        eigenvectors=np.array(payload["eigenvectors"], dtype=float),
        recip_indices=np.arange(-spec.plane_wave_cutoff, spec.plane_wave_cutoff + 1),
    )
    wannier = WannierBasis(
        spec=spec,
        bands_count=key["num_bands"],
        quasimomenta=spectrum.quasimomenta,
        q_scaled=spectrum.q_scaled,
        recip_indices=spectrum.recip_indices,
        coefficients=_complex_in(payload["coefficients"]),
        site_positions=np.arange(spec.num_sites_L, dtype=float),
    )
    return spectrum, wannier


def save_params(path, params):
    meta = params.meta or {}
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "bh_params",
        "key": {"s": meta.get("s"), "L": meta.get("L"), "n_max": meta.get("n_max"),
                "num_bands": params.num_bands,
                "grid_per_site": meta.get("grid_per_site")},
        "J": params.J.tolist(),
        "E": params.E.tolist(),
        "U_unit": params.U.tolist(),
        "g": params.g,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return path


def load_params(path, expected_key=None):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION or payload.get("kind") != "bh_params":
        raise ConfigError(f"{path}: not a parameter cache of format {FORMAT_VERSION}")
    key = payload["key"]
    if expected_key is not None and key != expected_key:
        raise ConfigError(f"{path}: cache key {key} does not match request {expected_key}")
    return BHParams(
        J=np.array(payload["J"], dtype=float),
        E=np.array(payload["E"], dtype=float),
        U=np.array(payload["U_unit"], dtype=float),
        g=float(payload["g"]),
        num_bands=int(key["num_bands"]),
        meta={"s": key["s"], "L": key["L"], "n_max": key["n_max"],
              "num_bands": key["num_bands"], "grid_per_site": key["grid_per_site"]},
    )


def load_or_compute_wannier(cache_dir, spec, num_bands):
    """Cache-aware band/Wannier construction; hits are bit-identical reloads."""
    from .lattice import solve_bloch, build_wannier

    key = {"s": spec.depth_s, "L": spec.num_sites_L,
           "n_max": spec.plane_wave_cutoff, "num_bands": num_bands}
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, wannier_cache_name(
            spec.depth_s, spec.num_sites_L, spec.plane_wave_cutoff, num_bands))
        if os.path.exists(path):
            return load_wannier(path, expected_key=key) + (True,)
    spectrum = solve_bloch(spec, num_bands)
    wannier = build_wannier(spectrum)
    if path is not None:
        save_wannier(path, spectrum, wannier)
    return spectrum, wannier, False


def load_or_compute_params(cache_dir, spec, num_bands, g=1.0, grid_per_site=2048):
    """Cache-aware Hubbard parameter computation."""
    from .bhparams import compute_bh_params

    key = {"s": spec.depth_s, "L": spec.num_sites_L, "n_max": spec.plane_wave_cutoff,
           "num_bands": num_bands, "grid_per_site": grid_per_site}
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, params_cache_name(
            spec.depth_s, spec.num_sites_L, spec.plane_wave_cutoff,
            num_bands, grid_per_site))
        if os.path.exists(path):
            return load_params(path, expected_key=key).with_g(g), True
    params = compute_bh_params(spec, num_bands, g=g, grid_per_site=grid_per_site)
    if path is not None:
        save_params(path, params)
    return params, False
