"""Command-line front end: scenario runs, parameter/Wannier caching, result
files (CSV + JSON sidecars), and a reproducibility manifest per run.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 unwritable output.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, NumericsError, MbhtdvError
from .lattice import LatticeSpec
from .fock import enumerate_basis, build_mbh_parts, SparseHamiltonian
from .mbh import ground_state
from . import cache as cachemod
from .scenarios import (ScenarioConfig, default_config, gs_sweep, fock_evolution,
                        linear_quench, modulation_sweep, lattice_parameters,
                        coupling_to_internal)

OUTPUT_ENV_VAR = "MBHTDV_OUT"


def fmt(x):
    """Floating-point text with 17 significant digits (exact round trip)."""
    if isinstance(x, (float, np.floating)):
        return f"{x:.17g}"
    return str(x)


def write_csv(path, columns, rows, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# " + ",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return {"real": obj.real, "imag": obj.imag}
    raise TypeError(f"cannot serialize {type(obj)}")


# ---------------------------------------------------------------------------
# configuration files: flat "key = value" lines, '#' comments, typed values
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = {"bands_mbh", "variational_bands", "g_grid", "tau_grid"}


def _parse_scalar(field_name, field_type, raw, path, lineno):
    raw = raw.strip()
    try:
        if field_name in _TUPLE_FIELDS:
            parts = [p for p in raw.split(",") if p.strip()]
            elem = float if field_name in ("g_grid", "tau_grid") else int
            return tuple(elem(p.strip()) for p in parts)
        if field_type is bool:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if field_type is int:
            if "." in raw or "e" in raw.lower():
                raise ValueError(f"{raw} is not an integer")
            return int(raw)
        if field_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for '{field_name}': {exc}") from exc


def load_config(path, kind=None):
    """Parse a flat key/value scenario configuration with full validation.

    Unknown keys are rejected; every default is materialized in the returned
    config (and therefore lands in the manifest).
    """
    fields = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            values[key] = _parse_scalar(key, _FIELD_TYPES[key], raw, path, lineno)
    cfg_kind = values.pop("kind", kind)
    if cfg_kind is None:
        raise ConfigError(f"{path}: scenario kind not given (key 'kind' or subcommand)")
    if kind is not None and cfg_kind != kind:
        raise ConfigError(f"{path}: config kind '{cfg_kind}' does not match subcommand '{kind}'")
    try:
        cfg = default_config(cfg_kind, **values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg.validate()


_FIELD_TYPES = {
    "kind": str, "s": float, "sites": int, "particles": int, "periodic": bool,
    "n_max": int, "grid_per_site": int, "bands_mbh": tuple, "bands_tdv": int,
    "variational_bands": tuple, "g": float, "g_grid": tuple, "g_ini": float,
    "g_fin": float, "tau_grid": tuple, "g0": float, "g_mod": float,
    "omega_min": float, "omega_max": float, "omega_step": float,
    "t_final": float, "dt": float, "output_stride": int, "snapshot_stride": int,
    "initial_state": str, "seed": int, "starts": int, "threads": int,
    "parameter_sites": int,
}


def dump_config(config):
    lines = []
    for f in dataclasses.fields(ScenarioConfig):
        val = getattr(config, f.name)
        if isinstance(val, tuple):
            text = ",".join(fmt(v) for v in val)
        elif isinstance(val, bool):
            text = "true" if val else "false"
        else:
            text = fmt(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

class RunManifest:
    def __init__(self, argv, config=None, config_path=None):
        self.data = {
            "version": __version__,
            "argv": list(argv),
            "outputs": [],
            "timings": {},
        }
        if config is not None:
            self.data["resolved_config"] = dataclasses.asdict(config)
        if config_path and os.path.exists(config_path):
            digest = hashlib.sha256(open(config_path, "rb").read()).hexdigest()
            self.data["config_sha256"] = digest
        self._t0 = time.time()
        self._stage_start = self._t0

    def stage(self, name):
        now = time.time()
        self.data["timings"][name] = now - self._stage_start
        self._stage_start = now

    def add_output(self, path):
        self.data["outputs"].append(str(path))
        return path

    def write(self, out_dir):
        self.data["timings"]["total"] = time.time() - self._t0
        path = os.path.join(out_dir, "run_manifest.json")
        write_json(path, self.data)
        return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _common_overrides(args, cfg):
    pairs = [("s", "s"), ("sites", "sites"), ("particles", "particles"),
             ("g", "g"), ("dt", "dt"), ("seed", "seed"), ("threads", "threads"),
             ("bands_tdv", "bands_tdv")]
    updates = {}
    for arg_name, field in pairs:
        val = getattr(args, arg_name, None)
        if val is not None:
            updates[field] = val
    if getattr(args, "bands_mbh", None) is not None:
        updates["bands_mbh"] = (args.bands_mbh,)
    if getattr(args, "variational_bands", None) is not None:
        updates["variational_bands"] = (args.variational_bands,)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _resolve_config(args, kind, manifest=None):
    if args.config:
        cfg = load_config(args.config, kind=kind)
    else:
        cfg = default_config(kind)
    cfg = _common_overrides(args, cfg)
    cfg.validate()
    if manifest is not None:
        manifest.data["resolved_config"] = dataclasses.asdict(cfg)
    return cfg


def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV_VAR) or "out"
    os.makedirs(out, exist_ok=True)
    return out


def cmd_bands(args, manifest):
    out = _out_dir(args)
    spec = LatticeSpec(args.s if args.s is not None else 10.0,
                       args.sites if args.sites is not None else 4)
    bands = args.bands_mbh if args.bands_mbh is not None else 5
    cache_dir = os.path.join(out, "cache")
    spectrum, wannier, hit = cachemod.load_or_compute_wannier(cache_dir, spec, bands)
    manifest.stage("bands")
    from .bhparams import tunneling, onsite_energy
    rows = [(b, onsite_energy(spectrum, b), tunneling(spectrum, b, 1))
            for b in range(bands)]
    path = write_csv(os.path.join(out, "bands_summary.csv"),
                     ["band", "onsite_energy", "hopping_J"], rows,
                     header_lines=[f"s={fmt(spec.depth_s)} sites={spec.num_sites_L} "
                                   f"n_max={spec.plane_wave_cutoff} cache_hit={hit}"])
    manifest.add_output(path)
    manifest.add_output(os.path.join(cache_dir, cachemod.wannier_cache_name(
        spec.depth_s, spec.num_sites_L, spec.plane_wave_cutoff, bands)))
    print(f"bands: wrote {path}")
    return 0


def cmd_params(args, manifest):
    out = _out_dir(args)
    spec = LatticeSpec(args.s if args.s is not None else 10.0,
                       args.sites if args.sites is not None else 4)
    bands = args.bands_mbh if args.bands_mbh is not None else 5
    g = args.g if args.g is not None else 1.0
    cache_dir = os.path.join(out, "cache")
    params, hit = cachemod.load_or_compute_params(cache_dir, spec, bands, g=g)
    manifest.stage("params")
    rows = [(b, params.E[b], params.J[b], params.U[b, b, b, b])
            for b in range(bands)]
    path = write_csv(os.path.join(out, "params_summary.csv"),
                     ["band", "onsite_energy", "hopping_J", "U_bbbb_per_g"], rows,
                     header_lines=[f"g={fmt(params.g)} cache_hit={hit}"])
    manifest.add_output(path)
    print(f"params: wrote {path}")
    return 0


def cmd_ground_state(args, manifest):
    out = _out_dir(args)
    cfg = _resolve_config(args, "gs_sweep", manifest)
    nm = cfg.bands_mbh[0]
    params = lattice_parameters(cfg.s, cfg.sites, nm, cfg.n_max, cfg.grid_per_site)
    basis = enumerate_basis(cfg.sites, nm, cfg.particles)
    h1, hu = build_mbh_parts(params.truncated(nm), basis, cfg.periodic)
    gi = coupling_to_internal(cfg.g)
    h = SparseHamiltonian(basis.dimension, (h1.matrix + gi * hu.matrix).tocsr())
    energy, _ = ground_state(h, basis)
    manifest.stage("solve")
    path = write_csv(os.path.join(out, "ground_state.csv"),
                     ["g", "bands", "energy"], [(cfg.g, nm, energy)])
    manifest.add_output(path)
    manifest.add_output(write_json(os.path.join(out, "ground_state.json"),
                                   {"config": dataclasses.asdict(cfg), "energy": energy}))
    print(f"ground-state: E = {fmt(energy)}")
    return 0


def cmd_gs_sweep(args, manifest):
    out = _out_dir(args)
    cfg = _resolve_config(args, "gs_sweep", manifest)
    result = gs_sweep(cfg)
    manifest.stage("sweep")
    rows = [(r["g"], r["method"], r["bands"], r["d"], r["energy"], r["energy_rel"])
            for r in result.rows]
    path = write_csv(os.path.join(out, "gs_sweep.csv"),
                     ["g", "method", "bands", "d", "energy", "energy_rel"], rows)
    manifest.add_output(path)
    manifest.add_output(write_json(os.path.join(out, "gs_sweep.json"), result.meta))
    print(f"gs-sweep: wrote {path}")
    return 0


def cmd_evolve(args, manifest):
    out = _out_dir(args)
    cfg = _resolve_config(args, "fock_evolution", manifest)
    result = fock_evolution(cfg)
    manifest.stage("evolve")
    columns = ["time"]
    series = []
    for name, traj in result.trajectories.items():
        pops = traj.observables["site_populations"]
        for k in range(pops.shape[1]):
            columns.append(f"{name}_site{k}")
            series.append(pops[:, k])
        for obs in ("energy", "fidelity_initial", "norm"):
            columns.append(f"{name}_{obs}")
            series.append(traj.observables[obs])
    rows = [tuple([result.times[i]] + [s[i] for s in series])
            for i in range(len(result.times))]
    path = write_csv(os.path.join(out, "fock_evolution.csv"), columns, rows)
    manifest.add_output(path)
    meta = dict(result.meta)
    meta["symmetry_deviation"] = result.symmetry_deviation
    manifest.add_output(write_json(os.path.join(out, "fock_evolution.json"), meta))
    print(f"evolve: wrote {path}")
    return 0


def cmd_quench(args, manifest):
    out = _out_dir(args)
    cfg = _resolve_config(args, "linear_quench", manifest)
    result = linear_quench(cfg)
    manifest.stage("quench")
    rows = [(tau, result.final_energy["mbh"][i], result.final_energy["tdv"][i])
            for i, tau in enumerate(result.taus)]
    path = write_csv(os.path.join(out, "quench.csv"),
                     ["tau", "final_energy_mbh", "final_energy_tdv"], rows,
                     header_lines=[
                         f"ground_energy_mbh={fmt(result.ground_energy['mbh'])}",
                         f"ground_energy_tdv={fmt(result.ground_energy['tdv'])}",
                         f"sudden_energy={fmt(result.sudden_energy['mbh'])}",
                     ])
    manifest.add_output(path)
    manifest.add_output(write_json(os.path.join(out, "quench.json"), result.meta))
    print(f"quench: wrote {path}")
    return 0


def cmd_modulate(args, manifest):
    out = _out_dir(args)
    cfg = _resolve_config(args, "modulation_sweep", manifest)
    result = modulation_sweep(cfg)
    manifest.stage("modulate")
    primary = f"mbh_{cfg.bands_mbh[0]}"
    rows = [(result.omegas[i], result.transfer[primary][i], result.transfer["tdv"][i])
            for i in range(len(result.omegas))]
    path = write_csv(os.path.join(out, "modulation.csv"),
                     ["omega", "D_mbh", "D_tdv"], rows)
    manifest.add_output(path)
    meta = dict(result.meta)
    meta["peaks"] = result.peaks
    meta["initial_overlap"] = result.initial_overlap
    manifest.add_output(write_json(os.path.join(out, "modulation.json"), meta))
    print(f"modulate: wrote {path}")
    return 0


COMMANDS = {
    "bands": cmd_bands,
    "params": cmd_params,
    "ground-state": cmd_ground_state,
    "gs-sweep": cmd_gs_sweep,
    "evolve": cmd_evolve,
    "quench": cmd_quench,
    "modulate": cmd_modulate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mbhtdv",
        description="Multiband lattice-boson solvers: exact diagonalization vs "
                    "variational single-mode dynamics.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="scenario configuration file")
        p.add_argument("--s", type=float, default=None, help="lattice depth (recoils)")
        p.add_argument("--sites", type=int, default=None)
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--bands-mbh", dest="bands_mbh", type=int, default=None)
        p.add_argument("--bands-tdv", dest="bands_tdv", type=int, default=None)
        p.add_argument("--variational-bands", dest="variational_bands", type=int,
                       default=None, help="number of variational modes per site (D)")
        p.add_argument("--g", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None,
                       help=f"output directory (default $%s or ./out)" % OUTPUT_ENV_VAR)
        p.add_argument("--threads", type=int, default=None)
    return parser


def cli_main(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    manifest = RunManifest(argv)
    try:
        out_rc = COMMANDS[args.command](args, manifest)
        manifest.write(_out_dir(args))
        return out_rc
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, NumericsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 4
    except MbhtdvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
