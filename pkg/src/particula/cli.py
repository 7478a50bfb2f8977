"""Command-line driver: strict JSON/flag configuration, proxy-app runs,
layout and FFT benchmarks, CSV emission.

Config precedence: defaults < JSON file (--config) < flags. Unknown keys
are rejected by name. Every CSV starts with a '#' comment echoing the
effective configuration, then an RFC-4180 header row; LF line endings and
'.' decimals throughout, so identical seeded runs are byte-identical.

Exit codes: 0 ok, 2 config error, 3 invariant violation during a run,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import decomp, longrange, md, pfft, pic
from .geometry import Box


class ConfigError(Exception):
    pass


def _int_list(text):
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(t) for t in str(text).split(",") if t != ""]


# key -> (converter, default, help); converters also validate JSON values
_COMMON = {
    "seed": (int, 1, "PRNG seed (64-bit)"),
    "output": (str, "-", "CSV output path, '-' for stdout"),
}

_MD_KEYS = {
    "lattice_cells": (int, 4, "FCC cells per axis (atoms = 4*cells^3)"),
    "density": (float, 0.8442, "reduced number density"),
    "temperature": (float, 0.8, "initial reduced temperature"),
    "dt": (float, 0.005, "time step"),
    "steps": (int, 100, "number of steps"),
    "cutoff": (float, 2.5, "LJ cutoff radius"),
    "skin": (float, 0.0, "Verlet skin distance"),
    "rebuild_stride": (int, 1, "steps between neighbor rebuilds"),
    "sort_stride": (int, 0, "steps between locality sorts (0 = never)"),
    "vector_length": (int, 16, "AoSoA inner vector length"),
    "ranks": (_int_list, [1, 1, 1], "simulated rank grid, e.g. 2,2,2"),
}

_PIC_KEYS = {
    "grid_cells": (int, 64, "grid cells per axis (2-D square)"),
    "particles": (int, 16384, "particle count (rounded to a grid-"
                              "commensurate square lattice)"),
    "steps": (int, 100, "number of steps"),
    "dt": (float, 0.1, "time step in units of 1/omega_p"),
    "amplitude": (float, 1e-4, "sinusoidal displacement perturbation"),
    "beam_velocity": (float, 1.0, "out-of-plane streaming velocity"),
    "filter_passes": (int, 2, "binomial filter passes on the density"),
    "vector_length": (int, 8, "AoSoA inner vector length"),
}

SCHEMAS = {
    "md": {**_COMMON, **_MD_KEYS},
    "pic": {**_COMMON, **_PIC_KEYS},
    "pic-implicit": {**_COMMON, **_PIC_KEYS,
                     "picard_tol": (float, 1e-13, "Picard position tolerance")},
    "sgct": {**_COMMON,
             "levels": (_int_list, [4, 5, 6], "dense target levels n (2^n grid)"),
             "particles": (int, 1_000_000, "sample count")},
    "fft-bench": {**_COMMON,
                  "dims": (_int_list, [32, 32, 32], "global grid dimensions"),
                  "rank_counts": (_int_list, [1, 8, 27, 64],
                                  "cubic rank counts to sweep")},
    "layout-bench": {**_COMMON, **_MD_KEYS,
                     "vector_lengths": (_int_list, [1, 4, 8, 16],
                                        "AoSoA vector lengths to sweep")},
    "spme-check": {**_COMMON,
                   "n_charges": (int, 64, "charges per configuration"),
                   "n_configs": (int, 3, "random neutral configurations"),
                   "box_length": (float, 6.0, "cubic box edge"),
                   "cutoff": (float, 2.9, "real-space cutoff"),
                   "mesh": (int, 128, "SPME mesh points per axis"),
                   "spline_order": (int, 3, "SPME spreading order (1 or 3)")},
}

# pic-implicit needs several omega_p periods per run at dt well above the
# explicit limit; keep the default consistent with that use
SCHEMAS["pic-implicit"]["dt"] = (float, 10.0, "time step in units of 1/omega_p")


def parse_config(subcommand: str, config_path: str | None, flag_values: dict):
    """Merge defaults, JSON file, and flag overrides (flags win)."""
    schema = SCHEMAS[subcommand]
    cfg = {k: default for k, (_, default, _h) in schema.items()}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}")
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        sub = doc.pop("subcommand", subcommand)
        if sub != subcommand:
            raise ConfigError(f"config subcommand {sub!r} does not match {subcommand!r}")
        for key, value in doc.items():
            if key not in schema:
                raise ConfigError(f"unknown key: {key}")
            try:
                cfg[key] = schema[key][0](value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r}")
    for key, value in flag_values.items():
        if value is None:
            continue
        try:
            cfg[key] = schema[key][0](value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key}: {value!r}")
    _validate(subcommand, cfg)
    return cfg


def _validate(subcommand: str, cfg: dict):
    for key in ("steps", "particles", "lattice_cells", "grid_cells",
                "vector_length", "rebuild_stride", "n_charges", "n_configs",
                "mesh"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    for key in ("dt", "density", "cutoff", "picard_tol", "box_length"):
        if key in cfg and cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if "ranks" in cfg:
        if len(cfg["ranks"]) != 3 or any(r < 1 for r in cfg["ranks"]):
            raise ConfigError("ranks must be 3 integers >= 1")
    if "cutoff" in cfg and "box_length" in cfg and cfg["cutoff"] >= cfg["box_length"] / 2:
        raise ConfigError("cutoff must be below half the box length")
    if subcommand == "md":
        # cutoff vs box size is checked again by the driver, but catch the
        # obvious case here so it reports as a config error
        n = 4 * cfg["lattice_cells"] ** 3
        box = (n / cfg["density"]) ** (1 / 3)
        if cfg["cutoff"] + cfg["skin"] >= box / 2:
            raise ConfigError("cutoff + skin must be below half the box length")


def _threads() -> int:
    raw = os.environ.get("PARTICULA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PARTICULA_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("PARTICULA_THREADS must be >= 1")
    return n


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return "x".join(str(int(u)) for u in v)
    return str(v)


def _write_csv(path: str, effective: dict, header: list, rows: list):
    # the output path is excluded from the echo so renaming the file does
    # not break byte-identity between seeded runs
    lines = ["# " + " ".join(f"{k}={_fmt(v)}" for k, v in sorted(effective.items())
                             if k != "output")]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)


# -- subcommand runners --------------------------------------------------------


def _run_md(cfg, effective):
    mc = md.MDConfig(lattice_cells=cfg["lattice_cells"], density=cfg["density"],
                     temperature=cfg["temperature"], dt=cfg["dt"],
                     steps=cfg["steps"], cutoff=cfg["cutoff"], skin=cfg["skin"],
                     rebuild_stride=cfg["rebuild_stride"],
                     sort_stride=cfg["sort_stride"], seed=cfg["seed"],
                     vector_length=cfg["vector_length"],
                     rank_dims=tuple(cfg["ranks"]))
    rows, timings = md.run_md(mc)
    header = ["step", "KE", "PE", "E_total", "temperature"]
    _write_csv(cfg["output"], effective,
               header, [[r[h] for h in header] for r in rows])
    if cfg["output"] != "-":
        _write_csv(cfg["output"] + ".phases.csv", effective,
                   ["phase", "seconds"], sorted(timings.items()))


def _run_pic(cfg, effective, implicit: bool):
    state = pic.perturbed_beam(cfg["grid_cells"], cfg["particles"], cfg["dt"],
                               amplitude=cfg["amplitude"],
                               beam_velocity=cfg["beam_velocity"],
                               filter_passes=cfg["filter_passes"],
                               vector_length=cfg["vector_length"])
    rho = pic.deposit_rho(state)
    phi, _ = pic.solve_fields(state, rho)
    rows = [[0, pic.kinetic_energy(state),
             pic.field_energy(state, rho, phi),
             pic.kinetic_energy(state) + pic.field_energy(state, rho, phi), 0, 0.0]]
    for s in range(1, cfg["steps"] + 1):
        if implicit:
            out = pic.cn_implicit_step(state, picard_tol=cfg["picard_tol"])
            rows.append([s, out["KE"], out["FE"], out["E_total"],
                         out["iterations"], out["residual"]])
        else:
            out = pic.es_explicit_step(state)
            rows.append([s, out["KE"], out["FE"], out["E_total"], 0, 0.0])
    _write_csv(cfg["output"], effective,
               ["step", "KE", "FE", "E_total", "iterations", "residual"], rows)


def _run_sgct(cfg, effective):
    rng = np.random.default_rng(cfg["seed"])
    x = rng.random((cfg["particles"], 2))
    rows = []
    for n in cfg["levels"]:
        scfg = pic.SGCTConfig(level=n)
        q = 1.0 / cfg["particles"]
        combined, _ = pic.sgct_deposit(x, q, scfg)
        dense = pic.dense_deposit(x, q, scfg)
        rows.append([n, cfg["particles"], float(np.var(dense)), float(np.var(combined))])
    _write_csv(cfg["output"], effective,
               ["level", "N_p", "variance_dense", "variance_sgct"], rows)


_CUBIC_DIMS = {1: (1, 1, 1), 8: (2, 2, 2), 27: (3, 3, 3), 64: (4, 4, 4)}


def _fft_fabric(n_ranks: int):
    if n_ranks in _CUBIC_DIMS:
        dims = _CUBIC_DIMS[n_ranks]
    else:
        c = round(n_ranks ** (1 / 3))
        if c ** 3 != n_ranks:
            raise ValueError(f"rank count {n_ranks} is not a cube")
        dims = (c, c, c)
    box = Box([0.0] * 3, [1.0] * 3)
    return decomp.decompose(box, dims, [True] * 3)


def _run_fft_bench(cfg, effective):
    rows = []
    for n_r in cfg["rank_counts"]:
        plan = pfft.make_pencil_plan(_fft_fabric(n_r), cfg["dims"])
        counts = pfft.message_pair_count(plan)
        for stage, pairs in counts.items():
            rows.append([n_r, stage, pairs])
    _write_csv(cfg["output"], effective, ["ranks", "stage", "pairs"], rows)


def _run_layout_bench(cfg, effective):
    rows = []
    for v in cfg["vector_lengths"]:
        mc = md.MDConfig(lattice_cells=cfg["lattice_cells"], density=cfg["density"],
                         temperature=cfg["temperature"], dt=cfg["dt"],
                         steps=cfg["steps"], cutoff=cfg["cutoff"], skin=cfg["skin"],
                         rebuild_stride=cfg["rebuild_stride"],
                         sort_stride=cfg["sort_stride"], seed=cfg["seed"],
                         vector_length=v, rank_dims=tuple(cfg["ranks"]))
        t0 = time.perf_counter()
        md_rows, timings = md.run_md(mc)
        total = time.perf_counter() - t0
        checksum = repr(md_rows[-1]["E_total"])
        for phase, seconds in sorted(timings.items()):
            rows.append([v, phase, seconds, checksum])
        rows.append([v, "total", total, checksum])
    _write_csv(cfg["output"], effective,
               ["vector_length", "phase", "seconds", "checksum"], rows)


def _run_spme_check(cfg, effective):
    L = cfg["box_length"]
    params = longrange.EwaldParams(alpha=longrange.default_alpha(cfg["cutoff"]),
                                   r_cut=cfg["cutoff"], mesh=cfg["mesh"],
                                   spline_order=cfg["spline_order"])
    n = cfg["n_charges"]
    if n % 2:
        raise ValueError("n_charges must be even for a neutral system")
    q = np.tile([1.0, -1.0], n // 2)
    rows = []
    for i in range(cfg["n_configs"]):
        rng = np.random.default_rng(cfg["seed"] + i)
        x = rng.random((n, 3)) * L
        e_ref, f_ref = longrange.ewald_direct(x, q, L, params)
        e_mesh, f_mesh = longrange.spme(x, q, L, params)
        rows.append([i, abs(e_mesh - e_ref) / abs(e_ref),
                     float(np.abs(f_mesh - f_ref).max())])
    _write_csv(cfg["output"], effective,
               ["config", "energy_rel_err", "force_max_err"], rows)


_RUNNERS = {
    "md": lambda c, e: _run_md(c, e),
    "pic": lambda c, e: _run_pic(c, e, implicit=False),
    "pic-implicit": lambda c, e: _run_pic(c, e, implicit=True),
    "sgct": lambda c, e: _run_sgct(c, e),
    "fft-bench": lambda c, e: _run_fft_bench(c, e),
    "layout-bench": lambda c, e: _run_layout_bench(c, e),
    "spme-check": lambda c, e: _run_spme_check(c, e),
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="particula",
                                 description="particle-simulation toolkit driver")
    subs = ap.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        sp = subs.add_parser(name, help=f"run the {name} subcommand")
        sp.add_argument("--config", default=None, help="JSON config file")
        mode = sp.add_mutually_exclusive_group()
        mode.add_argument("--deterministic", action="store_true", default=True,
                          help="serial kernels, byte-identical output (default)")
        mode.add_argument("--parallel", dest="deterministic", action="store_false",
                          help="allow threaded kernels (PARTICULA_THREADS caps workers)")
        for key, (conv, default, help_text) in schema.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=None, metavar="V",
                            help=f"{help_text} (default {_fmt(default)})")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    sub = args.subcommand
    flag_values = {k: getattr(args, k) for k in SCHEMAS[sub]}
    try:
        cfg = parse_config(sub, args.config, flag_values)
        threads = 1 if args.deterministic else _threads()
        effective = dict(cfg, subcommand=sub, threads=threads,
                         mode="deterministic" if args.deterministic else "parallel")
        _RUNNERS[sub](cfg, effective)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 3
    except RuntimeError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
