"""Config-driven experiment runner with caching, manifests and CSV reports.

One TOML config describes one experiment: a ``command`` plus the blocks that
command needs (density, geometry, solver, ...).  Outputs are deterministic —
CSV bodies are byte-identical across re-runs of the same config; everything
volatile (timestamps, wall times, cache hit/miss counts) is quarantined in
the manifest's ``timing`` block.

Exit codes: 0 success, 2 config/validation error, 3 solver non-convergence
(partial outputs are still written and flagged in the manifest).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:  # python < 3.11
    import tomli

from . import __version__
from . import cell as ce
from . import energy as en
from . import regime as rg
from . import solver as so

COMMANDS = ("capacity", "cell", "relax", "regime", "film", "trend", "poincare",
            "sweep")

# every key a block may carry; unknown keys are config errors, not typos to
# guess around
_SCHEMA = {
    "": {"command", "seed", "density", "geometry", "solver", "output",
         "capacity", "cell", "relax", "regime", "film", "trend", "poincare",
         "sweep"},
    "density": {"kind", "m", "n", "p", "coeff", "beta", "reg_eps", "matrix",
                "well", "terms"},
    "geometry": {"d", "N_list", "resolution", "grading", "far_grading",
                 "mode"},
    "solver": {"grad_tol", "max_iters", "continuation", "memory"},
    "output": {"directory", "cache_dir", "workers"},
    "capacity": {"d", "p", "r_in", "r_out"},
    "cell": {"regime", "z", "ell", "half_height"},
    "relax": {"points", "envelope_depth", "g", "r_schedule"},
    "regime": {"n", "p", "eps", "delta", "r"},
    "film": {"eps", "delta", "r", "omega", "nz", "h", "fine_factor",
             "band_factor", "growth", "field"},
    "trend": {"j_list", "u_plus", "u_minus", "omega", "budget", "gamma",
              "cell_N", "cell_resolution", "nz"},
    "poincare": {"shape", "p", "rho_list", "delta_list", "resolution"},
    "sweep": {"regime", "z_list", "z_count", "ell_list"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config parsing, canonical serialization, hashing
# ---------------------------------------------------------------------------


def parse_config(path):
    try:
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}")
    _check_keys(cfg)
    cmd = cfg.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(
            f"command must be one of {', '.join(COMMANDS)}; got {cmd!r}")
    return cfg


def _check_keys(cfg):
    for block, allowed in _SCHEMA.items():
        sub = cfg if block == "" else cfg.get(block)
        if not isinstance(sub, dict):
            continue
        unknown = set(sub) - allowed
        if unknown:
            where = f"[{block}]" if block else "top level"
            raise ConfigError(
                f"unknown config keys at {where}: {', '.join(sorted(unknown))}")


def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value of type {type(v).__name__}")


def serialize_config(cfg):
    """Canonical TOML: sorted keys, repr floats.  parse -> serialize is
    idempotent, which is what makes config hashes meaningful."""
    lines = []
    scalars = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in cfg.items() if isinstance(v, dict)}
    for k in sorted(scalars):
        lines.append(f"{k} = {_toml_scalar(scalars[k])}")
    for name in sorted(tables):
        lines.append("")
        lines.append(f"[{name}]")
        sub = tables[name]
        for k in sorted(sub):
            if isinstance(sub[k], dict):
                raise ConfigError("config nesting deeper than one table is not supported")
            lines.append(f"{k} = {_toml_scalar(sub[k])}")
    return "\n".join(lines) + "\n"


def _canonical_json(obj):
    def conv(x):
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, tuple):
            return list(x)
        return x

    def walk(x):
        x = conv(x)
        if isinstance(x, dict):
            return {str(k): walk(v) for k, v in sorted(x.items())}
        if isinstance(x, list):
            return [walk(v) for v in x]
        if isinstance(x, float) and (math.isinf(x) or math.isnan(x)):
            return repr(x)
        return x

    return json.dumps(walk(obj), sort_keys=True)


def config_hash(cfg):
    return hashlib.sha256(_canonical_json(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# block builders
# ---------------------------------------------------------------------------


def build_density(block):
    if block is None:
        raise ConfigError("this command needs a [density] block")
    kw = dict(block)
    if "terms" in kw:
        raise ConfigError("sum densities are not expressible in config yet")
    for key in ("matrix", "well"):
        if key in kw:
            kw[key] = np.asarray(kw[key], dtype=float)
    try:
        return en.EnergyDensity(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [density] block: {exc}")


def build_solver(block):
    if not block:
        return so.SolveOptions()
    kw = dict(block)
    if "continuation" in kw:
        kw["continuation"] = tuple(float(x) for x in kw["continuation"])
    try:
        return so.SolveOptions(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [solver] block: {exc}")


def _one_scale_sequence(val, name):
    if not isinstance(val, list) or not val:
        raise ConfigError(f"[regime].{name} must be [base, exponent] or an "
                          f"explicit list of at least 3 terms")
    if len(val) == 2:
        return rg.PowerSequence(float(val[0]), float(val[1]))
    return [float(x) for x in val]


def build_sequences(block):
    if block is None:
        raise ConfigError("this command needs a [regime] block")
    for key in ("n", "p", "eps", "delta", "r"):
        if key not in block:
            raise ConfigError(f"[regime] block is missing {key!r}")
    try:
        return rg.RegimeSequences(
            eps=_one_scale_sequence(block["eps"], "eps"),
            delta=_one_scale_sequence(block["delta"], "delta"),
            r=_one_scale_sequence(block["r"], "r"),
            n=int(block["n"]), p=float(block["p"]))
    except ValueError as exc:
        raise ConfigError(f"bad [regime] block: {exc}")


def build_cell_spec(cfg):
    geo = cfg.get("geometry") or {}
    cl = cfg.get("cell")
    if cl is None or "regime" not in cl or "z" not in cl:
        raise ConfigError("cell command needs [cell] with 'regime' and 'z'")
    density = build_density(cfg["density"]) if "density" in cfg else None
    z = cl["z"]
    z = [float(z)] if isinstance(z, (int, float)) else [float(x) for x in z]
    kw = dict(regime=cl["regime"], z=np.array(z), density=density,
              solver=build_solver(cfg.get("solver")))
    if "ell" in cl:
        kw["ell"] = float(cl["ell"])
    if "half_height" in cl:
        kw["half_height"] = float(cl["half_height"])
    if "d" not in geo:
        raise ConfigError("cell command needs [geometry].d")
    kw["d"] = int(geo["d"])
    p = (cfg.get("density") or {}).get("p")
    if p is None:
        raise ConfigError("cell command needs [density] with p")
    kw["p"] = float(p)
    for key in ("N_list", "resolution", "grading", "far_grading", "mode"):
        if key in geo:
            kw[key] = tuple(float(x) for x in geo[key]) \
                if key == "N_list" else geo[key]
    try:
        return ce.CellProblemSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"bad cell problem: {exc}")


# ---------------------------------------------------------------------------
# result cache
# ---------------------------------------------------------------------------


def cell_cache_key(spec):
    """Hash of everything the numbers depend on: density, geometry, solver,
    jump and regime."""
    payload = {
        "density": spec.density.describe(),
        "geometry": {"d": spec.d, "p": spec.p, "N_list": list(spec.N_list),
                     "resolution": spec.resolution, "grading": spec.grading,
                     "far_grading": spec.far_grading, "mode": spec.mode,
                     "half_height": spec.half_height},
        "solver": {"grad_tol": spec.solver.grad_tol,
                   "max_iters": spec.solver.max_iters,
                   "continuation": list(spec.solver.continuation)},
        "z": [float(x) for x in np.atleast_1d(spec.z)],
        "regime": spec.regime,
        "ell": spec.ell,
    }
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def cache_lookup(cache_dir, key):
    """Cached cell result for a key, or None.  Corrupt entries are misses."""
    path = Path(cache_dir) / f"{key}.json"
    if not path.exists():
        return None
    try:
        with open(path, "r") as fh:
            data = json.load(fh)
        if data.get("key") != key:
            raise ValueError("key mismatch")
        return data
    except (ValueError, OSError) as exc:
        print(f"warning: discarding corrupt cache entry {path.name}: {exc}",
              file=sys.stderr)
        return None


def cache_store(cache_dir, key, payload):
    d = Path(cache_dir)
    d.mkdir(parents=True, exist_ok=True)
    payload = dict(payload, key=key)
    with open(d / f"{key}.json", "w") as fh:
        json.dump(_json_ready(payload), fh, sort_keys=True, indent=1)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_ready(v) for v in np.asarray(obj).tolist()] \
            if isinstance(obj, np.ndarray) else [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return repr(obj)
    return obj


# ---------------------------------------------------------------------------
# CSV writing (deterministic: repr floats, newline-terminated rows)
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return str(path)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_json_ready(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return str(path)


# ---------------------------------------------------------------------------
# command handlers: each returns (outputs, results, converged)
# ---------------------------------------------------------------------------


def _cmd_capacity(cfg, out, ctx):
    blk = cfg.get("capacity")
    if blk is None or "d" not in blk or "p" not in blk:
        raise ConfigError("capacity command needs [capacity] with d and p")
    d, p = int(blk["d"]), float(blk["p"])
    r_in = float(blk.get("r_in", 1.0))
    r_outs = [float(x) for x in blk.get("r_out", [math.inf])]
    rows = []
    for r_out in sorted(r_outs):
        rows.append((d, p, r_in, r_out, ce.radial_capacity(d, p, r_in, r_out)))
    path = write_csv(out / "capacity.csv",
                     ("d", "p", "r_in", "r_out", "capacity"), rows)
    return [path], {"n_values": len(rows)}, True


def _cmd_cell(cfg, out, ctx):
    spec = build_cell_spec(cfg)
    key = cell_cache_key(spec)
    ctx["cache_keys"].append(key)
    cached = None if ctx["no_cache"] else cache_lookup(ctx["cache_dir"], key)
    if cached is not None:
        ctx["hits"] += 1
        values = cached["phi_values"]
        payload = {k: cached[k] for k in
                   ("phi_values", "phi_extrapolated", "residual", "method",
                    "trace_max_dev", "monotone", "converged")}
    else:
        ctx["misses"] += 1
        res = ce.solve_phi(spec)
        values = list(res.phi_values)
        payload = {
            "phi_values": values,
            "phi_extrapolated": res.phi_extrapolated,
            "residual": res.fit.residual,
            "method": res.fit.method,
            "trace_max_dev": res.trace_max_dev,
            "monotone": res.monotone,
            "converged": all(d.converged for d in res.diagnostics),
        }
        if not ctx["no_cache"]:
            cache_store(ctx["cache_dir"], key, payload)
    rows = [(N, v) for N, v in zip(spec.N_list, values)]
    paths = [
        write_csv(out / "cell_values.csv", ("N", "phi"), rows),
        write_json(out / "cell_result.json", dict(payload, cache_key=key)),
    ]
    return paths, payload, bool(payload["converged"])


def _cmd_relax(cfg, out, ctx):
    blk = cfg.get("relax")
    if blk is None or "points" not in blk:
        raise ConfigError("relax command needs [relax] with 'points'")
    density = build_density(cfg.get("density"))
    reduced = en.ReducedDensity(base=density, mode="wbar")
    depth = int(blk.get("envelope_depth", 0))
    env = en.EnvelopeApprox(base=reduced, depth=depth) if depth > 0 else None
    want_g = bool(blk.get("g", False))
    r_schedule = tuple(float(x) for x in blk.get("r_schedule",
                                                 (1.0, 0.1, 0.01, 1e-3)))
    rows = []
    for i, flat in enumerate(blk["points"]):
        F = np.asarray(flat, dtype=float).reshape(reduced.m, reduced.ncols)
        wbar = en.eval(reduced, F)
        row = [i, wbar]
        if env is not None:
            row.append(en.eval(env, F))
        if want_g:
            row.append(en.g_limit(density, F, r_schedule=r_schedule).value)
        rows.append(tuple(row))
    header = ["index", "wbar"] + (["envelope"] if env else []) \
        + (["g"] if want_g else [])
    path = write_csv(out / "relax.csv", header, rows)
    return [path], {"n_points": len(rows), "envelope_depth": depth}, True


def _cmd_regime(cfg, out, ctx):
    seq = build_sequences(cfg.get("regime"))
    rep = rg.classify(seq)
    payload = {"ell": rep.ell, "R_ell": rep.R_ell, "R_zero": rep.R_zero,
               "regime_label": rep.regime_label, "consistency": rep.consistency,
               "symbolic": rep.symbolic}
    paths = [
        write_csv(out / "regime.csv",
                  ("ell", "R_ell", "R_zero", "label", "consistency"),
                  [(rep.ell, rep.R_ell, rep.R_zero, rep.regime_label,
                    rep.consistency)]),
        write_json(out / "regime.json", payload),
    ]
    return paths, payload, True


def _film_field(kind, grid):
    shape = (grid.xs.size, grid.ys.size, grid.zs.size)
    if kind == "zero":
        U = np.zeros(shape)
        return rg.FilmField(grid=grid, upper=U, lower=U.copy())
    if kind == "affine-x1":
        U = np.broadcast_to(grid.xs[:, None, None], shape).copy()
        return rg.FilmField(grid=grid, upper=U, lower=U.copy())
    raise ConfigError(f"unknown film field {kind!r}; use 'zero' or 'affine-x1'")


def _cmd_film(cfg, out, ctx):
    blk = cfg.get("film")
    if blk is None:
        raise ConfigError("film command needs a [film] block")
    density = build_density(cfg.get("density"))
    kw = {k: blk[k] for k in
          ("eps", "delta", "r", "nz", "h", "fine_factor", "band_factor",
           "growth") if k in blk}
    if "omega" in blk:
        kw["omega"] = tuple(float(x) for x in blk["omega"])
    try:
        spec = rg.FilmSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"bad [film] block: {exc}")
    grid = rg.build_film_grid(spec)
    field = _film_field(blk.get("field", "zero"), grid)
    E = rg.direct_film_energy(spec, density, field)
    payload = {"energy": E, "voxels": grid.n_voxels,
               "nx": int(grid.xs.size), "ny": int(grid.ys.size),
               "holes": int(grid.hole_centers.shape[0]),
               "field": blk.get("field", "zero")}
    paths = [
        write_csv(out / "film.csv", ("field", "energy", "voxels"),
                  [(payload["field"], E, grid.n_voxels)]),
        write_json(out / "film.json", payload),
    ]
    return paths, payload, True


def _cmd_trend(cfg, out, ctx):
    seq = build_sequences(cfg.get("regime"))
    blk = cfg.get("trend") or {}
    if "j_list" not in blk:
        raise ConfigError("trend command needs [trend].j_list")
    density = build_density(cfg["density"]) if "density" in cfg else None
    kw = dict(j_list=[int(j) for j in blk["j_list"]],
              u_plus=float(blk.get("u_plus", 1.0)),
              u_minus=float(blk.get("u_minus", 0.0)),
              density=density,
              solver_options=build_solver(cfg.get("solver")))
    if "omega" in blk:
        kw["omega"] = tuple(float(x) for x in blk["omega"])
    for key, cast in (("budget", int), ("gamma", float),
                      ("cell_resolution", float), ("nz", int)):
        if key in blk:
            kw[key] = cast(blk[key])
    if "cell_N" in blk:
        kw["cell_N"] = tuple(float(x) for x in blk["cell_N"])
    try:
        rep = rg.gamma_trend(seq, **kw)
    except ValueError as exc:
        raise ConfigError(f"trend failed: {exc}")
    rows = [(r["j"], r["eps"], r["delta"], r["r"], r["fine_h"], r["voxels"],
             r["film_energy"], r["limit_energy"], r["gap"]) for r in rep.rows]
    payload = {"regime_label": rep.regime_label, "R": rep.R,
               "phi_value": rep.phi_value, "limit_energy": rep.limit_energy,
               "gaps": rep.gaps, "nonincreasing_last3": rep.nonincreasing_last3,
               "final_gap": rep.final_gap, "warnings": rep.warnings}
    paths = [
        write_csv(out / "trend.csv",
                  ("j", "eps", "delta", "r", "fine_h", "voxels", "film_energy",
                   "limit_energy", "gap"), rows),
        write_json(out / "trend.json", payload),
    ]
    return paths, payload, True


def _cmd_poincare(cfg, out, ctx):
    blk = cfg.get("poincare") or {}
    kw = {}
    for key, cast in (("shape", str), ("p", float), ("resolution", int)):
        if key in blk:
            kw[key] = cast(blk[key])
    for key in ("rho_list", "delta_list"):
        if key in blk:
            kw[key] = tuple(float(x) for x in blk[key])
    try:
        rep = rg.poincare_check(**kw)
    except ValueError as exc:
        raise ConfigError(f"bad [poincare] block: {exc}")
    rows = [(rho, dlt, ratio) for (rho, dlt), ratio in sorted(rep.ratios.items())]
    payload = {"shape": rep.shape, "p": rep.p, "max_ratio": rep.max_ratio,
               "spread": rep.spread, "per_profile": rep.per_profile}
    paths = [
        write_csv(out / "poincare.csv", ("rho", "delta", "max_ratio"), rows),
        write_json(out / "poincare.json", payload),
    ]
    return paths, payload, True


def _sweep_jobs(cfg, ctx):
    blk = cfg.get("sweep")
    if blk is None or "regime" not in blk:
        raise ConfigError("sweep command needs [sweep] with 'regime'")
    base = dict(cfg)
    base["cell"] = {"regime": blk["regime"], "z": 1.0}
    if "z_list" in blk:
        zs = [z if isinstance(z, list) else [z] for z in blk["z_list"]]
    else:
        m = int((cfg.get("density") or {}).get("m", 1))
        zs = [list(map(float, z))
              for z in ce.default_z_samples(m, int(blk.get("z_count", 6)),
                                            seed=ctx["seed"])]
    ells = blk.get("ell_list", [None])
    jobs = []
    for z in zs:
        for ell in ells:
            c = {k: (dict(v) if isinstance(v, dict) else v)
                 for k, v in base.items()}
            c["cell"] = {"regime": blk["regime"], "z": z}
            if ell is not None:
                c["cell"]["ell"] = float(ell)
            jobs.append(c)
    return jobs


def _sweep_worker(job_cfg):
    spec = build_cell_spec(job_cfg)
    res = ce.solve_phi(spec)
    return {
        "phi_values": list(res.phi_values),
        "phi_extrapolated": res.phi_extrapolated,
        "residual": res.fit.residual,
        "method": res.fit.method,
        "trace_max_dev": res.trace_max_dev,
        "monotone": res.monotone,
        "converged": all(d.converged for d in res.diagnostics),
    }


def _cmd_sweep(cfg, out, ctx):
    jobs = _sweep_jobs(cfg, ctx)
    results = [None] * len(jobs)
    pending = []
    for i, job in enumerate(jobs):
        key = cell_cache_key(build_cell_spec(job))
        ctx["cache_keys"].append(key)
        cached = None if ctx["no_cache"] else cache_lookup(ctx["cache_dir"], key)
        if cached is not None:
            ctx["hits"] += 1
            results[i] = cached
        else:
            pending.append((i, key, job))
    ctx["misses"] += len(pending)
    if pending:
        if ctx["workers"] > 1:
            with ProcessPoolExecutor(max_workers=ctx["workers"]) as pool:
                solved = list(pool.map(_sweep_worker,
                                       [job for _, _, job in pending]))
        else:
            solved = [_sweep_worker(job) for _, _, job in pending]
        for (i, key, _), payload in zip(pending, solved):
            results[i] = payload
            if not ctx["no_cache"]:
                cache_store(ctx["cache_dir"], key, payload)
    rows = []
    all_conv = True
    for job, res in zip(jobs, results):
        z = job["cell"]["z"]
        znorm = float(np.linalg.norm(z))
        ell = job["cell"].get("ell", float("nan"))
        all_conv = all_conv and bool(res["converged"])
        spec = build_cell_spec(job)
        for N, phi in zip(spec.N_list, res["phi_values"]):
            rows.append((job["cell"]["regime"], ell, znorm, N, phi,
                         res["phi_extrapolated"], res["residual"],
                         res["trace_max_dev"]))
    rows.sort(key=lambda r: (str(r[0]), r[1] if not math.isnan(r[1]) else -1.0,
                             r[2], r[3]))
    path = write_csv(out / "sweep.csv",
                     ("regime", "ell", "z_norm", "N", "phi", "phi_extrap",
                      "residual", "trace_dev"), rows)
    return [path], {"n_jobs": len(jobs), "all_converged": all_conv}, all_conv


_HANDLERS = {
    "capacity": _cmd_capacity,
    "cell": _cmd_cell,
    "relax": _cmd_relax,
    "regime": _cmd_regime,
    "film": _cmd_film,
    "trend": _cmd_trend,
    "poincare": _cmd_poincare,
    "sweep": _cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def run(config_path, out_dir=None, workers=None, seed=None, no_cache=False):
    """Execute one config; returns the exit status (0 / 2 / 3)."""
    t0 = time.perf_counter()
    try:
        cfg = parse_config(config_path)
        outb = cfg.get("output") or {}
        out = Path(out_dir if out_dir is not None
                   else outb.get("directory", "."))
        out.mkdir(parents=True, exist_ok=True)
        ctx = {
            "cache_dir": outb.get("cache_dir", str(out / "cache")),
            "no_cache": bool(no_cache),
            "workers": int(workers if workers is not None
                           else outb.get("workers", 1)),
            "seed": int(seed if seed is not None else cfg.get("seed", 0)),
            "cache_keys": [],
            "hits": 0,
            "misses": 0,
        }
        outputs, results, converged = _HANDLERS[cfg["command"]](cfg, out, ctx)
    except ValueError as exc:  # ConfigError or a library validation error
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "command": cfg["command"],
        "config_sha256": config_hash(cfg),
        "version": __version__,
        "outputs": sorted(Path(p).name for p in outputs),
        "results": results,
        "cache_keys": ctx["cache_keys"],
        "converged": bool(converged),
        "timing": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_s": time.perf_counter() - t0,
            "cache_hits": ctx["hits"],
            "cache_misses": ctx["misses"],
        },
    }
    write_json(out / "run_manifest.json", manifest)
    if not converged:
        print("warning: at least one solve did not meet its tolerance; "
              "outputs written and flagged in the manifest", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="sievefilm",
        description="run a sieve-film experiment described by a TOML config")
    ap.add_argument("--config", required=True, help="path to the TOML config")
    ap.add_argument("--out", default=None, help="output directory "
                    "(overrides [output].directory)")
    ap.add_argument("--workers", type=int, default=None,
                    help="parallel workers for sweep (default 1)")
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for randomized sampling (overrides config)")
    ap.add_argument("--no-cache", action="store_true",
                    help="bypass the result cache entirely")
    args = ap.parse_args(argv)
    return run(args.config, out_dir=args.out, workers=args.workers,
               seed=args.seed, no_cache=args.no_cache)


if __name__ == "__main__":
    sys.exit(main())
