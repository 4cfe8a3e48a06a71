"""Experiment orchestration: JSON config validation, the four batch
experiments (linear response, negative mobility, resonance scan, diffusion
sweep), deterministic work scheduling, and CSV emission.

Stream allocation (documented contract): linear-response style runs use
stream_id = j for the j-th eta (1-based); scans and replica ensembles use
stream_id = (i+1)*2^32 + j for sweep point i (0-based) and inner index j.
All outputs are a pure function of (resolved config, master_seed).
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from .diffusion import estimate_from_displacements, quadratic_fit, replica_displacements
from .integrator import derive_stream, run_trajectory, sample_gibbs
from .model import ForceField, Potential, SystemParams
from .observables import (
    BlockMeanAccumulator,
    VelocityProfile,
    fit_linear_response,
    mode_amplitude,
)

log = logging.getLogger("langesim")

EXPERIMENTS = ("linear-response", "negative-mobility", "resonance-scan", "diffusion-sweep")


class ConfigError(ValueError):
    pass


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


@dataclass
class ExperimentConfig:
    experiment: str
    params: SystemParams
    pot: Potential
    force_descriptor: str
    modulated: object
    master_seed: int
    etas: list
    n_steps: int = 0
    burn_in_steps: int = 0
    scan: list = dc_field(default_factory=list)
    M_rep: int = 0
    tau_neq: float = 0.0
    tau_sim: float = 0.0
    fit_eta_max: object = None
    tail_fit_range: object = None
    intercept: bool = True
    out: object = None
    threads: int = 1
    resolved: dict = dc_field(default_factory=dict)

    def make_field(self, params=None):
        p = params if params is not None else self.params
        pot = self.pot if p.d == self.pot.d else Potential(self.pot.descriptor, p.d)
        return ForceField(self.force_descriptor, p, pot, self.modulated)


def _merge_profile(doc, profile):
    doc = dict(doc)
    profiles = doc.pop("profiles", None)
    if profiles is None:
        return doc
    _require(profile in profiles, f"profile: {profile!r} not defined in config")
    chosen = profiles[profile]
    for k, v in chosen.items():
        if k == "params" and isinstance(doc.get("params"), dict):
            doc["params"] = {**doc["params"], **v}
        else:
            doc[k] = v
    return doc


def load_config(path_or_dict, profile="desk", seed_override=None, threads=None, out=None):
    """Parse and validate a config; every constraint violation raises
    ConfigError naming the offending field."""
    if isinstance(path_or_dict, dict):
        doc = dict(path_or_dict)
    else:
        with open(path_or_dict) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config: invalid JSON ({e})") from e
    doc = _merge_profile(doc, profile)

    exp = doc.get("experiment")
    _require(exp in EXPERIMENTS, f"experiment: must be one of {EXPERIMENTS}, got {exp!r}")

    pdoc = dict(doc.get("params", {}))
    try:
        params = SystemParams(**pdoc)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e

    pot_tag = doc.get("potential", "cos2d")
    try:
        pot = Potential(pot_tag, params.d)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    force_desc = doc.get("force")
    _require(isinstance(force_desc, str), "force: descriptor string required")
    modulated = doc.get("modulated")
    try:
        ForceField(force_desc, params, pot, modulated)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    seed = seed_override if seed_override is not None else doc.get("master_seed")
    _require(seed is not None, "master_seed: required (config, --seed, or LANGESIM_SEED)")
    _require(isinstance(seed, int) and 0 <= seed < 2**64, "master_seed: need a u64 integer")

    cfg = ExperimentConfig(
        experiment=exp,
        params=params,
        pot=pot,
        force_descriptor=force_desc,
        modulated=modulated,
        master_seed=seed,
        etas=[],
        out=out if out is not None else doc.get("out"),
        threads=threads if threads is not None else int(doc.get("threads", 1)),
        intercept=bool(doc.get("intercept", True)),
    )
    I = params.steps_per_period

    if exp in ("linear-response", "negative-mobility", "resonance-scan"):
        # amplitude grid: either an explicit "etas" list or the (eta_max, R)
        # shorthand for the grid j*eta_max/R, j = 1..R
        if "etas" in doc:
            etas = doc["etas"]
            _require(isinstance(etas, list) and len(etas) >= 3,
                     "etas: list of >= 3 values required")
            _require(all(isinstance(e, (int, float)) for e in etas),
                     "etas: numbers required")
            cfg.etas = [float(e) for e in etas]
        else:
            eta_max = doc.get("eta_max")
            _require(isinstance(eta_max, (int, float)) and eta_max > 0,
                     "eta_max: must be > 0")
            R = doc.get("R")
            _require(isinstance(R, int) and R >= 3, "R: need at least 3 eta points")
            cfg.etas = [j * eta_max / R for j in range(1, R + 1)]

    if exp in ("linear-response", "negative-mobility"):
        n_steps = doc.get("n_steps")
        _require(isinstance(n_steps, int) and n_steps > 0, "n_steps: positive integer required")
        _require(n_steps % I == 0,
                 f"n_steps: must be a multiple of period_T/dt = {I} for equal bin counts")
        burn = doc.get("burn_in_steps", 0)
        _require(isinstance(burn, int) and burn >= 0, "burn_in_steps: nonnegative integer")
        _require(burn % I == 0, f"burn_in_steps: must be a multiple of period_T/dt = {I}")
        cfg.n_steps, cfg.burn_in_steps = n_steps, burn

    if exp == "resonance-scan":
        scan = doc.get("scan")
        _require(isinstance(scan, list) and scan, "scan: nonempty list of scan points required")
        canon = []
        for i, pt in enumerate(scan):
            _require(isinstance(pt, dict), f"scan[{i}]: object required")
            _require("freq" in pt or "period" in pt,
                     f"scan[{i}].freq: freq or period required")
            if "period" in pt:
                T = float(pt["period"])
                _require(T > 0, f"scan[{i}].period: must be > 0")
                if "freq" in pt:
                    _require(abs(pt["freq"] * T - 1.0) <= 1e-12,
                             f"scan[{i}].freq: inconsistent with period")
            else:
                _require(pt["freq"] > 0, f"scan[{i}].freq: must be > 0")
                T = 1.0 / float(pt["freq"])
            for key in ("dt", "t_total"):
                _require(key in pt, f"scan[{i}].{key}: required")
            dt = pt["dt"]
            ratio = T / dt
            _require(abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio) and round(ratio) >= 1,
                     f"scan[{i}].dt: the forcing period must be an integer multiple of dt")
            for key in ("t_total", "burn_in"):
                v = pt.get(key, 0.0)
                r = v / T
                _require(abs(r - round(r)) <= 1e-9 * max(1.0, abs(r)),
                         f"scan[{i}].{key}: must be a multiple of the forcing period")
            _require(pt["t_total"] > 0, f"scan[{i}].t_total: must be > 0")
            canon.append({"period": T, "freq": 1.0 / T, "dt": float(dt),
                          "t_total": float(pt["t_total"]),
                          "burn_in": float(pt.get("burn_in", 0.0))})
        cfg.scan = canon
        cfg.tail_fit_range = doc.get("tail_fit_range")
        if cfg.tail_fit_range is not None:
            _require(
                isinstance(cfg.tail_fit_range, (list, tuple)) and len(cfg.tail_fit_range) == 2,
                "tail_fit_range: [fmin, fmax] required")

    if exp == "diffusion-sweep":
        etas = doc.get("etas")
        _require(isinstance(etas, list) and len(etas) >= 2, "etas: list of >= 2 values required")
        _require(all(isinstance(e, (int, float)) and e >= 0 for e in etas),
                 "etas: nonnegative numbers required")
        cfg.etas = [float(e) for e in etas]
        M_rep = doc.get("M_rep")
        _require(isinstance(M_rep, int) and M_rep >= 2, "M_rep: integer >= 2 required")
        cfg.M_rep = M_rep
        for key in ("tau_neq", "tau_sim"):
            v = doc.get(key)
            _require(isinstance(v, (int, float)) and v >= 0, f"{key}: nonnegative number required")
            n = v / params.dt
            _require(abs(n - round(n)) <= 1e-9 * max(1.0, n),
                     f"{key}: must be an integer multiple of dt")
        _require(doc["tau_sim"] > 0, "tau_sim: must be > 0")
        r = doc["tau_neq"] / params.period_T
        _require(abs(r - round(r)) <= 1e-9 * max(1.0, r),
                 "tau_neq: must be a multiple of period_T")
        cfg.tau_neq, cfg.tau_sim = float(doc["tau_neq"]), float(doc["tau_sim"])
        cfg.fit_eta_max = doc.get("fit_eta_max")

    cfg.resolved = _resolved_dict(cfg)
    return cfg


def _resolved_dict(cfg):
    p = cfg.params
    out = {
        "experiment": cfg.experiment,
        "params": {
            "d": p.d, "beta": p.beta, "gamma": p.gamma,
            "mass": p.mass_scalar if p.mass_scalar is not None else p.mass_matrix.tolist(),
            "dt": p.dt, "period_T": p.period_T, "cell": list(p.cell),
        },
        "potential": cfg.pot.descriptor,
        "force": cfg.force_descriptor,
        "modulated": cfg.modulated,
        "master_seed": cfg.master_seed,
        "version": __version__,
    }
    if cfg.experiment in ("linear-response", "negative-mobility"):
        out.update(etas=cfg.etas, n_steps=cfg.n_steps, burn_in_steps=cfg.burn_in_steps,
                   intercept=cfg.intercept)
    if cfg.experiment == "resonance-scan":
        out.update(etas=cfg.etas, scan=cfg.scan, tail_fit_range=cfg.tail_fit_range,
                   intercept=cfg.intercept)
    if cfg.experiment == "diffusion-sweep":
        out.update(etas=cfg.etas, M_rep=cfg.M_rep, tau_neq=cfg.tau_neq,
                   tau_sim=cfg.tau_sim, fit_eta_max=cfg.fit_eta_max)
    return out


# ---------------------------------------------------------------------------
# work items (top level so they pickle for the process pool)

def _lr_point(args):
    (resolved, eta, stream_id, want_force) = args
    cfg = load_config(resolved)
    params, pot = cfg.params, cfg.pot
    fld = cfg.make_field()
    stream = derive_stream(cfg.master_seed, stream_id)
    state = sample_gibbs(params, pot, stream)
    state = run_trajectory(state, cfg.burn_in_steps, params, pot, fld, eta, stream)
    prof = VelocityProfile(params.steps_per_period, params.d)
    vacc = BlockMeanAccumulator("velocity", params.d)
    sinks = [prof, vacc]
    facc = None
    if want_force:
        facc = BlockMeanAccumulator("force", params.d, field=fld)
        sinks.append(facc)
    run_trajectory(state, cfg.n_steps, params, pot, fld, eta, stream, sinks=sinks)
    vmean, vstderr = vacc.result()
    out = {"eta": eta, "mean_v": vmean, "stderr_v": vstderr}
    if want_force:
        fmean, fstderr = facc.result()
        out.update(force=fmean, force_stderr=fstderr)
    return out


def _resonance_point(args):
    (resolved, i, pt, etas, master_seed) = args
    base = load_config(resolved)
    T = pt["period"]
    params = SystemParams(
        d=base.params.d, beta=base.params.beta, gamma=base.params.gamma,
        mass=base.params.mass_scalar if base.params.mass_scalar is not None
        else base.params.mass_matrix,
        dt=pt["dt"], period_T=T, cell=base.params.cell,
    )
    pot = Potential(base.pot.descriptor, params.d)
    fld = ForceField(base.force_descriptor, params, pot, base.modulated)
    I = params.steps_per_period
    n_burn = int(round(pt.get("burn_in", 0.0) / params.dt))
    n_main = int(round(pt["t_total"] / params.dt))
    n_burn -= n_burn % I
    n_main -= n_main % I
    modes = np.empty((len(etas), 2, params.d))  # (eta, re/im, component)
    for j, eta in enumerate(etas, start=1):
        stream = derive_stream(master_seed, ((i + 1) << 32) + j)
        state = sample_gibbs(params, pot, stream)
        state = run_trajectory(state, n_burn, params, pot, fld, eta, stream)
        prof = VelocityProfile(I, params.d)
        run_trajectory(state, n_main, params, pot, fld, eta, stream, sinks=[prof])
        m1 = mode_amplitude(prof, 1)
        modes[j - 1, 0] = m1.real
        modes[j - 1, 1] = m1.imag
    fit_re = fit_linear_response(etas, modes[:, 0, :], intercept=base.intercept)
    fit_im = fit_linear_response(etas, modes[:, 1, :], intercept=base.intercept)
    s = fit_re.slope + 1j * fit_im.slope
    amp = np.abs(s)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (fit_re.slope * fit_re.slope_stderr) ** 2 + (fit_im.slope * fit_im.slope_stderr) ** 2
        stderr = np.where(amp > 0, np.sqrt(var) / np.where(amp > 0, amp, 1.0),
                          np.hypot(fit_re.slope_stderr, fit_im.slope_stderr))
    return {
        "freq": pt["freq"], "amp": amp, "amp_stderr": stderr,
        "slope_re": fit_re.slope, "slope_im": fit_im.slope,
    }


def _diffusion_block(args):
    (resolved, eta_index, eta, k0, n_block) = args
    cfg = load_config(resolved)
    fld = cfg.make_field()
    return replica_displacements(
        cfg.params, cfg.pot, fld, eta, n_block, cfg.tau_neq, cfg.tau_sim,
        cfg.master_seed, stream_base=(eta_index + 1) << 32, k0=k0,
    )


def _run_items(worker, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [worker(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, items))


# ---------------------------------------------------------------------------
# experiments

def run_linear_response(cfg):
    return _run_lr_family(cfg, want_force=False)


def run_negative_mobility(cfg):
    return _run_lr_family(cfg, want_force=True)


def _run_lr_family(cfg, want_force):
    t0 = time.time()
    items = [(cfg.resolved, eta, j, want_force) for j, eta in enumerate(cfg.etas, start=1)]
    rows = _run_items(_lr_point, items, cfg.threads)
    means = np.array([r["mean_v"] for r in rows])
    fit = fit_linear_response(cfg.etas, means, intercept=cfg.intercept)
    result = {"etas": cfg.etas, "rows": rows, "fit": fit}
    summaries = {"fit": _fit_dict(fit)}
    columns = ["eta", "mean_vx", "mean_vy", "stderr_vx", "stderr_vy"]
    data = [[r["eta"], r["mean_v"][0], r["mean_v"][1], r["stderr_v"][0], r["stderr_v"][1]]
            for r in rows]
    if want_force:
        forces = np.array([r["force"][0] for r in rows])
        fref = np.array([r["force_stderr"][0] for r in rows])
        if np.all(np.isfinite(fref)) and np.all(fref > 0):
            w = 1.0 / fref**2
            fbar = float(np.sum(w * forces) / np.sum(w))
            fbar_err = float(1.0 / math.sqrt(np.sum(w)))
        else:
            fbar = float(forces.mean())
            fbar_err = float(forces.std(ddof=1) / math.sqrt(len(forces))) if len(forces) > 1 else math.inf
        slope_x = float(fit.slope[0])
        # zero stderr happens for exactly constant observables; treat the
        # corresponding significance as unbounded rather than dividing by 0
        sigs = []
        for val, err in ((slope_x, float(fit.slope_stderr[0])), (fbar, fbar_err)):
            sigs.append(abs(val) / err if err > 0 else (math.inf if val else 0.0))
        sig = min(sigs)
        flag = bool(np.sign(slope_x) != np.sign(fbar))
        result["negative_mobility"] = {
            "flag": flag, "slope_x": slope_x, "mean_force_x": fbar,
            "significance": float(sig),
        }
        summaries["negative_mobility"] = result["negative_mobility"]
        columns = ["eta", "mean_vx", "stderr_vx", "force_x", "stderr_force_x"]
        data = [[r["eta"], r["mean_v"][0], r["stderr_v"][0], r["force"][0],
                 r["force_stderr"][0]] for r in rows]
    log.info("%s finished in %.1fs", cfg.experiment, time.time() - t0)
    if cfg.out:
        write_csv(cfg.out, cfg.experiment, cfg.resolved, columns, data, summaries)
    result["columns"], result["data"], result["summaries"] = columns, data, summaries
    return result


def run_resonance_scan(cfg):
    t0 = time.time()
    items = [(cfg.resolved, i, pt, cfg.etas, cfg.master_seed)
             for i, pt in enumerate(cfg.scan)]
    rows = _run_items(_resonance_point, items, cfg.threads)
    columns = ["freq", "amp_x", "stderr_amp_x", "slope_re_x", "slope_im_x",
               "amp_y", "stderr_amp_y"]
    data = [[r["freq"], r["amp"][0], r["amp_stderr"][0], r["slope_re"][0],
             r["slope_im"][0], r["amp"][1], r["amp_stderr"][1]] for r in rows]
    summaries = {}
    if cfg.tail_fit_range:
        fmin, fmax = cfg.tail_fit_range
        sel = [r for r in rows if fmin <= r["freq"] <= fmax and r["amp"][0] > 0]
        if len(sel) >= 3:
            lx = np.log([r["freq"] for r in sel])
            ly = np.log([r["amp"][0] for r in sel])
            tfit = fit_linear_response(lx, ly[:, None], intercept=True)
            summaries["tail_fit"] = {
                "slope": float(tfit.slope[0]), "intercept": float(tfit.intercept[0]),
                "stderr_slope": float(tfit.slope_stderr[0]),
                "fmin": fmin, "fmax": fmax, "n_points": len(sel),
            }
    log.info("resonance-scan finished in %.1fs", time.time() - t0)
    if cfg.out:
        write_csv(cfg.out, cfg.experiment, cfg.resolved, columns, data, summaries)
    return {"rows": rows, "columns": columns, "data": data, "summaries": summaries}


_REPLICA_BLOCK = 500


def run_diffusion_sweep(cfg):
    t0 = time.time()
    items = []
    for i, eta in enumerate(cfg.etas):
        for k0 in range(0, cfg.M_rep, _REPLICA_BLOCK):
            n_block = min(_REPLICA_BLOCK, cfg.M_rep - k0)
            items.append((cfg.resolved, i, eta, k0, n_block))
    blocks = _run_items(_diffusion_block, items, cfg.threads)
    estimates = []
    pos = 0
    for i, eta in enumerate(cfg.etas):
        zs = []
        while pos < len(items) and items[pos][1] == i:
            zs.append(blocks[pos])
            pos += 1
        Z = np.concatenate(zs, axis=0)
        estimates.append(estimate_from_displacements(Z, cfg.tau_neq, cfg.tau_sim))
    columns = ["eta", "Dxx", "Dxy", "Dyy", "Vx", "Vy", "eig1", "eig2",
               "stderr_Dxx", "stderr_Dxy", "stderr_Dyy", "stderr_Vx", "stderr_Vy",
               "flagged"]
    data = []
    for eta, est in zip(cfg.etas, estimates):
        D, SE = est.diffusion, est.diffusion_stderr
        data.append([eta, D[0, 0], D[0, 1], D[1, 1], est.drift[0], est.drift[1],
                     est.eigenvalues[0], est.eigenvalues[1], SE[0, 0], SE[0, 1],
                     SE[1, 1], est.drift_stderr[0], est.drift_stderr[1],
                     int(est.flagged)])
    summaries = {}
    fit_max = cfg.fit_eta_max if cfg.fit_eta_max is not None else max(cfg.etas)
    sel = [(eta, est) for eta, est in zip(cfg.etas, estimates) if eta <= fit_max + 1e-12]
    if len({e for e, _ in sel}) >= 4:
        etas_f = [e for e, _ in sel]
        dxx = [est.diffusion[0, 0] for _, est in sel]
        errs = [est.diffusion_stderr[0, 0] for _, est in sel]
        D0, a, b, stderrs = quadratic_fit(etas_f, dxx, errs)
        summaries["quadratic_fit"] = {
            "D0": D0, "a": a, "b": b,
            "stderr_D0": float(stderrs[0]), "stderr_a": float(stderrs[1]),
            "stderr_b": float(stderrs[2]), "eta_max_used": float(fit_max),
            "n_points": len(sel),
        }
    log.info("diffusion-sweep finished in %.1fs", time.time() - t0)
    if cfg.out:
        write_csv(cfg.out, cfg.experiment, cfg.resolved, columns, data, summaries)
    return {"etas": cfg.etas, "estimates": estimates, "columns": columns,
            "data": data, "summaries": summaries}


def _fit_dict(fit):
    d = len(fit.slope)
    names = ["x", "y", "z"][:d] if d <= 3 else [str(i) for i in range(d)]
    out = {"n_points": fit.n_points, "with_intercept": fit.with_intercept}
    for i, nm in enumerate(names):
        out[f"slope_{nm}"] = float(fit.slope[i])
        out[f"intercept_{nm}"] = float(fit.intercept[i])
        out[f"stderr_slope_{nm}"] = float(fit.slope_stderr[i])
        out[f"stderr_intercept_{nm}"] = float(fit.intercept_stderr[i])
        out[f"rss_{nm}"] = float(fit.rss[i])
    return out


def run_experiment(cfg):
    runner = {
        "linear-response": run_linear_response,
        "negative-mobility": run_negative_mobility,
        "resonance-scan": run_resonance_scan,
        "diffusion-sweep": run_diffusion_sweep,
    }[cfg.experiment]
    return runner(cfg)


# ---------------------------------------------------------------------------
# CSV I/O

def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, experiment, resolved, columns, data, summaries=None):
    """Emit the experiment table; byte-identical for identical (config, seed)."""
    lines = [f"# langesim {__version__}", f"# experiment: {experiment}",
             f"# config: {json.dumps(resolved, sort_keys=True)}"]
    for name in sorted(summaries or {}):
        lines.append(f"# {name}: {json.dumps(summaries[name], sort_keys=True)}")
    lines.append(",".join(columns))
    for row in data:
        lines.append(",".join(_fmt(v) for v in row))
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_result_csv(path):
    """Parse a result CSV back into (meta, columns, rows).

    Rows come back as a float array; label columns (as in the verify
    report) switch the array to object dtype with strings kept as-is.
    """
    meta, columns, rows = {}, None, []
    numeric = True
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                body = line[2:]
                if ": " in body:
                    key, val = body.split(": ", 1)
                    try:
                        meta[key] = json.loads(val)
                    except json.JSONDecodeError:
                        meta[key] = val
                continue
            if columns is None:
                columns = line.split(",")
                continue
            if not line:
                continue
            row = []
            for v in line.split(","):
                try:
                    row.append(float(v))
                except ValueError:
                    row.append(v)
                    numeric = False
            rows.append(row)
    return meta, columns, np.array(rows, dtype=float if numeric else object)
