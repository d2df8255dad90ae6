"""Batch experiment runner.

Usage: ``qimps <experiment> --config FILE [--seed N] [--shots N] [--out DIR]
[--override key=value]...`` and ``qimps verify --out DIR``.

Every run writes ``results.csv``, ``diagnostics.json`` and
``resolved_config.json`` into the output directory. Failures write
``error.json`` and exit nonzero; rows finished before the failure are kept.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import algorithms as al
from . import environment as envmod
from . import mps
from . import oracle
from .ansatz import AnsatzSpec, template
from .hamiltonian import LocalHamiltonian, pxp, tfim
from .qsim import NoiseModel

EXPERIMENTS = ("optimize", "evolve", "loschmidt", "poincare", "noise_study", "env_bench")

SCHEMA_VERSION = 1
HEADERS = {
    "optimize": ["lam", "energy", "oracle_energy", "error", "converged", "outer_iterations", "env_residual"],
    "evolve": ["step", "t", "energy", "eta_re", "eta_im", "deficit"],
    "loschmidt": ["step", "t", "rate", "energy"],
    "poincare": ["ic", "phi1_start", "time", "phi1", "phi2", "energy", "kept"],
    "noise_study": ["eta", "lam", "energy", "oracle_energy", "error"],
    "env_bench": ["sample", "trace_distance", "objective", "evaluations", "converged"],
}

DEFAULTS = {
    "experiment": None,
    "model": {"name": "tfim", "lam": 0.5, "J": 1.0, "scale": 1.0},
    "ansatz": {"family": "full_su4", "depth": 1, "n_bond": 1},
    "env_mode": "exact",
    "dt": 0.01,
    "T": 1.0,
    "order": 1,
    "time_sign": -1.0,
    "eta": [0.0],
    "shots": 0,
    "seed": 0,
    "restarts": 3,
    "output_dir": "qimps_out",
    "tolerances": {"tol_env": 1e-10, "tol_outer": 1e-9, "max_outer": 200},
    "quench": {"lam0": 1.0, "lam1": 0.2},
    "poincare": {"theta1": 0.9, "theta2": 5.41, "phi1_start": 0.0, "dphi1": 0.03, "n_fan": 3,
                 "threshold": 0.05},
    "env_bench": {"samples": 50},
    "noise": {"max_outer": 5},
    "checkpoint_every": 0,
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_dotted(cfg: dict, key: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def validate(cfg: dict) -> dict:
    """Check types and ranges; returns the config unchanged or raises ConfigError."""
    if cfg.get("experiment") not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    model = cfg["model"]
    if model.get("name") not in ("tfim", "pxp"):
        raise ConfigError("model.name must be 'tfim' or 'pxp'")
    if model["name"] == "tfim":
        for lam in _as_list(model.get("lam")):
            if not isinstance(lam, (int, float)):
                raise ConfigError("model.lam must be a number or list of numbers")
    if cfg["experiment"] == "poincare" and model["name"] != "pxp":
        raise ConfigError("poincare runs use the pxp model")
    if cfg["env_mode"] not in ("exact", "variational"):
        raise ConfigError("env_mode must be 'exact' or 'variational'")
    for key in ("dt", "T"):
        if not isinstance(cfg[key], (int, float)) or cfg[key] < 0:
            raise ConfigError(f"{key} must be a non-negative number")
    if cfg["order"] not in (1, 2):
        raise ConfigError("order must be 1 or 2")
    if not isinstance(cfg["shots"], int) or cfg["shots"] < 0:
        raise ConfigError("shots must be a non-negative integer")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    for eta in _as_list(cfg["eta"]):
        if not 0 <= float(eta) <= 1:
            raise ConfigError("eta values must lie in [0, 1]")
    AnsatzSpec(cfg["ansatz"]["family"], cfg["ansatz"].get("n_bond", 1) + 1, cfg["ansatz"].get("depth", 1))
    return cfg


def resolve(path: str | None, seed=None, shots=None, out=None, overrides=(), experiment=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    if experiment is not None:
        cfg["experiment"] = experiment
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        _set_dotted(cfg, k, v)
    if seed is not None:
        cfg["seed"] = seed
    if shots is not None:
        cfg["shots"] = shots
    if out is not None:
        cfg["output_dir"] = out
    return validate(cfg)


# --------------------------------------------------------------------------- helpers


def _family(cfg):
    if cfg["model"]["name"] == "pxp":
        return al.pxp_family()
    a = cfg["ansatz"]
    return al.tfim_family(depth=a.get("depth", 1), n_bond=a.get("n_bond", 1), family=a["family"])


def _tfim(cfg, lam) -> LocalHamiltonian:
    return tfim(float(lam), float(cfg["model"].get("J", 1.0)))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("QIMPS_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    """Ordered map over a process pool capped by QIMPS_THREADS."""
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _ground(cfg, lam, noise=None, x0=None, max_outer=None):
    tol = cfg["tolerances"]
    fam = _family(cfg)
    return al.ground_state(_tfim(cfg, lam), fam, x0=x0, tol_outer=tol["tol_outer"],
                           max_outer=max_outer or tol["max_outer"], env_mode=cfg["env_mode"],
                           seed=cfg["seed"], restarts=cfg["restarts"], noise=noise)


# --------------------------------------------------------------------------- experiments


def _optimize_one(args):
    cfg, lam = args
    res = _ground(cfg, lam)
    fam = _family(cfg)
    ref = oracle.oracle_ground_state(_tfim(cfg, lam), D=fam.D, seed=cfg["seed"])[1]
    row = [lam, res.energy, ref, res.energy - ref, res.converged, res.outer_iterations, res.env_residual]
    diag = {"lam": lam, "params": res.params.tolist(), "V_params": None if res.V_params is None
            else np.asarray(res.V_params).tolist(), "V": mps.unitary_to_json(res.V), "trace": res.trace}
    return row, diag


def run_optimize(cfg, rows, diag):
    lams = sorted(float(v) for v in _as_list(cfg["model"]["lam"]))
    for row, d in _map(_optimize_one, [(cfg, lam) for lam in lams]):
        rows.append(row)
        diag.setdefault("runs", []).append(d)


def _initial_state(cfg, fam, H0):
    x0 = cfg.get("x0")
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    tol = cfg["tolerances"]
    res = al.ground_state(H0, fam, env_mode="exact", tol_outer=tol["tol_outer"], max_outer=tol["max_outer"],
                          seed=cfg["seed"], restarts=cfg["restarts"])
    return res.params


def run_evolve(cfg, rows, diag, rates=False):
    fam = _family(cfg)
    q = cfg["quench"]
    H0, H1 = _tfim(cfg, q["lam0"]), _tfim(cfg, q["lam1"])
    x0 = _initial_state(cfg, fam, H0)
    out = Path(cfg["output_dir"])
    traj = al.evolve(fam, x0, H1, cfg["T"], cfg["dt"], order=cfg["order"], env_mode=cfg["env_mode"],
                     time_sign=cfg["time_sign"], checkpoint_every=cfg["checkpoint_every"],
                     checkpoint_path=out / "checkpoint.json")
    for i, t in enumerate(traj.times):
        if rates:
            rows.append([i, t, al.loschmidt_rate(fam, x0, traj.params[i]), traj.energies[i]])
        else:
            deficit = 0.0 if i == 0 else traj.diagnostics[i - 1]["deficit"]
            rows.append([i, t, traj.energies[i], traj.etas[i].real, traj.etas[i].imag, deficit])
    diag["x0"] = x0.tolist()
    diag["final_params"] = traj.params[-1].tolist()
    diag["steps"] = traj.diagnostics
    diag["energies"] = traj.energies.tolist()
    if rates:
        diag["cusps"] = al.find_cusps(traj.times, [r[2] for r in rows])
    errors = [d for d in traj.diagnostics if "error" in d]
    if errors:
        raise RuntimeError(f"time step failed: {errors[0]['error']}")


def _poincare_one(args):
    cfg, k = args
    fam = al.pxp_family()
    H = pxp(float(cfg["model"].get("scale", 1.0)))
    p = cfg["poincare"]
    phi1 = p["phi1_start"] + k * p["dphi1"]
    x = np.array([p["theta1"], phi1, p["theta2"], 0.0])
    phi2 = al.energy_surface_phi(fam, x, 3, H, 0.0)
    if phi2 is None:
        return [], {"ic": k, "skipped": "no point on the energy surface"}
    x[3] = phi2
    traj = al.evolve(fam, x, H, cfg["T"], cfg["dt"], order=cfg["order"], env_mode=cfg["env_mode"],
                     time_sign=cfg["time_sign"])
    cross = al.poincare_section(traj.times, traj.params, (0, p["theta1"]),
                                energy_fn=lambda y: al.exact_energy(fam, y, H), reference=0.0,
                                threshold=p["threshold"])
    pts = al.section_coordinates([c.params for c in cross], (1, 3)) if cross else np.zeros((0, 2))
    rows = [[k, phi1, c.time, pts[i, 0], pts[i, 1], c.energy, c.kept] for i, c in enumerate(cross)]
    return rows, {"ic": k, "x0": x.tolist(), "crossings": len(cross),
                  "max_energy_drift": float(np.max(np.abs(traj.energies - traj.energies[0])))}


def run_poincare(cfg, rows, diag):
    n = int(cfg["poincare"]["n_fan"])
    for r, d in _map(_poincare_one, [(cfg, k) for k in range(n)]):
        rows.extend(r)
        diag.setdefault("initial_conditions", []).append(d)


def run_noise(cfg, rows, diag):
    lams = sorted(float(v) for v in _as_list(cfg["model"]["lam"]))
    etas = sorted(float(v) for v in _as_list(cfg["eta"]))
    fam = _family(cfg)
    for lam in lams:
        H = _tfim(cfg, lam)
        ref = oracle.oracle_ground_state(H, D=fam.D, seed=cfg["seed"])[1]
        clean = _ground(cfg, lam)
        for eta in etas:
            if eta == 0 and cfg["shots"] == 0:
                res = clean
            else:
                noise = NoiseModel(eta) if eta > 0 else None
                res = al.ground_state(H, fam, x0=clean.params, max_outer=cfg["noise"]["max_outer"],
                                      env_mode="exact", seed=cfg["seed"], restarts=0, noise=noise)
            V = al.exact_env_unitary(fam, res.params)
            measured = al.energy_density(fam.unitaries(res.params), V, H, mode="circuit",
                                         noise=NoiseModel(eta) if eta > 0 else None,
                                         shots=cfg["shots"], seed=cfg["seed"])
            rows.append([eta, lam, measured, ref, abs(measured - ref)])
            diag.setdefault("runs", []).append({"eta": eta, "lam": lam, "params": res.params.tolist()})


def run_env_bench(cfg, rows, diag):
    rng = np.random.default_rng(cfg["seed"])
    fam = _family(cfg)
    es = AnsatzSpec("env_general", 2 * fam.n_bond)
    for i in range(int(cfg["env_bench"]["samples"])):
        x = rng.normal(size=fam.n_params) * np.pi
        Us = fam.unitaries(x)
        sol = envmod.solve_environment(Us, es, tol=cfg["tolerances"]["tol_env"], seed=int(rng.integers(2**31)))
        td = mps.trace_distance(sol.r, al._right_env(fam.cell(x)))
        rows.append([i, td, sol.value, sol.evaluations, sol.converged])
    tds = [r[1] for r in rows]
    diag["median_trace_distance"] = float(np.median(tds))
    diag["max_trace_distance"] = float(np.max(tds))


RUNNERS = {
    "optimize": run_optimize,
    "evolve": run_evolve,
    "loschmidt": lambda cfg, rows, diag: run_evolve(cfg, rows, diag, rates=True),
    "poincare": run_poincare,
    "noise_study": run_noise,
    "env_bench": run_env_bench,
}


# --------------------------------------------------------------------------- IO


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return f"{v.real!r},{v.imag!r}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _dump(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o)}")


def run(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "resolved_config.json", cfg)
    exp = cfg["experiment"]
    rows: list = []
    diag: dict = {"schema": f"{exp}/v{SCHEMA_VERSION}", "experiment": exp}
    status = 0
    try:
        RUNNERS[exp](cfg, rows, diag)
    except Exception as exc:
        status = 1
        _dump(out / "error.json", {"error": type(exc).__name__, "message": str(exc),
                                   "traceback": traceback.format_exc(), "rows_written": len(rows)})
    write_csv(out / "results.csv", HEADERS[exp], rows)
    diag["status"] = "ok" if status == 0 else "failed"
    _dump(out / "diagnostics.json", diag)
    return status


# --------------------------------------------------------------------------- verify


def verify(out_dir) -> tuple[bool, list[dict]]:
    """Re-check stored results. Returns (all passed, list of check records)."""
    out = Path(out_dir)
    diag_path = out / "diagnostics.json"
    if not diag_path.exists():
        raise FileNotFoundError(f"no diagnostics.json in {out}")
    diag = json.loads(diag_path.read_text())
    cfg = json.loads((out / "resolved_config.json").read_text())
    checks = []

    def record(name, ok, value):
        checks.append({"check": name, "ok": bool(ok), "value": value})

    exp = diag["experiment"]
    if diag.get("status") != "ok":
        record("run status", False, diag.get("status"))
    if exp == "optimize":
        fam = _family(cfg)
        for run_ in diag.get("runs", []):
            x = np.asarray(run_["params"])
            Us = fam.unitaries(x)
            for U in Us:
                record(f"unitarity lam={run_['lam']}", mps.is_unitary(U), None)
            V = mps.from_json(run_["V"])
            record(f"V unitarity lam={run_['lam']}", mps.is_unitary(V), None)
            if run_.get("V_params") is not None:
                Vp = template(AnsatzSpec("env_general", 2 * fam.n_bond)).unitary(run_["V_params"])
                V = Vp
            resid = envmod.env_objective_dense(Us, V)
            record(f"fixed-point residual lam={run_['lam']}", resid < 1e-8, float(resid))
    elif exp in ("evolve", "loschmidt"):
        E = np.asarray(diag["energies"])
        dt = cfg["dt"]
        steps = max(1, len(E) - 1)
        drift = float(np.max(np.abs(E - E[0])))
        # per-step changes are O(dt^2); allow a generous constant
        bound = 50.0 * dt**2 * steps
        record("energy drift", drift <= bound, {"drift": drift, "bound": bound})
        fam = _family(cfg)
        for U in fam.unitaries(np.asarray(diag["final_params"])):
            record("unitarity final", mps.is_unitary(U), None)
    elif exp == "env_bench":
        record("median trace distance", diag["median_trace_distance"] < 1e-6, diag["median_trace_distance"])
    elif exp == "poincare":
        for ic in diag.get("initial_conditions", []):
            if "max_energy_drift" in ic:
                record(f"energy drift ic={ic['ic']}", ic["max_energy_drift"] < cfg["poincare"]["threshold"],
                       ic["max_energy_drift"])
    if not (out / "results.csv").exists():
        record("results present", False, None)
    return all(c["ok"] for c in checks), checks


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qimps", description="Circuit iMPS experiments")
    p.add_argument("experiment", choices=EXPERIMENTS + ("verify",))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, value parsed as JSON when possible")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.experiment == "verify":
        if not args.out:
            print(json.dumps({"error": "verify needs --out DIR"}))
            return 2
        try:
            ok, checks = verify(args.out)
        except (FileNotFoundError, KeyError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
            return 2
        for c in checks:
            print(f"{'PASS' if c['ok'] else 'FAIL'} {c['check']} {c['value'] if c['value'] is not None else ''}")
        return 0 if ok else 1
    try:
        cfg = resolve(args.config, args.seed, args.shots, args.out, args.override, args.experiment)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 2
    status = run(cfg)
    if status:
        print((Path(cfg["output_dir"]) / "error.json").read_text(), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
