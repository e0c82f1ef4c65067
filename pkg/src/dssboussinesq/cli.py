"""Command-line driver: profile, revise, solve, verify, reconstruct, report.

Runs are configured by a TOML file; every stage writes into one output
directory whose ``manifest.json`` lists each emitted file with its sha256.
"""

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import dss_data as dd
from . import dynamics as dy
from . import fileio
from . import heat_profiles as hp
from . import pressure_reconstruct as prc
from . import profile_revision as pr
from . import solvers as sv
from . import spectral_core as sc
from .errors import (ConfigError, DSSError, IntegrityError, InvariantError, UsageError)


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "data": {"velocity": "azimuthal", "temperature": "inverse-radius", "force": "zero",
             "lambda": None},
    "box": {"L": 16.0, "N": 32},
    "profiles": {"n_s": 16, "tol": 1e-12},
    "revision": {"alpha": None, "R0": None, "q": 10.0 / 3.0, "R_max": None},
    "model": {"epsilon": 0.05, "delta": 0.0},
    "solver": {"mode": "periodic", "tol": 1e-8, "max_iters": 50, "steps_per_period": None,
               "stall_ratio": 0.5},
    "verify": {"n_bumps": 10, "quarter_power": True, "seed": 0},
    "output": {"dir": "run"},
}

REQUIRED = [("data", "lambda")]


def _num(value, path, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number", path)
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{path} must be an integer", path)
        return int(value)
    return float(value)


def validate_config(raw):
    """Merge with defaults and check ranges; errors name the offending key path."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table", "")
    for sect in raw:
        if sect not in DEFAULTS:
            raise ConfigError(f"unknown section {sect!r}", sect)
    cfg = {}
    for sect, defaults in DEFAULTS.items():
        given = raw.get(sect, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{sect} must be a table", sect)
        for key in given:
            if key not in defaults:
                raise ConfigError(f"unknown key {sect}.{key}", f"{sect}.{key}")
        cfg[sect] = dict(defaults, **given)
    for sect, key in REQUIRED:
        if cfg[sect].get(key) is None:
            raise ConfigError(f"missing required key {sect}.{key}", key)
    d = cfg["data"]
    d["lambda"] = _num(d["lambda"], "lambda")
    if not d["lambda"] > 1.0:
        raise ConfigError("lambda must exceed 1", "lambda")
    for key in ("velocity", "temperature"):
        if not isinstance(d[key], str):
            raise ConfigError(f"data.{key} must be a builtin name or a file path", f"data.{key}")
    if d["force"] != "zero":
        raise ConfigError("only data.force = 'zero' is supported from a config file", "data.force")
    b = cfg["box"]
    b["L"] = _num(b["L"], "box.L")
    b["N"] = _num(b["N"], "box.N", int)
    if not b["L"] > 0:
        raise ConfigError("box.L must be positive", "box.L")
    if b["N"] < 8 or b["N"] % 2:
        raise ConfigError("box.N must be an even integer >= 8", "box.N")
    p = cfg["profiles"]
    p["n_s"] = _num(p["n_s"], "profiles.n_s", int)
    p["tol"] = _num(p["tol"], "profiles.tol")
    if p["n_s"] < 1:
        raise ConfigError("profiles.n_s must be positive", "profiles.n_s")
    if not 0 < p["tol"] < 1:
        raise ConfigError("profiles.tol must lie in (0, 1)", "profiles.tol")
    r = cfg["revision"]
    r["q"] = _num(r["q"], "revision.q")
    if not 3.0 < r["q"] < 4.0:
        raise ConfigError("revision.q must lie strictly between 3 and 4", "revision.q")
    for key in ("alpha", "R0", "R_max"):
        if r[key] is not None:
            r[key] = _num(r[key], f"revision.{key}")
            if not r[key] > 0:
                raise ConfigError(f"revision.{key} must be positive", f"revision.{key}")
    m = cfg["model"]
    m["epsilon"] = _num(m["epsilon"], "model.epsilon")
    m["delta"] = _num(m["delta"], "model.delta")
    if not 0.0 < m["epsilon"] < 1.0:
        raise ConfigError("model.epsilon must lie in (0, 1)", "model.epsilon")
    if m["delta"] < 0:
        raise ConfigError("model.delta must be nonnegative", "model.delta")
    s = cfg["solver"]
    if s["mode"] not in ("periodic", "stationary"):
        raise ConfigError("solver.mode must be 'periodic' or 'stationary'", "solver.mode")
    s["tol"] = _num(s["tol"], "solver.tol")
    s["max_iters"] = _num(s["max_iters"], "solver.max_iters", int)
    s["stall_ratio"] = _num(s["stall_ratio"], "solver.stall_ratio")
    if not s["tol"] > 0:
        raise ConfigError("solver.tol must be positive", "solver.tol")
    if s["steps_per_period"] is not None:
        s["steps_per_period"] = _num(s["steps_per_period"], "solver.steps_per_period", int)
        if s["steps_per_period"] < 1 or s["steps_per_period"] % 16:
            raise ConfigError("solver.steps_per_period must be a positive multiple of 16",
                              "solver.steps_per_period")
    v = cfg["verify"]
    v["n_bumps"] = _num(v["n_bumps"], "verify.n_bumps", int)
    v["seed"] = _num(v["seed"], "verify.seed", int)
    if not isinstance(v["quarter_power"], bool):
        raise ConfigError("verify.quarter_power must be true or false", "verify.quarter_power")
    if not isinstance(cfg["output"]["dir"], str):
        raise ConfigError("output.dir must be a string", "output.dir")
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", "") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "") from exc
    return validate_config(raw)


def config_hash(cfg):
    # the output directory does not affect any numbers
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# artifact bookkeeping

class Artifact:
    """Output directory with a manifest of hashed files."""

    def __init__(self, root, cfg=None):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.path = os.path.join(self.root, "manifest.json")
        self.manifest = {"files": {}, "warnings": [], "timings": {}, "stages": []}
        if cfg is not None:
            self.manifest.update(config=cfg, config_hash=config_hash(cfg),
                                 versions=versions())

    @classmethod
    def open(cls, root):
        art = cls(root)
        if not os.path.exists(art.path):
            raise IntegrityError(f"no manifest in {root}")
        with open(art.path) as fh:
            art.manifest = json.load(fh)
        return art

    def file(self, rel):
        full = os.path.join(self.root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def register(self, *rels):
        for rel in rels:
            self.manifest["files"][rel] = fileio.file_hash(os.path.join(self.root, rel))

    def warn(self, msgs):
        for m in msgs:
            if m not in self.manifest["warnings"]:
                self.manifest["warnings"].append(m)

    def save(self):
        fileio.write_json(self.path, self.manifest)

    def check_integrity(self, rels=None):
        for rel, digest in self.manifest["files"].items():
            if rels is not None and rel not in rels:
                continue
            full = os.path.join(self.root, rel)
            if not os.path.exists(full):
                raise IntegrityError(f"missing file {rel}")
            if fileio.file_hash(full) != digest:
                raise IntegrityError(f"hash mismatch for {rel}")

    def has_stage(self, name, cfg):
        return (name in self.manifest.get("stages", [])
                and self.manifest.get("config_hash") == config_hash(cfg))

    def rel(self, full):
        return os.path.relpath(full, self.root)


def versions():
    import scipy
    return {"artifact": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


class StageError(DSSError):
    """A pipeline stage failed; wraps the original error and keeps its exit code."""

    def __init__(self, stage, err):
        super().__init__(f"stage {stage} failed: {err}")
        self.stage = stage
        self.original = err
        self.exit_code = getattr(err, "exit_code", 1)


# ---------------------------------------------------------------------------
# stages

def _field(name, lam, kind):
    if name == "zero":
        return dd.zero_field(kind, lam)
    if os.path.exists(name):
        field = dd.load_annulus_file(name)
    else:
        field = dd.get_field(name, lam)
    if field.kind != kind:
        raise ConfigError(f"field {name!r} is a {field.kind} field, expected {kind}", name)
    if abs(field.lam - lam) > 1e-12:
        raise ConfigError(f"field {name!r} has lambda {field.lam}, config says {lam}", "lambda")
    return field


def _box(cfg, threads=1):
    return sc.BoxSpec(cfg["box"]["L"], cfg["box"]["N"], threads=threads)


def stage_profile(cfg, art, threads=1):
    lam = cfg["data"]["lambda"]
    box = _box(cfg, threads)
    vel = _field(cfg["data"]["velocity"], lam, "vector3")
    tem = _field(cfg["data"]["temperature"], lam, "scalar")
    n_s, tol = cfg["profiles"]["n_s"], cfg["profiles"]["tol"]
    V0 = hp.compute_profile(vel, box, n_s, tol)
    T0 = hp.compute_profile(tem, box, n_s, tol)
    fv, ft = art.file("profiles/V0.bin"), art.file("profiles/Theta0.bin")
    hp.save_profile(fv, V0)
    hp.save_profile(ft, T0)
    cert = profile_certificates(box, V0, T0, vel, tem)
    fc = fileio.write_json(art.file("profiles/certificates.json"), cert)
    art.register(*(art.rel(p) for p in (fv, fv + ".grad", ft, ft + ".grad", fc)))
    return V0, T0, cert


def profile_certificates(box, V0, T0, vel, tem):
    radii = [box.L / 8, box.L / 4, box.L / 2, box.L]
    cert = {}
    for name, prof, field in (("V0", V0, vel), ("Theta0", T0, tem)):
        try:
            lres = hp.L_residual_ratio(box, prof)
        except DSSError as exc:
            lres = str(exc)
        tails = hp.tail_norms(prof, 10.0 / 3.0, radii)
        cert[name] = {"L_residual_ratio": lres,
                      "tail_Lq": {"q": tails.q, "R": list(map(float, tails.radii)),
                                  "mu": list(map(float, tails.values))},
                      "lorentz_3inf": _safe_lorentz(field),
                      "stationary": bool(prof.stationary)}
    return cert


def _safe_lorentz(field):
    try:
        return float(dd.lorentz_3inf_estimate(field))
    except DSSError:
        return None


def load_profiles(art):
    return hp.load_profile(art.file("profiles/V0.bin")), hp.load_profile(art.file("profiles/Theta0.bin"))


def stage_revise(cfg, art, V0, T0):
    rv = cfg["revision"]
    q = rv["q"]
    history = []
    if rv["R0"] is not None:
        R0 = rv["R0"]
    else:
        alpha = rv["alpha"] if rv["alpha"] is not None else pr.default_alpha(V0)
        R0, history = pr.choose_R0(V0, T0, alpha, q, rv["R_max"])
    pair = pr.revise(V0, T0, R0, rv["alpha"], q)
    pair.certificates["choose_R0_history"] = history
    files = pr.save_pair(art.file("revise/pair"), pair)
    art.register(*(art.rel(p) for p in files))
    return pair


def load_pair(art):
    pair = pr.load_pair(art.file("revise/pair"))
    return pair


def build_data(cfg, pair):
    return dy.build_system(pair, epsilon=cfg["model"]["epsilon"], delta=cfg["model"]["delta"])


def stage_solve(cfg, art, pair, tol=None):
    data = build_data(cfg, pair)
    sol_cfg = cfg["solver"]
    tol = sol_cfg["tol"] if tol is None else tol
    steps = sol_cfg["steps_per_period"]
    if sol_cfg["mode"] == "stationary":
        smap = sv.StationaryMap(data)
        sol = sv.solve_stationary(smap, tol, steps_per_period=steps)
        pmap = sv.PoincareMap(data, steps)
    else:
        pmap = sv.PoincareMap(data, steps)
        sol = sv.solve_periodic(pmap, tol, sol_cfg["max_iters"], sol_cfg["stall_ratio"])
    state = pmap.unpack(sol.x)
    led = dy.EnergyLedger(data)
    pmap.flow(sol.x, 1, led)
    man = sv.solve_manifest(sol, art.manifest.get("config_hash", ""), tol)
    man.pop("runtime_s", None)
    man["steps_per_period"] = pmap.steps
    man["constants"] = {k: v for k, v in data.constants.items()}
    man["warnings"] = list(dict.fromkeys(man.get("warnings", []) + led.warnings))
    files = [
        fileio.write_array(art.file("solve/x.bin"), {"m": data.m, "s0": 0.0}, sol.x),
        sc.save_snapshot(art.file("solve/U.bin"), data.box, state.U, 0.0),
        sc.save_snapshot(art.file("solve/Psi.bin"), data.box, state.Psi, 0.0),
        led.write_csv(art.file("solve/ledger.csv")),
        fileio.write_json(art.file("solve/solve_manifest.json"), man),
    ]
    art.register(*(art.rel(p) for p in files))
    art.warn(man["warnings"])
    return data, sol, state


def stage_reports(cfg, art, data, state, V0=None):
    """Pressure, local energy, quarter power and invariant reports for a solved state."""
    rep = invariant_report(cfg, data, state)
    orbit = prc.build_orbit(data, state, n_samples=1 if data.stationary else 16,
                            steps_per_period=cfg["solver"]["steps_per_period"])
    rep["pressure"] = prc.pressure_bound_check(data.box, orbit.P, orbit.U, orbit.V, orbit.P_affine)
    pf = prc.pressure(data.box, prc.deviation_force(data, state))
    rep["pressure"]["spectral_residual"] = prc.pressure_residual(data.box, pf)
    bumps = prc.bump_family(data.box, data.period)[:cfg["verify"]["n_bumps"]]
    rep["local_energy"] = prc.local_energy_report(orbit, bumps)
    rep["dss"] = dss_report(orbit, cfg["verify"]["seed"])
    if cfg["verify"]["quarter_power"] and V0 is not None:
        vel = _field(cfg["data"]["velocity"], cfg["data"]["lambda"], "vector3")
        rep["quarter_power"] = prc.quarter_power_check(orbit, V0, vel)
    return rep, orbit


def invariant_report(cfg, data, state):
    box = data.box
    U, Psi = state.U, state.Psi
    nU = sc.l2_norm(box, U)
    div = sc.l2_norm(box, sc.divergence(box, U))
    out = {"divergence_relative": div / nU if nU > 0 else div}
    out["cancellation"] = dy.cancellation_residuals(state, data)
    out["hardy_ratio"] = float(sc.hardy_ratio(box, U)) if nU > 0 else 0.0
    rm, rt, A, B = dy.energy_residuals(state.admissible(box), data)
    scale = max(1.0, sc.h1_norm(box, U) ** 2, sc.h1_norm(box, Psi) ** 2)
    out["energy_identity"] = {"res_mom": rm, "res_temp": rt, "scale": scale}
    return out


def dss_report(orbit, seed=0, n=8):
    rng = np.random.default_rng(seed)
    R = orbit.certified_radius
    lam = orbit.lam
    worst = 0.0
    for _ in range(n):
        t = float(np.exp(rng.uniform(-1.0, 1.0)))
        x = rng.uniform(-1, 1, (1, 3)) * 0.5 * R * math.sqrt(t) / math.sqrt(3.0)
        a = prc.reconstruct(orbit, x, t)
        b = prc.reconstruct(orbit, lam * x, lam**2 * t)
        scale = max(1e-300, float(np.max(np.abs(a[0]))), float(np.max(np.abs(a[1]))))
        worst = max(worst,
                    float(np.max(np.abs(a[0] - lam * b[0]))) / scale,
                    float(np.max(np.abs(a[1] - lam * b[1]))) / scale,
                    float(np.max(np.abs(a[2] - lam**2 * b[2]))) / max(scale, float(np.max(np.abs(a[2])))))
    return {"max_relative_defect": worst, "samples": n}


HARD = {
    "divergence": lambda r: r["divergence_relative"] <= 1e-10,
    "cancellation": lambda r: max(r["cancellation"].values()) <= 1e-12,
    "hardy": lambda r: r["hardy_ratio"] <= 1.0 + 1e-12,
    "energy_identity": lambda r: max(abs(r["energy_identity"]["res_mom"]),
                                     abs(r["energy_identity"]["res_temp"]))
    <= 1e-6 * r["energy_identity"]["scale"],
    "pressure": lambda r: r["pressure"]["spectral_residual"] <= 1e-12,
    "dss": lambda r: r["dss"]["max_relative_defect"] <= 1e-10,
    "quarter_power": lambda r: ("quarter_power" not in r
                                or r["quarter_power"]["max_relative_difference"] <= 1e-3),
}

MONITORS = {
    "local_energy": lambda r: r["local_energy"]["worst_relative"] >= -1e-4,
}


def classify(rep):
    hard = {k: bool(f(rep)) for k, f in HARD.items()}
    mon = {k: bool(f(rep)) for k, f in MONITORS.items()}
    return hard, mon


# ---------------------------------------------------------------------------
# commands

def _resolve(args, cfg=None):
    if cfg is None:
        if not args.config:
            raise ConfigError("--config is required", "config")
        cfg = load_config(args.config)
    out = args.out or cfg["output"]["dir"]
    return cfg, out


def _open_or_new(out, cfg, resume):
    if resume and os.path.exists(os.path.join(out, "manifest.json")):
        art = Artifact.open(out)
        if art.manifest.get("config_hash") == config_hash(cfg):
            art.check_integrity()
            return art
    return Artifact(out, cfg)


def _run_stage(art, name, fn, *a, **kw):
    t0 = time.time()
    try:
        res = fn(*a, **kw)
    except DSSError as exc:
        art.manifest["failed_stage"] = name
        art.manifest["error"] = str(exc)
        art.save()
        raise StageError(name, exc) from exc
    art.manifest["timings"][name] = time.time() - t0
    if name not in art.manifest["stages"]:
        art.manifest["stages"].append(name)
    art.save()
    return res


def cmd_profile(args):
    cfg, out = _resolve(args)
    art = _open_or_new(out, cfg, args.resume)
    if art.has_stage("profile", cfg):
        print(f"profile: reusing {out}")
        return 0
    _run_stage(art, "profile", stage_profile, cfg, art, args.threads)
    print(f"profile: wrote {out}")
    return 0


def _profiles(cfg, art, threads, resume):
    if resume and art.has_stage("profile", cfg):
        return load_profiles(art)
    V0, T0, _ = _run_stage(art, "profile", stage_profile, cfg, art, threads)
    return V0, T0


def _pair(cfg, art, V0, T0, resume):
    if resume and art.has_stage("revise", cfg):
        return load_pair(art)
    return _run_stage(art, "revise", stage_revise, cfg, art, V0, T0)


def cmd_revise(args):
    cfg, out = _resolve(args)
    art = _open_or_new(out, cfg, args.resume)
    V0, T0 = _profiles(cfg, art, args.threads, args.resume)
    pair = _pair(cfg, art, V0, T0, args.resume)
    print(f"revise: R0={pair.R0:g}, Lq={pair.certificates['Lq_norm']:.4g}")
    return 0


def cmd_solve(args):
    cfg, out = _resolve(args)
    if args.tol is not None:
        cfg["solver"]["tol"] = args.tol
    art = _open_or_new(out, cfg, args.resume)
    V0, T0 = _profiles(cfg, art, args.threads, args.resume)
    if cfg["solver"]["mode"] == "stationary" and not (V0.stationary and T0.stationary):
        err = UsageError("stationary mode needs self-similar (homogeneous) data")
        art.manifest.update(failed_stage="solve", error=str(err))
        art.save()
        raise StageError("solve", err)
    pair = _pair(cfg, art, V0, T0, args.resume)
    data, sol, state = _run_stage(art, "solve", stage_solve, cfg, art, pair, args.tol)
    rep, orbit = _run_stage(art, "reports", stage_reports, cfg, art, data, state, V0)
    _run_stage(art, "reconstruct", write_reconstruction, art.file("reconstruction.csv"), orbit,
               default_points(orbit, 1.0), 1.0)
    art.register("reconstruction.csv")
    hard, mon = classify(rep)
    rep["hard"], rep["monitors"] = hard, mon
    fileio.write_json(art.file("reports/verification.json"), rep)
    art.register("reports/verification.json")
    art.warn([f"monitor {k} flagged" for k, ok in mon.items() if not ok])
    art.save()
    print(f"solve: residual {sol.residual:.3e} after {sol.evaluations} evaluations; "
          f"|x*| = {np.linalg.norm(sol.x):.6g}")
    for k, ok in hard.items():
        print(f"  {'ok  ' if ok else 'FAIL'} {k}")
    for k, ok in mon.items():
        print(f"  {'ok  ' if ok else 'warn'} {k} (monitor)")
    return 0


def _load_solved(art):
    cfg = art.manifest.get("config")
    if cfg is None or "solve" not in art.manifest.get("stages", []):
        raise IntegrityError("artifact has no solve stage")
    pair = load_pair(art)
    V0, _ = load_profiles(art)
    box, U, _ = sc.load_snapshot(art.file("solve/U.bin"))
    _, Psi, _ = sc.load_snapshot(art.file("solve/Psi.bin"))
    data = build_data(cfg, pair)
    return cfg, data, dy.GalerkinState(U, Psi, 0.0), V0


def cmd_verify(args):
    target = args.artifact or args.out
    if not target:
        raise UsageError("verify needs an artifact directory")
    art = Artifact.open(target)
    art.check_integrity()
    cfg, data, state, V0 = _load_solved(art)
    if args.no_quarter_power:
        cfg["verify"]["quarter_power"] = False
    rep, _ = stage_reports(cfg, art, data, state, V0)
    hard, mon = classify(rep)
    rep["hard"], rep["monitors"] = hard, mon
    fileio.write_json(os.path.join(art.root, "reports", "verify_rerun.json"), rep)
    for k, ok in hard.items():
        print(f"{'PASS' if ok else 'FAIL'} {k}")
    for k, ok in mon.items():
        print(f"{'PASS' if ok else 'WARN'} {k} (monitor)")
    if not all(hard.values()):
        raise InvariantError("hard invariants failed: "
                             + ", ".join(k for k, ok in hard.items() if not ok))
    return 0


def _parse_points(text):
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            pts.append([float(v) for v in chunk.split(",")])
    arr = np.array(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise UsageError("points must be given as 'x,y,z;x,y,z;...'")
    return arr


def default_points(orbit, t, n=21):
    R = orbit.certified_radius * math.sqrt(t)
    x = np.linspace(-0.8 * R, 0.8 * R, n)
    return np.stack([x, 0.5 * x, np.full(n, 0.1 * R)], axis=1)


def write_reconstruction(path, orbit, pts, t):
    v, th, p = prc.reconstruct(orbit, pts, t)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("x1,x2,x3,t,v1,v2,v3,theta,p\n")
        for xi, vi, ti, pi in zip(pts, v, th, p):
            fh.write(",".join(repr(float(c)) for c in (*xi, t, *vi, ti, pi)) + "\n")
    return path


def cmd_reconstruct(args):
    target = args.artifact or args.out
    if not target:
        raise UsageError("reconstruct needs an artifact directory")
    art = Artifact.open(target)
    art.check_integrity()
    cfg, data, state, _ = _load_solved(art)
    orbit = prc.build_orbit(data, state, n_samples=1 if data.stationary else 16,
                            steps_per_period=cfg["solver"]["steps_per_period"])
    pts = _parse_points(args.points) if args.points else default_points(orbit, args.t)
    path = args.csv or os.path.join(art.root, "reports", "reconstruction_t.csv")
    write_reconstruction(path, orbit, pts, args.t)
    print(f"reconstruct: wrote {path}")
    return 0


def cmd_report(args):
    target = args.artifact or args.out
    art = Artifact.open(target)
    art.check_integrity()
    m = art.manifest
    summary = {"config_hash": m.get("config_hash"), "stages": m.get("stages"),
               "warnings": m.get("warnings"), "timings": m.get("timings")}
    sm = os.path.join(art.root, "solve", "solve_manifest.json")
    if os.path.exists(sm):
        with open(sm) as fh:
            s = json.load(fh)
        summary["solve"] = {k: s.get(k) for k in ("mode", "converged", "residual",
                                                  "relative_residual", "evaluations", "norm_x",
                                                  "rho", "m")}
    vr = os.path.join(art.root, "reports", "verification.json")
    if os.path.exists(vr):
        with open(vr) as fh:
            v = json.load(fh)
        summary["hard"] = v.get("hard")
        summary["monitors"] = v.get("monitors")
    fileio.write_json(os.path.join(art.root, "reports", "report.json"), summary)
    print(json.dumps(summary, indent=2, default=fileio._jsonable))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dssb", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance override")
    common.add_argument("--resume", action="store_true", help="reuse finished stages")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("profile", parents=[common], help="heat-flow profiles and certificates")
    sub.add_parser("revise", parents=[common], help="cutoff revision and R0 selection")
    sub.add_parser("solve", parents=[common], help="full pipeline through verification")
    p = sub.add_parser("verify", parents=[common], help="re-run invariant checks on an artifact")
    p.add_argument("artifact", nargs="?")
    p.add_argument("--no-quarter-power", action="store_true",
                   help="skip the (slow) physical-space quarter-power check")
    p = sub.add_parser("reconstruct", parents=[common], help="sample v, theta, p at physical points")
    p.add_argument("artifact", nargs="?")
    p.add_argument("--t", type=float, default=1.0, help="physical time")
    p.add_argument("--points", help="'x,y,z;x,y,z;...' (default: a line along x1)")
    p.add_argument("--csv", help="output CSV path")
    p = sub.add_parser("report", parents=[common], help="summarize an artifact")
    p.add_argument("artifact", nargs="?")
    return ap


COMMANDS = {"profile": cmd_profile, "revise": cmd_revise, "solve": cmd_solve,
            "verify": cmd_verify, "reconstruct": cmd_reconstruct, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DSSError as exc:
        where = f" [{exc.stage}]" if isinstance(exc, StageError) else ""
        path = getattr(getattr(exc, "original", exc), "path", None)
        extra = f" (at {path})" if isinstance(getattr(exc, "original", exc), ConfigError) and path else ""
        print(f"error{where}: {exc}{extra}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
