"""Batch experiment runner.

Subcommands: run, validate, presets, report-diff.  Configs are JSON; every
run is deterministic given the config and seed, writes a JSON report plus
CSV tables to the output directory, and exits nonzero when any task
invariant fails.  GAPSTAB_CACHE_DIR enables memoized diagonalizations
(a pure speed-up; results are identical with or without it).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import models
from .hilbert import Operator, SiteSpace, embed
from .interaction import FFunction, Interaction
from .lattice import MetricVolume, box_volume, chain_volume, torus_volume
from .ltqo import GroundData, OmegaFunction, g_symmetric_radius, radius_report
from .quasilocal import SpectralFlow, lr_cone_measure
from .spectra import diagonalize, gap_curve
from .bhm import run_pipeline, uniform_model_audit
from .mps import (cross_overlap_norm, mps_ltqo_bound, preset_family,
                  transfer_spectrum)

TASKS = ("gap-scan", "ltqo-radius", "flow-check", "bhm-certificate",
         "lr-cone", "mps-ltqo", "audit")


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


class ConfigError(ValueError):
    pass


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: dict) -> dict:
    _require(isinstance(cfg, dict), "config must be a JSON object")
    _require("tasks" in cfg and cfg["tasks"], "config needs a non-empty task list")
    for t in cfg["tasks"]:
        _require(t in TASKS, f"unknown task {t!r}; valid: {list(TASKS)}")
    _require("seed" in cfg and isinstance(cfg["seed"], int),
             "an integer seed is mandatory")
    needs_model = set(cfg["tasks"]) - {"mps-ltqo"}
    if needs_model:
        _require("model" in cfg or "interaction_file" in cfg,
                 "config needs a model name or interaction file")
        _require("volume" in cfg, "config needs a volume descriptor")
    if "volume" in cfg:
        v = cfg["volume"]
        _require(v.get("kind") in ("chain", "box", "torus", "toric_edge"),
                 f"unknown volume kind {v.get('kind')!r}")
    if {"flow-check", "bhm-certificate", "gap-scan", "lr-cone", "audit"} & set(cfg["tasks"]):
        _require("perturbation" in cfg, "these tasks need a perturbation spec")
    if "audit" in cfg["tasks"]:
        _require("lengths" in cfg.get("volume", {}),
                 "audit needs volume.lengths (a sequence of chain lengths)")
    return cfg


def build_volume(v: dict, length=None) -> MetricVolume:
    kind = v["kind"]
    if kind == "chain":
        return chain_volume(int(length if length is not None else v["length"]))
    if kind == "box":
        return box_volume(tuple(v["extents"]))
    if kind == "torus":
        return torus_volume(tuple(v["extents"]))
    if kind == "toric_edge":
        return models.toric_volume(*v["extents"])
    raise ConfigError(f"unknown volume kind {kind}")


def load_interaction_file(path, space) -> Interaction:
    """Interaction file: JSON list of {support: [sites], matrix | generator}."""
    with open(path) as fh:
        entries = json.load(fh)
    phi = Interaction(space)
    for ent in entries:
        support = tuple(tuple(s) for s in ent["support"])
        if "matrix" in ent:
            mat = np.array([[complex(re, im) for re, im in row]
                            for row in ent["matrix"]])
        elif ent.get("generator") == "heisenberg":
            xx = np.kron(models.PAULI["X"], models.PAULI["X"])
            yy = np.kron(models.PAULI["Y"], models.PAULI["Y"]).real
            zz = np.kron(models.PAULI["Z"], models.PAULI["Z"])
            mat = (xx + yy + zz).astype(complex)
        elif ent.get("generator") == "ising_zz":
            mat = 0.5 * (np.eye(4) - np.kron(models.PAULI["Z"], models.PAULI["Z"]))
        elif ent.get("generator") == "aklt_projector":
            mat = models.aklt_bond_projector()
        elif "pauli" in ent:
            mat = np.array([[1.0 + 0j]])
            for lab in ent["pauli"]:
                mat = np.kron(mat, models.PAULI[lab])
        else:
            raise ConfigError(f"interaction entry needs matrix/generator: {ent}")
        phi.add(support, mat)
    return phi


def _build_model(cfg, vol):
    if "interaction_file" in cfg:
        space = SiteSpace(vol, int(cfg.get("local_dim", 2)))
        return load_interaction_file(cfg["interaction_file"], space), {"kind": "none"}
    return models.build(cfg["model"], vol)


def _build_pert(cfg, vol, eta):
    p = cfg["perturbation"]
    if "interaction_file" in p:
        return load_interaction_file(p["interaction_file"], eta.space)
    pert, _ = models.build(p["model"], vol, **p.get("params", {}))
    return pert


def _omega_from(cfg) -> OmegaFunction:
    o = cfg.get("omega", {"kind": "zero"})
    kind = o.get("kind", "zero")
    if kind == "zero":
        return OmegaFunction.zero()
    if kind == "step":
        return OmegaFunction.step(o["height"], o["cutoff"])
    if kind == "exponential":
        return OmegaFunction.exponential(o["C"], o["lam"])
    if kind == "tabulated":
        return OmegaFunction.tabulated({int(k): v for k, v in o["values"].items()})
    raise ConfigError(f"unknown omega kind {kind}")


def _region_from(cfg, vol, K=0):
    pol = cfg.get("perturbation", {}).get("region", {"policy": "all"})
    policy = pol.get("policy", "all")
    if policy == "all":
        return vol.sites
    if policy == "interior":
        depth = int(pol.get("depth", 1))
        return tuple(x for x in vol.sites if vol.boundary_distance(x) >= depth)
    raise ConfigError(f"unknown region policy {policy}")


def _kl_for(cfg, vol):
    pol = cfg.get("perturbation", {}).get("region", {})
    if "K" in pol and "L" in pol:
        return int(pol["K"]), int(pol["L"])
    ell = max(vol.diameter(), 1)
    a1 = float(pol.get("alpha1", 0.5))
    a2 = float(pol.get("alpha2", 0.5))
    return int(math.ceil(ell ** a1)), int(math.ceil(ell ** a2))


def _s_grid(cfg):
    g = cfg.get("s_grid", {"max": 0.2, "points": 11})
    return np.linspace(0.0, float(g["max"]), int(g["points"]))


def _f_function(cfg, vol) -> FFunction:
    f = cfg.get("perturbation", {}).get("f_function", {"kind": "polynomial"})
    return FFunction.from_json(f, nu=vol.nu)


# ------------------------------------------------------------------ tasks


def task_gap_scan(cfg, out_dir):
    vol = build_volume(cfg["volume"])
    eta, _ = _build_model(cfg, vol)
    pert = _build_pert(cfg, vol, eta)
    region = _region_from(cfg, vol)
    H0 = eta.local_hamiltonian(vol.sites)
    V = pert.restricted_hamiltonian(vol.sites, region)
    gammas = cfg.get("gamma", [0.5])
    gc = gap_curve(H0, V, _s_grid(cfg), gamma_list=gammas)
    path = os.path.join(out_dir, "gap_scan.csv")
    gc.to_csv(path)
    monotone = bool(np.all(np.diff(gc.gaps) <= 1e-9))
    checks = [
        {"name": "gap_positive", "passed": bool(np.all(gc.gaps > 0)),
         "margin": float(np.min(gc.gaps))},
        {"name": "gap_monotone_nonincreasing", "passed": monotone,
         "margin": float(-np.max(np.diff(gc.gaps))) if len(gc.gaps) > 1 else 0.0},
        {"name": "no_tracking_ambiguity", "passed": not gc.ambiguous_points,
         "margin": 0.0},
    ]
    return {"csv": "gap_scan.csv",
            "s_gamma_empirical": {str(k): v for k, v in gc.s_gamma_empirical.items()},
            "checks": checks}


def task_ltqo_radius(cfg, out_dir):
    vol = build_volume(cfg["volume"])
    eta, sym = _build_model(cfg, vol)
    omega = _omega_from(cfg)
    variant = cfg.get("ltqo", {}).get("variant", "plain")
    rng = np.random.default_rng(cfg["seed"])
    ground = GroundData(eta, vol, kernel_k=int(cfg.get("ltqo", {}).get("kernel_k", 24)))
    if variant == "g_symmetric":
        _require(sym.get("kind") == "Z2_spin_flip",
                 "g_symmetric variant needs a model with a Z2 symmetry")
        us = [np.eye(2), sym["unitary"]]
        radii, witnesses = {}, {}
        for x in vol.sites:
            sr = g_symmetric_radius(eta, vol, us, omega, x, ground=ground, rng=rng)
            radii[x] = sr.radius
            if sr.witness:
                witnesses[x] = sr.witness
        from .ltqo import RadiusReport
        rep = RadiusReport(radii, "g_symmetric", omega.to_json(), True, witnesses)
    else:
        rep = radius_report(eta, vol, omega, ground=ground, rng=rng)
    path = os.path.join(out_dir, f"ltqo_radius_{variant}.json")
    with open(path, "w") as fh:
        fh.write(rep.to_json())
    lips = rep.lipschitz_violations(vol)
    target = cfg.get("ltqo", {}).get("min_radius")
    checks = [{"name": "lipschitz", "passed": not lips, "margin": 0.0}]
    if target is not None:
        worst = min(rep.radii.values())
        checks.append({"name": "radius_lower_bound",
                       "passed": bool(worst >= target),
                       "margin": float(worst - target)})
    return {"json": os.path.basename(path),
            "radii": [[list(x), int(r)] for x, r in sorted(rep.radii.items())],
            "checks": checks}


def task_flow_check(cfg, out_dir):
    vol = build_volume(cfg["volume"])
    eta, _ = _build_model(cfg, vol)
    pert = _build_pert(cfg, vol, eta)
    region = _region_from(cfg, vol)
    H0 = eta.local_hamiltonian(vol.sites)
    V = pert.restricted_hamiltonian(vol.sites, region)
    gamma = min(cfg.get("gamma", [0.5]))
    flow = SpectralFlow(H0, V, gamma, _s_grid(cfg),
                        s_steps=int(cfg.get("s_steps", 200)))
    rows = flow.checks()
    path = os.path.join(out_dir, "flow_checks.json")
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
    worst_p = max(r["projector_error"] for r in rows)
    worst_u = max(r["unitarity_error"] for r in rows)
    # sorted-spectrum equality of the transported Hamiltonian
    s_last = float(flow.s_grid[-1])
    hs = H0.dense() + s_last * flow.V
    ev1 = np.sort(np.linalg.eigvalsh(flow.alpha(hs, s_last)))
    ev2 = np.sort(np.linalg.eigvalsh(hs))
    spec_err = float(np.max(np.abs(ev1 - ev2)))
    checks = [
        {"name": "projector_transport", "passed": worst_p <= 1e-6,
         "margin": 1e-6 - worst_p},
        {"name": "unitarity", "passed": worst_u <= 1e-10, "margin": 1e-10 - worst_u},
        {"name": "spectrum_equality", "passed": spec_err <= 1e-8,
         "margin": 1e-8 - spec_err},
    ]
    return {"json": "flow_checks.json", "checks": checks}


def task_bhm_certificate(cfg, out_dir, vol=None, length=None):
    if vol is None:
        vol = build_volume(cfg["volume"], length=length)
    eta, _ = _build_model(cfg, vol)
    pert = _build_pert(cfg, vol, eta)
    K, L = _kl_for(cfg, vol)
    region = _region_from(cfg, vol)
    omega = _omega_from(cfg)
    gamma = min(cfg.get("gamma", [0.5]))
    rng = np.random.default_rng(cfg["seed"])
    res = run_pipeline(eta, pert, vol, gamma, _s_grid(cfg), K, L, omega,
                       pert_region=region, keep_terms=False,
                       n_form_states=int(cfg.get("form_states", 1000)), rng=rng)
    env_path = os.path.join(out_dir, f"envelope_G1_L{len(vol)}.csv")
    res.step1.envelope.to_csv(env_path)
    tol = 1e-8
    worst_delta = max((d - s * res.delta
                       for s, d in zip(res.s_grid, res.step2.delta_norms)),
                      default=0.0)
    worst_e = max((e - s * res.epsilon
                   for s, e in zip(res.s_grid, res.step2.e_norms)), default=0.0)
    checks = [
        {"name": "step1_reassembly", "passed": max(res.step1.residuals) <= tol,
         "margin": tol - max(res.step1.residuals)},
        {"name": "phi1_P0_commutators",
         "passed": max(res.step1.commutator_errors) <= tol,
         "margin": tol - max(res.step1.commutator_errors)},
        {"name": "step2_reassembly",
         "passed": max(res.step2.reassembly_errors) <= tol,
         "margin": tol - max(res.step2.reassembly_errors)},
        {"name": "theta_annihilation",
         "passed": (max(res.step2.annihilation_errors.values())
                    if res.step2.annihilation_errors else 0.0) <= tol,
         "margin": tol - (max(res.step2.annihilation_errors.values())
                          if res.step2.annihilation_errors else 0.0)},
        {"name": "delta_bound", "passed": worst_delta <= 1e-10,
         "margin": -worst_delta},
        {"name": "epsilon_bound", "passed": worst_e <= 1e-10, "margin": -worst_e},
        {"name": "form_bound_sweep",
         "passed": res.form_bound["violations"] == 0,
         "margin": float(res.form_bound["worst_margin"])},
        {"name": "certificate_dominated",
         "passed": bool(res.certificate["cross_check"]["dominated"]),
         "margin": 0.0},
    ]
    summary = {
        "volume_sites": len(vol),
        "s_grid": [float(s) for s in res.s_grid],
        "delta": res.delta, "epsilon": res.epsilon, "beta": res.beta,
        "gamma_volume": res.gamma_volume,
        "s_cert": res.certificate["s_cert"],
        "gap_curve_ref": "gap_scan.csv",
        "envelope_ref": os.path.basename(env_path),
        "k2_commutant_identity_error": res.k2_identity_error,
        "checks": checks,
    }
    return summary


def task_lr_cone(cfg, out_dir):
    from .quasilocal import lr_cone_sweep
    vol = build_volume(cfg["volume"])
    eta, _ = _build_model(cfg, vol)
    pert = _build_pert(cfg, vol, eta)
    strength = float(cfg.get("lr", {}).get("field", 0.3))
    for key, term in pert.items():
        eta.add(key, strength * term.dense())
    F = _f_function(cfg, vol)
    sites = vol.sites
    x = sites[0]
    a_op = Operator(models.PAULI["X"].copy(), (x,), eta.space)
    t_grid = np.linspace(0.05, float(cfg.get("lr", {}).get("t_max", 1.0)),
                         int(cfg.get("lr", {}).get("t_points", 20)))
    b_specs = [(Operator(models.PAULI["Z"].copy(), (y,), eta.space), (y,))
               for y in sites[1:]]
    out = lr_cone_sweep(eta, vol, F, a_op, (x,), b_specs, t_grid)
    rows_all = out["rows"]
    violations = sum(1 for r in rows_all if r["measured"] > r["bound"] + 1e-12)
    path = os.path.join(out_dir, "lr_cone.csv")
    with open(path, "w") as fh:
        fh.write("distance,t,measured,bound\n")
        for r in rows_all:
            fh.write(f"{r['distance']},{r['t']!r},{r['measured']!r},{r['bound']!r}\n")
    checks = [{"name": "lr_bound_holds", "passed": violations == 0,
               "margin": float(min(r["bound"] - r["measured"] for r in rows_all))}]
    return {"csv": "lr_cone.csv", "velocity_bound": out["velocity_bound"],
            "grid": [len(t_grid), len(sites) - 1], "checks": checks}


def task_mps_ltqo(cfg, out_dir):
    name = cfg.get("mps", {}).get("family", "aklt")
    fam = preset_family(name)
    L = int(cfg.get("mps", {}).get("length", 8))
    evals, lam, c = transfer_spectrum(fam)
    margins = []
    d = fam.d
    center = (L + 1) // 2
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            for probe in ([e + e.conj().T] + ([-1j * (e - e.conj().T)] if i < j else [])):
                if np.linalg.norm(probe, 2) < 1e-12:
                    continue
                lhs, rhs, margin = mps_ltqo_bound(fam, L, (center, center), probe)
                margins.append(margin)
    self_overlap = cross_overlap_norm(fam, fam)
    checks = [
        {"name": "ltqo_margins_nonnegative", "passed": bool(min(margins) >= 0),
         "margin": float(min(margins))},
        {"name": "self_overlap_is_one",
         "passed": abs(self_overlap - 1.0) <= 1e-8,
         "margin": 1e-8 - abs(self_overlap - 1.0)},
    ]
    return {"family": name, "lambda": lam, "c": c,
            "transfer_eigenvalues": sorted(float(e.real) for e in evals),
            "checks": checks}


def task_audit(cfg, out_dir):
    lengths = cfg["volume"]["lengths"]
    runs = []
    for L in lengths:
        summary = task_bhm_certificate(cfg, out_dir, length=L)
        runs.append({"n": L, "delta": summary["delta"],
                     "epsilon": summary["epsilon"], "beta": summary["beta"],
                     "s_cert": summary["s_cert"],
                     "sub_checks": summary["checks"]})
    audit = uniform_model_audit(runs)
    ok_subs = all(c["passed"] for r in runs for c in r["sub_checks"])
    checks = [{"name": "per_volume_invariants", "passed": ok_subs, "margin": 0.0}]
    if cfg.get("audit", {}).get("expect_decreasing", False):
        checks.append({"name": "delta_epsilon_negative_slope",
                       "passed": audit["delta_plus_epsilon_slope"] < 0,
                       "margin": -audit["delta_plus_epsilon_slope"]})
    audit["table"] = [{k: v for k, v in r.items() if k != "sub_checks"}
                      for r in audit["table"]]
    return {"audit": audit, "runs": runs, "checks": checks}


_TASK_FN = {
    "gap-scan": task_gap_scan,
    "ltqo-radius": task_ltqo_radius,
    "flow-check": task_flow_check,
    "bhm-certificate": task_bhm_certificate,
    "lr-cone": task_lr_cone,
    "mps-ltqo": task_mps_ltqo,
    "audit": task_audit,
}


def run_config(cfg, out_dir, workers=1):
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    cache = os.environ.get("GAPSTAB_CACHE_DIR")
    if cache:
        from . import spectra
        os.makedirs(cache, exist_ok=True)
        spectra.CACHE_DIR = cache
    tasks = list(cfg["tasks"])
    results = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {t: pool.submit(_TASK_FN[t], cfg, out_dir) for t in tasks}
            for t in tasks:
                results[t] = futs[t].result()
    else:
        for t in tasks:
            results[t] = _TASK_FN[t](cfg, out_dir)
    all_passed = all(c["passed"] for r in results.values() for c in r["checks"])
    report = {
        "config": cfg,
        "results": {t: results[t] for t in sorted(results)},
        "all_passed": all_passed,
    }
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=_json_default)
    return report


def report_diff(path_a, path_b):
    with open(path_a) as fh:
        a = fh.read()
    with open(path_b) as fh:
        b = fh.read()
    if a == b:
        return []
    ja, jb = json.loads(a), json.loads(b)
    diffs = []

    def walk(x, y, prefix):
        if type(x) is not type(y):
            diffs.append(f"{prefix}: type {type(x).__name__} != {type(y).__name__}")
        elif isinstance(x, dict):
            for k in sorted(set(x) | set(y)):
                if k not in x or k not in y:
                    diffs.append(f"{prefix}.{k}: missing on one side")
                else:
                    walk(x[k], y[k], f"{prefix}.{k}")
        elif isinstance(x, list):
            if len(x) != len(y):
                diffs.append(f"{prefix}: lengths {len(x)} != {len(y)}")
            for i, (xi, yi) in enumerate(zip(x, y)):
                walk(xi, yi, f"{prefix}[{i}]")
        elif x != y:
            diffs.append(f"{prefix}: {x!r} != {y!r}")

    walk(ja, jb, "$")
    return diffs or ["files differ (non-JSON or formatting)"]


def main(argv=None):
    parser = argparse.ArgumentParser(prog="gapstab",
                                     description="gap-stability experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the tasks in a config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--dense-cap", type=int, default=None)
    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)
    sub.add_parser("presets", help="list built-in model and MPS presets")
    p_diff = sub.add_parser("report-diff", help="compare two report files")
    p_diff.add_argument("a")
    p_diff.add_argument("b")
    args = parser.parse_args(argv)

    if args.command == "presets":
        out = {"models": models.preset_names(),
               "mps": ["aklt", "diluted_ferro", "ghz_components", "cluster",
                       "product_up"]}
        print(json.dumps(out, indent=1, sort_keys=True))
        return 0
    if args.command == "validate":
        try:
            with open(args.config) as fh:
                validate_config(json.load(fh))
        except (ConfigError, json.JSONDecodeError, OSError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 1
        print("config ok")
        return 0
    if args.command == "report-diff":
        diffs = report_diff(args.a, args.b)
        for d in diffs:
            print(d)
        return 0 if not diffs else 1
    # run
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.dense_cap is not None:
            from . import hilbert
            hilbert.DENSE_CAP = args.dense_cap
        report = run_config(cfg, args.out, workers=args.workers)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failed = [f"{t}:{c['name']}" for t, r in report["results"].items()
              for c in r["checks"] if not c["passed"]]
    if failed:
        print("FAILED checks: " + ", ".join(sorted(failed)), file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
