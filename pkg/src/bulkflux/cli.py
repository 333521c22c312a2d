"""Command-line interface.

    bulkflux distance  --config cfg.json [--kappa K --nt N --nx N --tol T --max-iter M --out DIR]
    bulkflux geodesic  --config cfg.json ...
    bulkflux sweep     --config cfg.json [--jobs J] ...
    bulkflux certify   --config cfg.json ...
    bulkflux gradflow  --config cfg.json ...
    bulkflux oracle    dirac --R 1 --kappa 1

Settings are resolved as flags over the JSON config over the defaults.
Every run that writes files also writes ``manifest.json`` listing each
artifact with its SHA-256.  Exit codes: 0 ok, 1 not converged, 2 input error,
3 numerical error; errors are reported as JSON on stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import oracles
from .action import NumericalError
from .certify import dual_objective, feasibilize, hj_residuals
from .geometry import Geometry, GeometryError
from .gradflow import EnergySpec, FlowError, chain_rule_check, gibbs_measure, run
from .measures import MeasureError, MeasurePair, load, make_pair, mollified_dirac, to_json
from .solver import SolverConfig, geodesic_frames, solve_geodesic

log = logging.getLogger(__name__)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "geometry": {"kind": "interval", "nx": 32, "lx": 1.0},
    "solver": {"nt": 32, "kappa": 1.0, "stop_tol": 1e-6, "max_interior": 100, "method": "interior"},
    "kappas": [0.05, 0.2, 1.0, 5.0, 25.0],
    "frames": [0.0, 0.25, 0.5, 0.75, 1.0],
    "output": "bulkflux_out",
    "jobs": 1,
}


class InputError(ValueError):
    """Invalid configuration or command-line input."""


# -- configuration -------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    geometry: Geometry
    start: MeasurePair | None
    end: MeasurePair | None
    solver: SolverConfig
    kappas: list
    frames: list
    output: Path
    jobs: int = 1
    raw: dict = field(default_factory=dict)


def builtin_config(name: str) -> Path:
    """Path of a shipped config (``dirac_benchmark``, ``compatible_sweep``, ``gibbs_gradflow``)."""
    p = resources.files("bulkflux") / "data" / f"{name}.json"
    if not p.is_file():
        raise InputError(f"no shipped config named {name!r}")
    return Path(str(p))


def read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = builtin_config(str(path))
    try:
        with open(p) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    data.setdefault("_base", str(p.parent))
    return data


def resolve(args) -> dict:
    """defaults < config file < command-line flags."""
    cfg = _merge(DEFAULTS, read_config(getattr(args, "config", None)))
    if getattr(args, "kappa", None) is not None:
        cfg["solver"]["kappa"] = args.kappa
        cfg["kappas"] = [args.kappa] if getattr(args, "command", "") == "sweep" else cfg["kappas"]
    if getattr(args, "nt", None) is not None:
        cfg["solver"]["nt"] = args.nt
    if getattr(args, "nx", None) is not None:
        cfg["geometry"]["nx"] = args.nx
    if getattr(args, "tol", None) is not None:
        cfg["solver"]["stop_tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        cfg["solver"]["max_interior"] = args.max_iter
        cfg["solver"]["max_outer"] = args.max_iter
    if getattr(args, "out", None) is not None:
        cfg["output"] = args.out
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    return cfg


def _potential(geom: Geometry, spec, where: str) -> np.ndarray | float:
    """A potential from a number, a list of values or ``{"type": "cos"|"sin"|"linear", ...}``."""
    if spec is None:
        return 0.0
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if not isinstance(spec, dict):
        raise InputError(f"bad potential spec {spec!r}")
    if where == "interior":
        x = geom.cell_centers()[..., int(spec.get("axis", 0))]
    else:
        x = geom.boundary_points()
    a = float(spec.get("amplitude", 1.0))
    k = float(spec.get("wavenumber", 1.0))
    kind = spec.get("type")
    if kind == "cos":
        return a * np.cos(2 * np.pi * k * x / geom.lx)
    if kind == "sin":
        return a * np.sin(2 * np.pi * k * x / geom.lx)
    if kind == "linear":
        return a * x
    raise InputError(f"unknown potential type {kind!r}")


def build_measure(geom: Geometry, spec, base: str = ".") -> MeasurePair:
    """Endpoint from a file path or from generator components.

    ``{"interior": [...], "boundary": [...], "normalize": false}`` where every
    component is ``{"type": "bump", "location": [...], "width": w | "width_cells": c, "mass": m}``,
    ``{"type": "uniform", "mass": m}``, ``{"type": "atom", "location": x, "mass": m}``
    (boundary only) or ``{"type": "values", "values": [...]}``.
    """
    if isinstance(spec, str) or (isinstance(spec, dict) and "file" in spec):
        path = Path(spec if isinstance(spec, str) else spec["file"])
        if not path.is_absolute():
            path = Path(base) / path
        if not path.exists():
            raise InputError(f"measure file {path} not found")
        rho = load(path)
        if rho.geometry != geom:
            raise InputError(f"measure file {path} lives on {rho.geometry}, expected {geom}")
        return rho
    if not isinstance(spec, dict):
        raise InputError(f"bad measure spec {spec!r}")
    om = np.zeros(geom.cell_shape)
    ga = np.zeros(geom.n_boundary)
    cell = geom.dx if geom.dim == 1 else min(geom.dx, geom.dy)
    for side in ("interior", "boundary"):
        for comp in spec.get(side, []):
            kind = comp.get("type", "bump")
            mass = float(comp.get("mass", 1.0))
            if kind == "uniform":
                if side == "interior":
                    om += mass / (geom.n_cells * geom.cell_volume)
                else:
                    ga += mass / (geom.n_boundary * geom.boundary_length)
            elif kind == "values":
                vals = np.asarray(comp["values"], dtype=float)
                target = om if side == "interior" else ga
                if vals.size != target.size:
                    raise InputError(f"{side} values need {target.size} entries")
                target += vals.reshape(target.shape)
            elif kind in ("bump", "atom"):
                width = comp.get("width")
                if width is None and "width_cells" in comp:
                    width = float(comp["width_cells"]) * (cell if side == "interior" else geom.boundary_length)
                loc = comp.get("location")
                if side == "interior":
                    om += mollified_dirac(geom, loc, mass, width)
                else:
                    ga += mollified_dirac(geom, loc, mass, width, side="boundary")
            else:
                raise InputError(f"unknown component type {kind!r}")
    return make_pair(geom, om, ga, normalize=bool(spec.get("normalize", False)))


def experiment(cfg: dict, need_endpoints: bool = True) -> ExperimentConfig:
    geom = Geometry.from_dict(cfg["geometry"])
    base = cfg.get("_base", ".")
    start = end = None
    if need_endpoints:
        if "start" not in cfg or "end" not in cfg:
            raise InputError("config needs 'start' and 'end' measures")
        start = build_measure(geom, cfg["start"], base)
        end = build_measure(geom, cfg["end"], base)
    s = dict(cfg["solver"])
    known = set(SolverConfig.__dataclass_fields__)
    unknown = set(s) - known
    if unknown:
        raise InputError(f"unknown solver settings {sorted(unknown)}")
    try:
        solver = SolverConfig(**s)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    kappas = [float(k) for k in cfg.get("kappas", [])]
    if any(not k > 0 for k in kappas):
        raise InputError("kappa values must be positive")
    frames = [float(t) for t in cfg.get("frames", [])]
    if any(not 0 <= t <= 1 for t in frames):
        raise InputError("frame times must lie in [0, 1]")
    jobs = int(cfg.get("jobs", 1))
    if jobs < 1:
        raise InputError("jobs must be positive")
    return ExperimentConfig(geom, start, end, solver, kappas, frames, Path(cfg["output"]), jobs, cfg)


# -- output ----------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Writer:
    """Collects artifacts of one run and writes the manifest."""

    def __init__(self, out: Path, command: str, config: dict):
        self.out = Path(out)
        self.command = command
        self.config = config
        self.files = []
        self.t0 = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        with open(p, "w") as fh:
            json.dump(_clean(data), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p

    def csv(self, name: str, rows: list, columns: list) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                            for c in columns])
        return p

    def manifest(self, extra: dict | None = None) -> Path:
        arts = []
        for name in sorted(set(self.files)):
            data = (self.out / name).read_bytes()
            arts.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        man = {"command": self.command, "version": __version__, "config": self.config,
               "artifacts": arts, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
               "seconds": round(time.perf_counter() - self.t0, 3)}
        if extra:
            man.update(extra)
        p = self.out / "manifest.json"
        with open(p, "w") as fh:
            json.dump(_clean(man), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p


def _result_record(res) -> dict:
    return {"primal": res.primal_value, "dual": res.dual_value,
            "gap": res.primal_value - res.dual_value, "iterations": res.iterations,
            "converged": res.converged, "feasibility": res.feasibility, "kappa": res.kappa,
            "flux_tv": res.flux_tv}


def _reference(cfg: dict) -> dict | None:
    ref = cfg.get("reference")
    if not ref:
        return None
    if ref.get("oracle") == "dirac":
        return {"oracle": "dirac", "R": ref["R"], "kappa": ref["kappa"],
                "value": oracles.dirac_cost(float(ref["R"]), float(ref["kappa"]))}
    raise InputError(f"unknown reference oracle {ref.get('oracle')!r}")


# -- commands --------------------------------------------------------------------

def cmd_distance(args) -> int:
    cfg = resolve(args)
    exp = experiment(cfg)
    ref = _reference(cfg)
    res = solve_geodesic(exp.start, exp.end, exp.solver)
    rec = _result_record(res)
    if ref:
        rec["reference"] = ref
        rec["relative_error"] = (res.primal_value - ref["value"]) / ref["value"]
    w = Writer(exp.output, "distance", cfg)
    w.json("result.json", rec)
    w.manifest()
    print(json.dumps(_clean(rec), sort_keys=True))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_geodesic(args) -> int:
    from . import plotting
    cfg = resolve(args)
    exp = experiment(cfg)
    res = solve_geodesic(exp.start, exp.end, exp.solver)
    frames = geodesic_frames(res, exp.frames)
    w = Writer(exp.output, "geodesic", cfg)
    rec = _result_record(res)
    ref = _reference(cfg)
    if ref:
        rec["reference"] = ref
    w.json("result.json", rec)
    for fr in frames:
        w.json(f"frames/frame_{fr.node:04d}.json", dict(to_json(fr.rho), t=fr.t, node=fr.node,
                                                        flagged=fr.flagged, mass_error=fr.mass_error))
    g = exp.geometry
    rows = []
    for fr in frames:
        c = g.cell_centers().reshape(g.n_cells, g.dim)
        for xy, v in zip(c, fr.rho.omega.ravel()):
            rows.append({"t": fr.t, "region": "interior", "x": float(xy[0]),
                         "y": float(xy[1]) if g.dim == 2 else 0.0, "density": float(v)})
        for x, v in zip(g.boundary_points(), fr.rho.gamma):
            rows.append({"t": fr.t, "region": "boundary", "x": float(x), "y": 0.0, "density": float(v)})
    w.csv("frames.csv", rows, ["t", "region", "x", "y", "density"])
    w.csv("action_slices.csv", [{"slice": k, "t": (k + 0.5) / len(res.action_slices), "action": float(a)}
                                for k, a in enumerate(res.action_slices)], ["slice", "t", "action"])
    plotting.plot_frames(frames, w.path("frames.png"))
    plotting.plot_action_slices(res.action_slices, w.path("action_slices.png"))
    w.manifest()
    print(json.dumps(_clean(rec), sort_keys=True))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _sweep_point(payload):
    start, end, solver = payload
    res = solve_geodesic(start, end, solver)
    return _result_record(res)


def cmd_sweep(args) -> int:
    from . import plotting
    cfg = resolve(args)
    exp = experiment(cfg)
    kappas = sorted(exp.kappas)
    if not kappas:
        raise InputError("sweep needs a non-empty 'kappas' list")
    tasks = [(exp.start, exp.end, replace(exp.solver, kappa=k)) for k in kappas]
    if exp.jobs > 1:
        with ProcessPoolExecutor(max_workers=exp.jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    prim = [r["primal"] for r in rows]
    slack = 2 * exp.solver.stop_tol * max(abs(p) for p in prim)
    monotone = all(b >= a - slack for a, b in zip(prim, prim[1:]))
    w = Writer(exp.output, "sweep", cfg)
    cols = ["kappa", "primal", "dual", "gap", "iterations", "converged", "feasibility", "flux_tv"]
    w.csv("sweep.csv", rows, cols)
    summary = {"points": rows, "monotone_primal": monotone}
    w.json("sweep.json", summary)
    plotting.plot_sweep(rows, w.path("sweep.png"))
    w.manifest()
    print(json.dumps(_clean({"kappas": kappas, "primal": prim, "monotone_primal": monotone})))
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def cmd_certify(args) -> int:
    cfg = resolve(args)
    exp = experiment(cfg)
    res = solve_geodesic(exp.start, exp.end, exp.solver)
    kappa = exp.solver.kappa
    # route 1: exact dual point of the discrete problem (solver multipliers)
    # route 2: finite-difference Hamilton-Jacobi subsolution from the same potentials
    report = hj_residuals(res.potentials, res.path, kappa)
    feas, info = feasibilize(res.potentials, exp.geometry, kappa, return_info=True)
    fd_value = dual_objective(feas, exp.start, exp.end)
    rec = _result_record(res)
    rec.update({"discrete_dual": res.dual_value,
                "hj_dual": fd_value,
                "hj_positive_part": report.positive_part,
                "hj_support_violation": report.support_violation,
                "hj_max_violation_before": report.max_violation,
                "hj_max_violation_after": info.max_violation,
                "hj_shift": info.closure,
                "weak_duality": res.dual_value <= res.primal_value})
    w = Writer(exp.output, "certify", cfg)
    w.json("certificate.json", rec)
    w.json("potentials.json", {"phi": res.potentials.phi, "psi": res.potentials.psi,
                               "phi_feasible": feas.phi, "psi_feasible": feas.psi})
    w.manifest()
    print(json.dumps(_clean(rec), sort_keys=True))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_gradflow(args) -> int:
    from . import plotting
    cfg = resolve(args)
    exp = experiment(cfg, need_endpoints=False)
    gcfg = cfg.get("gradflow")
    if not isinstance(gcfg, dict):
        raise InputError("config needs a 'gradflow' section")
    geom = exp.geometry
    e = gcfg.get("energy", {})
    try:
        spec = EnergySpec(e.get("kind", "boltzmann"), _potential(geom, e.get("V_interior"), "interior"),
                          _potential(geom, e.get("V_boundary"), "boundary"),
                          float(e.get("m_interior", 2.0)), float(e.get("m_boundary", 2.0)))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    init = gcfg.get("initial", "gibbs")
    if init == "gibbs":
        rho = gibbs_measure(geom, spec.V_interior, spec.V_boundary)
    else:
        rho = build_measure(geom, init, cfg.get("_base", "."))
    kappa = float(cfg["solver"]["kappa"] if getattr(args, "kappa", None) is not None
                  else gcfg.get("kappa", cfg["solver"]["kappa"]))
    T = float(gcfg.get("T", 0.1))
    tau = float(gcfg.get("tau", 1e-4))
    if not (kappa > 0 and T >= 0 and tau > 0):
        raise InputError("need kappa > 0, T >= 0 and tau > 0")
    traj = run(rho, spec, kappa, T, tau, record_every=int(gcfg.get("record_every", 10)),
               keep_states=int(gcfg.get("frames", 5)))
    energies = np.asarray(traj.energies)
    scale = max(1.0, float(np.max(np.abs(energies))))
    rec = {"kappa": kappa, "T": T, "tau": tau, "steps": traj.steps, "rejected": traj.rejected,
           "energy_initial": traj.energies[0], "energy_final": traj.energies[-1],
           "energy_monotone": bool(np.all(np.diff(energies) <= 1e-12 * scale)),
           "max_mass_drift": max(traj.mass_drift)}
    if gcfg.get("chain_rule", False):
        from .gradflow import FlowState, cfl_bound
        st = FlowState.from_pair(rho, spec)
        b = cfl_bound(st, spec, kappa)
        chk = chain_rule_check(rho, spec, kappa, [b * 2.0 ** -k for k in range(4)])
        rec["chain_rule_orders"] = chk["orders"]
    w = Writer(exp.output, "gradflow", cfg)
    w.json("summary.json", rec)
    w.csv("energy.csv", traj.as_rows(), ["time", "energy", "mass", "mass_drift"])
    for k, st in enumerate(traj.states):
        w.json(f"frames/state_{k:03d}.json", dict(to_json(st.rho), time=st.time, energy=st.energy))
    plotting.plot_energy(traj, w.path("energy.png"))
    plotting.plot_flow_states(traj.states, w.path("states.png"))
    w.manifest()
    print(json.dumps(_clean(rec), sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    which = args.which
    if which == "dirac":
        R, kappa = _need(args, "R"), _need(args, "kappa")
        rec = {"oracle": "dirac", "R": R, "kappa": kappa, "alpha": oracles._alpha(R, kappa) if R > 0 else 2.0,
               "value": oracles.dirac_cost(R, kappa)}
        if args.t is not None:
            fr = oracles.dirac_frame(R, kappa, args.t)
            rec.update(t=args.t, boundary_mass=fr.boundary_mass, interior_mass=fr.interior_mass,
                       flux=fr.flux, atom=fr.atom)
    elif which == "fisher-rao":
        m0, m1 = _need(args, "m0"), _need(args, "m1")
        kappa = args.kappa if args.kappa is not None else 1.0
        rec = {"oracle": "fisher-rao", "m0": m0, "m1": m1, "kappa": kappa,
               "value": oracles.fisher_rao_cost(m0, m1, kappa)}
    elif which in ("wasserstein", "bounded-lipschitz"):
        cfg = resolve(args)
        exp = experiment(cfg)
        rec = {"oracle": which}
        if which == "wasserstein":
            if exp.geometry.kind != "interval":
                raise InputError("the quantile oracle needs an interval geometry")
            for part in ("total", "interior", "boundary"):
                a = oracles.line_measure(exp.start, part)
                b = oracles.line_measure(exp.end, part)
                rec[part] = (oracles.wasserstein_1d(a, b) if part != "boundary"
                             else oracles.boundary_wasserstein(exp.start.gamma, exp.end.gamma, exp.geometry))
        else:
            rec["interior"] = oracles.bl_interior(exp.start, exp.end)
            rec["boundary"] = oracles.bl_boundary(exp.start, exp.end)
    else:
        raise InputError(f"unknown oracle {which!r}")
    if args.out is not None:
        w = Writer(Path(args.out), "oracle", {"oracle": which})
        w.json("oracle.json", rec)
        w.manifest()
    print(json.dumps(_clean(rec), sort_keys=True))
    return EXIT_OK


def _need(args, name):
    v = getattr(args, name)
    if v is None:
        raise InputError(f"--{name} is required for this oracle")
    return float(v)


# -- entry point -------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON config file or shipped config name")
    p.add_argument("--kappa", type=float)
    p.add_argument("--nt", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--tol", type=float, help="solver stop tolerance")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bulkflux", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("distance", cmd_distance, "squared distance between two measures"),
                               ("geodesic", cmd_geodesic, "geodesic frames and action slices"),
                               ("sweep", cmd_sweep, "distance over a list of kappa values"),
                               ("certify", cmd_certify, "dual certificates for a solve"),
                               ("gradflow", cmd_gradflow, "entropy gradient flow")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("oracle", help="closed-form and baseline values")
    p.add_argument("which", choices=["dirac", "fisher-rao", "wasserstein", "bounded-lipschitz"])
    _common(p)
    p.add_argument("--R", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--m0", type=float)
    p.add_argument("--m1", type=float)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MeasureError, GeometryError, oracles.OracleError, KeyError) as exc:
        _report("input", exc)
        return EXIT_INPUT
    except (NumericalError, FlowError, np.linalg.LinAlgError, FloatingPointError) as exc:
        diag = getattr(exc, "diagnostics", None)
        _report("numerical", exc, diag)
        return EXIT_NUMERICAL


def _report(kind, exc, diagnostics=None):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if diagnostics:
        rec["diagnostics"] = diagnostics
    print(json.dumps(_clean(rec), sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
