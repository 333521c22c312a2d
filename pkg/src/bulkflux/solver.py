"""Geodesic solver for the discrete transport problem.

Two methods share the discretization, the scaling and the certificate:

* ``"interior"`` (default): a primal-dual interior-point method on the conic
  form of the problem (see :mod:`bulkflux.interior`).  It converges in a few
  dozen factorizations to a relative duality gap of ``stop_tol``.
* ``"dr"``: Douglas-Rachford splitting between the pointwise prox of the
  action on the co-located variables ``V`` together with the projection onto
  the continuity equations, and the projection onto the graph
  ``{V = I U + c}`` of the co-location map.  Both projections are weighted by
  the grid measure, so the pointwise prox is the plain Euclidean one, and the
  sparse factorizations are reused by every iteration.  It stops when the
  relative change of the primal value over ``window`` iterations falls below
  ``stop_tol``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .interior import cone_problem, dual_fields, interior_solve, interior_start
from .action import Colocated, ProxParams, action_slices, prox_kinetic
from .certify import PotentialPair, discrete_certificate
from .constraint import SpaceTimeOperators, SpaceTimePath, operators
from .measures import MeasurePair, total_mass

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    nt: int = 32
    kappa: float = 1.0
    sigma: float = 1.0
    max_outer: int = 20000
    stop_tol: float = 1e-6
    window: int = 20            # iterations over which the relative change is measured
    relax: float = 1.0          # Douglas-Rachford relaxation in (0, 2)
    rescale: bool = True        # scale densities so that the largest entry is 1
    cg_tol: float = 1e-9
    newton_tol: float = 1e-12
    max_newton: int = 100
    adapt_every: int = 0        # residual balancing period for sigma (0 disables)
    adapt_ratio: float = 10.0
    sigma_min: float = 1e-4
    sigma_max: float = 1e4
    boundary_metric: float = 1.0   # metric weight of boundary unknowns relative to their measure
    anderson: int = 8          # Anderson acceleration memory (0 disables)
    log_every: int = 0
    method: str = "interior"    # "interior" (primal-dual interior point) or "dr" (Douglas-Rachford)
    max_interior: int = 100     # interior-point iterations

    def __post_init__(self):
        if self.method not in ("interior", "dr"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.nt < 1:
            raise ValueError("nt must be positive")


@dataclass
class GeodesicResult:
    path: SpaceTimePath
    primal_value: float
    dual_value: float
    action_slices: np.ndarray
    potentials: PotentialPair
    iterations: int
    converged: bool
    feasibility: float
    kappa: float
    history: list = field(default_factory=list)
    seconds: float = 0.0
    colocated: Colocated | None = None
    multipliers: np.ndarray | None = None
    dual_fields: Colocated | None = None

    @property
    def flux_tv(self) -> float:
        """Total variation of the exchange flux over space-time."""
        g = self.path.geometry
        return float(np.abs(self.path.f).sum() * g.boundary_length * self.path.dt)

    def summary(self) -> dict:
        return {"primal": self.primal_value, "dual": self.dual_value,
                "gap": self.primal_value - self.dual_value, "iterations": self.iterations,
                "converged": self.converged, "feasibility": self.feasibility,
                "kappa": self.kappa, "flux_tv": self.flux_tv, "seconds": self.seconds}


class _Factorized:
    """Cached solves for the two projections of one (geometry, nt, kappa)."""

    def __init__(self, ops: SpaceTimeOperators, kappa: float, boundary_metric: float = 1.0):
        self.ops = ops
        # kappa-scaled last slot of the co-located boundary momentum
        scale = np.ones(ops.p)
        o = ops.voffsets["f"]
        scale[o:o + ops.vsizes["f"]] = kappa
        self.vscale = scale
        self.I = (sp.diags(scale) @ ops.I).tocsc()
        # uniform metric: every unknown weighted like an interior cell; the
        # physical weights of the action then enter only through the prox step
        mb = ops.w_bnd * boundary_metric
        self.m_U = np.concatenate([np.full(ops.sizes["omega"] + ops.sizes["F"], ops.w_int),
                                   np.full(ops.sizes["gamma"] + ops.sizes["G"] + ops.sizes["f"], mb)])
        self.m_V = np.concatenate([np.full(ops.vsizes["omega"] + ops.vsizes["F"], ops.w_int),
                                   np.full(ops.vsizes["gamma"] + ops.vsizes["G"] + ops.vsizes["f"], mb)])
        self.bsigma = ops.w_bnd / mb
        W_U, W_V = self.m_U, self.m_V
        M = (sp.diags(W_U) + self.I.T @ sp.diags(W_V) @ self.I).tocsc()
        self.graph_lu = spla.splu(M)
        # drop one redundant row (the rows sum to a constant) so the normal matrix is invertible
        A = ops.A.tocsr()
        self.keep = np.arange(ops.m - 1)
        Ar = A[self.keep]
        self.Ar = Ar
        K = (Ar @ sp.diags(1.0 / W_U) @ Ar.T).tocsc()
        self.ce_lu = spla.splu(K)

    def project_graph(self, zu, zv, c):
        rhs = self.m_U * zu + self.I.T @ (self.m_V * (zv - c))
        xu = self.graph_lu.solve(rhs)
        return xu, self.I @ xu + c

    def project_ce(self, w, b):
        ops = self.ops
        r = self.Ar @ w - b[self.keep]
        lam = self.ce_lu.solve(r)
        u = w - (self.Ar.T @ lam) / self.m_U
        full = np.zeros(ops.m)
        full[self.keep] = lam
        return u, full


def _prox_V(ops: SpaceTimeOperators, v: np.ndarray, params: ProxParams, bsigma: float) -> np.ndarray:
    """Pointwise prox of the weighted action in the uniform metric: boundary
    points get their step multiplied by the ratio of boundary to interior weight."""
    c = ops.split_v(v)
    nt, nc, nb = c.omega.shape[0], c.omega.shape[1], c.gamma.shape[1]
    rho, mom = prox_kinetic(c.omega.ravel(), c.F.reshape(nt * nc, -1), params)
    bmom = np.concatenate([c.G.reshape(nt * nb, -1), c.f.reshape(nt * nb, 1)], axis=-1)
    bparams = replace(params, sigma=params.sigma * bsigma)
    gam, bm = prox_kinetic(c.gamma.ravel(), bmom, bparams)
    out = Colocated(rho.reshape(nt, nc), mom.reshape(c.F.shape), gam.reshape(nt, nb),
                    bm[:, :-1].reshape(c.G.shape), bm[:, -1].reshape(nt, nb), c.vol, c.blen)
    return ops.join_v(out)


class _Anderson:
    """Type-II Anderson acceleration of a fixed-point map, with a restart
    whenever the fixed-point residual grows."""

    def __init__(self, memory: int, weights: np.ndarray, reg: float = 1e-10):
        self.m = memory
        self.sw = np.sqrt(weights)
        self.reg = reg
        self.dg, self.dt = [], []
        self.prev = None          # (g, tz) of the previous evaluation
        self.fallback = None      # plain step from the previous point
        self.prev_norm = math.inf

    def reset(self):
        self.dg.clear(); self.dt.clear()
        self.prev = None
        self.fallback = None
        self.prev_norm = math.inf

    def update(self, z: np.ndarray, tz: np.ndarray) -> np.ndarray:
        g = tz - z
        gn = float(np.linalg.norm(self.sw * g))
        if self.fallback is not None and gn > self.prev_norm:
            # the extrapolated point made things worse: restart from the plain step
            self.dg.clear(); self.dt.clear()
            self.prev = None
            self.prev_norm = math.inf
            out, self.fallback = self.fallback, None
            return out
        if self.prev is not None:
            self.dg.append(self.sw * (g - self.prev[0]))
            self.dt.append(tz - self.prev[1])
            if len(self.dg) > self.m:
                self.dg.pop(0); self.dt.pop(0)
        self.prev = (g, tz)
        self.prev_norm = gn
        if not self.dg:
            self.fallback = None
            return tz
        DG = np.stack(self.dg, axis=1)
        H = DG.T @ DG
        H += self.reg * np.trace(H) / H.shape[0] * np.eye(H.shape[0]) + 1e-300 * np.eye(H.shape[0])
        coef = np.linalg.solve(H, DG.T @ (self.sw * g))
        self.fallback = tz
        return tz - np.stack(self.dt, axis=1) @ coef


def _unscale_v(ops, v, vscale) -> Colocated:
    return ops.split_v(v / vscale)


def initial_path(rho0: MeasurePair, rho1: MeasurePair, nt: int) -> SpaceTimePath:
    """Linear interpolation of the endpoints, zero momenta, and the boundary
    mass imbalance spread uniformly over the exchange flux."""
    g = rho0.geometry
    t = np.linspace(0.0, 1.0, nt + 1)[:, None]
    omega = (1 - t) * rho0.omega.ravel() + t * rho1.omega.ravel()
    gamma = (1 - t) * rho0.gamma + t * rho1.gamma
    f = np.repeat((rho1.gamma - rho0.gamma)[None, :], nt, axis=0)
    return SpaceTimePath(g, omega, np.zeros((nt, g.free_faces.size)), gamma,
                         np.zeros((nt, g.n_boundary_faces)), f)


def _problem_scale(rho0: MeasurePair, rho1: MeasurePair) -> float:
    m = max(np.max(rho0.omega, initial=0.0), np.max(rho1.omega, initial=0.0),
            np.max(rho0.gamma, initial=0.0), np.max(rho1.gamma, initial=0.0))
    return float(m) if m > 0 else 1.0


def _scaled(rho: MeasurePair, s: float) -> MeasurePair:
    return MeasurePair(rho.geometry, rho.omega / s, rho.gamma / s)


def solve_geodesic(rho0: MeasurePair, rho1: MeasurePair, config: SolverConfig = SolverConfig(),
                   warm: "GeodesicResult | None" = None) -> GeodesicResult:
    """Minimize the action over discrete CE(rho0, rho1)."""
    if rho0.geometry != rho1.geometry:
        raise ValueError("endpoints live on different geometries")
    t0 = time.perf_counter()
    cfg = config
    kappa = cfg.kappa
    ops = operators(rho0.geometry, cfg.nt)
    fac = _Factorized(ops, kappa, cfg.boundary_metric)
    s = _problem_scale(rho0, rho1) if cfg.rescale else 1.0
    r0, r1 = _scaled(rho0, s), _scaled(rho1, s)
    b = ops.rhs(r0, r1)
    c = fac.vscale * ops.coloc_offset(r0, r1)
    if cfg.method == "interior":
        return _solve_interior(ops, fac, r0, r1, b, c, s, cfg, t0)
    params = ProxParams(cfg.sigma, cfg.newton_tol, cfg.max_newton)

    if warm is not None and warm.path.nt == cfg.nt and warm.path.geometry == rho0.geometry:
        u_init = ops.pack(warm.path) / s
    else:
        u_init = ops.pack(initial_path(r0, r1, cfg.nt))
    zu = fac.project_ce(u_init, b)[0]
    zv = fac.I @ zu + c

    wv = ops.w_V
    wz = np.concatenate([fac.m_U, fac.m_V])
    nu = zu.size

    sigma = cfg.sigma

    def sweep(z, sigma):
        zu, zv = z[:nu], z[nu:]
        xu, xv = fac.project_graph(zu, zv, c)
        yu, lam = fac.project_ce(2 * xu - zu, b)
        yv = _prox_V(ops, 2 * xv - zv, replace(params, sigma=sigma), fac.bsigma)
        x = np.concatenate([xu, xv])
        y = np.concatenate([yu, yv])
        return z + cfg.relax * (y - x), x, y, lam

    z = np.concatenate([zu, zv])
    accel = _Anderson(cfg.anderson, wz) if cfg.anderson else None
    history = []
    vals = []
    converged = False
    feas = math.inf
    it = 0
    x_prev = None
    for it in range(1, cfg.max_outer + 1):
        z_used, sigma_used = z, sigma
        tz, x, y, lam = sweep(z, sigma)
        yu, yv = y[:nu], y[nu:]
        val = float(np.dot(wv, _pointwise_action(ops, yv)))
        gap = yv - (fac.I @ yu + c)
        feas = math.sqrt(float(np.dot(wv, gap * gap)) / max(float(np.dot(wv, yv * yv)), 1e-300))
        vals.append(val)
        history.append((val * s, feas))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d  primal %.10g  feas %.3e  sigma %.3g", it, val * s, feas, sigma)
        if it > cfg.window:
            ref = vals[-1 - cfg.window]
            change = abs(val - ref) / max(abs(val), 1e-12)
            if change < cfg.stop_tol and feas < cfg.stop_tol:
                converged = True
                break
        if cfg.adapt_every and it % cfg.adapt_every == 0 and x_prev is not None:
            # residual balancing: primal residual y - x against the change of x
            nx = math.sqrt(float(np.dot(wz, x * x))) + 1e-300
            rp = math.sqrt(float(np.dot(wz, (y - x) ** 2))) / nx
            rd = math.sqrt(float(np.dot(wz, (x - x_prev) ** 2))) / nx
            factor = 1.0
            if rp > cfg.adapt_ratio * rd:
                factor = 0.5
            elif rd > cfg.adapt_ratio * rp:
                factor = 2.0
            if factor != 1.0:
                new_sigma = min(max(sigma * factor, cfg.sigma_min), cfg.sigma_max)
                if new_sigma != sigma:
                    # keep the dual estimate (x - z)/sigma unchanged
                    tz = x + (new_sigma / sigma) * (tz - x)
                    sigma = new_sigma
                    if accel is not None:
                        accel.reset()
        x_prev = x
        z = accel.update(z, tz) if accel is not None else tz
    x_final = x

    path_scaled = ops.unpack(yu, r0, r1)
    path = SpaceTimePath(path_scaled.geometry, path_scaled.omega * s, path_scaled.F * s,
                         path_scaled.gamma * s, path_scaled.G * s, path_scaled.f * s)
    col = _unscale_v(ops, yv, fac.vscale).scaled(s)
    slices = action_slices(col, kappa)
    primal = float(slices.sum() / cfg.nt)

    # dual fields: multipliers of the CE projection and the prox subgradient
    xv, zv = x_final[nu:], z_used[nu:]
    q = (2 * xv - zv - yv) * fac.m_V / (sigma_used * wv)
    mult = -lam / sigma_used
    cert = discrete_certificate(ops, fac, mult, q, r0, r1, kappa)
    result = GeodesicResult(path=path, primal_value=primal, dual_value=cert.value * s,
                            action_slices=slices, potentials=cert.potentials,
                            iterations=it, converged=converged, feasibility=feas, kappa=kappa,
                            history=history, seconds=time.perf_counter() - t0, colocated=col,
                            multipliers=mult, dual_fields=None)
    return result


def _solve_interior(ops, fac, r0, r1, b, c, s, cfg, t0) -> GeodesicResult:
    u0 = interior_start(ops, fac.I, c, r0, r1)
    prob = cone_problem(ops, fac.I, c, b)
    def hook(k, h):
        if k % cfg.log_every == 0:
            log.info("iter %d  primal %.10g  dual %.10g  pres %.1e  dres %.1e  mu %.1e",
                     k, h[0] * s, h[1] * s, *h[2:])
    res = interior_solve(prob, u0, rel_gap=cfg.stop_tol, feas_tol=min(cfg.stop_tol, 1e-9),
                         max_iter=cfg.max_interior, log=hook if cfg.log_every else None)
    path_scaled = ops.unpack(res.u, r0, r1)
    path = SpaceTimePath(path_scaled.geometry, path_scaled.omega * s, path_scaled.F * s,
                         path_scaled.gamma * s, path_scaled.G * s, path_scaled.f * s)
    yv = fac.I @ res.u + c
    col = _unscale_v(ops, yv, fac.vscale).scaled(s)
    slices = action_slices(col, cfg.kappa)
    primal = float(slices.sum() / cfg.nt)
    q, mult = dual_fields(prob, res, ops.p)
    cert = discrete_certificate(ops, fac, mult, q, r0, r1, cfg.kappa)
    feas = float(np.linalg.norm(ops.A @ res.u - b) / max(np.linalg.norm(b), 1e-300))
    history = [(h[0] * s, h[1] * s) for h in res.history]
    return GeodesicResult(path=path, primal_value=primal, dual_value=cert.value * s,
                          action_slices=slices, potentials=cert.potentials,
                          iterations=res.iterations, converged=res.converged, feasibility=feas,
                          kappa=cfg.kappa, history=history, seconds=time.perf_counter() - t0,
                          colocated=col, multipliers=mult, dual_fields=None)


def _pointwise_action(ops: SpaceTimeOperators, v: np.ndarray) -> np.ndarray:
    """Action density at every co-located point, spread over the entries of
    ``v`` so that ``w_V . result`` equals the total action (finite inputs)."""
    c = ops.split_v(v)
    out = np.zeros(v.size)
    o = ops.voffsets
    rho = c.omega
    m2 = np.sum(c.F ** 2, axis=-1)
    a = np.where(rho > 0, m2 / (2 * np.where(rho > 0, rho, 1.0)), 0.0)
    out[o["omega"]:o["omega"] + ops.vsizes["omega"]] = a.ravel()
    gam = c.gamma
    b2 = np.sum(c.G ** 2, axis=-1) + c.f ** 2
    ab = np.where(gam > 0, b2 / (2 * np.where(gam > 0, gam, 1.0)), 0.0)
    out[o["gamma"]:o["gamma"] + ops.vsizes["gamma"]] = ab.ravel()
    return out


def sweep_kappa(rho0: MeasurePair, rho1: MeasurePair, kappas, config: SolverConfig = SolverConfig(),
                warm_start: bool = True) -> list:
    """One solve per kappa (ascending), each warm-started from the previous path."""
    kappas = list(kappas)
    if any(b < a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappas must be sorted ascending")
    out = []
    prev = None
    for k in kappas:
        res = solve_geodesic(rho0, rho1, replace(config, kappa=float(k)), warm=prev if warm_start else None)
        out.append(res)
        prev = res
    return out


@dataclass
class Frame:
    t: float
    node: int
    rho: MeasurePair
    flagged: bool
    mass_error: float


def geodesic_frames(result: GeodesicResult, times) -> list:
    """Time-node slices nearest to the requested times, cleaned into valid pairs."""
    path = result.path
    out = []
    for t in times:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"frame time {t} outside [0, 1]")
        k = int(round(t * path.nt))
        om = path.omega[k].copy()
        ga = path.gamma[k].copy()
        om[om < 1e-12] = 0.0
        ga[ga < 1e-12] = 0.0
        rho = MeasurePair(path.geometry, om, ga)
        m = sum(total_mass(rho))
        err = abs(m - 1.0)
        if 0 < err <= 1e-9 or (err > 1e-9 and m > 0):
            rho = MeasurePair(path.geometry, om / m, ga / m)
        out.append(Frame(float(t), k, rho, err > 1e-6, err))
    return out
