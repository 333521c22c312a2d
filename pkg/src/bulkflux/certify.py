"""Dual certificates.

Two routes produce a lower bound on the squared distance:

* ``hj_residuals`` / ``feasibilize`` / ``dual_objective`` act on node-located
  potentials ``(phi, psi)`` with finite differences (forward in time,
  centred in space).  A feasibilized pair is a subsolution of the discrete
  Hamilton-Jacobi inequalities and ``dual_objective`` evaluates the
  end-time pairing against the endpoints.
* ``discrete_certificate`` turns the solver's constraint multipliers and prox
  subgradients into a point of the dual of the *discrete* problem, so its value
  is a rigorous lower bound for the discrete primal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Geometry
from .measures import MeasurePair


@dataclass
class PotentialPair:
    """Dual fields on time nodes: ``phi`` (nt+1, n_cells), ``psi`` (nt+1, nb)."""
    phi: np.ndarray
    psi: np.ndarray

    @property
    def nt(self) -> int:
        return self.phi.shape[0] - 1

    def shifted(self, k: float) -> "PotentialPair":
        return PotentialPair(self.phi + k, self.psi + k)

    def copy(self) -> "PotentialPair":
        return PotentialPair(self.phi.copy(), self.psi.copy())


@dataclass
class HJReport:
    phi_residual: np.ndarray   # (nt, n_cells)
    psi_residual: np.ndarray   # (nt, nb)
    positive_part: float       # weighted l1 norm of the positive parts
    support_violation: float   # weighted l1 norm of |residual| where the density is present
    max_violation: float
    dual_value: float | None = None


# -- finite differences ----------------------------------------------------------

def _axis_gradient(u: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2 * h)
    g = np.empty_like(u)
    sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(u.ndim))
    g[sl(1, -1)] = (u[sl(2, None)] - u[sl(None, -2)]) / (2 * h)
    g[sl(0, 1)] = u[sl(1, 2)] - u[sl(0, 1)]
    g[sl(-1, None)] = u[sl(-1, None)] - u[sl(-2, -1)]
    g[sl(0, 1)] /= h
    g[sl(-1, None)] /= h
    return g


def cell_gradient_sq(geom: Geometry, u: np.ndarray) -> np.ndarray:
    """|grad u|^2 per cell for a field of shape (..., n_cells)."""
    lead = u.shape[:-1]
    v = u.reshape(lead + geom.cell_shape)
    nlead = len(lead)
    if geom.kind == "interval":
        gx = _axis_gradient(v, geom.dx, nlead, periodic=False)
        return (gx ** 2).reshape(u.shape)
    gx = _axis_gradient(v, geom.dx, nlead, periodic=True)
    gy = _axis_gradient(v, geom.dy, nlead + 1, periodic=False)
    return (gx ** 2 + gy ** 2).reshape(u.shape)


def boundary_gradient_sq(geom: Geometry, u: np.ndarray) -> np.ndarray:
    if geom.n_boundary_faces == 0:
        return np.zeros_like(u)
    g = _axis_gradient(u, geom.boundary_length, u.ndim - 1, periodic=True)
    return g ** 2


def _residuals(geom: Geometry, phi: np.ndarray, psi: np.ndarray, kappa: float):
    nt = phi.shape[0] - 1
    dt = 1.0 / nt
    pbar = 0.5 * (phi[1:] + phi[:-1])
    sbar = 0.5 * (psi[1:] + psi[:-1])
    rphi = np.diff(phi, axis=0) / dt + 0.5 * cell_gradient_sq(geom, pbar)
    trace = pbar[:, geom.boundary_cells]
    rpsi = (np.diff(psi, axis=0) / dt + 0.5 * boundary_gradient_sq(geom, sbar)
            + (sbar - trace) ** 2 / (2 * kappa ** 2))
    return rphi, rpsi


def hj_residuals(potentials: PotentialPair, path, kappa: float, threshold: float = 1e-6) -> HJReport:
    """Finite-difference Hamilton-Jacobi residuals (positive = violation).

    ``path`` supplies the geometry and the densities used for the support
    diagnostics; a density counts as present above ``threshold`` times its
    maximum.
    """
    geom = path.geometry
    rphi, rpsi = _residuals(geom, potentials.phi, potentials.psi, kappa)
    nt = rphi.shape[0]
    wi = geom.cell_volume / nt
    wb = geom.boundary_length / nt
    pos = wi * np.maximum(rphi, 0).sum() + wb * np.maximum(rpsi, 0).sum()
    om = 0.5 * (path.omega[1:] + path.omega[:-1])
    ga = 0.5 * (path.gamma[1:] + path.gamma[:-1])
    top = max(np.max(om, initial=0.0), np.max(ga, initial=0.0))
    so = om > threshold * top
    sg = ga > threshold * top
    supp = wi * np.abs(rphi[so]).sum() + wb * np.abs(rpsi[sg]).sum()
    mx = max(np.max(rphi, initial=-np.inf), np.max(rpsi, initial=-np.inf))
    return HJReport(rphi, rpsi, float(pos), float(supp), float(mx))


@dataclass
class FeasibilizeInfo:
    passes: int           # per-cell passes kept
    closure: float        # time integral of the uniform shift needed after the passes
    max_violation: float  # residual maximum of the returned pair
    flagged: bool         # the per-cell passes alone did not reach feasibility


def _running_integral(r: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros((r.shape[0] + 1,) + r.shape[1:])
    out[1:] = np.cumsum(r, axis=0) * dt
    return out


def feasibilize(potentials: PotentialPair, geometry: Geometry, kappa: float,
                passes: int = 2, tol: float = 1e-9, return_info: bool = False):
    """Push a candidate pair into the subsolution set.

    Each pass subtracts from ``phi`` the running time integral of the positive
    part of its residual, then does the same for ``psi`` against the corrected
    ``phi``.  A pass that does not lower the worst violation is discarded.
    A final spatially uniform shift (common to ``phi`` and ``psi``,
    hence leaving gradients and the exchange term unchanged) removes what is
    left, so the output is always feasible to rounding.
    """
    nt = potentials.nt
    dt = 1.0 / nt
    phi, psi = potentials.phi.copy(), potentials.psi.copy()
    scale = max(1.0, float(np.max(np.abs(phi), initial=0.0)), float(np.max(np.abs(psi), initial=0.0)))
    n_done = 0
    rphi, rpsi = _residuals(geometry, phi, psi, kappa)
    worst = max(np.max(rphi, initial=-np.inf), np.max(rpsi, initial=-np.inf))
    for k in range(1, passes + 1):
        if worst <= tol * scale:
            break
        nphi, npsi = phi.copy(), psi.copy()
        if np.max(rphi, initial=-np.inf) > tol * scale:
            nphi -= _running_integral(np.maximum(rphi, 0.0), dt)
        _, rpsi = _residuals(geometry, nphi, npsi, kappa)
        if np.max(rpsi, initial=-np.inf) > tol * scale:
            npsi -= _running_integral(np.maximum(rpsi, 0.0), dt)
        rphi, rpsi = _residuals(geometry, nphi, npsi, kappa)
        new_worst = max(np.max(rphi, initial=-np.inf), np.max(rpsi, initial=-np.inf))
        # on rough input the exchange term can feed back and make a pass
        # diverge; keep a pass only when it lowers the worst violation
        if not new_worst < worst:
            break
        phi, psi, worst, n_done = nphi, npsi, new_worst, k
    rphi, rpsi = _residuals(geometry, phi, psi, kappa)
    per_t = np.maximum(np.max(rphi, axis=1, initial=-np.inf), np.max(rpsi, axis=1, initial=-np.inf))
    flagged = bool(np.max(per_t) > tol * scale)
    delta = np.maximum(per_t, 0.0)
    closure = 0.0
    if flagged:
        shift = _running_integral(delta, dt)[:, None]
        phi -= shift
        psi -= shift
        closure = float(delta.sum() * dt)
    rphi, rpsi = _residuals(geometry, phi, psi, kappa)
    mx = float(max(np.max(rphi, initial=-np.inf), np.max(rpsi, initial=-np.inf)))
    out = PotentialPair(phi, psi)
    if return_info:
        return out, FeasibilizeInfo(n_done, closure, mx, flagged)
    return out


def dual_objective(potentials: PotentialPair, rho0: MeasurePair, rho1: MeasurePair) -> float:
    """End-time pairing: int phi(1) d omega1 - int phi(0) d omega0 + the same
    for psi against gamma."""
    g = rho0.geometry
    phi, psi = potentials.phi, potentials.psi
    val = g.cell_volume * (np.dot(phi[-1], rho1.omega.ravel()) - np.dot(phi[0], rho0.omega.ravel()))
    val += g.boundary_length * (np.dot(psi[-1], rho1.gamma) - np.dot(psi[0], rho0.gamma))
    return float(val)


# -- exact certificate for the discrete problem -----------------------------------

@dataclass
class DiscreteCertificate:
    value: float
    potentials: PotentialPair
    equation_residual: float   # relative mismatch of the adjoint equation after correction
    shift: float               # time integral of the uniform shift (cost of restoring feasibility)


def _violation(ops, q: np.ndarray):
    """Per-interval maximum of the pointwise subsolution excess of ``q``."""
    c = ops.split_v(q)
    ei = c.omega + 0.5 * np.sum(c.F ** 2, axis=-1)
    eb = c.gamma + 0.5 * (np.sum(c.G ** 2, axis=-1) + c.f ** 2)
    return np.maximum(np.max(ei, axis=1, initial=-np.inf), np.max(eb, axis=1, initial=-np.inf))


def discrete_certificate(ops, fac, mult: np.ndarray, q: np.ndarray, rho0: MeasurePair,
                         rho1: MeasurePair, kappa: float) -> DiscreteCertificate:
    """Lower bound for the discrete problem from approximate dual fields.

    ``mult`` are constraint multipliers (one per scaled CE row) and ``q`` a
    pointwise subgradient of the action in co-located coordinates (boundary
    flux slot conjugate to ``kappa * f``).  The adjoint equation
    ``A^T mult = I^T W q`` is restored by a least-norm change of ``q``; the
    remaining pointwise excess is removed by a uniform time-dependent shift.
    """
    nt = ops.nt
    dt = ops.dt
    I, W = fac.I, ops.w_V
    r = ops.A.T @ mult - I.T @ (W * q)
    if not hasattr(fac, "normal_lu"):
        N = (I.T @ sp.diags(W) @ I + 1e-13 * sp.diags(ops.w_U)).tocsc()
        fac.normal_lu = spla.splu(N)
    y = fac.normal_lu.solve(r)
    qh = q + I @ y
    res = ops.A.T @ mult - I.T @ (W * qh)
    eq_res = float(np.linalg.norm(res) / max(np.linalg.norm(ops.A.T @ mult), 1e-300))

    delta = np.maximum(_violation(ops, qh), 0.0)
    # shift the time-derivative slots by -delta and the multipliers accordingly
    o, s = ops.voffsets, ops.vsizes
    nc, nb = ops.geom.n_cells, ops.geom.n_boundary
    qs = qh.copy()
    qs[o["omega"]:o["omega"] + s["omega"]] -= np.repeat(delta, nc)
    qs[o["gamma"]:o["gamma"] + s["gamma"]] -= np.repeat(delta, nb)
    # mult_{k+1/2} - mult_{k-1/2} = dt * (delta_{k-1/2} + delta_{k+1/2}) / 2
    sh = np.zeros(nt)
    sh[1:] = np.cumsum(0.5 * dt * (delta[:-1] + delta[1:]))
    ms = mult + np.concatenate([np.repeat(sh, nc), np.repeat(sh, nb)])

    b = ops.rhs(rho0, rho1)
    c = fac.vscale * ops.coloc_offset(rho0, rho1)
    value = float(np.dot(b, ms) + np.dot(c, W * qs))

    # node potentials phi = -mult, with end values carrying the half-step of the time slot
    cq = ops.split_v(qs)
    mi = -ms[:nt * nc].reshape(nt, nc)
    mb = -ms[nt * nc:].reshape(nt, nb)
    phi = np.empty((nt + 1, nc))
    psi = np.empty((nt + 1, nb))
    phi[1:-1] = 0.5 * (mi[1:] + mi[:-1])
    psi[1:-1] = 0.5 * (mb[1:] + mb[:-1])
    phi[0] = mi[0] - 0.5 * dt * cq.omega[0]
    phi[-1] = mi[-1] + 0.5 * dt * cq.omega[-1]
    psi[0] = mb[0] - 0.5 * dt * cq.gamma[0]
    psi[-1] = mb[-1] + 0.5 * dt * cq.gamma[-1]
    return DiscreteCertificate(value, PotentialPair(phi, psi), eq_res, float(delta.sum() * dt))
