"""Explicit finite-volume gradient flows of entropies for the coupled metric.

The gradient of an energy ``E = int E_int(omega) + int E_bnd(gamma)`` is
represented by the momenta

    F = omega grad E_int'(omega),    G = gamma grad E_bnd'(gamma),
    f = gamma (E_bnd'(gamma) - E_int'(omega)) / kappa^2,

with ``F . n = f`` on the coupled faces.  The flow moves mass against these
momenta: ``d omega/dt = div F`` and ``d gamma/dt = div G - f``.

Face densities are upwinded along the flow and ``E'`` is differenced across
faces.  The state is kept as masses per cell, and every face or transfer
moves a mass from one cell to another, so the total is conserved to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Geometry
from .measures import MeasurePair

log = logging.getLogger(__name__)

TINY = 1e-300


class FlowError(RuntimeError):
    """A step was rejected or the adaptive loop gave up."""

    def __init__(self, message, bound: float | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.bound = bound
        self.diagnostics = diagnostics or {}


@dataclass
class EnergySpec:
    """Boltzmann entropy relative to potentials, or a Renyi entropy."""

    kind: str = "boltzmann"
    V_interior: np.ndarray | float = 0.0
    V_boundary: np.ndarray | float = 0.0
    m_interior: float = 2.0
    m_boundary: float = 2.0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("boltzmann", "renyi"):
            raise ValueError(f"unknown energy kind {self.kind!r}")
        if self.kind == "renyi" and not (self.m_interior > 1 and self.m_boundary > 1):
            raise ValueError("Renyi exponents must exceed 1")

    def potentials(self, geom: Geometry):
        Vi = np.broadcast_to(np.asarray(self.V_interior, dtype=float), geom.cell_shape).ravel()
        Vb = np.broadcast_to(np.asarray(self.V_boundary, dtype=float), (geom.n_boundary,)).ravel()
        return Vi, Vb

    # first variations and second derivatives, per density value
    def first_variation(self, dens, V, m):
        if self.kind == "boltzmann":
            with np.errstate(divide="ignore"):
                return np.log(dens) + V + 1.0
        return m / (m - 1.0) * dens ** (m - 1.0)

    def curvature(self, dens, m):
        """``dens * E''(dens)``, the diffusivity of the flow."""
        if self.kind == "boltzmann":
            return np.ones_like(dens)
        return m * dens ** (m - 1.0)

    def density_energy(self, dens, V, m):
        if self.kind == "boltzmann":
            safe = np.where(dens > 0, dens, 1.0)
            return np.where(dens > 0, dens * np.log(safe), 0.0) + dens * V
        return dens ** m / (m - 1.0)


@dataclass
class FlowState:
    """Masses per interior cell and per boundary cell at one time."""

    geometry: Geometry
    cell_mass: np.ndarray
    boundary_mass: np.ndarray
    time: float = 0.0
    energy: float = math.nan
    mass_drift: float = 0.0

    @classmethod
    def from_pair(cls, rho: MeasurePair, spec: EnergySpec | None = None, time: float = 0.0) -> "FlowState":
        g = rho.geometry
        st = cls(g, rho.omega.ravel() * g.cell_volume, rho.gamma.ravel() * g.boundary_length, time)
        if spec is not None:
            st.energy = energy(st, spec)
        return st

    @property
    def omega(self) -> np.ndarray:
        return self.cell_mass / self.geometry.cell_volume

    @property
    def gamma(self) -> np.ndarray:
        return self.boundary_mass / self.geometry.boundary_length

    @property
    def rho(self) -> MeasurePair:
        g = self.geometry
        return MeasurePair(g, self.omega.reshape(g.cell_shape), self.gamma)

    @property
    def total_mass(self) -> float:
        return float(math.fsum(self.cell_mass) + math.fsum(self.boundary_mass))


def energy(state: FlowState, spec: EnergySpec) -> float:
    g = state.geometry
    Vi, Vb = spec.potentials(g)
    ei = spec.density_energy(state.omega, Vi, spec.m_interior)
    eb = spec.density_energy(state.gamma, Vb, spec.m_boundary)
    return float(np.sum(ei) * g.cell_volume + np.sum(eb) * g.boundary_length)


def gibbs_measure(geom: Geometry, V_interior=0.0, V_boundary=0.0) -> MeasurePair:
    """The normalized pair ``(exp(-V_int), exp(-V_bnd)) / Z``."""
    Vi = np.broadcast_to(np.asarray(V_interior, dtype=float), geom.cell_shape)
    Vb = np.broadcast_to(np.asarray(V_boundary, dtype=float), (geom.n_boundary,))
    shift = min(Vi.min(), Vb.min())
    wi, wb = np.exp(-(Vi - shift)), np.exp(-(Vb - shift))
    Z = wi.sum() * geom.cell_volume + wb.sum() * geom.boundary_length
    return MeasurePair(geom, wi / Z, wb / Z)


@dataclass
class GradientField:
    """Momenta of the gradient; the flow moves mass along their negatives.

    ``F`` lives on all interior faces (coupled faces carry ``sign * f``,
    walls zero), ``G`` on the boundary faces, ``f`` on the boundary cells.
    ``face_density`` is the density used on each face (``F = face_density *
    grad E'`` wherever ``E'`` is finite).
    """

    F: np.ndarray
    G: np.ndarray
    f: np.ndarray
    Ei: np.ndarray
    Eb: np.ndarray
    face_density: np.ndarray
    edge_density: np.ndarray


def _upwind(lo_val, hi_val, slope):
    # the flow velocity is -slope: positive slope moves mass from hi to lo
    return np.where(slope > 0, hi_val, lo_val)


def gradient_field(state: FlowState | MeasurePair, spec: EnergySpec, kappa: float) -> GradientField:
    """Momenta representing the gradient of ``spec`` at ``state``."""
    if isinstance(state, MeasurePair):
        state = FlowState.from_pair(state)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    g = state.geometry
    om, ga = state.omega, state.gamma
    Vi, Vb = spec.potentials(g)
    Ei = spec.first_variation(om, Vi, spec.m_interior)
    Eb = spec.first_variation(ga, Vb, spec.m_boundary)

    F = np.zeros(g.n_faces)
    dens = np.zeros(g.n_faces)
    fc = g.face_cells
    inner = np.flatnonzero((fc[:, 0] >= 0) & (fc[:, 1] >= 0))
    lo, hi = fc[inner, 0], fc[inner, 1]
    h = g.face_spacing[inner]
    F[inner], dens[inner] = _face_flux(spec, om[lo], om[hi], Ei[lo], Ei[hi], Vi[lo], Vi[hi], h)

    f = np.zeros(g.n_boundary)
    cells = g.boundary_cells
    both = (ga > TINY) & (om[cells] > TINY)
    if spec.kind == "renyi":
        both = ga > 0
    diff = np.where(both, Eb - np.where(both, Ei[cells], 0.0), 0.0)
    f = np.where(both, ga * diff / kappa ** 2, 0.0)
    F[g.boundary_face_map] = g.boundary_sign * f
    dens[g.boundary_face_map] = ga

    nbf = g.n_boundary_faces
    G = np.zeros(nbf)
    edens = np.zeros(nbf)
    if nbf:
        j = np.arange(nbf)
        left, right = (j - 1) % nbf, j  # boundary face j is the left face of boundary cell j
        hb = np.full(nbf, g.boundary_length)
        G, edens = _face_flux(spec, ga[left], ga[right], Eb[left], Eb[right], Vb[left], Vb[right], hb)
    return GradientField(F, G, f, Ei, Eb, dens, edens)


def _face_flux(spec, d_lo, d_hi, E_lo, E_hi, V_lo, V_hi, h):
    """Upwind density times the difference quotient of ``E'`` (oriented lo -> hi)."""
    if spec.kind == "boltzmann":
        pos = (d_lo > TINY) & (d_hi > TINY)
        slope = np.where(pos, (np.where(pos, E_hi, 0.0) - np.where(pos, E_lo, 0.0)) / h, 0.0)
        up = _upwind(d_lo, d_hi, slope)
        flux = up * slope
        # a vanishing side: omega grad log omega = grad omega, drift upwinded
        drift = (V_hi - V_lo) / h
        vac = ~pos
        alt = (d_hi - d_lo) / h + _upwind(d_lo, d_hi, drift) * drift
        flux = np.where(vac, alt, flux)
        dens = np.where(vac, np.maximum(d_lo, d_hi), up)
        return flux, dens
    slope = (E_hi - E_lo) / h
    up = _upwind(d_lo, d_hi, slope)
    return up * slope, up


def face_measure(geom: Geometry) -> np.ndarray:
    """Area times spacing of every interior face (its share of the volume)."""
    if geom.kind == "interval":
        return np.full(geom.n_faces, geom.dx)
    area = np.where(geom.face_direction == 0, geom.dy, geom.dx)
    return area * geom.face_spacing


def dissipation(state: FlowState, spec: EnergySpec, kappa: float, grad: GradientField | None = None) -> float:
    """Energy decay rate of the discrete flow, ``-dE/dt`` at ``state``.

    It pairs the momenta with the differences of ``E'``; where ``F = face
    density * grad E'`` this is ``int |F|^2/omega + int |G|^2/gamma +
    kappa^2 int f^2/gamma``.
    """
    g = state.geometry
    gf = grad if grad is not None else gradient_field(state, spec, kappa)
    fc = g.face_cells
    inner = np.flatnonzero((fc[:, 0] >= 0) & (fc[:, 1] >= 0))
    lo, hi = fc[inner, 0], fc[inner, 1]
    Ei, Eb = gf.Ei, gf.Eb
    fin = np.isfinite(Ei[lo]) & np.isfinite(Ei[hi])
    dE = np.where(fin, np.where(fin, Ei[hi], 0.0) - np.where(fin, Ei[lo], 0.0), 0.0)
    area = face_measure(g)[inner] / g.face_spacing[inner]
    total = np.sum(gf.F[inner] * dE * area)
    if gf.G.size:
        j = np.arange(gf.G.size)
        dEb = Eb[j] - Eb[(j - 1) % gf.G.size]
        total += np.sum(np.where(np.isfinite(dEb), gf.G * dEb, 0.0))
    cells = g.boundary_cells
    dT = Eb - Ei[cells]
    total += np.sum(np.where(gf.f != 0, gf.f * dT, 0.0)) * g.boundary_length
    return float(total)


def tangent_norm(state: FlowState, grad: GradientField, kappa: float) -> float:
    """``1/2 int |F|^2/omega + 1/2 int |G|^2/gamma + kappa^2/2 int f^2/gamma``
    with the face densities used by the scheme."""
    g = state.geometry
    fc = g.face_cells
    inner = np.flatnonzero((fc[:, 0] >= 0) & (fc[:, 1] >= 0))
    d = grad.face_density[inner]
    Fi = grad.F[inner]
    vol = face_measure(g)[inner]
    a = np.sum(np.where(d > 0, Fi ** 2 / np.where(d > 0, d, 1.0), 0.0) * vol)
    b = np.sum(np.where(grad.edge_density > 0, grad.G ** 2 / np.where(grad.edge_density > 0, grad.edge_density, 1.0),
                        0.0)) * g.boundary_length
    ga = state.gamma
    c = kappa ** 2 * np.sum(np.where(ga > 0, grad.f ** 2 / np.where(ga > 0, ga, 1.0), 0.0)) * g.boundary_length
    return 0.5 * float(a + b + c)


def _mass_rates(state: FlowState, gf: GradientField):
    """Mass moved per unit time across every face and transfer, and the
    resulting rate of change per cell (before multiplying by tau)."""
    g = state.geometry
    fc = g.face_cells
    inner = np.flatnonzero((fc[:, 0] >= 0) & (fc[:, 1] >= 0))
    area = face_measure(g)[inner] / g.face_spacing[inner]
    # flow flux along lo -> hi is -F
    q = -gf.F[inner] * area
    transfer = gf.f * g.boundary_length        # mass per time from gamma into omega
    qb = -gf.G                                  # boundary flow, left -> right cell
    return inner, q, transfer, qb


def cfl_bound(state: FlowState, spec: EnergySpec, kappa: float, gf: GradientField | None = None) -> float:
    """Largest admissible explicit step.

    Half the minimum of the explicit diffusive limit
    ``h^2 / (2 dim D)`` (interior and boundary, ``D`` the largest analytic or
    realized face diffusivity), the transfer limit ``kappa^2 / stiffness`` and
    the positivity limit (mass of a cell over its total outflow rate).
    """
    g = state.geometry
    gf = gf if gf is not None else gradient_field(state, spec, kappa)
    om, ga = state.omega, state.gamma
    bounds = []
    # effective diffusivity: the analytic one and the one realized on each face
    fc = g.face_cells
    inner = np.flatnonzero((fc[:, 0] >= 0) & (fc[:, 1] >= 0))
    lo, hi = fc[inner, 0], fc[inner, 1]
    jump = np.abs(om[hi] - om[lo])
    # density part of E' only: the potential contributes drift, bounded by positivity below
    Ed = np.nan_to_num(spec.first_variation(om, 0.0, spec.m_interior), neginf=0.0)
    Deff = np.where(jump > 0, gf.face_density[inner] * np.abs(Ed[hi] - Ed[lo])
                    / np.where(jump > 0, jump, 1.0), 0.0)
    Di = float(max(np.max(spec.curvature(om, spec.m_interior), initial=0.0), np.max(Deff, initial=0.0)))
    hmin = min(g.dx, g.dy) if g.dim == 2 else g.dx
    if Di > 0:
        bounds.append(hmin ** 2 / (2 * g.dim * Di))
    if g.n_boundary_faces:
        j = np.arange(g.n_boundary_faces)
        bj = np.abs(ga[j] - ga[(j - 1) % j.size])
        Eb = np.nan_to_num(spec.first_variation(ga, 0.0, spec.m_boundary), neginf=0.0)
        Deb = np.where(bj > 0, gf.edge_density * np.abs(Eb[j] - Eb[(j - 1) % j.size])
                       / np.where(bj > 0, bj, 1.0), 0.0)
        Db = float(max(np.max(spec.curvature(ga, spec.m_boundary), initial=0.0), np.max(Deb, initial=0.0)))
        if Db > 0:
            bounds.append(g.boundary_length ** 2 / (2 * Db))
    # linearized transfer stiffness per boundary cell
    cells = g.boundary_cells
    act = gf.f != 0
    if np.any(act):
        oc = np.maximum(om[cells], TINY)
        gc = np.maximum(ga, TINY)
        ratio = g.boundary_length / g.cell_volume
        with np.errstate(invalid="ignore"):  # -inf - -inf where both parts are empty
            gap = np.nan_to_num(gf.Eb - gf.Ei[cells])
        stiff = (spec.curvature(gc, spec.m_boundary) + ga * spec.curvature(oc, spec.m_interior) / oc * ratio
                 + np.abs(gap) * ga / gc) / kappa ** 2
        s = float(np.max(stiff[act]))
        if s > 0:
            bounds.append(1.0 / s)
    # positivity: outflow of each cell within one step must not exceed its mass
    inner, q, transfer, qb = _mass_rates(state, gf)
    fc = g.face_cells[inner]
    out_c = np.zeros(g.n_cells)
    np.add.at(out_c, fc[:, 0], np.maximum(q, 0.0))
    np.add.at(out_c, fc[:, 1], np.maximum(-q, 0.0))
    np.add.at(out_c, cells, np.maximum(-transfer, 0.0))
    out_b = np.maximum(transfer, 0.0)
    if qb.size:
        j = np.arange(qb.size)
        np.add.at(out_b, (j - 1) % qb.size, np.maximum(qb, 0.0))
        np.add.at(out_b, j, np.maximum(-qb, 0.0))
    for m, o in ((state.cell_mass, out_c), (state.boundary_mass, out_b)):
        pos = o > 0
        if np.any(pos):
            bounds.append(float(np.min(m[pos] / o[pos])))
    return 0.5 * min(bounds) if bounds else math.inf


def step(state: FlowState, spec: EnergySpec, kappa: float, tau: float, *, check_cfl: bool = True,
         gf: GradientField | None = None) -> FlowState:
    """One explicit conservative step of length ``tau``.

    Raises :class:`FlowError` if ``tau`` exceeds the CFL bound (the bound is
    attached) or if a density would become negative.
    """
    g = state.geometry
    gf = gf if gf is not None else gradient_field(state, spec, kappa)
    if check_cfl:
        bound = cfl_bound(state, spec, kappa, gf)
        if tau > bound:
            raise FlowError(f"time step {tau:.3e} exceeds the CFL bound {bound:.3e}", bound=bound)
    inner, q, transfer, qb = _mass_rates(state, gf)
    fc = g.face_cells[inner]
    cm = state.cell_mass.copy()
    bm = state.boundary_mass.copy()
    dq = tau * q
    np.add.at(cm, fc[:, 0], -dq)
    np.add.at(cm, fc[:, 1], dq)
    dt = tau * transfer
    np.add.at(cm, g.boundary_cells, dt)
    bm -= dt
    if qb.size:
        j = np.arange(qb.size)
        dqb = tau * qb
        np.add.at(bm, (j - 1) % qb.size, -dqb)
        np.add.at(bm, j, dqb)
    if np.any(cm < 0) or np.any(bm < 0):
        raise FlowError("negative density after step", diagnostics={
            "min_cell_mass": float(cm.min()), "min_boundary_mass": float(bm.min()), "tau": tau})
    new = FlowState(g, cm, bm, state.time + tau)
    new.energy = energy(new, spec)
    return new


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    mass_drift: list = field(default_factory=list)
    states: list = field(default_factory=list)
    steps: int = 0
    rejected: int = 0

    def as_rows(self):
        return [{"time": t, "energy": e, "mass": m, "mass_drift": d}
                for t, e, m, d in zip(self.times, self.energies, self.masses, self.mass_drift)]


def run(rho_init: MeasurePair, spec: EnergySpec, kappa: float, T: float, tau: float, *,
        record_every: int = 1, keep_states: int = 0, max_steps: int = 10 ** 7) -> Trajectory:
    """March to time ``T`` from ``rho_init`` with step ``tau``, halving on
    rejection and growing back towards ``tau`` after accepted steps.

    ``keep_states`` frames are stored at evenly spaced record indices (0 keeps
    only the first and last state).
    """
    if not (T >= 0 and tau > 0):
        raise ValueError("need T >= 0 and tau > 0")
    st = FlowState.from_pair(rho_init, spec)
    m0 = st.total_mass
    traj = Trajectory()
    snaps = [st]

    def record(s):
        s.mass_drift = abs(s.total_mass - m0) / m0
        traj.times.append(s.time)
        traj.energies.append(s.energy)
        traj.masses.append(s.total_mass)
        traj.mass_drift.append(s.mass_drift)

    record(st)
    h = tau
    n = 0
    while st.time < T * (1 - 1e-14) and n < max_steps:
        h_try = min(h, T - st.time)
        try:
            gf = gradient_field(st, spec, kappa)
            bound = cfl_bound(st, spec, kappa, gf)
            if h_try > bound:
                h_try = bound
            new = step(st, spec, kappa, h_try, check_cfl=False, gf=gf)
        except FlowError as exc:
            traj.rejected += 1
            h = h_try / 2
            if h < 1e-12:
                raise FlowError("time step underflow", diagnostics={
                    "time": st.time, "energy": st.energy, "last_error": str(exc),
                    "min_omega": float(st.omega.min()), "min_gamma": float(st.gamma.min(initial=0.0))}) from None
            continue
        st = new
        n += 1
        h = min(tau, 2 * h)
        if n % record_every == 0:
            record(st)
            snaps.append(st)
    if traj.times[-1] != st.time:
        record(st)
        snaps.append(st)
    traj.steps = n
    if keep_states <= 0:
        traj.states = [snaps[0], snaps[-1]]
    else:
        idx = np.unique(np.linspace(0, len(snaps) - 1, keep_states).round().astype(int))
        traj.states = [snaps[i] for i in idx]
    return traj


def chain_rule_check(rho: MeasurePair, spec: EnergySpec, kappa: float, taus) -> dict:
    """Compare ``E(step(tau)) - E`` with ``-tau * dissipation`` for a halving
    sequence of steps.  Returns the residuals, the observed orders between
    successive steps and the Richardson-extrapolated slope."""
    st = FlowState.from_pair(rho, spec)
    gf = gradient_field(st, spec, kappa)
    D = dissipation(st, spec, kappa, gf)
    taus = [float(t) for t in taus]
    res, slopes = [], []
    for t in taus:
        new = step(st, spec, kappa, t, check_cfl=False, gf=gf)
        dE = new.energy - st.energy
        res.append(dE + t * D)
        slopes.append(dE / t)
    orders = [math.log(abs(a) / abs(b)) / math.log(t0 / t1)
              for a, b, t0, t1 in zip(res, res[1:], taus, taus[1:]) if a != 0 and b != 0]
    rich = [2 * s1 - s0 for s0, s1 in zip(slopes, slopes[1:])]
    return {"dissipation": D, "tangent_norm": tangent_norm(st, gf, kappa), "taus": taus,
            "residuals": res, "orders": orders, "richardson_slopes": rich}
