"""Reference values used to validate the solver.

* the explicit geodesic from an interior atom to a boundary atom in 1-D,
* Fisher-Rao costs between atoms at the same point,
* 1-D quadratic Wasserstein costs from quantile functions (on a segment,
  with atoms allowed, and on a circle),
* exact discrete optimal transport between finite point clouds (LP),
* the bounded-Lipschitz distance on a finite grid (LP).

All costs use the convention ``W^2 = min 1/2 int |x - y|^2 d pi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as opt
import scipy.sparse as sp

from .geometry import Geometry
from .measures import MeasurePair

MASS_MISMATCH = 1e-9


class OracleError(ValueError):
    pass


# -- explicit Dirac-to-boundary geodesic ----------------------------------------

def _alpha(R: float, kappa: float) -> float:
    return 1.0 + math.sqrt(1.0 + (R / kappa) ** 2)


def dirac_cost(R: float, kappa: float) -> float:
    """Squared distance between a unit atom at distance ``R`` from the
    boundary and a unit atom at the nearest boundary point."""
    if not kappa > 0:
        raise OracleError(f"kappa must be positive, got {kappa}")
    if not R >= 0:
        raise OracleError(f"R must be nonnegative, got {R}")
    if R == 0:
        return 2.0 * kappa ** 2
    a = _alpha(R, kappa)
    return 0.5 * (R ** 2 + kappa ** 2 * a) * a / (a - 1.0)


@dataclass(frozen=True)
class DiracGeodesic:
    R: float
    kappa: float

    def __post_init__(self):
        if not (self.R > 0 and self.kappa > 0):
            raise OracleError("R and kappa must be positive")

    @property
    def alpha(self) -> float:
        return _alpha(self.R, self.kappa)

    @property
    def cost(self) -> float:
        return dirac_cost(self.R, self.kappa)

    def frame(self, t: float, edges=None) -> "DiracFrame":
        return dirac_frame(self.R, self.kappa, t, edges)

    def potentials(self, t, r):
        """Interior and boundary potentials ``r^2/(2t)`` and ``R^2/(2t) + kappa^2 alpha / t``.

        Together they form an optimal pair for the dual problem; ``r`` is the
        distance from the starting atom.
        """
        t = np.asarray(t, dtype=float)
        phi = np.asarray(r, dtype=float) ** 2 / (2 * t)
        psi = self.R ** 2 / (2 * t) + self.kappa ** 2 * self.alpha / t
        return phi, psi


@dataclass
class DiracFrame:
    """The geodesic at one time, in the distance ``r`` from the starting atom.

    ``cell_mass`` holds the exact interior mass of every cell of ``edges``
    (``None`` if no grid was requested).  At ``t = 0`` the interior part is
    the atom at ``r = 0`` and ``atom`` is set.
    """

    t: float
    alpha: float
    R: float
    boundary_mass: float
    interior_mass: float
    flux: float                 # mass rate into the boundary atom
    edges: np.ndarray | None = None
    cell_mass: np.ndarray | None = None
    atom: bool = False

    def density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.atom:
            return np.zeros_like(r)
        lo = self.R * self.t
        with np.errstate(divide="ignore"):
            val = self.alpha * (lo / r) ** self.alpha / r
        return np.where((r >= lo) & (r <= self.R), val, 0.0)

    def velocity(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.atom:
            return np.zeros_like(r)
        return r / self.t


def dirac_frame(R: float, kappa: float, t: float, edges=None) -> DiracFrame:
    """Frame of the explicit geodesic at time ``t``.

    The interior part has density ``alpha (Rt/r)^alpha / r`` on ``[Rt, R]``,
    the boundary atom carries ``t^alpha`` and is fed at rate
    ``alpha t^(alpha-1)``.  With ``edges`` (increasing, in ``r``) the exact
    mass of each cell is returned as well.
    """
    geo = DiracGeodesic(R, kappa)
    a = geo.alpha
    if not 0 <= t <= 1:
        raise OracleError(f"t must lie in [0, 1], got {t}")
    m = t ** a
    flux = a * t ** (a - 1.0)
    fr = DiracFrame(t, a, R, m, 1.0 - m, flux, atom=(t == 0))
    if edges is not None:
        e = np.asarray(edges, dtype=float)
        if fr.atom:
            cm = np.zeros(e.size - 1)
            hit = np.searchsorted(e, 0.0, side="right") - 1
            if 0 <= hit < cm.size:
                cm[hit] = 1.0
        else:
            lo = np.clip(e[:-1], R * t, R)
            hi = np.clip(e[1:], R * t, R)
            # integral of alpha (Rt)^alpha r^(-alpha-1) from lo to hi, written with
            # ratios Rt/r <= 1 so that tiny t neither overflows nor underflows
            lead = R * t
            with np.errstate(divide="ignore", invalid="ignore"):
                qlo = np.where(lo > 0, lead / lo, 1.0) ** a
                qhi = np.where(hi > 0, lead / hi, 1.0) ** a
            cm = np.where(hi > lo, qlo - qhi, 0.0)
        fr.edges, fr.cell_mass = e, cm
    return fr


def dirac_pair(geom: Geometry, R: float, kappa: float, t: float) -> MeasurePair:
    """The geodesic frame on the interval: the atom starts at ``lx - R`` and
    ends at the right boundary point.  Cell masses are exact."""
    if geom.kind != "interval":
        raise OracleError("dirac_pair is defined on the interval")
    edges = np.linspace(0.0, geom.lx, geom.nx + 1) - (geom.lx - R)
    fr = dirac_frame(R, kappa, t, edges)
    gamma = np.array([0.0, fr.boundary_mass])
    return MeasurePair(geom, fr.cell_mass / geom.cell_volume, gamma)


# -- Fisher-Rao ---------------------------------------------------------------

def fisher_rao_cost(m0: float, m1: float, kappa: float = 1.0) -> float:
    """Pure reaction cost between atoms of masses ``m0`` and ``m1`` at one point."""
    if m0 < 0 or m1 < 0:
        raise OracleError("masses must be nonnegative")
    return 2.0 * kappa ** 2 * (math.sqrt(m1) - math.sqrt(m0)) ** 2


# -- 1-D Wasserstein from quantile functions ---------------------------------------

@dataclass
class LineMeasure:
    """Piecewise-uniform mass on cells of ``edges`` plus atoms."""

    edges: np.ndarray
    cell_mass: np.ndarray
    atom_pos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atom_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.cell_mass = np.asarray(self.cell_mass, dtype=float)
        self.atom_pos = np.atleast_1d(np.asarray(self.atom_pos, dtype=float))
        self.atom_mass = np.atleast_1d(np.asarray(self.atom_mass, dtype=float))
        if self.cell_mass.size != self.edges.size - 1 and not (self.edges.size == 0 and self.cell_mass.size == 0):
            raise OracleError("need one cell mass per cell")
        if self.atom_pos.shape != self.atom_mass.shape:
            raise OracleError("atom positions and masses differ in length")
        if np.any(self.cell_mass < 0) or np.any(self.atom_mass < 0):
            raise OracleError("negative mass")

    @property
    def mass(self) -> float:
        return float(self.cell_mass.sum() + self.atom_mass.sum())

    @classmethod
    def atoms(cls, pos, mass) -> "LineMeasure":
        return cls(np.zeros(0), np.zeros(0), pos, mass)

    @classmethod
    def density(cls, edges, density) -> "LineMeasure":
        e = np.asarray(edges, dtype=float)
        return cls(e, np.asarray(density, dtype=float) * np.diff(e))


def line_measure(pair: MeasurePair, part: str = "total") -> LineMeasure:
    """A measure on the interval as a :class:`LineMeasure`.

    ``part`` selects the interior density, the two boundary atoms, or their sum.
    """
    g = pair.geometry
    if g.kind != "interval":
        raise OracleError("line_measure needs an interval geometry")
    edges = np.linspace(0.0, g.lx, g.nx + 1)
    cells = pair.omega * g.cell_volume
    if part == "interior":
        return LineMeasure(edges, cells)
    if part == "boundary":
        return LineMeasure.atoms(g.boundary_points(), pair.gamma * g.boundary_length)
    if part == "total":
        return LineMeasure(edges, cells, g.boundary_points(), pair.gamma * g.boundary_length)
    raise OracleError(f"unknown part {part!r}")


def quantile_segments(mu: LineMeasure) -> np.ndarray:
    """Pieces ``(s_lo, s_hi, x_lo, x_hi)`` of the quantile function, in order.

    On each piece the quantile is linear in the cumulative mass ``s``; atoms
    give flat pieces.  Empty cells are skipped, so ``x`` may jump between pieces.
    """
    e = mu.edges
    pieces = []
    if mu.cell_mass.size:
        keep = mu.cell_mass > 0
        pieces.append(np.stack([e[:-1][keep], e[1:][keep], mu.cell_mass[keep],
                                np.ones(keep.sum())], axis=1))
    if mu.atom_mass.size:
        keep = mu.atom_mass > 0
        pieces.append(np.stack([mu.atom_pos[keep], mu.atom_pos[keep], mu.atom_mass[keep],
                                np.zeros(keep.sum())], axis=1))
    if not pieces:
        return np.zeros((0, 4))
    P = np.concatenate(pieces)
    # sort by position; atoms before a cell starting at the same point
    order = np.lexsort((P[:, 3], P[:, 1], P[:, 0]))
    P = P[order]
    s_hi = np.cumsum(P[:, 2])
    s_lo = s_hi - P[:, 2]
    return np.stack([s_lo, s_hi, P[:, 0], P[:, 1]], axis=1)


def _evaluate(seg: np.ndarray, s: np.ndarray, locate: np.ndarray) -> np.ndarray:
    """Quantile at ``s`` on the piece containing ``locate`` (same shape)."""
    k = np.clip(np.searchsorted(seg[:, 1], locate, side="left"), 0, len(seg) - 1)
    lo, hi, xl, xh = seg[k].T
    frac = (s - lo) / np.where(hi > lo, hi - lo, 1.0)
    return xl + (xh - xl) * frac


def _quantile_cost(seg0: np.ndarray, seg1: np.ndarray, total: float) -> float:
    """1/2 int_0^total |Q0 - Q1|^2 ds, exact for piecewise linear quantiles."""
    cuts = np.unique(np.concatenate([[0.0, total], seg0[:, :2].ravel(), seg1[:, :2].ravel()]))
    cuts = cuts[(cuts >= 0) & (cuts <= total)]
    a, b = cuts[:-1], cuts[1:]
    h = b - a
    keep = h > 0
    a, b, h = a[keep], b[keep], h[keep]
    mid = 0.5 * (a + b)
    d = [(_evaluate(seg0, s, mid) - _evaluate(seg1, s, mid)) for s in (a, mid, b)]
    # Simpson's rule is exact for the quadratic integrand on each piece
    return float(0.5 * np.sum(h * (d[0] ** 2 + 4 * d[1] ** 2 + d[2] ** 2) / 6.0))


def wasserstein_1d(mu0: LineMeasure, mu1: LineMeasure) -> float:
    """Quadratic transport cost on the line; ``inf`` if the masses differ by more than 1e-9."""
    m0, m1 = mu0.mass, mu1.mass
    if abs(m0 - m1) > MASS_MISMATCH:
        return math.inf
    if m0 == 0:
        return 0.0
    seg0, seg1 = quantile_segments(mu0), quantile_segments(mu1)
    # absorb rounding in the totals into the last piece
    total = min(seg0[-1, 1], seg1[-1, 1])
    seg0[-1, 1] = seg1[-1, 1] = max(seg0[-1, 1], seg1[-1, 1])
    return _quantile_cost(seg0, seg1, total)


def _extend_periodic(seg: np.ndarray, period: float, copies: int = 2) -> np.ndarray:
    m = seg[-1, 1]
    out = [seg + np.array([k * m, k * m, k * period, k * period]) for k in range(-copies, copies + 1)]
    return np.concatenate(out)


def wasserstein_periodic(mu0: LineMeasure, mu1: LineMeasure, period: float,
                         return_shift: bool = False):
    """Quadratic transport cost on a circle of length ``period``.

    Both measures are given on ``[0, period)``.  The cost is the minimum over
    mass shifts ``theta`` of ``1/2 int |Q0(s) - Q1(s + theta)|^2 ds`` with
    ``Q1`` extended periodically; the function is convex in ``theta``.
    """
    m0, m1 = mu0.mass, mu1.mass
    if abs(m0 - m1) > MASS_MISMATCH:
        return (math.inf, math.nan) if return_shift else math.inf
    if m0 == 0:
        return (0.0, 0.0) if return_shift else 0.0
    seg0 = quantile_segments(mu0)
    seg1 = quantile_segments(mu1)
    seg0[-1, 1] = m0
    seg1[-1, 1] = m0
    ext = _extend_periodic(seg1, period)

    def cost(theta):
        sh = ext - np.array([theta, theta, 0.0, 0.0])
        sh = sh[(sh[:, 1] > 0) & (sh[:, 0] < m0)]
        return _quantile_cost(seg0, sh, m0)

    # convex: scan a coarse grid to bracket, then refine with bounded Brent
    grid = np.linspace(-m0, m0, 81)
    vals = np.array([cost(th) for th in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = opt.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * max(1.0, m0)})
    best, theta = (res.fun, res.x) if res.fun <= vals[k] else (vals[k], grid[k])
    # the cost is quadratic between shifts where quantile breakpoints meet;
    # polish by minimizing those quadratics exactly near the Brent point
    kinks = np.unique((ext[:, 1][None, :] - seg0[:, 1][:, None]).ravel())
    j = int(np.searchsorted(kinks, theta))
    nodes = kinks[max(j - 2, 0):j + 2]
    for a, b in zip(nodes[:-1], nodes[1:]):
        fa, fm, fb = cost(a), cost(0.5 * (a + b)), cost(b)
        curv = fa - 2 * fm + fb
        cand = [(fa, a), (fb, b)]
        if curv > 0:
            x = 0.5 * (a + b) + 0.25 * (b - a) * (fa - fb) / curv
            if a < x < b:
                cand.append((cost(x), x))
        for v, x in cand:
            if v < best:
                best, theta = v, x
    return (float(best), float(theta)) if return_shift else float(best)


def boundary_wasserstein(g0: np.ndarray, g1: np.ndarray, geom: Geometry) -> float:
    """Quadratic transport cost between boundary densities of ``geom``.

    The two end points of the interval are not connected, so the cost is 0
    when the atoms agree and ``inf`` otherwise.  The strip edge is a circle.
    """
    g0, g1 = np.asarray(g0, dtype=float), np.asarray(g1, dtype=float)
    if geom.kind == "interval":
        return 0.0 if np.all(np.abs(g0 - g1) <= MASS_MISMATCH) else math.inf
    edges = np.linspace(0.0, geom.lx, geom.nx + 1)
    h = geom.boundary_length
    return wasserstein_periodic(LineMeasure(edges, g0 * h), LineMeasure(edges, g1 * h), geom.lx)


# -- exact discrete transport (LP) ------------------------------------------------

def pairwise_distance(x, y, period: float | None = None) -> np.ndarray:
    """Euclidean distances between rows of ``x`` and ``y`` (first coordinate
    periodic when ``period`` is given)."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    d = x[:, None, :] - y[None, :, :]
    if period is not None:
        d[..., 0] = np.abs(d[..., 0])
        d[..., 0] = np.minimum(d[..., 0], period - d[..., 0])
    return np.sqrt(np.sum(d ** 2, axis=-1))


def discrete_transport(x0, m0, x1, m1, period: float | None = None) -> float:
    """Exact quadratic transport cost between two finite point clouds (LP)."""
    m0, m1 = np.asarray(m0, dtype=float), np.asarray(m1, dtype=float)
    if abs(m0.sum() - m1.sum()) > MASS_MISMATCH:
        return math.inf
    C = 0.5 * pairwise_distance(x0, x1, period) ** 2
    n0, n1 = C.shape
    rows = sp.vstack([sp.kron(sp.identity(n0), np.ones((1, n1))),
                      sp.kron(np.ones((1, n0)), sp.identity(n1))]).tocsr()
    rhs = np.concatenate([m0, m1 * (m0.sum() / max(m1.sum(), 1e-300))])
    res = opt.linprog(C.ravel(), A_eq=rows[:-1], b_eq=rhs[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise OracleError(f"transport LP failed: {res.message}")
    return float(res.fun)


# -- bounded-Lipschitz distance ----------------------------------------------

def bounded_lipschitz(m0, m1, dist: np.ndarray | None = None, *, points=None,
                      period: float | None = None, chain: bool = False) -> float:
    """``sup { int Phi d(m1 - m0) : |Phi|_inf + Lip(Phi) <= 1 }`` on a finite set.

    Give either the full distance matrix ``dist`` or the ``points``.  With
    ``chain=True`` the points are ordered along a line (or a circle when
    ``period`` is set) and only neighbouring Lipschitz constraints are used,
    which is equivalent there.  The LP variables are ``(Phi, bound, lip)``.
    """
    m0 = np.ravel(np.asarray(m0, dtype=float))
    m1 = np.ravel(np.asarray(m1, dtype=float))
    n = m0.size
    if m1.size != n:
        raise OracleError("measures must live on the same grid")
    if n == 0:
        return 0.0
    if chain:
        if points is None:
            raise OracleError("chain mode needs points")
        x = np.ravel(np.asarray(points, dtype=float))
        order = np.argsort(x)
        i = order[:-1]
        j = order[1:]
        dij = x[j] - x[i]
        if period is not None and n > 1:
            i = np.append(i, order[-1])
            j = np.append(j, order[0])
            dij = np.append(dij, period - x[order[-1]] + x[order[0]])
    else:
        if dist is None:
            if points is None:
                raise OracleError("need dist or points")
            dist = pairwise_distance(points, points, period)
        i, j = np.triu_indices(n, 1)
        dij = np.asarray(dist)[i, j]
    k = i.size
    # Phi_i - Phi_j - d_ij lip <= 0 and the reverse
    r = np.arange(k)
    pair = sp.csr_matrix((np.concatenate([np.ones(k), -np.ones(k)]),
                          (np.concatenate([r, r]), np.concatenate([i, j]))), shape=(k, n))
    lipcol = sp.csr_matrix(-dij.reshape(-1, 1))
    zero = sp.csr_matrix((k, 1))
    eye = sp.identity(n, format="csr")
    one = sp.csr_matrix(np.ones((n, 1)))
    A = sp.vstack([
        sp.hstack([pair, zero, lipcol]),
        sp.hstack([-pair, zero, lipcol]),
        sp.hstack([eye, -one, sp.csr_matrix((n, 1))]),
        sp.hstack([-eye, -one, sp.csr_matrix((n, 1))]),
        sp.csr_matrix(np.concatenate([np.zeros(n), [1.0, 1.0]]).reshape(1, -1)),
    ]).tocsr()
    rhs = np.concatenate([np.zeros(2 * k + 2 * n), [1.0]])
    c = np.concatenate([-(m1 - m0), [0.0, 0.0]])
    res = opt.linprog(c, A_ub=A, b_ub=rhs, bounds=[(None, None)] * n + [(0, None), (0, None)],
                      method="highs")
    if res.status != 0:
        raise OracleError(f"bounded-Lipschitz LP did not converge: {res.message}")
    return float(max(-res.fun, 0.0))


def bl_interior(pair0: MeasurePair, pair1: MeasurePair) -> float:
    """Bounded-Lipschitz distance between the interior parts (cell masses at centres)."""
    g = pair0.geometry
    a = pair0.omega.ravel() * g.cell_volume
    b = pair1.omega.ravel() * g.cell_volume
    if g.kind == "interval":
        return bounded_lipschitz(a, b, points=g.cell_centers()[:, 0], chain=True)
    pts = g.cell_centers().reshape(-1, 2)
    return bounded_lipschitz(a, b, points=pts, period=g.lx)


def bl_boundary(pair0: MeasurePair, pair1: MeasurePair) -> float:
    """Bounded-Lipschitz distance between the boundary parts."""
    g = pair0.geometry
    a = pair0.gamma * g.boundary_length
    b = pair1.gamma * g.boundary_length
    if g.kind == "interval":
        return bounded_lipschitz(a, b, points=g.boundary_points(), chain=True)
    return bounded_lipschitz(a, b, points=g.boundary_points(), period=g.lx, chain=True)
