"""Coupled continuity equations on a staggered space-time grid.

Densities live on time nodes ``k = 0..nt`` and cell centres; momenta live on
time intervals and faces; the exchange flux ``f`` lives on time intervals and
boundary cells.  ``f`` enters twice: as the outward value of the interior
flux on the coupled faces, and as the source of the boundary equation.

The free unknowns (endpoints eliminated) are packed into one flat vector::

    [omega[1:nt], F, gamma[1:nt], G, f]

The constraint rows are scaled by ``vol * dt`` (interior) and ``blen * dt``
(boundary), so that pairing them with multipliers approximates a space-time
integral.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .action import Colocated, NumericalError
from .geometry import Geometry, GeometryError
from .measures import MeasurePair


@dataclass
class SpaceTimePath:
    geometry: Geometry
    omega: np.ndarray   # (nt+1, n_cells)
    F: np.ndarray       # (nt, n_free_faces)
    gamma: np.ndarray   # (nt+1, nb)
    G: np.ndarray       # (nt, n_boundary_faces)
    f: np.ndarray       # (nt, nb)

    def __post_init__(self):
        g = self.geometry
        nt = self.nt
        shapes = {"omega": (nt + 1, g.n_cells), "F": (nt, g.free_faces.size),
                  "gamma": (nt + 1, g.n_boundary), "G": (nt, g.n_boundary_faces),
                  "f": (nt, g.n_boundary)}
        for name, shape in shapes.items():
            a = np.asarray(getattr(self, name), dtype=float)
            if a.size != int(np.prod(shape)):
                raise GeometryError(f"{name} has shape {a.shape}, expected {shape}")
            setattr(self, name, a.reshape(shape))

    @property
    def nt(self) -> int:
        return np.asarray(self.omega).shape[0] - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    def frame(self, k: int) -> MeasurePair:
        return MeasurePair(self.geometry, self.omega[k], self.gamma[k])

    def full_faces(self, k: int) -> np.ndarray:
        """Full face field of interval ``k`` (coupled faces carry sign * f)."""
        g = self.geometry
        out = np.zeros(g.n_faces)
        out[g.free_faces] = self.F[k]
        out[g.boundary_face_map] = g.boundary_sign * self.f[k]
        return out

    def colocate(self) -> Colocated:
        return interpolate_colocate(self)

    def copy(self) -> "SpaceTimePath":
        return SpaceTimePath(self.geometry, self.omega.copy(), self.F.copy(), self.gamma.copy(),
                             self.G.copy(), self.f.copy())

    @classmethod
    def zeros(cls, geometry: Geometry, nt: int) -> "SpaceTimePath":
        g = geometry
        return cls(g, np.zeros((nt + 1, g.n_cells)), np.zeros((nt, g.free_faces.size)),
                   np.zeros((nt + 1, g.n_boundary)), np.zeros((nt, g.n_boundary_faces)),
                   np.zeros((nt, g.n_boundary)))


@dataclass
class CEResidual:
    interior: np.ndarray   # (nt, n_cells)
    boundary: np.ndarray   # (nt, nb)
    endpoint: np.ndarray   # concatenated mismatches at k=0 and k=nt

    def norm(self) -> float:
        return float(max(np.max(np.abs(self.interior), initial=0.0),
                         np.max(np.abs(self.boundary), initial=0.0),
                         np.max(np.abs(self.endpoint), initial=0.0)))

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol


def ce_residual(path: SpaceTimePath, rho0: MeasurePair, rho1: MeasurePair) -> CEResidual:
    """Pointwise residuals of both discrete continuity equations."""
    g = path.geometry
    if rho0.geometry != g or rho1.geometry != g:
        raise GeometryError("endpoint geometry differs from path geometry")
    dt = path.dt
    dom = np.diff(path.omega, axis=0) / dt
    div = np.stack([g.div_matrix @ path.full_faces(k) for k in range(path.nt)])
    dgam = np.diff(path.gamma, axis=0) / dt
    bdiv = (g.boundary_div_matrix @ path.G.T).T if g.n_boundary_faces else 0.0
    endpoint = np.concatenate([path.omega[0] - rho0.omega.ravel(), path.gamma[0] - rho0.gamma,
                               path.omega[-1] - rho1.omega.ravel(), path.gamma[-1] - rho1.gamma])
    return CEResidual(dom + div, dgam + bdiv - path.f, endpoint)


# -- assembled operators ------------------------------------------------------

def _time_diff(nt: int, dt: float) -> sp.csr_matrix:
    """Interior nodes 1..nt-1 -> intervals: (x_{k+1} - x_k)/dt."""
    rows, cols, vals = [], [], []
    for k in range(nt):
        if k + 1 <= nt - 1:
            rows.append(k); cols.append(k); vals.append(1.0 / dt)       # node k+1 -> column k
        if k >= 1:
            rows.append(k); cols.append(k - 1); vals.append(-1.0 / dt)  # node k -> column k-1
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, nt - 1))


def _time_avg(nt: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k in range(nt):
        if k + 1 <= nt - 1:
            rows.append(k); cols.append(k); vals.append(0.5)
        if k >= 1:
            rows.append(k); cols.append(k - 1); vals.append(0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, nt - 1))


class SpaceTimeOperators:
    """Sparse constraint operator ``A``, co-location ``I`` and metric weights
    for a fixed geometry and number of time steps."""

    def __init__(self, geom: Geometry, nt: int):
        if nt < 1:
            raise ValueError("nt must be positive")
        self.geom = g = geom
        self.nt = nt
        self.dt = dt = 1.0 / nt
        nc, nF, nb, nG = g.n_cells, g.free_faces.size, g.n_boundary, g.n_boundary_faces
        self.sizes = {"omega": (nt - 1) * nc, "F": nt * nF, "gamma": (nt - 1) * nb,
                      "G": nt * nG, "f": nt * nb}
        self.offsets = {}
        o = 0
        for name, n in self.sizes.items():
            self.offsets[name] = o
            o += n
        self.n = o

        Dt, At = _time_diff(nt, dt), _time_avg(nt)
        It = sp.identity(nt, format="csr")
        Dfree = g.div_matrix[:, g.free_faces]
        Dflux = g.div_matrix[:, g.boundary_face_map] @ sp.diags(g.boundary_sign)
        Ib = sp.identity(nb, format="csr")
        wi, wb = g.cell_volume * dt, g.boundary_length * dt
        self.w_int, self.w_bnd = wi, wb

        z = lambda r, c: sp.csr_matrix((r, c))
        A_int = sp.hstack([sp.kron(Dt, sp.identity(nc)), sp.kron(It, Dfree),
                           z(nt * nc, self.sizes["gamma"]), z(nt * nc, self.sizes["G"]),
                           sp.kron(It, Dflux)])
        A_bnd = sp.hstack([z(nt * nb, self.sizes["omega"]), z(nt * nb, self.sizes["F"]),
                           sp.kron(Dt, Ib), sp.kron(It, g.boundary_div_matrix),
                           -sp.kron(It, Ib)])
        self.A = sp.vstack([wi * A_int, wb * A_bnd]).tocsr()
        self.m = self.A.shape[0]
        self.w_U = np.concatenate([np.full(self.sizes["omega"] + self.sizes["F"], wi),
                                   np.full(self.sizes["gamma"] + self.sizes["G"] + self.sizes["f"], wb)])

        # co-location, V = [omega_bar, F_bar (component major), gamma_bar, G_bar, f_bar]
        d, db = g.dim, (g.dim - 1)
        self.vsizes = {"omega": nt * nc, "F": d * nt * nc, "gamma": nt * nb,
                       "G": db * nt * nb, "f": nt * nb}
        blocks = []
        blocks.append(sp.hstack([sp.kron(At, sp.identity(nc)), z(nt * nc, self.n - self.sizes["omega"])]))
        for comp in range(d):
            avg = g.face_average[comp]
            blocks.append(sp.hstack([z(nt * nc, self.sizes["omega"]), sp.kron(It, avg[:, g.free_faces]),
                                     z(nt * nc, self.sizes["gamma"] + self.sizes["G"]),
                                     sp.kron(It, avg[:, g.boundary_face_map] @ sp.diags(g.boundary_sign))]))
        pre = self.sizes["omega"] + self.sizes["F"]
        blocks.append(sp.hstack([z(nt * nb, pre), sp.kron(At, Ib), z(nt * nb, self.sizes["G"] + self.sizes["f"])]))
        if db:
            blocks.append(sp.hstack([z(nt * nG, pre + self.sizes["gamma"]), sp.kron(It, g.boundary_face_average),
                                     z(nt * nG, self.sizes["f"])]))
        blocks.append(sp.hstack([z(nt * nb, self.n - self.sizes["f"]), sp.kron(It, Ib)]))
        self.I = sp.vstack(blocks).tocsr()
        self.p = self.I.shape[0]
        self.voffsets = {}
        o = 0
        for name, n in self.vsizes.items():
            self.voffsets[name] = o
            o += n
        self.w_V = np.concatenate([np.full(self.vsizes["omega"] + self.vsizes["F"], wi),
                                   np.full(self.vsizes["gamma"] + self.vsizes["G"] + self.vsizes["f"], wb)])

    # -- packing -----------------------------------------------------------
    def pack(self, path: SpaceTimePath) -> np.ndarray:
        return np.concatenate([path.omega[1:-1].ravel(), path.F.ravel(), path.gamma[1:-1].ravel(),
                               path.G.ravel(), path.f.ravel()])

    def unpack(self, u: np.ndarray, rho0: MeasurePair, rho1: MeasurePair) -> SpaceTimePath:
        g, nt = self.geom, self.nt
        part = {k: u[self.offsets[k]:self.offsets[k] + n] for k, n in self.sizes.items()}
        omega = np.vstack([rho0.omega.ravel(), part["omega"].reshape(nt - 1, g.n_cells),
                           rho1.omega.ravel()])
        gamma = np.vstack([rho0.gamma, part["gamma"].reshape(nt - 1, g.n_boundary), rho1.gamma])
        return SpaceTimePath(g, omega, part["F"].reshape(nt, -1), gamma,
                             part["G"].reshape(nt, g.n_boundary_faces), part["f"].reshape(nt, -1))

    def rhs(self, rho0: MeasurePair, rho1: MeasurePair) -> np.ndarray:
        """Right-hand side ``b`` of ``A u = b`` carrying the pinned endpoints."""
        g, nt = self.geom, self.nt
        bi = np.zeros((nt, g.n_cells))
        bb = np.zeros((nt, g.n_boundary))
        bi[0] += rho0.omega.ravel()
        bi[-1] -= rho1.omega.ravel()
        bb[0] += rho0.gamma
        bb[-1] -= rho1.gamma
        return np.concatenate([g.cell_volume * bi.ravel(), g.boundary_length * bb.ravel()])

    def coloc_offset(self, rho0: MeasurePair, rho1: MeasurePair) -> np.ndarray:
        """Endpoint contribution ``c`` in ``V = I u + c``."""
        g, nt = self.geom, self.nt
        c = np.zeros(self.p)
        om = np.zeros((nt, g.n_cells))
        ga = np.zeros((nt, g.n_boundary))
        om[0] += 0.5 * rho0.omega.ravel()
        om[-1] += 0.5 * rho1.omega.ravel()
        ga[0] += 0.5 * rho0.gamma
        ga[-1] += 0.5 * rho1.gamma
        c[:self.vsizes["omega"]] = om.ravel()
        o = self.voffsets["gamma"]
        c[o:o + self.vsizes["gamma"]] = ga.ravel()
        return c

    def split_v(self, v: np.ndarray) -> Colocated:
        g, nt = self.geom, self.nt
        o, s = self.voffsets, self.vsizes
        om = v[o["omega"]:o["omega"] + s["omega"]].reshape(nt, g.n_cells)
        F = v[o["F"]:o["F"] + s["F"]].reshape(g.dim, nt, g.n_cells).transpose(1, 2, 0)
        ga = v[o["gamma"]:o["gamma"] + s["gamma"]].reshape(nt, g.n_boundary)
        G = v[o["G"]:o["G"] + s["G"]].reshape(g.dim - 1, nt, g.n_boundary).transpose(1, 2, 0)
        f = v[o["f"]:o["f"] + s["f"]].reshape(nt, g.n_boundary)
        return Colocated(om, F, ga, G, f, g.cell_volume, g.boundary_length)

    def join_v(self, c: Colocated) -> np.ndarray:
        return np.concatenate([c.omega.ravel(), c.F.transpose(2, 0, 1).ravel(), c.gamma.ravel(),
                               c.G.transpose(2, 0, 1).ravel(), c.f.ravel()])

    def null_vector(self) -> np.ndarray:
        """Multiplier direction annihilated by ``A^T`` (a common constant)."""
        return np.ones(self.m)


@lru_cache(maxsize=8)
def operators(geom: Geometry, nt: int) -> SpaceTimeOperators:
    return SpaceTimeOperators(geom, nt)


def interpolate_colocate(path: SpaceTimePath) -> Colocated:
    """Average densities over each time interval and face momenta onto cells."""
    g = path.geometry
    om = 0.5 * (path.omega[1:] + path.omega[:-1])
    ga = 0.5 * (path.gamma[1:] + path.gamma[:-1])
    full = np.stack([path.full_faces(k) for k in range(path.nt)])
    F = np.stack([(g.face_average[d] @ full.T).T for d in range(g.dim)], axis=-1)
    if g.n_boundary_faces:
        G = (g.boundary_face_average @ path.G.T).T[..., None]
    else:
        G = np.zeros((path.nt, g.n_boundary, 0))
    return Colocated(om, F, ga, G, path.f.copy(), g.cell_volume, g.boundary_length)


def interpolate_adjoint(geom: Geometry, c: Colocated) -> SpaceTimePath:
    """Adjoint of :func:`interpolate_colocate` for the plain (unweighted)
    Euclidean pairing of all entries, endpoint nodes included."""
    g = geom
    nt = c.nt
    om = np.zeros((nt + 1, g.n_cells))
    om[1:] += 0.5 * c.omega
    om[:-1] += 0.5 * c.omega
    ga = np.zeros((nt + 1, g.n_boundary))
    ga[1:] += 0.5 * c.gamma
    ga[:-1] += 0.5 * c.gamma
    full = sum((g.face_average[d].T @ c.F[..., d].T).T for d in range(g.dim))
    F = full[:, g.free_faces]
    f = c.f + full[:, g.boundary_face_map] * g.boundary_sign
    if g.n_boundary_faces:
        G = (g.boundary_face_average.T @ c.G[..., 0].T).T
    else:
        G = np.zeros((nt, 0))
    return SpaceTimePath(g, om, F, ga, G, f)


# -- projection ----------------------------------------------------------------

def project_ce(path: SpaceTimePath, rho0: MeasurePair, rho1: MeasurePair,
               cg_tol: float = 1e-9, cg_max: int | None = None) -> SpaceTimePath:
    """Closest CE-feasible path in the grid L^2 metric (each unknown weighted
    by its cell volume times dt), via Jacobi-preconditioned CG on the normal
    equations.  Endpoints are pinned to ``rho0`` and ``rho1``."""
    ops = operators(path.geometry, path.nt)
    A, winv = ops.A, 1.0 / ops.w_U
    u0 = ops.pack(path)
    b = ops.rhs(rho0, rho1)
    r = A @ u0 - b
    tol = cg_tol * (1.0 + np.linalg.norm(b))
    if np.linalg.norm(r) <= tol:
        return ops.unpack(u0, rho0, rho1)
    K = (A @ sp.diags(winv) @ A.T).tocsr()
    jac = 1.0 / K.diagonal()
    M = spla.LinearOperator(K.shape, matvec=lambda x: jac * x)
    maxiter = cg_max if cg_max is not None else 10 * ops.m
    lam, info = spla.cg(K, r, rtol=0.0, atol=0.5 * tol, maxiter=maxiter, M=M)
    u = u0 - winv * (A.T @ lam)
    res = float(np.linalg.norm(A @ u - b))
    if res > tol:
        raise NumericalError(f"CE projection: CG stopped at residual {res:.3e} (target {tol:.3e})", res)
    return ops.unpack(u, rho0, rho1)
