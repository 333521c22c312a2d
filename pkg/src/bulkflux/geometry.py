"""Discrete domains: a 1-D interval with two boundary atoms, and a periodic
strip whose lower edge carries the boundary density.

Face fields are stored flat.  On the interval the faces are numbered
``0..nx`` from left to right.  On the strip the ``nx*ny`` x-faces come first
(face ``(i, j)`` is the left face of cell ``(i, j)``, periodic in ``i``),
followed by the ``nx*(ny+1)`` y-faces (face ``(i, j)`` is the lower face of
cell ``(i, j)``; ``j = 0`` lies on the boundary edge, ``j = ny`` is the wall).
All face values are oriented along +x / +y.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GeometryError(ValueError):
    """Invalid geometry parameters or mismatched field shapes."""


@dataclass(frozen=True)
class Geometry:
    kind: str
    nx: int
    ny: int
    lx: float
    ly: float

    # -- sizes -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def cell_shape(self) -> tuple:
        return (self.nx,) if self.kind == "interval" else (self.nx, self.ny)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny if self.kind == "strip" else 1.0

    @property
    def cell_volume(self) -> float:
        return self.dx if self.kind == "interval" else self.dx * self.dy

    @property
    def n_boundary(self) -> int:
        return 2 if self.kind == "interval" else self.nx

    @property
    def boundary_length(self) -> float:
        """Length of a boundary cell (unit atom weight on the interval)."""
        return 1.0 if self.kind == "interval" else self.lx / self.nx

    @property
    def n_faces(self) -> int:
        if self.kind == "interval":
            return self.nx + 1
        return self.nx * self.ny + self.nx * (self.ny + 1)

    @property
    def n_boundary_faces(self) -> int:
        """Tangential faces of the boundary grid (empty on the interval)."""
        return 0 if self.kind == "interval" else self.nx

    # -- coordinates -------------------------------------------------------
    def cell_centers(self) -> np.ndarray:
        """Cell centres, shape ``cell_shape + (dim,)``."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        if self.kind == "interval":
            return x[:, None]
        y = (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def boundary_points(self) -> np.ndarray:
        """Positions of the boundary cells along the boundary coordinate."""
        if self.kind == "interval":
            return np.array([0.0, self.lx])
        return (np.arange(self.nx) + 0.5) * self.dx

    # -- coupling ----------------------------------------------------------
    def _yface(self, i, j):
        return self.nx * self.ny + np.asarray(i) * (self.ny + 1) + np.asarray(j)

    @cached_property
    def boundary_face_map(self) -> np.ndarray:
        """Interior face index each boundary flux slot couples to."""
        if self.kind == "interval":
            return np.array([0, self.nx])
        return self._yface(np.arange(self.nx), 0)

    @cached_property
    def boundary_sign(self) -> np.ndarray:
        """Outward normal component of each coupled face (face value = sign * f)."""
        if self.kind == "interval":
            return np.array([-1.0, 1.0])
        return -np.ones(self.nx)

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Flat index of the interior cell adjacent to each boundary cell."""
        if self.kind == "interval":
            return np.array([0, self.nx - 1])
        return np.arange(self.nx) * self.ny

    @cached_property
    def wall_faces(self) -> np.ndarray:
        if self.kind == "interval":
            return np.array([], dtype=int)
        return self._yface(np.arange(self.nx), self.ny)

    @cached_property
    def free_faces(self) -> np.ndarray:
        """Faces whose flux is a free unknown (neither coupled nor wall)."""
        mask = np.ones(self.n_faces, dtype=bool)
        mask[self.boundary_face_map] = False
        mask[self.wall_faces] = False
        return np.flatnonzero(mask)

    # -- sparse stencils ---------------------------------------------------
    @cached_property
    def face_cells(self) -> np.ndarray:
        """For every face the (lower, upper) adjacent cell, -1 if outside."""
        if self.kind == "interval":
            lo = np.arange(-1, self.nx)
            hi = np.arange(0, self.nx + 1)
            hi[-1] = -1
            return np.stack([lo, hi], axis=1)
        nx, ny = self.nx, self.ny
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        xlo = ((i - 1) % nx) * ny + j
        xhi = i * ny + j
        xf = np.stack([xlo.ravel(), xhi.ravel()], axis=1)
        i, j = np.meshgrid(np.arange(nx), np.arange(ny + 1), indexing="ij")
        ylo = np.where(j > 0, i * ny + j - 1, -1)
        yhi = np.where(j < ny, i * ny + j, -1)
        yf = np.stack([ylo.ravel(), yhi.ravel()], axis=1)
        return np.concatenate([xf, yf])

    @cached_property
    def face_direction(self) -> np.ndarray:
        if self.kind == "interval":
            return np.zeros(self.n_faces, dtype=int)
        return np.concatenate([np.zeros(self.nx * self.ny, dtype=int),
                               np.ones(self.nx * (self.ny + 1), dtype=int)])

    @cached_property
    def face_spacing(self) -> np.ndarray:
        """Distance between the centres of the two cells sharing a face."""
        return np.where(self.face_direction == 0, self.dx, self.dy)

    @cached_property
    def div_matrix(self) -> sp.csr_matrix:
        """Finite-volume divergence, faces -> cells."""
        fc = self.face_cells
        area = np.where(self.face_direction == 0, self.dy, self.dx)
        if self.kind == "interval":
            area = np.ones(self.n_faces)
        rows, cols, vals = [], [], []
        faces = np.arange(self.n_faces)
        for side, sgn in ((0, 1.0), (1, -1.0)):  # lower cell sees outflow, upper inflow
            ok = fc[:, side] >= 0
            rows.append(fc[ok, side])
            cols.append(faces[ok])
            vals.append(sgn * area[ok] / self.cell_volume)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_cells, self.n_faces))

    @cached_property
    def grad_matrix(self) -> sp.csr_matrix:
        """Difference quotient across each face (cells -> faces); zero on
        faces with a missing neighbour."""
        fc = self.face_cells
        ok = (fc[:, 0] >= 0) & (fc[:, 1] >= 0)
        faces = np.flatnonzero(ok)
        h = self.face_spacing[ok]
        rows = np.concatenate([faces, faces])
        cols = np.concatenate([fc[ok, 1], fc[ok, 0]])
        vals = np.concatenate([1.0 / h, -1.0 / h])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_faces, self.n_cells))

    @cached_property
    def face_average(self) -> list:
        """Per direction, the operator averaging face values onto cells."""
        fc = self.face_cells
        out = []
        for d in range(self.dim):
            rows, cols = [], []
            for side in (0, 1):
                ok = (fc[:, side] >= 0) & (self.face_direction == d)
                rows.append(fc[ok, side])
                cols.append(np.flatnonzero(ok))
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            out.append(sp.csr_matrix((np.full(r.size, 0.5), (r, c)),
                                     shape=(self.n_cells, self.n_faces)))
        return out

    @cached_property
    def boundary_div_matrix(self) -> sp.csr_matrix:
        """Periodic divergence on the boundary grid.  Boundary face ``j`` is the
        left face of boundary cell ``j``."""
        n = self.n_boundary_faces
        if n == 0:
            return sp.csr_matrix((self.n_boundary, 0))
        j = np.arange(n)
        rows = np.concatenate([(j - 1) % n, j])
        cols = np.concatenate([j, j])
        vals = np.concatenate([np.ones(n), -np.ones(n)]) / self.boundary_length
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_boundary, n))

    @cached_property
    def boundary_face_average(self) -> sp.csr_matrix:
        n = self.n_boundary_faces
        if n == 0:
            return sp.csr_matrix((self.n_boundary, 0))
        j = np.arange(n)
        rows = np.concatenate([j, j])
        cols = np.concatenate([j, (j + 1) % n])
        return sp.csr_matrix((np.full(2 * n, 0.5), (rows, cols)), shape=(n, n))

    @cached_property
    def boundary_grad_matrix(self) -> sp.csr_matrix:
        n = self.n_boundary_faces
        if n == 0:
            return sp.csr_matrix((0, self.n_boundary))
        j = np.arange(n)
        rows = np.concatenate([j, j])
        cols = np.concatenate([j, (j - 1) % n])
        vals = np.concatenate([np.ones(n), -np.ones(n)]) / self.boundary_length
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind, "nx": self.nx, "lx": self.lx}
        if self.kind == "strip":
            d.update(ny=self.ny, ly=self.ly)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        try:
            if d["kind"] == "interval":
                return build_interval(int(d["nx"]), float(d.get("lx", 1.0)))
            if d["kind"] == "strip":
                return build_strip(int(d["nx"]), int(d["ny"]),
                                   float(d.get("lx", 1.0)), float(d.get("ly", 1.0)))
        except KeyError as exc:
            raise GeometryError(f"missing geometry field {exc}") from None
        raise GeometryError(f"unknown geometry kind {d.get('kind')!r}")


def build_interval(nx: int, lx: float = 1.0) -> Geometry:
    """Uniform grid of ``nx`` cells on [0, lx] with an atom at each end."""
    if int(nx) != nx or nx < 2:
        raise GeometryError(f"interval needs nx >= 2, got {nx}")
    if not lx > 0:
        raise GeometryError(f"interval length must be positive, got {lx}")
    return Geometry("interval", int(nx), 1, float(lx), 1.0)


def build_strip(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Geometry:
    """Periodic-in-x strip [0, lx) x [0, ly]; the boundary is the edge y = 0."""
    if int(nx) != nx or nx < 3:
        raise GeometryError(f"strip needs nx >= 3 for periodicity, got {nx}")
    if int(ny) != ny or ny < 2:
        raise GeometryError(f"strip needs ny >= 2, got {ny}")
    if not (lx > 0 and ly > 0):
        raise GeometryError("strip lengths must be positive")
    return Geometry("strip", int(nx), int(ny), float(lx), float(ly))


def _as_face_vector(geom: Geometry, F) -> np.ndarray:
    if isinstance(F, tuple):
        if geom.kind != "strip" or len(F) != 2:
            raise GeometryError("tuple face fields are only used on the strip")
        Fx, Fy = (np.asarray(a, dtype=float) for a in F)
        if Fx.shape != (geom.nx, geom.ny) or Fy.shape != (geom.nx, geom.ny + 1):
            raise GeometryError(f"face field shapes {Fx.shape}, {Fy.shape} do not match geometry")
        return np.concatenate([Fx.ravel(), Fy.ravel()])
    F = np.asarray(F, dtype=float)
    if F.shape != (geom.n_faces,):
        raise GeometryError(f"face field of shape {F.shape}, expected ({geom.n_faces},)")
    return F


def divergence_interior(geom: Geometry, F) -> np.ndarray:
    """Outward flux balance per cell divided by the cell volume.

    ``F`` is a flat face field (boundary and wall faces included) or, on the
    strip, a tuple ``(Fx, Fy)`` of shapes ``(nx, ny)`` and ``(nx, ny+1)``.
    """
    F = _as_face_vector(geom, F)
    return (geom.div_matrix @ F).reshape(geom.cell_shape)


def divergence_boundary(geom: Geometry, G) -> np.ndarray:
    G = np.asarray(G, dtype=float).ravel()
    if G.size != geom.n_boundary_faces:
        raise GeometryError(f"boundary face field of size {G.size}, expected {geom.n_boundary_faces}")
    return geom.boundary_div_matrix @ G


def boundary_outflux(geom: Geometry, F) -> float:
    """Net outward flux through the coupled boundary faces, length weighted."""
    F = _as_face_vector(geom, F)
    area = 1.0 if geom.kind == "interval" else geom.dx
    return float(np.sum(geom.boundary_sign * F[geom.boundary_face_map]) * area)
