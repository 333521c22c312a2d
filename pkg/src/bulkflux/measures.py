"""Pairs (omega, gamma) of interior and boundary densities with total mass one."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Geometry, GeometryError

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
RENORM_TOL = 1e-9


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class MassBudget:
    interior_mass: float
    boundary_mass: float


@dataclass
class MeasurePair:
    """Densities w.r.t. cell volume (omega) and boundary length (gamma)."""

    geometry: Geometry
    omega: np.ndarray
    gamma: np.ndarray
    warnings: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        g = self.geometry
        self.omega = np.asarray(self.omega, dtype=float).reshape(g.cell_shape)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(g.n_boundary)

    def validate(self, tol: float = MASS_TOL) -> "MeasurePair":
        if np.any(self.omega < 0) or np.any(self.gamma < 0):
            raise MeasureError("negative density entry")
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.gamma))):
            raise MeasureError("non-finite density entry")
        m = sum(total_mass(self))
        if abs(m - 1.0) > tol:
            raise MeasureError(f"total mass {m!r} differs from 1")
        return self

    @property
    def budget(self) -> MassBudget:
        return MassBudget(*total_mass(self))

    def copy(self) -> "MeasurePair":
        return MeasurePair(self.geometry, self.omega.copy(), self.gamma.copy())


def total_mass(rho: MeasurePair) -> tuple:
    g = rho.geometry
    return (float(rho.omega.sum() * g.cell_volume),
            float(rho.gamma.sum() * g.boundary_length))


def make_pair(geometry: Geometry, omega=None, gamma=None, *, normalize: bool = False) -> MeasurePair:
    """Build a pair, filling missing parts with zeros.  With ``normalize`` the
    total mass is rescaled to one (any positive total)."""
    omega = np.zeros(geometry.cell_shape) if omega is None else np.asarray(omega, dtype=float)
    gamma = np.zeros(geometry.n_boundary) if gamma is None else np.asarray(gamma, dtype=float)
    rho = MeasurePair(geometry, omega, gamma)
    if normalize:
        m = sum(total_mass(rho))
        if not m > 0:
            raise MeasureError("cannot normalize a zero measure")
        rho = MeasurePair(geometry, rho.omega / m, rho.gamma / m)
    return rho.validate()


def mollified_dirac(geometry: Geometry, location, mass: float = 1.0, width: float | None = None,
                    side: str = "interior") -> np.ndarray:
    """Truncated Gaussian bump of standard deviation ``width`` carrying ``mass``.

    For ``side="boundary"`` on the interval an atom at the nearest end point is
    returned instead.  On the strip, a boundary bump lives on the edge grid.
    """
    if not 0 < mass <= 1:
        raise MeasureError(f"mass must lie in (0, 1], got {mass}")
    g = geometry
    loc = np.atleast_1d(np.asarray(location, dtype=float))
    if side == "boundary":
        if g.kind == "interval":
            x = float(loc[0])
            if np.isclose(x, 0.0):
                idx = 0
            elif np.isclose(x, g.lx):
                idx = 1
            else:
                raise MeasureError(f"interval boundary atoms sit at 0 or {g.lx}, got {x}")
            out = np.zeros(2)
            out[idx] = mass
            return out
        x = float(loc[0])
        if not 0 <= x <= g.lx:
            raise MeasureError("location outside the boundary edge")
        if width is None or width < 2 * g.dx:
            raise MeasureError("width must cover at least two cells")
        d = g.boundary_points() - x
        d = (d + g.lx / 2) % g.lx - g.lx / 2
        bump = np.exp(-0.5 * (d / width) ** 2)
        bump[np.abs(d) > 4 * width] = 0.0
        return bump * (mass / (bump.sum() * g.boundary_length))
    if side != "interior":
        raise MeasureError(f"unknown side {side!r}")
    if loc.size != g.dim:
        raise MeasureError(f"location needs {g.dim} coordinates")
    hi = np.array([g.lx] if g.dim == 1 else [g.lx, g.ly])
    if np.any(loc < 0) or np.any(loc > hi):
        raise MeasureError("location outside the domain")
    cell = min(g.dx, g.dy) if g.dim == 2 else g.dx
    if width is None or width < 2 * cell:
        raise MeasureError("width must cover at least two cells")
    c = g.cell_centers()
    d = c - loc
    if g.dim == 2:  # periodic in x
        d[..., 0] = (d[..., 0] + g.lx / 2) % g.lx - g.lx / 2
    r2 = np.sum(d ** 2, axis=-1)
    bump = np.exp(-0.5 * r2 / width ** 2)
    bump[r2 > (4 * width) ** 2] = 0.0
    return bump * (mass / (bump.sum() * g.cell_volume))


# -- I/O ---------------------------------------------------------------------

def to_json(rho: MeasurePair) -> dict:
    return {"geometry": rho.geometry.to_dict(),
            "omega": [float(v) for v in rho.omega.ravel()],
            "gamma": [float(v) for v in rho.gamma.ravel()]}


def from_json(data: dict) -> MeasurePair:
    try:
        geom = Geometry.from_dict(data["geometry"])
        omega = np.asarray(data["omega"], dtype=float)
        gamma = np.asarray(data.get("gamma", np.zeros(geom.n_boundary)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GeometryError):
            raise
        raise MeasureError(f"malformed measure record: {exc}") from None
    if omega.size != geom.n_cells or gamma.size != geom.n_boundary:
        raise MeasureError(f"field sizes ({omega.size}, {gamma.size}) do not match geometry "
                           f"({geom.n_cells}, {geom.n_boundary})")
    rho = MeasurePair(geom, omega, gamma)
    if np.any(rho.omega < 0) or np.any(rho.gamma < 0):
        raise MeasureError("negative density entry")
    m = sum(total_mass(rho))
    if abs(m - 1.0) > RENORM_TOL * (1 + 1e-6):  # allow the decimal edge case 0.999999999
        raise MeasureError(f"total mass {m!r} is not 1 (tolerance {RENORM_TOL})")
    if m != 1.0 and abs(m - 1.0) > MASS_TOL:
        msg = f"renormalized total mass {m!r} to 1"
        log.warning(msg)
        rho = MeasurePair(geom, rho.omega / m, rho.gamma / m)
        rho.warnings.append(msg)
    return rho.validate()


def save(rho: MeasurePair, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json(rho), fh)


def load(path) -> MeasurePair:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MeasureError(f"{path}: not valid JSON ({exc})") from None
    return from_json(data)


def export_csv(rho: MeasurePair, path) -> None:
    """One row per cell: region, coordinates, density."""
    g = rho.geometry
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "x", "y", "density"])
        c = g.cell_centers().reshape(g.n_cells, g.dim)
        for xy, v in zip(c, rho.omega.ravel()):
            w.writerow(["interior", repr(float(xy[0])), repr(float(xy[1])) if g.dim == 2 else "", repr(float(v))])
        for x, v in zip(g.boundary_points(), rho.gamma):
            w.writerow(["boundary", repr(float(x)), "0.0" if g.dim == 2 else "", repr(float(v))])
