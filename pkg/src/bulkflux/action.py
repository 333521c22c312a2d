"""Kinetic action |p|^2/(2 rho) with its extended-value convention, the total
action of a co-located space-time field, and the proximal operators used by
the splitting solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NumericalError(RuntimeError):
    """A numerical kernel failed to reach its tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class ProxParams:
    sigma: float = 1.0
    newton_tol: float = 1e-12
    max_newton: int = 100

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass
class KineticPoint:
    density: np.ndarray
    momentum: np.ndarray  # trailing axis = components


def kinetic_value(rho, mom) -> np.ndarray:
    """Pointwise |mom|^2 / (2 rho), with 0 at (0, 0) and +inf when rho < 0 or
    when rho = 0 carries momentum.  ``mom`` has one more trailing axis."""
    rho = np.asarray(rho, dtype=float)
    m2 = np.sum(np.asarray(mom, dtype=float) ** 2, axis=-1)
    out = np.zeros(np.broadcast(rho, m2).shape)
    pos = rho > 0
    out[pos] = m2[pos] / (2.0 * rho[pos])
    bad = (rho < 0) | ((rho == 0) & (m2 > 0))
    out[bad] = math.inf
    return out


@dataclass
class Colocated:
    """Space-time fields sampled at (time interval, cell).

    ``F`` has shape ``(nt, n_cells, dim)``; ``G`` has shape ``(nt, nb, dim-1)``.
    ``vol`` and ``blen`` are the interior cell volume and boundary cell length;
    the time step is ``1/nt``.
    """

    omega: np.ndarray
    F: np.ndarray
    gamma: np.ndarray
    G: np.ndarray
    f: np.ndarray
    vol: float
    blen: float

    @property
    def nt(self) -> int:
        return self.omega.shape[0]

    def scaled(self, lam: float) -> "Colocated":
        return Colocated(lam * self.omega, lam * self.F, lam * self.gamma, lam * self.G,
                         lam * self.f, self.vol, self.blen)

    def __add__(self, other: "Colocated") -> "Colocated":
        return Colocated(self.omega + other.omega, self.F + other.F, self.gamma + other.gamma,
                         self.G + other.G, self.f + other.f, self.vol, self.blen)


def action_slices(fields, kappa: float) -> np.ndarray:
    """Action per time interval (integrated over space, not over time)."""
    if hasattr(fields, "colocate"):
        fields = fields.colocate()
    bmom = np.concatenate([fields.G, kappa * fields.f[..., None]], axis=-1)
    a_int = kinetic_value(fields.omega, fields.F)
    a_bnd = kinetic_value(fields.gamma, bmom)
    with np.errstate(invalid="ignore"):
        return a_int.sum(axis=1) * fields.vol + a_bnd.sum(axis=1) * fields.blen


def eval_action(fields, kappa: float) -> float:
    """Total action: sum over space-time cells weighted by volume and time step.

    Accepts a :class:`Colocated` field or anything with a ``colocate()`` method.
    Returns ``math.inf`` when any point is infeasible.
    """
    s = action_slices(fields, kappa)
    if np.any(np.isinf(s)):
        return math.inf
    return float(s.sum() / s.size)


# -- proximal operators -------------------------------------------------------

def _rho_residual(r, rt, q2, sigma):
    # first-order condition of the prox, divided by (r + sigma)^2 / sigma
    return r - rt - sigma * q2 / (2.0 * (r + sigma) ** 2)


def prox_kinetic(rho_t, p_t, params: ProxParams = ProxParams()):
    """Proximal map of sigma * |p|^2/(2 rho) at (rho_t, p_t), vectorized.

    ``p_t`` carries the momentum components on its last axis.  The density
    solves ``(rho - rho_t)(rho + sigma)^2 = sigma |p_t|^2 / 2``; a safeguarded
    Newton iteration runs inside a bracket and falls back to bisection.
    """
    sigma = params.sigma
    rt = np.asarray(rho_t, dtype=float)
    pt = np.asarray(p_t, dtype=float)
    q2 = np.sum(pt ** 2, axis=-1)
    rt, q2 = np.broadcast_arrays(rt, q2)
    rho = np.zeros(rt.shape)

    zero = rt <= -q2 / (2.0 * sigma)  # root is not positive: clamp to (0, 0)
    act = ~zero
    lo = np.maximum(rt, 0.0)[act]
    hi = lo + q2[act] / (2.0 * sigma)
    r = np.clip(lo + sigma, lo, hi)
    a_rt, a_q2 = rt[act], q2[act]
    tol = params.newton_tol * (1.0 + np.abs(a_rt))
    done = np.zeros(r.shape, dtype=bool)
    res = _rho_residual(r, a_rt, a_q2, sigma)
    for _ in range(params.max_newton):
        done = np.abs(res) <= tol
        if done.all():
            break
        # maintain the bracket [lo, hi] around the root
        lo = np.where(res < 0, r, lo)
        hi = np.where(res > 0, r, hi)
        d = 1.0 + sigma * a_q2 / (r + sigma) ** 3
        rn = r - res / d
        outside = (rn <= lo) | (rn >= hi)
        rn = np.where(outside, 0.5 * (lo + hi), rn)
        r = np.where(done, r, rn)
        res = _rho_residual(r, a_rt, a_q2, sigma)
    else:
        done = np.abs(res) <= tol
        if not done.all():
            worst = float(np.max(np.abs(res[~done])))
            raise NumericalError(f"prox Newton did not converge (residual {worst:.3e})", worst)
    rho[act] = r
    scale = np.zeros(rt.shape)
    scale[act] = r / (r + sigma)
    return rho, pt * scale[..., None]


def prox_boundary(gamma_t, G_t, f_t, kappa: float, params: ProxParams = ProxParams()):
    """Prox of sigma * (|G|^2 + kappa^2 f^2)/(2 gamma), with the Euclidean
    metric taken in the packed coordinates (gamma, G, kappa f)."""
    G_t = np.asarray(G_t, dtype=float)
    f_t = np.asarray(f_t, dtype=float)
    packed = np.concatenate([G_t, kappa * f_t[..., None]], axis=-1)
    g, m = prox_kinetic(gamma_t, packed, params)
    return g, m[..., :-1], m[..., -1] / kappa


def prox_objective(rho, p, rho_t, p_t, sigma):
    """Objective minimized by :func:`prox_kinetic` (for checks)."""
    return (kinetic_value(rho, p)
            + (np.asarray(rho) - rho_t) ** 2 / (2 * sigma)
            + np.sum((np.asarray(p) - p_t) ** 2, axis=-1) / (2 * sigma))
