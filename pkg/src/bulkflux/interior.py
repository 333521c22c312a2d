"""Primal-dual interior-point method for the discrete geodesic problem.

Each co-located point ``j`` gets an epigraph variable ``t_j`` and the rotated
second-order cone constraint

    s_j = (rho_j, t_j, p_j),    2 rho_j t_j >= |p_j|^2,   rho_j, t_j >= 0.

The program

    minimize  sum_j w_j t_j   subject to   A u = b,   s = h - G x  in K

over ``x = (u, t)`` is solved by a Mehrotra predictor-corrector iteration with
Nesterov-Todd scaling and one sparse LU factorization per iteration.

The cone algebra is written directly in rotated coordinates.  Converting to
the standard cone ``(rho + t, rho - t, sqrt(2) p)`` loses ``rho`` to rounding
when ``t >> rho``, which happens wherever a density vanishes while carrying
flux, and stalls the iteration.  Every cone has dimension ``2 + dim`` so the
algebra is batched over ``(N, D)`` arrays.

The cone multipliers give the dual field ``q = -(z_rho, z_p) / w`` and the
equality multipliers give the potentials; see :func:`dual_fields`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .action import NumericalError

ROOT2 = math.sqrt(2.0)


# -- rotated second-order cone algebra (batched over rows) --------------------
#
# A point is x = (a, b, c) with the cone 2ab >= |c|^2.  The identity element is
# (1, 1, 0)/sqrt(2) and the reflection J maps (a, b, c) to (b, a, -c).

def lorentz(x, y):
    """Bilinear form x^T J y = a b' + b a' - c.c' per row."""
    return x[:, 0] * y[:, 1] + x[:, 1] * y[:, 0] - np.sum(x[:, 2:] * y[:, 2:], axis=1)


def det(x):
    """x^T J x = 2ab - |c|^2 (positive inside the cone)."""
    return 2.0 * x[:, 0] * x[:, 1] - np.sum(x[:, 2:] ** 2, axis=1)


def reflect(x):
    out = np.empty_like(x)
    out[:, 0] = x[:, 1]
    out[:, 1] = x[:, 0]
    out[:, 2:] = -x[:, 2:]
    return out


def identity(n, d):
    e = np.zeros((n, d))
    e[:, :2] = 1.0 / ROOT2
    return e


def jordan(x, y):
    """Jordan product in rotated coordinates (cancellation-free)."""
    cc = np.sum(x[:, 2:] * y[:, 2:], axis=1)
    out = np.empty_like(x)
    out[:, 0] = (2.0 * x[:, 0] * y[:, 0] + cc) / ROOT2
    out[:, 1] = (2.0 * x[:, 1] * y[:, 1] + cc) / ROOT2
    out[:, 2:] = ((x[:, :1] + x[:, 1:2]) * y[:, 2:] + (y[:, :1] + y[:, 1:2]) * x[:, 2:]) / ROOT2
    return out


def jordan_solve(lam, v):
    """Solve lam o u = v for u, with lam strictly inside the cone."""
    a, b, c = lam[:, 0:1], lam[:, 1:2], lam[:, 2:]
    va, vb, vc = v[:, 0:1], v[:, 1:2], v[:, 2:]
    ab = a + b
    r = ROOT2 * vc - c * (ROOT2 * va / (2 * a) + ROOT2 * vb / (2 * b))
    sig = (2 * a * b * np.sum(c * r, axis=1, keepdims=True)) / (ab * det(lam)[:, None])
    uc = r / ab + c * sig / (2 * a * b)
    u = np.empty_like(v)
    u[:, 2:] = uc
    cu = np.sum(c * uc, axis=1, keepdims=True)
    u[:, 0:1] = (ROOT2 * va - cu) / (2 * a)
    u[:, 1:2] = (ROOT2 * vb - cu) / (2 * b)
    return u


def inside(x) -> bool:
    return bool(np.all(x[:, 0] > 0) and np.all(x[:, 1] > 0) and np.all(det(x) > 0))


def max_step(x, d) -> float:
    """Largest a >= 0 with x + a d in the cone (x strictly inside); may be inf."""
    qa = det(d) / 2.0
    qb = lorentz(x, d) / 2.0
    qc = det(x) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.maximum(qb * qb - qa * qc, 0.0)
        root = (-qb - np.sqrt(disc)) / qa
        lin = np.where(qb < 0, -qc / (2 * qb), np.inf)
    steps = np.full(qa.shape, np.inf)
    hit = (qa > 0) & (qb < 0) & (qb * qb - qa * qc >= 0)
    steps[hit] = root[hit]
    down = qa < 0
    steps[down] = root[down]
    flat = qa == 0
    steps[flat] = lin[flat]
    steps[~np.isfinite(steps) | (steps < 0)] = np.inf
    return float(np.min(steps)) if steps.size else math.inf


@dataclass
class NTScaling:
    """Nesterov-Todd scaling ``W`` (symmetric, per cone) with ``W z = W^-1 s = lam``."""

    W: np.ndarray       # (N, D, D)
    Winv: np.ndarray    # (N, D, D)
    lam: np.ndarray     # (N, D)

    @classmethod
    def compute(cls, s, z) -> "NTScaling":
        N, D = s.shape
        J = np.zeros((D, D))
        J[0, 1] = J[1, 0] = 1.0
        J[2:, 2:] = -np.eye(D - 2)
        ns = np.sqrt(det(s))
        nz = np.sqrt(det(z))
        sb = s / ns[:, None]
        zb = z / nz[:, None]
        gam = np.sqrt((1.0 + np.sum(sb * zb, axis=1)) / 2.0)
        wb = (sb + reflect(zb)) / (2.0 * gam[:, None])
        w0 = (wb[:, 0] + wb[:, 1]) / ROOT2  # first standard coordinate
        v = (wb + identity(N, D)) / np.sqrt(2.0 * (w0 + 1.0))[:, None]
        eta = np.sqrt(ns / nz)
        W = eta[:, None, None] * (2.0 * v[:, :, None] * v[:, None, :] - J)
        Jv = reflect(v)
        Winv = (2.0 * Jv[:, :, None] * Jv[:, None, :] - J) / eta[:, None, None]
        lam = np.einsum("nij,nj->ni", W, z)
        return cls(W, Winv, lam)

    def apply(self, x):
        return np.einsum("nij,nj->ni", self.W, x)

    def apply_inv(self, x):
        return np.einsum("nij,nj->ni", self.Winv, x)


# -- problem assembly ----------------------------------------------------------

def interior_start(ops, I, c, rho0, rho1, eps: float = 0.1) -> np.ndarray:
    """A CE-feasible staggered vector whose co-located densities are all positive.

    Densities blend the linear interpolation of the endpoints with a uniform
    state (weight ``4 eps t(1-t)``); momenta are the least-norm solution of the
    continuity equations for those densities.
    """
    g, nt = ops.geom, ops.nt
    t = np.linspace(0.0, 1.0, nt + 1)[1:-1, None]
    area = g.n_cells * g.cell_volume + g.n_boundary * g.boundary_length
    mass = (rho0.omega.sum() * g.cell_volume + rho0.gamma.sum() * g.boundary_length)
    blend = 4 * eps * t * (1 - t) * mass
    keep = 1 - blend / mass
    om = keep * ((1 - t) * rho0.omega.ravel() + t * rho1.omega.ravel()) + blend / area
    ga = keep * ((1 - t) * rho0.gamma + t * rho1.gamma) + blend / area
    u = np.zeros(ops.n)
    o, s = ops.offsets, ops.sizes
    u[o["omega"]:o["omega"] + s["omega"]] = om.ravel()
    u[o["gamma"]:o["gamma"] + s["gamma"]] = ga.ravel()
    dens = np.zeros(ops.n, dtype=bool)
    dens[o["omega"]:o["omega"] + s["omega"]] = True
    dens[o["gamma"]:o["gamma"] + s["gamma"]] = True
    A = ops.A.tocsc()
    Am = A[:, ~dens]
    r = ops.rhs(rho0, rho1) - A[:, dens] @ u[dens]
    # each time slice has one redundant row (mass balance); drop the last boundary row of each
    nc, nb = g.n_cells, g.n_boundary
    drop = nt * nc + np.arange(nt) * nb + (nb - 1)
    keep = np.setdiff1d(np.arange(ops.m), drop)
    Ak = Am[keep]
    y = spla.spsolve((Ak @ Ak.T).tocsc(), r[keep])
    u[~dens] = Ak.T @ y
    return u


@dataclass
class ConeProblem:
    """Sparse data of the conic program over ``x = (u, t)``."""

    A: sp.csr_matrix         # equality rows (redundant row removed)
    b: np.ndarray
    G: sp.csr_matrix         # s = h - G x
    h: np.ndarray
    c: np.ndarray
    weights: np.ndarray      # per cone
    n_u: int
    n_cones: int
    cone_dim: int
    rho_index: np.ndarray    # density slot in V for every cone
    mom_index: np.ndarray    # (N, dim) momentum slots in V


def cone_problem(ops, I, cV, b) -> ConeProblem:
    """Assemble the conic program for co-location ``V = I u + cV``."""
    g, nt = ops.geom, ops.nt
    o = ops.voffsets
    d = g.dim
    ni, nb = nt * g.n_cells, nt * g.n_boundary
    rho = np.concatenate([o["omega"] + np.arange(ni), o["gamma"] + np.arange(nb)])
    mi = np.stack([o["F"] + k * ni + np.arange(ni) for k in range(d)], axis=1)
    bcols = [o["G"] + k * nb + np.arange(nb) for k in range(d - 1)] + [o["f"] + np.arange(nb)]
    mom = np.concatenate([mi, np.stack(bcols, axis=1)])
    w = np.concatenate([np.full(ni, ops.w_int), np.full(nb, ops.w_bnd)])
    N, D, p = rho.size, 2 + d, ops.p
    cone = np.arange(N)
    rows = [cone * D, cone * D + 1] + [cone * D + 2 + k for k in range(d)]
    cols = [rho, p + cone] + [mom[:, k] for k in range(d)]
    L = sp.csr_matrix((np.ones(N * D), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * D, p + N))
    n_u = I.shape[1]
    G = -(L @ sp.block_diag([I, sp.identity(N)], format="csr")).tocsr()
    h = L @ np.concatenate([cV, np.zeros(N)])
    keep = np.arange(ops.m - 1)  # the rows have a one-dimensional left null space
    A = sp.hstack([ops.A.tocsr()[keep], sp.csr_matrix((keep.size, N))]).tocsr()
    c = np.concatenate([np.zeros(n_u), w])
    return ConeProblem(A, b[keep], G, h, c, w, n_u, N, D, rho, mom)


@dataclass
class InteriorResult:
    u: np.ndarray
    t: np.ndarray
    y: np.ndarray       # multipliers of the kept equality rows
    z: np.ndarray       # (N, D) cone multipliers
    iterations: int
    converged: bool
    primal_objective: float
    dual_objective: float
    history: list = field(default_factory=list)


def _block_diag(blocks) -> sp.csr_matrix:
    N, D, _ = blocks.shape
    base = (np.arange(N) * D)[:, None, None]
    r = base + np.arange(D)[None, :, None]
    cidx = base + np.arange(D)[None, None, :]
    r, cidx = np.broadcast_arrays(r, cidx)
    return sp.csr_matrix((blocks.ravel(), (r.ravel(), cidx.ravel())), shape=(N * D, N * D))


def _start(prob: ConeProblem, u0):
    """Primal point from ``u0`` (positive densities) with ``t`` strictly inside,
    and the dual point ``z = (w, w, 0)`` which is feasible in the ``t`` columns."""
    N, D = prob.n_cones, prob.cone_dim
    v0 = (prob.h - prob.G[:, :prob.n_u] @ u0).reshape(N, D)
    rho = v0[:, 0]
    if np.any(rho <= 0):
        raise NumericalError("interior start needs positive densities")
    p2 = np.sum(v0[:, 2:] ** 2, axis=1)
    t0 = p2 / (2 * rho) + np.maximum(rho, 1e-3 * np.max(rho))
    x = np.concatenate([u0, t0])
    s = (prob.h - prob.G @ x).reshape(N, D)
    z = np.zeros((N, D))
    z[:, 0] = prob.weights
    z[:, 1] = prob.weights
    return x, np.zeros(prob.A.shape[0]), s, z


def interior_solve(prob: ConeProblem, u0: np.ndarray, *, rel_gap: float = 1e-8,
                   feas_tol: float = 1e-9, max_iter: int = 100, refine: int = 3,
                   delta: float = 1e-13, log=None) -> InteriorResult:
    """Mehrotra predictor-corrector from a start ``u0`` whose densities are positive.

    Stops when the duality gap ``s.z`` is below ``rel_gap`` times the
    objective and the primal and dual residuals (relative to their data) are
    below ``feas_tol``, or when no further progress is possible.
    """
    N, D = prob.n_cones, prob.cone_dim
    A, G, h, c, b = prob.A, prob.G, prob.h, prob.c, prob.b
    At, Gt = A.T.tocsr(), G.T.tocsr()
    n, m = G.shape[1], A.shape[0]
    x, y, s, z = _start(prob, u0)
    # normalize the objective to 1 at the start; multipliers are rescaled on exit
    scale = max(float(c @ x), 1e-300)
    c = c / scale
    z = z / scale
    e = identity(N, D)

    nb, nh, nc = max(1.0, np.linalg.norm(b)), max(1.0, np.linalg.norm(h)), max(1.0, np.linalg.norm(c))
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        zf, sf = z.ravel(), s.ravel()
        rx = Gt @ zf + At @ y + c
        ry = A @ x - b
        rz = G @ x + sf - h
        gap = float(sf @ zf)
        mu = gap / N
        pobj = float(c @ x)
        dobj = float(-h @ zf - b @ y)
        pres = max(np.linalg.norm(ry) / nb, np.linalg.norm(rz) / nh)
        dres = np.linalg.norm(rx) / nc
        history.append((pobj, dobj, pres, dres, mu))
        if log is not None:
            log(it, (pobj * scale, dobj * scale, pres, dres, mu * scale))
        if gap <= rel_gap * max(abs(pobj), abs(dobj), 1e-300) and pres <= feas_tol and dres <= feas_tol:
            converged = True
            break

        sc = NTScaling.compute(s, z)
        W2 = _block_diag(np.einsum("nij,njk->nik", sc.W, sc.W))
        # augmented system in (dx, dy, dz); a lightly regularized copy is
        # factorized and iterative refinement against the exact one removes the bias
        K = sp.bmat([[None, At, Gt], [A, None, None], [G, None, -W2]], format="csc")
        reg = sp.diags(np.concatenate([np.full(n, delta), np.full(m, -delta), np.zeros(N * D)]))
        try:
            lu = spla.splu((K + reg).tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"interior-point KKT system is singular: {exc}") from None

        def kkt(rhs):
            sol = lu.solve(rhs)
            for _ in range(refine):
                sol += lu.solve(rhs - K @ sol)
            return sol

        def direction(ds):
            a = jordan_solve(sc.lam, ds)
            Wa = sc.apply(a).ravel()
            sol = kkt(np.concatenate([-rx, -ry, -rz - Wa]))
            dx, dy, dz = sol[:n], sol[n:n + m], sol[n + m:].reshape(N, D)
            # the slack step from the linear relation keeps G x + s - h exact
            dss = (-rz - G @ dx).reshape(N, D)
            dz_t = sc.apply(dz)
            return dx, dy, dz, dss, dz_t, a - dz_t

        lam2 = jordan(sc.lam, sc.lam)
        _, _, dza, dsa, dzt, dst = direction(-lam2)
        alpha_a = min(1.0, max_step(s, dsa), max_step(z, dza))
        mu_a = float(np.sum((s + alpha_a * dsa) * (z + alpha_a * dza))) / N
        sigma = (mu_a / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dz, dss, _, _ = direction(-lam2 - jordan(dst, dzt) + sigma * mu * e)
        alpha = min(1.0, 0.99 * min(max_step(s, dss), max_step(z, dz)))
        # guard against rounding in the step formula: stay strictly inside
        while alpha > 1e-12 and not (inside(s + alpha * dss) and inside(z + alpha * dz)):
            alpha *= 0.8
        if not alpha > 1e-12:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dss
    u, t = x[:prob.n_u], x[prob.n_u:]
    history = [(h[0] * scale, h[1] * scale, h[2], h[3], h[4] * scale) for h in history]
    return InteriorResult(u, t, y * scale, z * scale, it, converged, history[-1][0], history[-1][1],
                          history)


def dual_fields(prob: ConeProblem, res: InteriorResult, p: int):
    """Dual field ``q`` on V and multipliers for every row of the full ``A``.

    With these, stationarity reads ``A^T mult = I^T (w_V q)`` and ``q`` lies
    in the subsolution set whenever ``z`` is in the cone with ``z_t = w``.
    """
    z = res.z
    D = z.shape[1]
    wq = np.zeros(p)
    w = np.zeros(p)
    wq[prob.rho_index] = -z[:, 0]
    w[prob.rho_index] = prob.weights
    for k in range(D - 2):
        wq[prob.mom_index[:, k]] = -z[:, 2 + k]
        w[prob.mom_index[:, k]] = prob.weights
    mult = np.zeros(res.y.size + 1)
    mult[:-1] = -res.y
    return wq / w, mult
