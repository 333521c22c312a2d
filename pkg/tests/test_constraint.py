import numpy as np
import pytest
from hypothesis import given, strategies as st

from bulkflux.action import Colocated
from bulkflux.constraint import (SpaceTimePath, ce_residual, interpolate_adjoint, interpolate_colocate,
                                 project_ce)
from bulkflux.geometry import GeometryError, build_interval, build_strip

from conftest import bump_pair

geoms = st.sampled_from([build_interval(5), build_interval(9, 2.0), build_strip(4, 3, 1.0, 0.5)])


def random_path(g, nt, rng):
    p = SpaceTimePath.zeros(g, nt)
    for name in ("omega", "F", "gamma", "G", "f"):
        a = getattr(p, name)
        setattr(p, name, rng.normal(size=a.shape))
    return p


def endpoints(g):
    if g.kind == "interval":
        return (bump_pair(g, [0.3 * g.lx], 0.7, [0.2, 0.1], width=2 * g.dx, floor=0.05),
                bump_pair(g, [0.7 * g.lx], 0.6, [0.1, 0.3], width=2 * g.dx, floor=0.05))
    nb = g.n_boundary
    return (bump_pair(g, [0.3, 0.2], 0.7, np.full(nb, 0.3), width=2 * g.dx, floor=0.05),
            bump_pair(g, [0.6, 0.3], 0.6, np.linspace(0.1, 0.5, nb), width=2 * g.dx, floor=0.05))


@given(geoms, st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_interpolation_adjoint(g, nt, seed):
    rng = np.random.default_rng(seed)
    u = random_path(g, nt, rng)
    Iu = interpolate_colocate(u)
    v = Colocated(*(rng.normal(size=np.shape(a)) for a in (Iu.omega, Iu.F, Iu.gamma, Iu.G, Iu.f)),
                  Iu.vol, Iu.blen)
    Itv = interpolate_adjoint(g, v)
    lhs = sum(np.sum(a * b) for a, b in zip((Iu.omega, Iu.F, Iu.gamma, Iu.G, Iu.f),
                                              (v.omega, v.F, v.gamma, v.G, v.f)))
    rhs = sum(np.sum(getattr(u, n) * getattr(Itv, n)) for n in ("omega", "F", "gamma", "G", "f"))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@given(geoms, st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_projection_is_feasible_and_idempotent(g, nt, seed):
    rng = np.random.default_rng(seed)
    r0, r1 = endpoints(g)
    p = project_ce(random_path(g, nt, rng), r0, r1, cg_tol=1e-12)
    assert ce_residual(p, r0, r1).norm() < 1e-8
    q = project_ce(p, r0, r1, cg_tol=1e-12)
    for n in ("omega", "F", "gamma", "G", "f"):
        assert np.allclose(getattr(p, n), getattr(q, n), atol=1e-9)


@given(geoms, st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_feasible_paths_conserve_total_mass(g, nt, seed):
    # the coupled continuity equations telescope: every time node carries mass one
    rng = np.random.default_rng(seed)
    r0, r1 = endpoints(g)
    p = project_ce(random_path(g, nt, rng), r0, r1, cg_tol=1e-12)
    m = p.omega.sum(axis=1) * g.cell_volume + p.gamma.sum(axis=1) * g.boundary_length
    assert np.allclose(m, 1.0, atol=1e-9)


def test_residual_detects_endpoint_mismatch():
    g = build_interval(4)
    r0, r1 = endpoints(g)
    p = project_ce(SpaceTimePath.zeros(g, 3), r0, r1)
    p.omega[0, 0] += 0.1
    res = ce_residual(p, r0, r1)
    assert res.endpoint[0] == pytest.approx(0.1) and not res.is_zero(1e-6)


def test_path_shape_checked():
    g = build_interval(4)
    with pytest.raises(GeometryError):
        SpaceTimePath(g, np.zeros((3, 4)), np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((2, 0)), np.zeros((2, 2)))
