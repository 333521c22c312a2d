import numpy as np
import pytest

from bulkflux.constraint import ce_residual
from bulkflux.geometry import build_interval, build_strip
from bulkflux.solver import SolverConfig, geodesic_frames, solve_geodesic, sweep_kappa

from conftest import bump_pair


@pytest.fixture(scope="module")
def pair16():
    g = build_interval(16)
    return (bump_pair(g, [0.3], 0.8, [0.1, 0.1], floor=0.1),
            bump_pair(g, [0.7], 0.8, [0.05, 0.15], floor=0.1))


@pytest.fixture(scope="module")
def solved16(pair16):
    return solve_geodesic(*pair16, SolverConfig(nt=16))


def test_identical_endpoints_cost_nothing(pair16):
    r0, _ = pair16
    res = solve_geodesic(r0, r0, SolverConfig(nt=8))
    assert res.converged and abs(res.primal_value) < 1e-8


def test_solution_is_feasible_and_certified(pair16, solved16):
    res = solved16
    assert res.converged
    assert ce_residual(res.path, *pair16).norm() < 1e-9
    assert res.dual_value <= res.primal_value
    assert res.primal_value - res.dual_value <= 1e-5 * res.primal_value
    assert np.mean(res.action_slices) == pytest.approx(res.primal_value, rel=1e-9)


def test_douglas_rachford_agrees(pair16, solved16):
    res = solve_geodesic(*pair16, SolverConfig(nt=16, method="dr", max_outer=5000))
    assert res.converged
    assert res.primal_value == pytest.approx(solved16.primal_value, rel=1e-4)
    assert res.dual_value <= res.primal_value


def test_strip_solve():
    g = build_strip(6, 4, 1.0, 0.5)
    nb = g.n_boundary
    r0 = bump_pair(g, [0.3, 0.25], 0.7, np.full(nb, 0.3), width=0.3, floor=0.05)
    r1 = bump_pair(g, [0.7, 0.25], 0.7, np.linspace(0.1, 0.5, nb), width=0.3, floor=0.05)
    res = solve_geodesic(r0, r1, SolverConfig(nt=8))
    assert res.converged and 0 < res.dual_value <= res.primal_value
    assert ce_residual(res.path, r0, r1).norm() < 1e-9


def test_scaling_of_kappa_sweep(pair16):
    res = sweep_kappa(*pair16, [0.2, 1.0, 5.0], SolverConfig(nt=8))
    vals = [r.primal_value for r in res]
    assert all(b >= a * (1 - 1e-6) for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        sweep_kappa(*pair16, [1.0, 0.5], SolverConfig(nt=8))


def test_frames(pair16, solved16):
    frames = geodesic_frames(solved16, [0.0, 0.5, 1.0])
    assert np.allclose(frames[0].rho.omega, pair16[0].omega)
    assert np.allclose(frames[-1].rho.gamma, pair16[1].gamma)
    assert all(not f.flagged for f in frames)
    with pytest.raises(ValueError):
        geodesic_frames(solved16, [1.5])


@pytest.mark.parametrize("kw", [dict(method="newton"), dict(kappa=0.0), dict(sigma=-1.0), dict(nt=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_different_geometries_rejected(pair16):
    g = build_interval(8)
    other = bump_pair(g, [0.5], 1.0, [0.0, 0.0])
    with pytest.raises(ValueError):
        solve_geodesic(pair16[0], other)
