import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from bulkflux.geometry import build_interval, build_strip
from bulkflux.measures import make_pair
from bulkflux.oracles import (DiracGeodesic, LineMeasure, OracleError, bl_boundary, bl_interior,
                              boundary_wasserstein, bounded_lipschitz, dirac_cost, dirac_frame, dirac_pair,
                              discrete_transport, fisher_rao_cost, line_measure, wasserstein_1d,
                              wasserstein_periodic)

pos = st.floats(0.05, 3.0)
seeds = st.integers(0, 2 ** 32 - 1)


# -- closed forms ----------------------------------------------------------------

def test_dirac_examples():
    assert dirac_cost(1.0, 1.0) == pytest.approx(math.sqrt(2) + 1.5, abs=1e-12)
    assert dirac_cost(0.0, 0.7) == pytest.approx(2 * 0.49)
    assert dirac_cost(0.0, 0.7) == pytest.approx(fisher_rao_cost(0.0, 1.0, 0.7))
    assert fisher_rao_cost(0.25, 1.0, 1.0) == pytest.approx(0.5, abs=1e-12)


@given(pos, pos, st.floats(1.01, 2.0))
def test_dirac_cost_monotone(R, kappa, factor):
    assert dirac_cost(R * factor, kappa) > dirac_cost(R, kappa)
    assert dirac_cost(R, kappa * factor) > dirac_cost(R, kappa)


@given(pos)
def test_dirac_cost_small_toll(R):
    # cheap exchange: the cost approaches plain transport R^2/2, first correction kappa R
    k = 1e-4 * R
    assert dirac_cost(R, k) == pytest.approx(0.5 * R ** 2 + k * R, rel=1e-6)


@given(pos, pos)
def test_dirac_cost_continuous_at_zero(kappa, eps):
    assert dirac_cost(1e-7 * eps, kappa) == pytest.approx(dirac_cost(0.0, kappa), rel=1e-6)


@given(pos, pos, st.floats(0.05, 0.95))
def test_dirac_action_is_constant_and_equals_cost(R, kappa, t):
    """Action of the explicit curve at time t, integrated independently."""
    geo = DiracGeodesic(R, kappa)
    fr = geo.frame(t)
    a = geo.alpha
    kinetic, _ = quad(lambda r: 0.5 * (r / t) ** 2 * a * (R * t / r) ** a / r, R * t, R, epsabs=1e-13, epsrel=1e-12)
    exchange = kappa ** 2 * fr.flux ** 2 / (2 * fr.boundary_mass)
    assert kinetic + exchange == pytest.approx(geo.cost, rel=1e-8)


@given(pos, pos, st.floats(0.05, 0.95))
def test_dirac_frame_weak_continuity(R, kappa, t):
    """d/dt of the interior pairing with a test function: transport term minus outflow at r = R."""
    geo = DiracGeodesic(R, kappa)
    xi, dxi = np.cos, lambda r: -np.sin(r)

    def pairing(s):
        fr = geo.frame(s)
        return quad(lambda r: xi(r) * fr.density(r), R * s, R, epsabs=1e-13, epsrel=1e-12)[0]

    h = 1e-5
    lhs = (pairing(t + h) - pairing(t - h)) / (2 * h)
    fr = geo.frame(t)
    transport = quad(lambda r: dxi(r) * fr.velocity(r) * fr.density(r), R * t, R, epsabs=1e-13, epsrel=1e-12)[0]
    assert lhs == pytest.approx(transport - xi(R) * fr.flux, abs=1e-6)
    # the boundary atom is fed at the same rate
    dm = (geo.frame(t + h).boundary_mass - geo.frame(t - h).boundary_mass) / (2 * h)
    assert dm == pytest.approx(fr.flux, rel=1e-6)
    # the outflow matches density times velocity at the boundary
    assert fr.density(R) * fr.velocity(R) == pytest.approx(fr.flux, rel=1e-10)


@given(pos, pos, st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_dirac_potentials_solve_hamilton_jacobi(R, kappa, t, frac):
    geo = DiracGeodesic(R, kappa)
    r = frac * R
    h = 1e-6 * t
    phi = lambda s, x: geo.potentials(s, x)[0]  # noqa: E731
    psi = lambda s: geo.potentials(s, R)[1]  # noqa: E731
    phi_t = (phi(t + h, r) - phi(t - h, r)) / (2 * h)
    phi_r = r / t
    psi_t = (psi(t + h) - psi(t - h)) / (2 * h)
    scale = (R ** 2 + kappa ** 2 * geo.alpha) / t ** 2
    assert phi_t + 0.5 * phi_r ** 2 == pytest.approx(0.0, abs=1e-6 * scale)
    exch = (psi(t) - phi(t, R)) ** 2 / (2 * kappa ** 2)
    assert psi_t + exch == pytest.approx(0.0, abs=1e-6 * scale)
    # the velocity field is the potential gradient
    assert geo.frame(t).velocity(r) == pytest.approx(phi_r)


@given(pos, pos, st.floats(0.0, 1.0), st.integers(4, 64))
def test_dirac_frame_cell_masses(R, kappa, t, n):
    edges = np.linspace(-0.1 * R, 1.1 * R, n + 1)
    fr = dirac_frame(R, kappa, t, edges)
    assert fr.cell_mass.min() >= 0
    assert fr.cell_mass.sum() + fr.boundary_mass == pytest.approx(1.0, abs=1e-12)
    if t > 0:
        support = (edges[1:] > R * t) & (edges[:-1] < R)
        assert np.all(fr.cell_mass[~support] == 0)


def test_dirac_pair_endpoints():
    g = build_interval(20)
    start, end = dirac_pair(g, 0.5, 1.0, 0.0), dirac_pair(g, 0.5, 1.0, 1.0)
    assert start.omega.sum() * g.dx == pytest.approx(1.0) and start.gamma.sum() == 0
    assert end.gamma[1] == pytest.approx(1.0)
    assert start.omega.argmax() == 10  # the cell starting at lx - R


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), pos)
def test_fisher_rao_is_squared_metric(a, b, c, kappa):
    d = lambda x, y: math.sqrt(fisher_rao_cost(x, y, kappa))  # noqa: E731
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
    assert d(a, b) == pytest.approx(d(b, a))


def test_oracle_input_errors():
    with pytest.raises(OracleError):
        dirac_cost(1.0, 0.0)
    with pytest.raises(OracleError):
        dirac_cost(-1.0, 1.0)
    with pytest.raises(OracleError):
        fisher_rao_cost(-0.1, 1.0)
    with pytest.raises(OracleError):
        dirac_frame(1.0, 1.0, 1.5)


# -- quadratic transport on a line and a circle --------------------------------------

def random_atoms(rng, n, lo=0.0, hi=1.0):
    x = rng.uniform(lo, hi, n)
    m = rng.uniform(0.1, 1.0, n)
    return x, m / m.sum()


def test_uniform_halves():
    a = LineMeasure.density([0.0, 0.5], [2.0])
    b = LineMeasure.density([0.5, 1.0], [2.0])
    assert wasserstein_1d(a, b) == pytest.approx(0.125, abs=1e-15)


@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_quantile_matches_lp_for_atoms(seed, n0, n1):
    rng = np.random.default_rng(seed)
    x0, m0 = random_atoms(rng, n0)
    x1, m1 = random_atoms(rng, n1)
    w = wasserstein_1d(LineMeasure.atoms(x0, m0), LineMeasure.atoms(x1, m1))
    assert w == pytest.approx(discrete_transport(x0, m0, x1, m1), abs=1e-12)


@given(seeds, st.floats(-2.0, 2.0))
def test_quantile_translation(seed, shift):
    rng = np.random.default_rng(seed)
    dens = rng.uniform(0.1, 1.0, 8)
    edges = np.sort(rng.uniform(0, 1, 9))
    assume(np.all(np.diff(edges) > 1e-6))
    dens /= np.sum(dens * np.diff(edges))
    a = LineMeasure.density(edges, dens)
    b = LineMeasure.density(edges + shift, dens)
    assert wasserstein_1d(a, b) == pytest.approx(0.5 * shift ** 2, abs=1e-12)


def test_quantile_mixes_cells_and_atoms():
    # uniform on [0, 1] against an atom at 1/2: the variance over two
    a = LineMeasure.density([0.0, 1.0], [1.0])
    b = LineMeasure.atoms([0.5], [1.0])
    assert wasserstein_1d(a, b) == pytest.approx(1 / 24, abs=1e-15)


def test_mass_mismatch_is_infinite():
    assert math.isinf(wasserstein_1d(LineMeasure.atoms([0.0], [1.0]), LineMeasure.atoms([0.0], [0.5])))


@given(seeds, st.integers(1, 5), st.integers(1, 5))
def test_periodic_matches_lp(seed, n0, n1):
    rng = np.random.default_rng(seed)
    L = 1.0
    x0, m0 = random_atoms(rng, n0, 0, L)
    x1, m1 = random_atoms(rng, n1, 0, L)
    w = wasserstein_periodic(LineMeasure.atoms(x0, m0), LineMeasure.atoms(x1, m1), L)
    assert w == pytest.approx(discrete_transport(x0, m0, x1, m1, period=L), abs=1e-12)
    assert w <= wasserstein_1d(LineMeasure.atoms(x0, m0), LineMeasure.atoms(x1, m1)) + 1e-14


def test_periodic_wraps_around():
    a = LineMeasure.atoms([0.05], [1.0])
    b = LineMeasure.atoms([0.95], [1.0])
    assert wasserstein_periodic(a, b, 1.0) == pytest.approx(0.5 * 0.1 ** 2)


def test_line_measure_parts():
    g = build_interval(4)
    rho = make_pair(g, np.ones(4) * 0.5, np.array([0.2, 0.3]))
    assert line_measure(rho, "interior").mass == pytest.approx(0.5)
    assert line_measure(rho, "boundary").mass == pytest.approx(0.5)
    assert line_measure(rho).mass == pytest.approx(1.0)
    with pytest.raises(OracleError):
        line_measure(rho, "edge")


def test_boundary_wasserstein():
    g = build_interval(4)
    assert boundary_wasserstein(np.array([0.2, 0.3]), np.array([0.2, 0.3]), g) == 0.0
    assert math.isinf(boundary_wasserstein(np.array([0.2, 0.3]), np.array([0.3, 0.2]), g))
    s = build_strip(8, 2, 1.0, 1.0)
    ga = np.zeros(8)
    gb = np.zeros(8)
    ga[0] = gb[7] = 8.0
    assert boundary_wasserstein(ga, gb, s) == pytest.approx(0.5 * 0.125 ** 2)


# -- bounded-Lipschitz ------------------------------------------------------------------

@pytest.mark.parametrize("d, want", [(0.5, 0.4), (1.0, 2 / 3), (2.0, 1.0), (3.0, 1.2)])
def test_bl_two_atoms(d, want):
    # test functions of the form (a, -a) with a = min(1, d a') ... closed form 2d/(d+2)
    assert bounded_lipschitz([1.0, 0.0], [0.0, 1.0], points=[0.0, d], chain=True) == pytest.approx(want)
    assert want == pytest.approx(2 * d / (d + 2))


@given(seeds, st.integers(2, 7), st.booleans())
def test_bl_chain_equals_full(seed, n, periodic):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, n))
    assume(np.all(np.diff(x) > 1e-6))
    a, b = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    period = 1.0 if periodic else None
    chain = bounded_lipschitz(a, b, points=x, period=period, chain=True)
    full = bounded_lipschitz(a, b, points=x, period=period)
    assert chain == pytest.approx(full, abs=1e-9)


@given(seeds, st.integers(1, 6))
def test_bl_bounded_by_tv_and_w1(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 2, n)
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    bl = bounded_lipschitz(a, b, points=x)
    assert bl <= np.abs(a - b).sum() + 1e-9
    # W1 on the line from cumulative distributions
    order = np.argsort(x)
    cdf = np.cumsum((a - b)[order])[:-1]
    assert bl <= np.sum(np.abs(cdf) * np.diff(x[order])) + 1e-9
    assert bl == pytest.approx(bounded_lipschitz(b, a, points=x), abs=1e-9)


def test_bl_on_pairs():
    g = build_strip(4, 2, 1.0, 0.5)
    a = make_pair(g, np.ones((4, 2)), np.ones(4), normalize=True)
    assert bl_interior(a, a) == pytest.approx(0.0, abs=1e-12)
    assert bl_boundary(a, a) == pytest.approx(0.0, abs=1e-12)
    i = build_interval(4)
    p = make_pair(i, None, np.array([1.0, 0.0]))
    q = make_pair(i, None, np.array([0.0, 1.0]))
    assert bl_boundary(p, q) == pytest.approx(2 / 3)
