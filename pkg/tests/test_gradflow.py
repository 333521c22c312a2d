import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bulkflux.geometry import build_interval, build_strip
from bulkflux.gradflow import (EnergySpec, FlowError, FlowState, cfl_bound, chain_rule_check, dissipation,
                               energy, gibbs_measure, gradient_field, run, step, tangent_norm)
from bulkflux.measures import make_pair

seeds = st.integers(0, 2 ** 32 - 1)
geoms = st.sampled_from([build_interval(8), build_interval(5, 2.0), build_strip(5, 3, 1.0, 0.5)])
kinds = st.sampled_from(["boltzmann", "renyi"])


def random_state(g, rng, floor=0.05):
    om = rng.uniform(floor, 1.0, g.cell_shape)
    ga = rng.uniform(floor, 1.0, g.n_boundary)
    return make_pair(g, om, ga, normalize=True)


def random_spec(kind, g, rng):
    if kind == "boltzmann":
        return EnergySpec("boltzmann", rng.normal(size=g.cell_shape), rng.normal(size=g.n_boundary))
    return EnergySpec("renyi", m_interior=rng.uniform(1.5, 3.0), m_boundary=rng.uniform(1.5, 3.0))


@given(geoms, seeds, st.floats(0.1, 5.0))
def test_gibbs_state_is_stationary(g, seed, kappa):
    rng = np.random.default_rng(seed)
    Vi, Vb = rng.normal(size=g.cell_shape), rng.normal(size=g.n_boundary)
    pi = gibbs_measure(g, Vi, Vb)
    gf = gradient_field(pi, EnergySpec("boltzmann", Vi, Vb), kappa)
    assert max(np.abs(gf.F).max(), np.abs(gf.G).max(initial=0.0), np.abs(gf.f).max()) <= 1e-12


@given(geoms, kinds, seeds, st.floats(0.2, 4.0))
def test_step_conserves_mass_and_lowers_energy(g, kind, seed, kappa):
    rng = np.random.default_rng(seed)
    spec = random_spec(kind, g, rng)
    st0 = FlowState.from_pair(random_state(g, rng), spec)
    tau = cfl_bound(st0, spec, kappa)
    new = step(st0, spec, kappa, tau)
    assert abs(new.total_mass - st0.total_mass) <= 4e-16 * st0.total_mass
    assert new.energy <= st0.energy + 1e-13 * max(1.0, abs(st0.energy))


@given(geoms, kinds, seeds, st.floats(0.2, 4.0))
def test_dissipation_is_twice_the_tangent_norm(g, kind, seed, kappa):
    rng = np.random.default_rng(seed)
    spec = random_spec(kind, g, rng)
    st0 = FlowState.from_pair(random_state(g, rng), spec)
    gf = gradient_field(st0, spec, kappa)
    D = dissipation(st0, spec, kappa, gf)
    assert D >= 0
    assert D == pytest.approx(2 * tangent_norm(st0, gf, kappa), rel=1e-10)


def test_renyi_ramp_by_hand():
    g = build_interval(4)
    om = np.array([0.4, 0.8, 1.2, 1.6])  # mass one, empty boundary
    rho = make_pair(g, om, np.array([0.0, 0.0]))
    spec = EnergySpec("renyi", m_interior=2.0, m_boundary=2.0)
    gf = gradient_field(rho, spec, 1.0)
    # E' = 2 omega: slope 2 * 0.4 / 0.25 = 3.2 on every inner face, density from the higher side
    assert np.allclose(gf.F[1:4], [0.8 * 3.2, 1.2 * 3.2, 1.6 * 3.2])
    assert np.all(gf.f == 0)
    # the flow moves mass down the slope: d omega / dt = div F
    new = step(FlowState.from_pair(rho, spec), spec, 1.0, 1e-3)
    rate = (new.omega - rho.omega) / 1e-3
    assert np.allclose(rate, np.diff(gf.F) / 0.25, rtol=1e-12)
    assert rate[0] > 0 and rate[-1] < 0


def test_mirror_symmetry_on_interval():
    rng = np.random.default_rng(4)
    g = build_interval(7)
    a = random_state(g, rng)
    b = make_pair(g, a.omega[::-1], a.gamma[::-1])
    spec = EnergySpec("boltzmann")
    fa, fb = gradient_field(a, spec, 0.8), gradient_field(b, spec, 0.8)
    assert np.allclose(fa.F, -fb.F[::-1])
    assert np.allclose(fa.f, fb.f[::-1])


def test_empty_boundary_stays_empty():
    # the exchange vanishes unless both sides carry mass, so gamma = 0 is invariant
    g = build_interval(8)
    x = g.cell_centers()[:, 0]
    rho = make_pair(g, 1 + 0.5 * np.cos(np.pi * x), None, normalize=True)
    traj = run(rho, EnergySpec("boltzmann"), 1.0, T=0.05, tau=1e-3)
    assert np.all(traj.states[-1].gamma == 0)
    assert traj.states[-1].total_mass == pytest.approx(1.0, abs=1e-15)


def test_cfl_violation_is_reported_with_bound():
    rng = np.random.default_rng(0)
    g = build_interval(8)
    spec = EnergySpec("boltzmann")
    st0 = FlowState.from_pair(random_state(g, rng), spec)
    bound = cfl_bound(st0, spec, 1.0)
    with pytest.raises(FlowError) as exc:
        step(st0, spec, 1.0, 2 * bound)
    assert exc.value.bound == pytest.approx(bound)


def test_negative_density_is_rejected():
    g = build_interval(8)
    spec = EnergySpec("boltzmann")
    rho = make_pair(g, np.r_[np.full(4, 1.9), np.full(4, 0.1)] / 1.0 * 0.5 / 0.5, None, normalize=True)
    with pytest.raises(FlowError, match="negative"):
        step(FlowState.from_pair(rho, spec), spec, 1.0, 10.0, check_cfl=False)


def test_long_run_reaches_gibbs():
    g = build_interval(8)
    x = g.cell_centers()[:, 0]
    Vi, Vb = np.cos(2 * np.pi * x), np.array([0.5, -0.3])
    spec = EnergySpec("boltzmann", Vi, Vb)
    rho = make_pair(g, np.exp(-((x - 0.2) / 0.2) ** 2), np.array([0.3, 0.1]), normalize=True)
    traj = run(rho, spec, 1.0, T=30.0, tau=0.01)
    end = traj.states[-1]
    pi = gibbs_measure(g, Vi, Vb)
    dist = np.abs(end.omega - pi.omega).sum() * g.dx + np.abs(end.gamma - pi.gamma).sum()
    assert dist < 1e-8
    assert np.all(np.diff(traj.energies) <= 1e-14)


def test_exchange_time_scales_like_kappa_squared():
    """Slow exchange: the boundary-interior imbalance decays at a rate ~ 1/kappa^2.

    The start is symmetric with a uniform interior, so diffusion only reacts
    to the exchange and the imbalance is a single slow mode.
    """
    g = build_interval(4)
    spec = EnergySpec("boltzmann")
    rho = make_pair(g, np.full(4, 0.4), np.array([0.3, 0.3]))

    def rate(kappa):
        traj = run(rho, spec, kappa, T=0.5 * kappa ** 2, tau=1e-2, keep_states=2)
        a, b = traj.states
        gap = lambda s: abs(np.log(s.gamma[0]) - np.log(s.omega.mean()))  # noqa: E731
        return math.log(gap(a) / gap(b)) / (b.time - a.time)

    k1, k2 = 4.0, 8.0
    slope = math.log(rate(k1) / rate(k2)) / math.log(k2 / k1)
    assert slope == pytest.approx(2.0, abs=0.05)


def test_chain_rule_richardson():
    g = build_strip(6, 4, 1.0, 0.5)
    rng = np.random.default_rng(5)
    rho = random_state(g, rng, floor=0.3)
    chk = chain_rule_check(rho, EnergySpec("renyi", m_interior=2, m_boundary=2.5), 0.7,
                           [2e-4 / 2 ** k for k in range(4)])
    assert min(chk["orders"]) > 1.9
    assert chk["richardson_slopes"][-1] == pytest.approx(-chk["dissipation"], rel=1e-6)


def test_trajectory_rows_and_states():
    g = build_interval(6)
    rho = random_state(g, np.random.default_rng(1))
    traj = run(rho, EnergySpec("boltzmann"), 1.0, T=0.01, tau=1e-3, record_every=2, keep_states=3)
    rows = traj.as_rows()
    assert rows[0]["time"] == 0.0 and rows[-1]["time"] == pytest.approx(0.01)
    assert len(traj.states) == 3 and traj.steps >= 10
    assert energy(traj.states[-1], EnergySpec("boltzmann")) == pytest.approx(rows[-1]["energy"])


@pytest.mark.parametrize("kw", [dict(kind="tsallis"), dict(kind="renyi", m_interior=1.0)])
def test_energy_spec_validation(kw):
    with pytest.raises(ValueError):
        EnergySpec(**kw)


def test_run_rejects_bad_times():
    g = build_interval(4)
    with pytest.raises(ValueError):
        run(random_state(g, np.random.default_rng(0)), EnergySpec(), 1.0, T=1.0, tau=0.0)
