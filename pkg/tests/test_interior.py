import math

import numpy as np
from hypothesis import given, strategies as st

from bulkflux.interior import (NTScaling, det, identity, inside, jordan, jordan_solve, lorentz,
                               max_step, reflect)

seeds = st.integers(0, 2 ** 32 - 1)


def cone_points(rng, n, d, depth=0.5):
    """Random points strictly inside the rotated cone 2ab >= |c|^2."""
    a = rng.uniform(0.1, 3.0, n)
    b = rng.uniform(0.1, 3.0, n)
    c = rng.normal(size=(n, d - 2))
    c *= (np.sqrt(2 * a * b * depth) / np.maximum(np.linalg.norm(c, axis=1), 1e-12))[:, None]
    c *= rng.uniform(0, 1, n)[:, None]
    return np.column_stack([a, b, c])


@given(seeds, st.integers(3, 5))
def test_jordan_identity_and_symmetry(seed, d):
    rng = np.random.default_rng(seed)
    x = cone_points(rng, 7, d)
    y = rng.normal(size=(7, d))
    assert np.allclose(jordan(identity(7, d), x), x)
    assert np.allclose(jordan(x, y), jordan(y, x))
    assert np.allclose(lorentz(x, x), det(x))


@given(seeds, st.integers(3, 5))
def test_jordan_solve_inverts_product(seed, d):
    rng = np.random.default_rng(seed)
    lam = cone_points(rng, 9, d)
    u = rng.normal(size=(9, d))
    assert np.allclose(jordan_solve(lam, jordan(lam, u)), u, atol=1e-9 * (1 + np.abs(u).max()))


@given(seeds)
def test_max_step_lands_on_boundary(seed):
    rng = np.random.default_rng(seed)
    x = cone_points(rng, 5, 4)
    d = rng.normal(size=(5, 4))
    a = max_step(x, d)
    if math.isinf(a):
        assert inside(x + 50.0 * d)
        return
    assert inside(x + 0.999 * a * d)
    end = x + a * d
    # some row reaches the cone boundary
    margin = np.minimum(np.minimum(end[:, 0], end[:, 1]), det(end) / (1 + np.abs(end).sum(axis=1) ** 2))
    assert np.min(np.abs(margin)) < 1e-8


def test_max_step_infinite_along_interior_direction():
    x = identity(3, 3)
    assert max_step(x, identity(3, 3)) == math.inf


@given(seeds, st.integers(3, 5))
def test_nt_scaling_identities(seed, d):
    rng = np.random.default_rng(seed)
    s = cone_points(rng, 6, d)
    z = cone_points(rng, 6, d)
    nt = NTScaling.compute(s, z)
    assert np.allclose(nt.apply(z), nt.lam)
    assert np.allclose(nt.apply_inv(s), nt.lam)
    assert np.allclose(np.einsum("nij,njk->nik", nt.W, nt.Winv), np.eye(d)[None], atol=1e-9)
    assert np.allclose(nt.W, np.transpose(nt.W, (0, 2, 1)))
    assert inside(nt.lam)


def test_reflect_is_involution():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 4))
    assert np.array_equal(reflect(reflect(x)), x)
    assert np.allclose(lorentz(x, x), np.einsum("ni,ni->n", x, reflect(x)))
