import numpy as np
import pytest

from sphere_ot import convexity as cv
from sphere_ot import cost as ck
from sphere_ot import geometry as geo
from sphere_ot.errors import GradientTooLarge, NotCConvex
from sphere_ot.fields import Potential


def support_potential(grid, y0, lam=0.0):
    """-c(., y0) + lam evaluated on all grid nodes."""
    return Potential(grid, (grid.ambient @ y0 - 1.0) + lam)


def test_c_transform_of_zero(grid32):
    u = Potential(grid32, np.zeros(grid32.n_nodes))
    uc = cv.c_transform(u)
    assert np.abs(uc.values[grid32.owned_ids]).max() < 1e-14


def test_c_transform_of_support_function(grid32):
    y0 = grid32.ambient[grid32.owned_ids[321]]
    u = support_potential(grid32, y0)
    uc = cv.c_transform(u)
    # the transform at the support target itself is zero
    pos = grid32.owned_ids[321]
    assert abs(uc.values[pos]) < 1e-14


def test_triple_transform_identity(grid32):
    rng = np.random.default_rng(0)
    vals = 0.2 * np.sin(2 * grid32.ambient[:, 0]) * grid32.ambient[:, 2]
    uc = cv.c_transform(Potential(grid32, vals))
    uccc = cv.c_transform(cv.c_transform(uc))
    ids = grid32.owned_ids
    assert np.abs(uccc.values[ids] - uc.values[ids]).max() < 1e-10


def test_double_transform_below(grid32):
    rng = np.random.default_rng(1)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        coef = rng.normal(size=3) * 0.2
        vals = grid32.ambient @ coef
        u = Potential(grid32, vals)
        ucc = cv.c_transform(cv.c_transform(u))
        ids = grid32.owned_ids
        assert (ucc.values[ids] <= u.values[ids] + 1e-12).all()


def test_is_c_convex_cases(grid32):
    const = Potential(grid32, np.full(grid32.n_nodes, 1.3))
    ok, defect = cv.is_c_convex(const)
    assert ok and defect < 1e-12

    y0 = grid32.ambient[grid32.owned_ids[100]]
    ok, defect = cv.is_c_convex(support_potential(grid32, y0, lam=3.0))
    assert ok and defect < 1e-12

    # a bump spike on top of a support function breaks the support
    # inequality
    vals = support_potential(grid32, y0).values.copy()
    far = np.argmin(grid32.ambient @ y0)
    vals[far] += 0.5
    ok, defect = cv.is_c_convex(Potential(grid32, vals))
    assert not ok and defect > 0.1


def test_c_subdifferential_identity_potential(grid32):
    u = Potential(grid32, np.zeros(grid32.n_nodes))
    x = grid32.ambient[grid32.owned_ids[50]]
    witness = cv.c_subdifferential(u, x)
    ys = np.array([s[0] for s in witness.supports])
    assert np.linalg.norm(ys - x, axis=1).min() < 1e-12


def test_c_subdifferential_support_function(grid32):
    y0 = grid32.ambient[grid32.owned_ids[200]]
    u = support_potential(grid32, y0, lam=3.0)
    for idx in (0, 77, 500):
        x = grid32.ambient[grid32.owned_ids[idx]]
        witness = cv.c_subdifferential(u, x)
        ys = np.array([s[0] for s in witness.supports])
        assert np.linalg.norm(ys - y0, axis=1).min() < 1e-12
        # the support constants and touching values are consistent
        for y, lam in witness.supports:
            ux = u.values[grid32.owned_ids[idx]]
            assert abs(ux - (-(1.0 - x @ y) + lam)) < 1e-8


def test_c_subdifferential_requires_convexity(grid32):
    rng = np.random.default_rng(2)
    vals = rng.normal(size=grid32.n_nodes)
    with pytest.raises(NotCConvex):
        cv.c_subdifferential(Potential(grid32, vals), grid32.ambient[0])


def test_splitting_pair_detected(grid32):
    y0 = grid32.ambient[grid32.owned_ids[400]]
    vals = np.maximum(grid32.ambient @ y0, -(grid32.ambient @ y0)) - 1.0
    u = Potential(grid32, vals)
    scores = np.abs(grid32.ambient[grid32.owned_ids] @ y0)
    node = grid32.owned_ids[np.argmin(scores)]
    witness = cv.c_subdifferential(u, grid32.ambient[node], tol=1e-6)
    ys = np.array([s[0] for s in witness.supports])
    gram = ys @ ys.T
    assert gram.min() < -0.9  # a nearly antipodal candidate pair


def test_t_plus_map_identity(grid32):
    u = Potential(grid32, np.zeros(grid32.n_nodes))
    images = cv.t_plus_map(u)
    assert np.abs(images - grid32.ambient[grid32.owned_ids]).max() < 1e-12


def test_t_minus_map_antipodal(grid32):
    u = Potential(grid32, np.zeros(grid32.n_nodes))
    images = cv.t_minus_map(u)
    assert np.abs(images + grid32.ambient[grid32.owned_ids]).max() < 1e-12


def test_map_fields_defining_relation(grid32):
    # -d_x c(x, T(x)) = Du(x) for both branches, and the branches are
    # separated by the sign of <x, T(x)>.
    grid = grid32
    vals = 0.1 * grid.ambient[:, 2] + 0.05 * grid.ambient[:, 0]
    u = Potential(grid, vals)
    tp = cv.t_plus_map(u)
    tm = cv.t_minus_map(u)
    pos = np.searchsorted(grid.pde_ids, grid.owned_ids)
    grad = grid.fd_gradient(u.values)[pos]
    sources = grid.ambient[grid.owned_ids]
    rng = np.random.default_rng(3)
    for k in rng.integers(0, len(sources), size=40):
        chart = geo.chart_at(grid.centers[grid.chart_id[grid.owned_ids[k]]], 1)
        point = geo.ChartPoint(x=grid.xy[grid.owned_ids[k]], chart=chart)
        for images, sign in ((tp, 1), (tm, -1)):
            jet = ck.cost_jet(point, images[k])
            assert np.abs(-jet.ci - grad[k]).max() < 1e-9
            assert sign * (sources[k] @ images[k]) > 0
        dist = geo.geodesic_distance(sources[k], tm[k])
        assert np.pi / 2 - 1e-9 <= dist <= np.pi + 1e-9


def test_t_plus_rejects_large_gradients(grid32):
    vals = 2.0 * grid32.ambient[:, 2]
    with pytest.raises(GradientTooLarge):
        cv.t_plus_map(Potential(grid32, vals))


def test_nonsplitting_zero_potential(grid32):
    rep = cv.nonsplitting_check(Potential(grid32, np.zeros(grid32.n_nodes)))
    assert rep.passed and rep.offenders == 0
    assert rep.grad_max < 1e-12


def test_nonsplitting_smooth_potential(grid32):
    # smooth c-convex potential from a double transform, gradient < 2/pi
    seed = Potential(grid32, 0.25 * grid32.ambient[:, 2])
    ucc = cv.c_transform(cv.c_transform(seed))
    u = Potential(grid32, grid32.sync_fringe(ucc.values))
    rep = cv.nonsplitting_check(u, convexity_tol=1e-6)
    assert rep.grad_max < cv.NONSPLIT_GRAD_BOUND
    assert rep.passed


def test_nonsplitting_gradient_gate(grid32):
    vals = 0.9 * grid32.ambient[:, 2]
    ucc = cv.c_transform(cv.c_transform(Potential(grid32, vals)))
    u = Potential(grid32, grid32.sync_fringe(ucc.values))
    rep = cv.nonsplitting_check(u, convexity_tol=1.0)
    if rep.grad_max >= cv.NONSPLIT_GRAD_BOUND:
        assert not rep.passed and rep.reason == "gradient"


def test_scalar_nonsplitting_margin():
    margin = cv.scalar_nonsplitting_margin(num_s=100, num_t=100)
    assert margin > 0
    # sharp corner: at s = 2/pi the margin closes at t = pi/2
    tight = cv.scalar_nonsplitting_margin(num_s=50, num_t=50, s_max=2 / np.pi - 1e-6)
    assert 0 < tight < 1e-5
