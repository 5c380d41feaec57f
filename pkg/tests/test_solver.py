import numpy as np
import pytest

from sphere_ot import constants as tc
from sphere_ot import solver as sv
from sphere_ot.errors import DisplacementTooLarge, NotAdmissible
from sphere_ot.fields import (
    Potential,
    bump_density,
    uniform_density,
    zonal_density,
    zonal_eps_for_gradient,
)

EPS_HALF = zonal_eps_for_gradient(0.5 * tc.omega0() / np.pi)


@pytest.fixture(scope="module")
def zonal_pair(grid32):
    return zonal_density(grid32, EPS_HALF), uniform_density(grid32)


@pytest.fixture(scope="module")
def solved32(zonal_pair):
    f, g = zonal_pair
    return sv.continuity_solve(f, g, t_steps=10)


def test_density_path_endpoints(grid32):
    f = zonal_density(grid32, 0.2)
    p0 = sv.density_path(f, 0.0)
    assert np.ptp(p0.logrho) < 1e-14
    p1 = sv.density_path(f, 1.0)
    assert np.abs(p1.logrho - f.logrho).max() < 1e-14
    for t in (0.25, 0.5, 0.75):
        assert abs(sv.density_path(f, t).mass() - 1.0) < 1e-12


def test_density_path_keeps_zonal_profile(grid32):
    f = zonal_density(grid32, 0.2)
    pt = sv.density_path(f, 0.5)
    assert pt.zonal_profile is not None
    thetas = np.array([0.3, 1.2, 2.4])
    uniform_level = 1.0 / grid32.area
    expected = np.log(
        0.5 * uniform_level + 0.5 * np.exp(f.zonal_profile(thetas))
    )
    assert np.abs(pt.zonal_profile(thetas) - expected).max() < 1e-14


def test_residual_zero_at_start(grid32, zonal_pair):
    f, g = zonal_pair
    u0 = Potential(grid32, np.zeros(grid32.n_nodes))
    r = sv.residual(u0, 0.0, f, g)
    assert np.abs(r).max() < 1e-12


def test_residual_zero_for_equal_fields(grid32):
    f = zonal_density(grid32, 0.15)
    u0 = Potential(grid32, np.zeros(grid32.n_nodes))
    # identity transports rho_t to itself; the only residual left is the
    # cross-chart interpolation error of the composed density, O(h^4)
    r = sv.residual(u0, 0.6, f, f)
    assert np.abs(r).max() < 1e-5


def test_residual_rejects_inadmissible(grid32, zonal_pair):
    f, g = zonal_pair
    vals = -0.9 * grid32.ambient[:, 2] ** 2
    with pytest.raises(NotAdmissible):
        sv.residual(Potential(grid32, vals), 0.5, f, g)


def test_assemble_w_identity_potential(grid32):
    u0 = Potential(grid32, np.zeros(grid32.n_nodes))
    w, min_eig = sv.assemble_w(u0)
    assert min_eig > 0
    # at a chart center w = identity; at chart coords x it is
    # I + x x^T / beta^2 evaluated with the image at the node itself
    ids = grid32.pde_ids
    center = np.nonzero(
        (np.abs(grid32.xy[ids]) < 1e-14).all(axis=1)
    )[0]
    assert len(center) > 0
    for k in center:
        assert np.abs(w[k] - np.eye(2)).max() < 1e-10
    k = int(np.argmax(np.linalg.norm(grid32.xy[ids], axis=1)))
    x = grid32.xy[ids[k]]
    bet2 = 1.0 - x @ x
    expected = np.eye(2) + np.outer(x, x) / bet2
    assert np.abs(w[k] - expected).max() < 1e-9


def test_assemble_w_quadratic_taylor(grid32):
    # u = 0.5 eps |x|^2 in one chart near its center adds eps to the
    # curvature there: w ~ (1 + eps) I up to O(eps^2 + h^2)
    eps = 1e-3
    grid = grid32
    vals = np.zeros(grid.n_nodes)
    north = grid.chart_id == 0
    xy = grid.xy[north]
    vals[north] = 0.5 * eps * np.einsum("mi,mi->m", xy, xy)
    # keep the function globally smooth: the same sphere function in other
    # charts (1 - z = |x|^2/(1+z) ~ |x|^2/2 near the pole)
    z = grid.ambient[:, 2]
    vals = eps * (1.0 - z)
    u = Potential(grid, vals)
    w, _ = sv.assemble_w(u)
    ids = grid.pde_ids
    center = np.nonzero(
        (np.abs(grid.xy[ids]) < 1e-14).all(axis=1) & (grid.chart_id[ids] == 0)
    )[0]
    k = center[0]
    assert np.abs(w[k] - (1.0 + eps) * np.eye(2)).max() < 50 * eps**2 + 1e-7


def test_linearized_apply_constants_in_kernel(grid32, zonal_pair):
    f, g = zonal_pair
    vals = 0.02 * grid32.ambient[:, 2]
    u = Potential(grid32, grid32.sync_fringe(vals))
    out = sv.linearized_apply(u, 0.5, f, g, np.ones(grid32.n_nodes))
    assert np.abs(out).max() < 1e-10


def test_linearized_apply_directional_derivative(grid32, zonal_pair):
    f, g = zonal_pair
    base = 0.02 * np.sin(2 * grid32.ambient[:, 0]) * grid32.ambient[:, 2]
    u = Potential(grid32, grid32.sync_fringe(base))
    v = 0.5 * np.sin(2 * grid32.ambient[:, 2]) + 0.3 * grid32.ambient[:, 0]
    r0 = sv.residual(u, 0.6, f, g)
    lin = sv.linearized_apply(u, 0.6, f, g, v)
    errs = []
    for s in (1e-4, 1e-5):
        rp = sv.residual(Potential(grid32, u.values + s * v), 0.6, f, g)
        errs.append(np.abs((rp - r0) / s - lin).max())
    assert errs[0] < 1e-3
    # first-order remainder: error scales linearly in the step
    assert errs[1] < 0.2 * errs[0]


def test_newton_step_fixed_point(grid32, zonal_pair):
    f, g = zonal_pair
    state = sv.SolverState(
        t=0.0,
        u=np.zeros(grid32.n_nodes),
        lam=0.0,
        residual_norm=np.inf,
        newton_iters=0,
    )
    new = sv.newton_step(state, f, g)
    assert np.abs(new.u).max() < 1e-10
    assert new.residual_norm < 1e-12


def test_newton_contraction_and_quadratic_tail(grid32, zonal_pair):
    f, g = zonal_pair
    state = sv.SolverState(
        t=0.1,
        u=np.zeros(grid32.n_nodes),
        lam=0.0,
        residual_norm=np.inf,
        newton_iters=0,
    )
    history = []
    for _ in range(4):
        state = sv.newton_step(state, f, g)
        history.append(state.residual_norm)
        if state.residual_norm < 1e-13:
            break
    assert history[0] < 0.2 * 1.3e-2  # at least 5x down from the start
    if len(history) >= 2 and history[-1] > 0:
        c = history[-1] / history[-2] ** 2
        assert c < 1e3


def test_continuity_solve_uniform_pair(grid32):
    u = uniform_density(grid32)
    report = sv.continuity_solve(u, u, t_steps=4)
    assert report.converged
    assert report.grad_max < 1e-8
    assert report.residual_norm < 1e-10
    assert sv.diffeomorphism_certificate(report)


def test_continuity_solve_zonal(solved32, grid32, zonal_pair):
    f, g = zonal_pair
    report = solved32
    assert report.converged
    assert len(report.t_history) == 10
    assert all(h["newton_iters"] <= 8 for h in report.t_history)
    assert report.residual_norm < 1e-8
    assert report.grad_max < 2.0 / np.pi
    assert report.jacobian_min > 0
    assert report.nonsplitting_passed and report.injective
    assert sv.diffeomorphism_certificate(report)
    assert report.grad_max <= report.thm41_bound * 1.02
    # a-posteriori gradient bound along the whole path
    for h in report.t_history:
        assert h["grad_max"] <= h["thm41_bound"] * 1.02


def test_zonal_oracle_identity(grid32):
    f = zonal_density(grid32, 0.2)
    oracle = sv.zonal_oracle(f, f)
    assert oracle.max_displacement() < 1e-10
    assert oracle.cdf_residual < 1e-10


def test_zonal_oracle_pushforward(grid32):
    f = zonal_density(grid32, EPS_HALF)
    g = uniform_density(grid32)
    oracle = sv.zonal_oracle(f, g)
    assert oracle.cdf_residual < 1e-10
    assert oracle.max_displacement() < 0.5 * np.pi


def test_zonal_oracle_rejects_non_zonal(grid32):
    b = bump_density(grid32, [1.0, 0.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        sv.zonal_oracle(b, b)


def test_solver_matches_zonal_oracle(solved32, grid32, zonal_pair):
    f, g = zonal_pair
    oracle = sv.zonal_oracle(f, g)
    err = sv.zonal_map_error(solved32, grid32, oracle)
    assert err < 5e-3


def test_hypothesis_gate(grid32):
    f = zonal_density(grid32, 0.9)
    g = uniform_density(grid32)
    with pytest.raises(ValueError):
        sv.continuity_solve(f, g, t_steps=4)


def test_certificate_reflects_failure_conditions(solved32):
    import dataclasses

    good = solved32
    assert sv.diffeomorphism_certificate(good)
    bad = dataclasses.replace(good, grad_max=0.7)
    assert not sv.diffeomorphism_certificate(bad)
    bad = dataclasses.replace(good, jacobian_min=-0.1)
    assert not sv.diffeomorphism_certificate(bad)
    bad = dataclasses.replace(good, nonsplitting_passed=False)
    assert not sv.diffeomorphism_certificate(bad)
    bad = dataclasses.replace(good, converged=False)
    assert not sv.diffeomorphism_certificate(bad)


def test_forced_solve_out_of_hypothesis(grid32):
    # Outside the gradient hypothesis the solve either stalls or produces
    # a report whose certificate can fail; it must not crash.
    f = bump_density(grid32, [0.0, 0.0, 1.0], eps=6.0, width=0.5)
    g = uniform_density(grid32)
    report = sv.continuity_solve(f, g, t_steps=5, force=True)
    assert isinstance(report, sv.SolveReport)
    if not report.converged:
        assert not sv.diffeomorphism_certificate(report)
