"""Acceptance checks shared by the test suite and the command line.

Each check returns a CheckResult with a pass flag and the measured
quantities, so the same logic backs ``pytest`` assertions and the
``verify`` subcommand.  Scales default to the canonical ones; the heavy
solver-based checks accept a grid override for quick smoke runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import constants as tc
from . import convexity, discrete, solver
from .cost import cost_jet, scan_a3s
from .fields import (
    Potential,
    uniform_density,
    zonal_density,
    zonal_eps_for_gradient,
)
from .geometry import ChartPoint, chart_at, normalized
from .grid import SphereGrid


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{status} {self.name} [{self.runtime:.1f}s] {info}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.time()
        result = fn(*args, **kwargs)
        result.runtime = time.time() - start
        return result

    return wrapper


@_timed
def check_constants() -> CheckResult:
    """Criterion 1: exact constants and the delta identity."""
    w = tc.omega0()
    residual = abs(w * math.exp(w) - 2.0)
    d1_err = abs(tc.delta1(2) - 1.0 / (4.0 * math.pi**3))
    d2_err = abs(tc.delta2(2) - 1.0 / math.pi)
    identity_err = max(
        abs(tc.delta2(n) - math.pi * tc.sphere_volume(n) * tc.delta1(n))
        for n in range(2, 11)
    )
    passed = residual < 1e-14 and d1_err < 1e-10 and d2_err < 1e-10 and identity_err < 1e-12
    return CheckResult(
        "constants",
        passed,
        {
            "omega0_residual": f"{residual:.2e}",
            "delta1_err": f"{d1_err:.2e}",
            "delta2_err": f"{d2_err:.2e}",
            "identity_err": f"{identity_err:.2e}",
        },
    )


@_timed
def check_threshold_chain() -> CheckResult:
    """Criterion 2: the boundary inputs reproduce 2/pi exactly."""
    worst = 0.0
    for n in range(2, 7):
        ratio = math.exp((n - 1) * tc.omega0())
        grad_sum = (n - 1) * tc.omega0() / math.pi
        bound = tc.gradient_bound_from_values(ratio, grad_sum, n)
        worst = max(worst, abs(bound - 2.0 / math.pi))
    return CheckResult("threshold-chain", worst < 1e-12, {"worst_err": f"{worst:.2e}"})


@_timed
def check_mtw(samples: int = 10_000, seed: int = 0) -> CheckResult:
    """Criterion 3: uniform curvature margin over a low-discrepancy scan."""
    margin, info = scan_a3s(
        dim=2, samples=samples, dmin=0.01, dmax=math.pi - 0.05, seed=seed
    )
    return CheckResult(
        "mtw-scan",
        margin >= 1.0 - 1e-8,
        {"min_margin": f"{margin:.10f}", "argmin_distance": f"{info['distance']:.3f}"},
    )


def jet_finite_difference_error(point: ChartPoint, y, h: float = 1e-5) -> float:
    """Worst relative error of each jet block against one central
    difference of its analytic parent block."""
    chart = point.chart
    x = point.x
    q = chart.frame @ np.asarray(y, dtype=float)
    sy = 1 if q[-1] >= 0 else -1

    def jet_at(xv, yccv):
        by = np.sqrt(1.0 - yccv @ yccv)
        yv = chart.frame.T @ np.concatenate([yccv, [sy * by]])
        return cost_jet(ChartPoint(x=xv, chart=chart), yv)

    base = jet_at(x, q[:-1])
    worst = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        plus, minus = jet_at(x + e, q[:-1]), jet_at(x - e, q[:-1])
        plus_y, minus_y = jet_at(x, q[:-1] + e), jet_at(x, q[:-1] - e)
        pairs = [
            ((plus.c - minus.c) / (2 * h), base.ci[i], 1.0),
            ((plus.ci - minus.ci) / (2 * h), base.cij[i], np.abs(base.cij).max()),
            ((plus_y.ci - minus_y.ci) / (2 * h), base.ci_k[:, i], np.abs(base.ci_k).max()),
            (
                (plus_y.cij - minus_y.cij) / (2 * h),
                base.cij_k[:, :, i],
                np.abs(base.cij_k).max(),
            ),
            (
                (plus_y.ci_k - minus_y.ci_k) / (2 * h),
                base.ci_kl[:, :, i],
                np.abs(base.ci_kl).max(),
            ),
            (
                (plus_y.cij_k - minus_y.cij_k) / (2 * h),
                base.cij_kl[:, :, :, i],
                np.abs(base.cij_kl).max(),
            ),
        ]
        for fd, analytic, scale in pairs:
            err = np.abs(np.asarray(fd) - np.asarray(analytic)).max()
            worst = max(worst, err / max(scale, 1.0))
    return worst


@_timed
def check_cost_jets(pairs: int = 500, seed: int = 0) -> CheckResult:
    """Criterion 4: every jet block against central finite differences."""
    rng = np.random.default_rng(seed)
    chart = chart_at([0.0, 0.0, 1.0], 1)
    worst = 0.0
    done = 0
    while done < pairs:
        x = rng.uniform(-0.55, 0.55, size=2)
        ycc = rng.uniform(-0.55, 0.55, size=2)
        if x @ x > 0.49 or ycc @ ycc > 0.49:
            continue
        sy = 1 if rng.random() < 0.5 else -1
        by = np.sqrt(1.0 - ycc @ ycc)
        y = chart.frame.T @ np.concatenate([ycc, [sy * by]])
        point = ChartPoint(x=x, chart=chart)
        worst = max(worst, jet_finite_difference_error(point, y))
        done += 1
    return CheckResult("cost-jets", worst < 1e-6, {"max_rel_err": f"{worst:.2e}"})


@_timed
def check_discrete_exactness(instances: int = 50, seed: int = 0) -> CheckResult:
    """Criterion 5: LP equals the brute-force minimum; plans monotone."""
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    violations = 0
    for _ in range(instances):
        pts_a = rng.normal(size=(7, 3))
        pts_a /= np.linalg.norm(pts_a, axis=1, keepdims=True)
        pts_b = rng.normal(size=(7, 3))
        pts_b /= np.linalg.norm(pts_b, axis=1, keepdims=True)
        mu = discrete.PointCloudMeasure(pts_a, np.full(7, 1 / 7))
        nu = discrete.PointCloudMeasure(pts_b, np.full(7, 1 / 7))
        plan = discrete.solve_kantorovich(mu, nu)
        gap = abs(plan.objective - discrete.brute_force_min_cost(mu, nu))
        worst_gap = max(worst_gap, gap)
        violations += discrete.check_monotonicity(plan).violations
    return CheckResult(
        "discrete-exactness",
        worst_gap < 1e-9 and violations == 0,
        {"worst_gap": f"{worst_gap:.2e}", "monotonicity_violations": violations},
    )


def _random_density(grid, rng, scale=0.4):
    p = grid.ambient
    coef1 = rng.normal(size=3) * scale
    coef2 = rng.normal(size=(3, 3)) * scale * 0.5
    vals = p @ coef1 + np.einsum("mi,ij,mj->m", p, coef2, p)
    from .fields import DensityField

    return DensityField(grid, vals).normalized()


@_timed
def check_lemma54(pairs: int = 20, cloud_n: int = 15, seed: int = 0) -> CheckResult:
    """Criterion 6: squared distance below the sup-norm bound on clouds."""
    grid = SphereGrid(24)
    rng = np.random.default_rng(seed)
    min_margin = np.inf
    for _ in range(pairs):
        rho = _random_density(grid, rng)
        rhobar = _random_density(grid, rng)
        rep = discrete.linf_w2_bound_check(rho, rhobar, n_across=cloud_n)
        min_margin = min(min_margin, rep.margin)
        if not rep.satisfied:
            return CheckResult(
                "lemma54", False, {"violating_margin": f"{rep.margin:.3e}"}
            )
    return CheckResult("lemma54", min_margin > 0, {"min_margin": f"{min_margin:.4f}"})


@_timed
def check_displacement_bound(instances: int = 10, cloud: int = 2000, seed: int = 0):
    """Criterion 7: tangential displacement below the power bound."""
    rng = np.random.default_rng(seed)
    rho_min = 1.0 / (4.0 * math.pi)
    worst_ratio = 0.0
    for _ in range(instances):
        pts = rng.normal(size=(cloud, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        axis = normalized(rng.normal(size=3))
        angle = rng.uniform(0.02, 0.1)
        k = np.array(
            [
                [0.0, -axis[2], axis[1]],
                [axis[2], 0.0, -axis[0]],
                [-axis[1], axis[0], 0.0],
            ]
        )
        rot = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
        mu = discrete.PointCloudMeasure(pts, np.full(cloud, 1.0 / cloud))
        nu = discrete.PointCloudMeasure(pts @ rot.T, np.full(cloud, 1.0 / cloud))
        plan = discrete.solve_kantorovich(mu, nu)
        rep = discrete.displacement_bound_check(plan, rho_min, 2)
        worst_ratio = max(worst_ratio, rep.lhs / rep.rhs)
        if not rep.satisfied:
            return CheckResult(
                "displacement-bound", False, {"violation": f"{rep.lhs - rep.rhs:.3e}"}
            )
    return CheckResult(
        "displacement-bound", True, {"worst_ratio": f"{worst_ratio:.3f}"}
    )


@_timed
def check_nonsplitting_inequality(num: int = 100) -> CheckResult:
    """Criterion 8: s t + cos t < 1 on the nonsplitting rectangle."""
    margin = convexity.scalar_nonsplitting_margin(num_s=num, num_t=num)
    return CheckResult(
        "nonsplitting-inequality", margin > 0, {"min_margin": f"{margin:.3e}"}
    )


def _zonal_instance(grid_n: int):
    grid = SphereGrid(grid_n)
    eps = zonal_eps_for_gradient(0.5 * tc.omega0() / math.pi)
    f = zonal_density(grid, eps)
    g = uniform_density(grid)
    return grid, f, g


def solve_zonal_instance(grid_n: int, t_steps: int = 10):
    grid, f, g = _zonal_instance(grid_n)
    report = solver.continuity_solve(f, g, t_steps=t_steps)
    oracle = solver.zonal_oracle(f, g)
    err = solver.zonal_map_error(report, grid, oracle)
    return grid, f, g, report, err


@_timed
def check_zonal_solve(grid_n: int = 64, solved=None) -> CheckResult:
    """Criterion 9: the zonal instance end to end."""
    if solved is None:
        solved = solve_zonal_instance(grid_n)
    grid, f, g, report, err = solved
    max_iters = max(h["newton_iters"] for h in report.t_history) if report.t_history else 99
    certificate = solver.diffeomorphism_certificate(report)
    passed = (
        report.converged
        and len(report.t_history) <= 10
        and max_iters <= 8
        and report.residual_norm < 1e-8
        and err <= 5e-3
        and report.grad_max < 2.0 / math.pi
        and certificate
        and report.grad_max <= report.thm41_bound * 1.02
    )
    return CheckResult(
        "zonal-solve",
        passed,
        {
            "grid": grid_n,
            "residual": f"{report.residual_norm:.2e}",
            "zonal_error": f"{err:.2e}",
            "grad_max": f"{report.grad_max:.4f}",
            "thm41_bound": f"{report.thm41_bound:.4f}",
            "max_newton_iters": max_iters,
            "certificate": certificate,
        },
    )


@_timed
def check_convergence_order(grids=(32, 48, 64), solves=None) -> CheckResult:
    """Criterion 10: observed order of the map error and mass gap."""
    errors = {}
    for n in grids:
        if solves is not None and n in solves:
            _, _, _, report, err = solves[n]
        else:
            _, _, _, report, err = solve_zonal_instance(n)
        errors[n] = (report.pushforward_l1, err)
    orders = []
    pairs = list(zip(grids[:-1], grids[1:]))
    for n1, n2 in pairs:
        h_ratio = (n2 - 1) / (n1 - 1)
        for k in (0, 1):
            orders.append(math.log(errors[n1][k] / errors[n2][k]) / math.log(h_ratio))
    worst = min(orders)
    return CheckResult(
        "convergence-order",
        worst >= 1.7,
        {"orders": "/".join(f"{o:.2f}" for o in orders)},
    )


@_timed
def check_cross_oracle(
    grid_n: int = 64, subsample: int = 1024, seed: int = 0, solved=None
) -> CheckResult:
    """Criterion 11: solver map against the discrete Kantorovich map.

    The LP runs on a node subsample with quadrature-density weights; its
    map is the barycentric projection of the optimal plan.  Agreement is
    measured in chart coordinates against twice the grid spacing.
    """
    if solved is None:
        solved = solve_zonal_instance(grid_n)
    grid, f, g, report, _ = solved
    rng = np.random.default_rng(seed)
    owned = grid.owned_ids
    take = min(subsample, len(owned))
    sel = rng.choice(len(owned), size=take, replace=False)
    sel.sort()
    ids = owned[sel]
    pts = grid.ambient[ids]
    wq = grid.quad_weights[ids]
    mu = discrete.PointCloudMeasure.normalized(pts, wq * np.exp(f.logrho[ids]))
    nu = discrete.PointCloudMeasure.normalized(pts, wq * np.exp(g.logrho[ids]))
    plan = discrete.solve_kantorovich(mu, nu, size_cap=4096)
    # barycentric projection of the plan, renormalized to the sphere
    bary = np.zeros((take, 3))
    np.add.at(bary, plan.rows, plan.mass[:, None] * nu.points[plan.cols])
    row_mass = np.bincount(plan.rows, weights=plan.mass, minlength=take)
    bary /= row_mass[:, None]
    bary /= np.linalg.norm(bary, axis=1, keepdims=True)

    pos = np.searchsorted(grid.pde_ids, ids)
    solver_images = report.map_images[pos]
    donors = grid.owner_of(solver_images)
    a = grid.chart_coords(donors, solver_images)
    heights = np.einsum("mi,mi->m", bary, grid.centers[donors])
    b = grid.chart_coords(donors, bary)
    dist = np.where(heights > 0, np.linalg.norm(a - b, axis=1), np.inf)
    agree = float((dist <= 2.0 * grid.h).mean())
    return CheckResult(
        "cross-oracle",
        agree >= 0.95,
        {"agreement": f"{agree:.3f}", "nodes": take},
    )


@_timed
def check_cconvex_algebra(grid_n: int = 48, potentials: int = 20, seed: int = 0):
    """Criterion 12: transform algebra on random potentials."""
    grid = SphereGrid(grid_n)
    rng = np.random.default_rng(seed)
    worst_triple = 0.0
    worst_gap = -np.inf
    ids = grid.owned_ids
    for _ in range(potentials):
        coef1 = rng.normal(size=3) * 0.3
        coef2 = rng.normal(size=(3, 3)) * 0.15
        p = grid.ambient
        vals = p @ coef1 + np.einsum("mi,ij,mj->m", p, coef2, p)
        u = Potential(grid, vals)
        uc = convexity.c_transform(u)
        ucc = convexity.c_transform(uc)
        uccc = convexity.c_transform(ucc)
        worst_triple = max(
            worst_triple, float(np.abs(uccc.values[ids] - uc.values[ids]).max())
        )
        worst_gap = max(worst_gap, float((ucc.values[ids] - u.values[ids]).max()))
    passed = worst_triple < 1e-10 and worst_gap <= 1e-12
    return CheckResult(
        "cconvex-algebra",
        passed,
        {"triple_defect": f"{worst_triple:.2e}", "max_ucc_minus_u": f"{worst_gap:.2e}"},
    )


CASE_NAMES = (
    "constants",
    "threshold-chain",
    "mtw",
    "jets",
    "discrete",
    "lemma54",
    "displacement",
    "nonsplitting",
    "zonal",
    "order",
    "cross-oracle",
    "cconvex",
)


def run_cases(case: str = "all", grid_n: int = 64, seed: int = 0):
    """Run one named verification case, or the full suite in order."""
    results = []
    wanted = CASE_NAMES if case == "all" else (case,)
    solves = {}

    def zonal_solved(n):
        if n not in solves:
            solves[n] = solve_zonal_instance(n)
        return solves[n]

    for name in wanted:
        if name == "constants":
            results.append(check_constants())
        elif name == "threshold-chain":
            results.append(check_threshold_chain())
        elif name == "mtw":
            results.append(check_mtw(seed=seed))
        elif name == "jets":
            results.append(check_cost_jets(seed=seed))
        elif name == "discrete":
            results.append(check_discrete_exactness(seed=seed))
        elif name == "lemma54":
            results.append(check_lemma54(seed=seed))
        elif name == "displacement":
            results.append(check_displacement_bound(seed=seed))
        elif name == "nonsplitting":
            results.append(check_nonsplitting_inequality())
        elif name == "zonal":
            results.append(check_zonal_solve(grid_n, solved=zonal_solved(grid_n)))
        elif name == "order":
            grids = tuple(sorted({32, 48, grid_n}))
            results.append(
                check_convergence_order(
                    grids, solves={n: zonal_solved(n) for n in grids}
                )
            )
        elif name == "cross-oracle":
            results.append(
                check_cross_oracle(grid_n, seed=seed, solved=zonal_solved(grid_n))
            )
        elif name == "cconvex":
            results.append(check_cconvex_algebra(seed=seed))
        else:
            raise ValueError(f"unknown verification case {name!r}")
    return results
