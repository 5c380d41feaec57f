"""Exact discrete Kantorovich transport between weighted sphere clouds.

The cost between cloud points is ``1 - <x, y>`` (half squared chordal
distance), so plan objectives are squared Wasserstein distances in the
half-distance convention.  General instances go through an exact LP
solve; equal-weight square instances use the assignment fast path with
dual potentials recovered by a min-plus fixed point.  Both return plans
carrying a complementary-slackness certificate.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .constants import HypothesisReport, sphere_volume, wasserstein_gradient_bound
from .errors import InfeasibleWeights, NonConvergence, NotAMap, SizeCap

DEFAULT_SIZE_CAP = 2048
MARGINAL_TOL = 1e-10
DUAL_TOL = 1e-9


@dataclass(frozen=True)
class PointCloudMeasure:
    """Weighted point cloud on the sphere with unit total mass."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        wts = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if pts.shape[0] != wts.shape[0]:
            raise ValueError("points and weights length mismatch")
        if (wts < 0).any():
            raise ValueError("weights must be nonnegative")
        norms = np.linalg.norm(pts, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("cloud points must lie on the unit sphere")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def normalized(cls, points, weights) -> "PointCloudMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())


@dataclass
class CouplingPlan:
    """Sparse transport plan with marginals and an optimality certificate."""

    mu: PointCloudMeasure
    nu: PointCloudMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    objective: float
    dual_mu: Optional[np.ndarray] = None
    dual_nu: Optional[np.ndarray] = None

    def marginal_residual(self) -> float:
        m, n = self.mu.size, self.nu.size
        row_sums = np.bincount(self.rows, weights=self.mass, minlength=m)
        col_sums = np.bincount(self.cols, weights=self.mass, minlength=n)
        return float(
            max(
                np.abs(row_sums - self.mu.weights).max(),
                np.abs(col_sums - self.nu.weights).max(),
            )
        )

    def recompute_objective(self) -> float:
        c = 1.0 - np.einsum(
            "ki,ki->k", self.mu.points[self.rows], self.nu.points[self.cols]
        )
        return float(c @ self.mass)

    def dual_feasibility_residual(self) -> float:
        """Largest violation of ``u_a + v_b <= c_ab`` over all pairs."""
        if self.dual_mu is None or self.dual_nu is None:
            return np.inf
        cost_matrix = 1.0 - self.mu.points @ self.nu.points.T
        slack = self.dual_mu[:, None] + self.dual_nu[None, :] - cost_matrix
        return float(max(0.0, slack.max()))

    def complementary_slackness_residual(self) -> float:
        """Largest support slack ``c_ab - u_a - v_b`` on plan support."""
        if self.dual_mu is None or self.dual_nu is None:
            return np.inf
        c = 1.0 - np.einsum(
            "ki,ki->k", self.mu.points[self.rows], self.nu.points[self.cols]
        )
        gap = c - self.dual_mu[self.rows] - self.dual_nu[self.cols]
        return float(np.abs(gap).max()) if gap.size else 0.0


def _cost_matrix(mu: PointCloudMeasure, nu: PointCloudMeasure) -> np.ndarray:
    return 1.0 - mu.points @ nu.points.T


def _check_instance(mu, nu, size_cap):
    if mu.size > size_cap or nu.size > size_cap:
        raise SizeCap(f"instance {mu.size}x{nu.size} exceeds cap {size_cap}")
    if abs(mu.weights.sum() - nu.weights.sum()) > 1e-9:
        raise InfeasibleWeights("source and target masses differ by more than 1e-9")


def _assignment_duals(cost, perm, max_iter=400):
    """Dual potentials for an optimal assignment by min-plus relaxation.

    Iterates ``v_b <- min(v_b, min_a v_{perm(a)} + c_ab - c_{a,perm(a)})``;
    converges exactly when the assignment is optimal (no negative cycles in
    the admissible graph).
    """
    m = cost.shape[0]
    reduced = cost - cost[np.arange(m), perm][:, None]
    v = np.zeros(cost.shape[1])
    for _ in range(max_iter):
        cand = (v[perm][:, None] + reduced).min(axis=0)
        new = np.minimum(v, cand)
        if np.allclose(new, v, rtol=0.0, atol=1e-15):
            v = new
            break
        v = new
    else:
        raise NonConvergence("assignment dual potentials did not stabilize")
    u = cost[np.arange(m), perm] - v[perm]
    return u, v


def solve_kantorovich(
    mu: PointCloudMeasure, nu: PointCloudMeasure, size_cap: int = DEFAULT_SIZE_CAP
) -> CouplingPlan:
    """Exact optimal coupling for the half squared chordal cost.

    Equal-size uniform instances are solved as an assignment problem;
    everything else as an exact LP.  The returned plan carries dual
    potentials certifying optimality by complementary slackness.
    """
    _check_instance(mu, nu, size_cap)
    cost = _cost_matrix(mu, nu)
    m, n = cost.shape
    uniform = (
        m == n
        and np.allclose(mu.weights, 1.0 / m, rtol=0.0, atol=1e-12)
        and np.allclose(nu.weights, 1.0 / n, rtol=0.0, atol=1e-12)
    )
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        mass = np.full(m, 1.0 / m)
        dual_u, dual_v = _assignment_duals(cost, cols)
        objective = float(cost[rows, cols].sum() / m)
        return CouplingPlan(mu, nu, rows, cols, mass, objective, dual_u, dual_v)

    a_eq = sparse.vstack(
        [
            sparse.kron(sparse.identity(m), np.ones((1, n)), format="csr"),
            sparse.kron(np.ones((1, m)), sparse.identity(n), format="csr"),
        ]
    )
    rhs = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NonConvergence(f"LP solver failed with status {res.status}")
    gamma = res.x.reshape(m, n)
    rows, cols = np.nonzero(gamma > 1e-15)
    mass = gamma[rows, cols]
    duals = res.eqlin.marginals
    return CouplingPlan(
        mu,
        nu,
        rows,
        cols,
        mass,
        float(res.fun),
        dual_mu=duals[:m],
        dual_nu=duals[m:],
    )


def w2_squared(plan: CouplingPlan) -> float:
    """Plan transport cost; the half squared distance convention."""
    return plan.recompute_objective()


@dataclass(frozen=True)
class MonotonicityReport:
    violations: int
    worst: float
    pairs_checked: int


def check_monotonicity(plan: CouplingPlan, tol: float = 1e-9) -> MonotonicityReport:
    """Pairwise monotonicity of the plan support.

    For support pairs (x0, y0), (x1, y1) the optimal coupling satisfies
    ``<x0,y0> + <x1,y1> >= <x1,y0> + <x0,y1>`` up to tolerance.
    """
    xs = plan.mu.points[plan.rows]
    ys = plan.nu.points[plan.cols]
    diag = np.einsum("ki,ki->k", xs, ys)
    cross = xs @ ys.T
    lhs = diag[:, None] + diag[None, :]
    rhs = cross + cross.T
    defect = rhs - lhs
    np.fill_diagonal(defect, -np.inf)
    worst = float(defect.max())
    violations = int(np.count_nonzero(defect > tol) // 2)
    return MonotonicityReport(
        violations=violations, worst=max(worst, 0.0), pairs_checked=defect.shape[0]
    )


def plan_as_map(plan: CouplingPlan, tol: float = 1e-6) -> np.ndarray:
    """Extract target indices when the plan concentrates rows on one column."""
    m = plan.mu.size
    best = np.full(m, -1, dtype=np.int64)
    best_mass = np.zeros(m)
    row_mass = np.zeros(m)
    for r, c, g in zip(plan.rows, plan.cols, plan.mass):
        row_mass[r] += g
        if g > best_mass[r]:
            best_mass[r] = g
            best[r] = c
    concentrated = best_mass >= (1.0 - tol) * np.maximum(row_mass, 1e-300)
    if not concentrated.all():
        raise NotAMap("plan splits mass beyond tolerance")
    return best


def displacement_bound_check(
    plan: CouplingPlan, rho_min: float, n: int = 2
) -> HypothesisReport:
    """Tangential displacement against the Wasserstein power bound.

    The largest Riemannian length of the tangential part of ``T(x) - x``
    over the map support must not exceed the bound derived from the plan
    cost.
    """
    target = plan_as_map(plan)
    xs = plan.mu.points
    ys = plan.nu.points[target]
    disp = ys - xs
    tangential = disp - np.einsum("ki,ki->k", disp, xs)[:, None] * xs
    a = float(np.linalg.norm(tangential, axis=1).max())
    bound = wasserstein_gradient_bound(w2_squared(plan), rho_min, n)
    return HypothesisReport(
        theorem_id="5.2", lhs=a, rhs=bound, margin=bound - a, satisfied=a <= bound
    )


def cloud_from_density(density, n_across: int = 15) -> PointCloudMeasure:
    """Quadrature cloud of a density field on a coarse node set.

    Uses the owned nodes of a fresh coarse grid; weights are quadrature
    times density, renormalized to unit mass.
    """
    from .grid import SphereGrid  # local import to keep module load light

    coarse = SphereGrid(n_across)
    pts = coarse.ambient[coarse.owned_ids]
    logrho = density.grid.interpolate(density.logrho, pts)
    w = coarse.quad_weights[coarse.owned_ids] * np.exp(logrho)
    return PointCloudMeasure.normalized(pts, w)


def linf_w2_bound_check(rho, rhobar, n_across: int = 15) -> HypothesisReport:
    """Squared Wasserstein distance against the sup-norm density gap.

    Discretizes both fields to one quadrature cloud, solves the LP, and
    compares with ``pi * Vol(S^2) * sup|rho - rhobar|``.
    """
    from .grid import SphereGrid

    coarse = SphereGrid(n_across)
    pts = coarse.ambient[coarse.owned_ids]
    base_w = coarse.quad_weights[coarse.owned_ids]
    la = rho.grid.interpolate(rho.logrho, pts)
    lb = rhobar.grid.interpolate(rhobar.logrho, pts)
    mu = PointCloudMeasure.normalized(pts, base_w * np.exp(la))
    nu = PointCloudMeasure.normalized(pts, base_w * np.exp(lb))
    plan = solve_kantorovich(mu, nu)
    lhs = w2_squared(plan)
    gap = float(np.abs(np.exp(rho.logrho) - np.exp(rhobar.logrho)).max())
    rhs = np.pi * sphere_volume(2) * gap
    return HypothesisReport(
        theorem_id="5.4", lhs=lhs, rhs=rhs, margin=rhs - lhs, satisfied=lhs <= rhs
    )


def sinkhorn(
    mu: PointCloudMeasure,
    nu: PointCloudMeasure,
    epsilon: float,
    max_iter: int = 10_000,
    tol: float = 1e-8,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> CouplingPlan:
    """Entropically regularized plan, rounded to exact marginals.

    Log-domain iterations; the final rounding step restores feasibility,
    so the objective upper-bounds the exact LP value.  No dual certificate
    is attached.
    """
    if epsilon <= 0:
        raise ValueError("regularization must be positive")
    _check_instance(mu, nu, size_cap)
    cost = _cost_matrix(mu, nu)
    log_mu = np.log(np.maximum(mu.weights, 1e-300))
    log_nu = np.log(np.maximum(nu.weights, 1e-300))
    f = np.zeros(mu.size)
    g = np.zeros(nu.size)
    # Anneal the regularization from O(1) down to the target; warm starts
    # keep the final low-epsilon stage in its fast local regime.
    levels = [max(epsilon, 0.5**k) for k in range(60)]
    levels = sorted({lev for lev in levels if lev >= epsilon}, reverse=True)
    iters_used = 0
    converged = False
    for eps in levels:
        final = eps == epsilon
        budget = max_iter - iters_used if final else min(200, max_iter - iters_used)
        for _ in range(budget):
            iters_used += 1
            f = eps * (log_mu - logsumexp((g[None, :] - cost) / eps, axis=1))
            g = eps * (log_nu - logsumexp((f[:, None] - cost) / eps, axis=0))
            log_gamma = (f[:, None] + g[None, :] - cost) / eps
            row = np.exp(logsumexp(log_gamma, axis=1))
            col = np.exp(logsumexp(log_gamma, axis=0))
            residual = max(
                np.abs(row - mu.weights).sum(), np.abs(col - nu.weights).sum()
            )
            if residual < tol:
                converged = final
                break
    if not converged:
        raise NonConvergence(f"no convergence after {max_iter} iterations")
    gamma = np.exp(log_gamma)
    gamma = _round_to_marginals(gamma, mu.weights, nu.weights)
    rows, cols = np.nonzero(gamma > 1e-300)
    mass = gamma[rows, cols]
    objective = float((cost[rows, cols] * mass).sum())
    return CouplingPlan(mu, nu, rows, cols, mass, objective)


def _round_to_marginals(gamma, a, b):
    """Project a near-feasible plan onto exact marginals.

    Scale rows then columns down to their targets and spread the missing
    mass as a rank-one correction.
    """
    row = gamma.sum(axis=1)
    scale = np.minimum(1.0, a / np.maximum(row, 1e-300))
    gamma = gamma * scale[:, None]
    col = gamma.sum(axis=0)
    scale = np.minimum(1.0, b / np.maximum(col, 1e-300))
    gamma = gamma * scale[None, :]
    da = a - gamma.sum(axis=1)
    db = b - gamma.sum(axis=0)
    total = da.sum()
    if total > 1e-300:
        gamma = gamma + np.outer(da, db) / total
    return gamma


def brute_force_min_cost(mu: PointCloudMeasure, nu: PointCloudMeasure) -> float:
    """Exhaustive assignment minimum for small equal-weight instances."""
    m = mu.size
    if m != nu.size or m > 9:
        raise ValueError("exhaustive search is for equal sizes up to 9")
    cost = _cost_matrix(mu, nu)
    best = np.inf
    idx = np.arange(m)
    for perm in itertools.permutations(idx):
        best = min(best, cost[idx, perm].sum())
    return float(best / m)


# -- cloud CSV --------------------------------------------------------------


def read_cloud_csv(path: str) -> PointCloudMeasure:
    """Read ``x,y,z,w`` rows; weights are renormalized to unit mass."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = [cell.strip().lower() for cell in next(reader)]
        if header != ["x", "y", "z", "w"]:
            raise ValueError(f"expected header x,y,z,w, got {header!r}")
        data = np.array([[float(v) for v in row] for row in reader if row])
    pts = data[:, :3]
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return PointCloudMeasure.normalized(pts, data[:, 3])


def write_cloud_csv(cloud: PointCloudMeasure, path: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["x", "y", "z", "w"])
        for p, w in zip(cloud.points, cloud.weights):
            writer.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}", f"{w:.17g}"])
