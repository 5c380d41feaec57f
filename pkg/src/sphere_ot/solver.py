"""Continuity-method Newton solver for the sphere transport equation.

The unknown potential u lives on all nodes of a composite grid.  At nodes
with complete stencils the discrete equation matches

    log det(D^2 u + c_ij(x, T(x))) - log |det c_(i,k)(x, T(x))|
        = log(rho_t(x)/beta(x)) - log(rhobar_t(T(x))/beta(T(x))) + lam,

with ``T = Y^+(x, Du)``; fringe nodes are slaved to cross-chart
interpolation, and the scalar ``lam`` absorbs the discrete mass
compatibility defect (it vanishes with the grid spacing) while a
quadrature-mean row pins the additive constant of u.  Continuation runs
from the uniform pair at t = 0, where u = 0 solves the system exactly, up
to the target densities at t = 1, with Newton steps damped by a
residual-decreasing line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np
import pyamg
from scipy import sparse
from scipy.integrate import cumulative_simpson
from scipy.sparse.linalg import LinearOperator, gmres, splu
from scipy.spatial import cKDTree

from . import convexity
from .constants import gradient_bound_thm41
from .cost import batch_cost_blocks, batch_y_plus
from .errors import (
    AdmissibilityLost,
    ChartDegeneracy,
    DisplacementTooLarge,
    GradientTooLarge,
    LinearSolveFailure,
    LineSearchFailure,
    NotAdmissible,
    NotCConvex,
    SingularCrossDifference,
)
from .fields import DensityField, Potential, uniform_density

NONSPLIT_BOUND = 2.0 / np.pi


@dataclass
class SolverConfig:
    t_steps: int = 10
    newton_max: int = 12
    newton_tol: float = 1e-10
    grad_cap: float = 0.99
    alpha_min: float = 2.0**-8
    dt_floor: float = 1.0 / 160.0
    thm41_slack: float = 0.02
    verbose: bool = False


@dataclass
class SolverState:
    """Newton iterate along the continuation path."""

    t: float
    u: np.ndarray
    lam: float
    residual_norm: float
    newton_iters: int


@dataclass
class SolveReport:
    converged: bool
    grad_max: float
    jacobian_min: float
    pushforward_l1: float
    thm41_bound: float
    residual_norm: float
    mass_constant: float
    nonsplitting_passed: bool
    injective: bool
    grid_n: int
    t_history: list = dataclass_field(default_factory=list)
    failure: str = ""
    map_images: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "grad_max": self.grad_max,
            "jacobian_min": self.jacobian_min,
            "pushforward_l1": self.pushforward_l1,
            "thm41_bound": self.thm41_bound,
            "residual_norm": self.residual_norm,
            "mass_constant": self.mass_constant,
            "nonsplitting_passed": self.nonsplitting_passed,
            "injective": self.injective,
            "diffeomorphism": diffeomorphism_certificate(self),
            "grid_n": self.grid_n,
            "failure": self.failure,
            "t_history": self.t_history,
        }


def density_path(field: DensityField, t: float) -> DensityField:
    """Linear density interpolation from uniform to the target.

    ``rho_t = (1 - t) * rho_uniform + t * rho``; the grid mass stays
    exactly one for every t because both endpoints are normalized on the
    same quadrature.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("path parameter must lie in [0, 1]")
    uniform_level = 1.0 / field.grid.area
    rho = np.exp(field.logrho)
    logrho_t = np.log((1.0 - t) * uniform_level + t * rho)
    profile = field.zonal_profile
    if profile is not None:
        old = profile

        def profile_t(theta, _old=old, _t=t, _lev=uniform_level):
            return np.log((1.0 - _t) * _lev + _t * np.exp(_old(theta)))

    else:
        profile_t = None
    return DensityField(field.grid, logrho_t, zonal_profile=profile_t)


class _Operator:
    """Discrete residual and linearization data at one Newton iterate."""

    def __init__(self, grid, u_vals, lam, ft_vals, gt_vals, need_jacobian):
        self.grid = grid
        self.w_inv = None
        pde = grid.pde_ids
        self.xy = grid.xy[pde]
        self.bet = grid.bet[pde]
        self.charts = grid.chart_id[pde]
        grad = grid.fd_gradient(u_vals)
        m = len(pde)

        images = np.empty((m, 3))
        p_centered = np.empty((m, 2))
        for c in range(6):
            sel = self.charts == c
            if not sel.any():
                continue
            images[sel], p_centered[sel] = batch_y_plus(
                self.xy[sel], 1, grid.frames[c], grad[sel]
            )
        self.images = images
        self.grad_norms = np.linalg.norm(p_centered, axis=1)
        self.grad_max = float(self.grad_norms.max())

        # Target coordinates in each node's own chart frame, either branch.
        q3 = np.einsum("mab,mb->ma", grid.frames[self.charts], images)
        ycc = q3[:, :2]
        heights = q3[:, 2]
        sy = np.where(heights >= 0.0, 1, -1)
        beta_y = np.abs(heights)
        if (1.0 - np.linalg.norm(ycc, axis=1)).min() < 1e-8:
            raise ChartDegeneracy("a transport image reached a chart equator")
        self.ycc = ycc
        self.beta_y = beta_y

        blocks = batch_cost_blocks(self.xy, 1, ycc, sy)
        hess = grid.fd_hessian(u_vals)
        w = hess + blocks["cij"]
        tr = w[:, 0, 0] + w[:, 1, 1]
        disc = np.sqrt((w[:, 0, 0] - w[:, 1, 1]) ** 2 + 4.0 * w[:, 0, 1] ** 2)
        self.w = w
        self.w_min_eig = float((0.5 * (tr - disc)).min())
        self.admissible = self.w_min_eig > 0.0
        det_w = w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] * w[:, 1, 0]
        self.det_w = det_w

        ci_k = blocks["ci_k"]
        det_c = ci_k[:, 0, 0] * ci_k[:, 1, 1] - ci_k[:, 0, 1] * ci_k[:, 1, 0]
        if np.abs(det_c).min() < 1e-12:
            raise SingularCrossDifference("cross-difference matrix is singular")
        self.det_c = det_c
        self.binv = np.linalg.inv(ci_k)

        plan = grid.interpolation_plan(images)
        gval, ggrad = plan.apply_with_gradient(gt_vals)
        self.gval = gval

        if not self.admissible:
            self.residual = None
            return
        self.residual = (
            np.log(det_w)
            - np.log(np.abs(det_c))
            - (ft_vals[pde] - np.log(self.bet))
            + (gval - np.log(beta_y))
            - lam
        )

        if not need_jacobian:
            return

        w_inv = np.linalg.inv(w)
        self.w_inv = w_inv
        term1 = np.einsum("mij,mijl->ml", w_inv, blocks["cij_k"])
        term2 = np.einsum("mki,mikl->ml", self.binv, blocks["ci_kl"])
        # Chain the target-density gradient from donor-chart coordinates to
        # the node chart's y-coordinates.
        frames_d = grid.frames[plan.donor]
        frames_c = grid.frames[self.charts]
        a3 = np.einsum("mab,mcb->mac", frames_d, frames_c)
        emb = np.zeros((m, 3, 2))
        emb[:, 0, 0] = 1.0
        emb[:, 1, 1] = 1.0
        emb[:, 2, :] = sy[:, None] * (-ycc / beta_y[:, None])
        chain = np.einsum("mac,mcl->mal", a3, emb)[:, :2, :]
        dens = np.einsum("md,mdl->ml", ggrad, chain) + ycc / beta_y[:, None] ** 2
        total = term1 - term2 + dens
        self.grad_coeff = -np.einsum("ml,mlk->mk", total, self.binv)

    def jacobian_matrix(self) -> sparse.csr_matrix:
        """Sparse derivative of the PDE rows with respect to node values."""
        grid = self.grid
        coef = grid.stencil_coefficients(self.w_inv, self.grad_coeff)
        m = coef.shape[0]
        rows = np.repeat(np.arange(m), 25)
        cols = grid.stencil_ids.reshape(m, 25).ravel()
        return sparse.coo_matrix(
            (coef.reshape(m, 25).ravel(), (rows, cols)), shape=(m, grid.n_nodes)
        ).tocsr()

    def map_jacobians(self) -> np.ndarray:
        """Chart-coordinate differentials of the transport map per node."""
        return -np.einsum("mki,mij->mkj", self.binv, self.w)


def residual(u: Potential, t: float, f: DensityField, g: DensityField) -> np.ndarray:
    """Log-form equation residual at PDE nodes for path parameter t.

    Zero iff u solves the continuation equation at t (without the mass
    constant).  Raises NotAdmissible when the candidate Hessian field is
    not positive definite.
    """
    ft = density_path(f, t)
    gt = density_path(g, t)
    op = _Operator(u.grid, u.values, 0.0, ft.logrho, gt.logrho, False)
    if not op.admissible:
        raise NotAdmissible(f"min eigenvalue {op.w_min_eig:.3e}")
    return op.residual


def assemble_w(u: Potential):
    """Candidate Hessian field ``D^2 u + c_ij(x, T(x))`` at PDE nodes.

    Returns ``(w, min_eigenvalue)``; positive definiteness of every node
    matrix is the discrete ellipticity condition.
    """
    grid = u.grid
    zeros = np.zeros(grid.n_nodes)
    op = _Operator(grid, u.values, 0.0, zeros, zeros, False)
    return op.w, op.w_min_eig


def linearized_apply(
    u: Potential, t: float, f: DensityField, g: DensityField, v: np.ndarray
) -> np.ndarray:
    """Directional derivative of the residual in direction v.

    The principal part is ``w^{ij} v_ij``; first-order terms chain through
    the map inverse and the target density composition, consistently with
    the discretization of :func:`residual`.
    """
    ft = density_path(f, t)
    gt = density_path(g, t)
    op = _Operator(u.grid, u.values, 0.0, ft.logrho, gt.logrho, True)
    if not op.admissible:
        raise NotAdmissible(f"min eigenvalue {op.w_min_eig:.3e}")
    return op.jacobian_matrix() @ v


class _SolveDriver:
    """Shared machinery for Newton steps along the continuation path."""

    def __init__(self, f: DensityField, g: DensityField, config: SolverConfig):
        if f.grid is not g.grid:
            raise ValueError("density fields must share one grid")
        self.grid = f.grid
        self.f = f
        self.g = g
        self.config = config
        grid = self.grid
        # Fringe unknowns are eliminated exactly through the grid's
        # prolongation, so the Newton system lives on PDE nodes plus the
        # mass constant.  The additive constant of u is pinned at one node
        # in the linear solve (a sparse row; a quadrature-mean row would be
        # dense and cause heavy LU fill-in); accepted iterates are shifted
        # back to quadrature mean zero, which leaves every residual
        # invariant.
        n = grid.n_nodes
        self._col_is_pde = np.zeros(n, dtype=bool)
        self._col_is_pde[grid.pde_ids] = True
        self._col_pos = np.empty(n, dtype=np.int64)
        self._col_pos[grid.pde_ids] = np.arange(len(grid.pde_ids))
        self._col_pos[grid.fringe_ids] = np.arange(len(grid.fringe_ids))
        self._pin_pos = int(np.searchsorted(grid.pde_ids, grid.owned_ids[0]))

    def paths(self, t):
        return density_path(self.f, t), density_path(self.g, t)

    def operator(self, u, lam, t, need_jacobian):
        ft, gt = self.paths(t)
        return _Operator(self.grid, u, lam, ft.logrho, gt.logrho, need_jacobian)

    def newton_system(self, op):
        """Reduced Newton matrix on PDE values plus the mass constant."""
        grid = self.grid
        m = len(grid.pde_ids)
        jac = op.jacobian_matrix().tocoo()
        interior = self._col_is_pde[jac.col]
        j_int = sparse.coo_matrix(
            (jac.data[interior], (jac.row[interior], self._col_pos[jac.col[interior]])),
            shape=(m, m),
        ).tocsr()
        j_fr = sparse.coo_matrix(
            (
                jac.data[~interior],
                (jac.row[~interior], self._col_pos[jac.col[~interior]]),
            ),
            shape=(m, len(grid.fringe_ids)),
        ).tocsr()
        reduced = (j_int + j_fr @ grid.fringe_prolongation).tocoo()
        rows = [reduced.row, np.arange(m), np.array([m])]
        cols = [reduced.col, np.full(m, m), np.array([self._pin_pos])]
        data = [reduced.data, np.full(m, -1.0), np.array([1.0])]
        system = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m + 1, m + 1),
        )
        return system.tocsc()

    def linear_solve(self, system, rhs, res_norm):
        """Inexact Newton direction by AMG-preconditioned GMRES.

        The forcing tolerance shrinks with the nonlinear residual so the
        endgame stays quadratic; a sparse direct factorization is the
        fallback when the Krylov solve stalls.
        """
        m = system.shape[0] - 1
        pinned = system[:m, :m].tolil()
        pinned.rows[self._pin_pos] = [self._pin_pos]
        pinned.data[self._pin_pos] = [1.0]
        try:
            amg = pyamg.smoothed_aggregation_solver(
                pinned.tocsr(), symmetry="nonsymmetric", max_coarse=200
            )
            cycle = amg.aspreconditioner(cycle="V")

            def apply_pre(x):
                out = np.empty_like(x)
                out[:m] = cycle @ x[:m]
                out[m] = x[m]
                return out

            precon = LinearOperator(system.shape, apply_pre)
            forcing = min(1e-2, max(res_norm, 1e-9))
            delta, info = gmres(
                system, rhs, M=precon, rtol=forcing, atol=0.0, restart=100, maxiter=3
            )
            if info == 0 and np.isfinite(delta).all():
                return delta
        except Exception:
            pass
        try:
            delta = splu(system.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveFailure(str(exc)) from None
        if not np.isfinite(delta).all():
            raise LinearSolveFailure("non-finite Newton direction")
        return delta

    def newton_step(self, u, lam, t, op=None):
        """One damped Newton update: (u, lam, residual_norm, next_op)."""
        if op is None or op.w_inv is None:
            op = self.operator(u, lam, t, True)
        if not op.admissible:
            raise NotAdmissible(f"min eigenvalue {op.w_min_eig:.3e}")
        r_pde = op.residual
        res_norm = float(np.abs(r_pde).max())
        if res_norm < 1e-14:
            return u, lam, res_norm, op
        rhs = -np.concatenate([r_pde, [0.0]])
        system = self.newton_system(op)
        delta = self.linear_solve(system, rhs, res_norm)
        grid = self.grid
        du = np.empty(grid.n_nodes)
        du[grid.pde_ids] = delta[:-1]
        du[grid.fringe_ids] = grid.fringe_prolongation @ delta[:-1]
        dlam = delta[-1]

        alpha = 1.0
        while alpha >= self.config.alpha_min:
            u_try = u + alpha * du
            lam_try = lam + alpha * dlam
            try:
                op_try = self.operator(u_try, lam_try, t, True)
            except (GradientTooLarge, ChartDegeneracy, SingularCrossDifference):
                alpha *= 0.5
                continue
            if not op_try.admissible:
                alpha *= 0.5
                continue
            if op_try.grad_max >= self.config.grad_cap:
                alpha *= 0.5
                continue
            new_norm = float(np.abs(op_try.residual).max())
            if new_norm < res_norm:
                return u_try, lam_try, new_norm, op_try
            alpha *= 0.5
        raise LineSearchFailure(f"no decrease above alpha={self.config.alpha_min}")

    def solve_at(self, u, lam, t):
        """Newton iteration at fixed t from a warm start."""
        u = self.grid.sync_fringe(u)
        op = self.operator(u, lam, t, True)
        if not op.admissible:
            raise AdmissibilityLost(f"min eigenvalue {op.w_min_eig:.3e}")
        res_norm = float(np.abs(op.residual).max())
        iters = 0
        while res_norm > self.config.newton_tol:
            if iters >= self.config.newton_max:
                raise LineSearchFailure(
                    f"residual {res_norm:.3e} after {iters} Newton iterations"
                )
            u, lam, res_norm, op = self.newton_step(u, lam, t, op=op)
            shift = self.grid.mean(u)
            u = u - shift
            iters += 1
        return u, lam, res_norm, iters


def newton_step(
    state: SolverState, f: DensityField, g: DensityField, config: SolverConfig = None
) -> SolverState:
    """Single damped Newton update of a solver state at its t."""
    driver = _SolveDriver(f, g, config or SolverConfig())
    u, lam, res, _ = driver.newton_step(state.u, state.lam, state.t)
    return SolverState(
        t=state.t,
        u=u,
        lam=lam,
        residual_norm=res,
        newton_iters=state.newton_iters + 1,
    )


def continuity_solve(
    f: DensityField,
    g: DensityField,
    t_steps: int = 10,
    config: SolverConfig = None,
    force: bool = False,
) -> SolveReport:
    """March the continuation parameter from 0 to 1 and certify the map.

    Starts from the exact solution u = 0 of the uniform pair, warm-starts
    each Newton solve, and halves the step on stalls down to the floor.
    Unless ``force`` is set, the summed-gradient hypothesis must pass.
    """
    from .constants import check_thm11

    config = config or SolverConfig()
    config.t_steps = t_steps
    report_hyp = check_thm11(f, g)
    if not report_hyp.satisfied and not force:
        raise ValueError(
            f"gradient hypothesis fails (margin {report_hyp.margin:.4f}); "
            "pass force=True to attempt the solve anyway"
        )
    grid = f.grid
    driver = _SolveDriver(f, g, config)
    u = np.zeros(grid.n_nodes)
    lam = 0.0
    history = []
    t_cur = 0.0
    dt = 1.0 / t_steps
    base_dt = dt
    failure = ""
    converged = True
    while t_cur < 1.0 - 1e-14:
        t_next = min(t_cur + dt, 1.0)
        try:
            u_new, lam_new, res, iters = driver.solve_at(u, lam, t_next)
        except (
            LineSearchFailure,
            LinearSolveFailure,
            NotAdmissible,
            AdmissibilityLost,
            GradientTooLarge,
            ChartDegeneracy,
            SingularCrossDifference,
        ) as exc:
            dt *= 0.5
            if dt < config.dt_floor - 1e-15:
                failure = f"continuation stalled at t={t_next:.4f}: {exc}"
                converged = False
                break
            continue
        u, lam = u_new, lam_new
        t_cur = t_next
        ft, gt = driver.paths(t_cur)
        pot = Potential(grid, u)
        step_grad = pot.sup_gradient_norm()
        step_bound = gradient_bound_thm41(ft, gt)
        history.append(
            {
                "t": t_cur,
                "newton_iters": iters,
                "residual_norm": res,
                "grad_max": step_grad,
                "thm41_bound": step_bound,
                "mass_constant": lam,
            }
        )
        if config.verbose:
            print(
                f"t={t_cur:6.4f} iters={iters} residual={res:.2e} "
                f"grad={step_grad:.4f} bound={step_bound:.4f}"
            )
        dt = min(dt * 2.0, base_dt)
    if not converged and not history:
        return SolveReport(
            converged=False,
            grad_max=np.nan,
            jacobian_min=np.nan,
            pushforward_l1=np.nan,
            thm41_bound=gradient_bound_thm41(f, g),
            residual_norm=np.nan,
            mass_constant=lam,
            nonsplitting_passed=False,
            injective=False,
            grid_n=grid.n_across,
            t_history=history,
            failure=failure,
        )

    op = driver.operator(u, lam, 1.0 if converged else t_cur, False)
    pot = Potential(grid, u)
    grad_max = pot.sup_gradient_norm()
    jac = _map_jacobian_dets(op)
    push_gap = _pushforward_gap(driver, op, u)
    try:
        nonsplit = convexity.nonsplitting_check(pot)
        nonsplit_ok = nonsplit.passed
    except NotCConvex:
        nonsplit_ok = False
    injective = _grid_injectivity(grid, op)
    return SolveReport(
        converged=converged,
        grad_max=grad_max,
        jacobian_min=float(jac.min()),
        pushforward_l1=push_gap,
        thm41_bound=gradient_bound_thm41(f, g),
        residual_norm=float(np.abs(op.residual).max()),
        mass_constant=lam,
        nonsplitting_passed=nonsplit_ok,
        injective=injective,
        grid_n=grid.n_across,
        t_history=history,
        failure=failure,
        map_images=op.images,
    )


def _map_jacobian_dets(op) -> np.ndarray:
    jac = op.map_jacobians()
    return jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]


def _pushforward_gap(driver, op, u) -> float:
    """L1 distance between the transported source and the target density.

    The map Jacobian here comes from second-order differences of the
    computed image field, independent of the Hessian assembly that the
    solver itself iterates on.
    """
    grid = driver.grid
    pos_of = np.full(grid.n_nodes, -1, dtype=np.int64)
    pos_of[grid.pde_ids] = np.arange(len(grid.pde_ids))
    owned_pos = pos_of[grid.owned_ids]
    sid = grid.stencil_ids[owned_pos]
    neighbors = pos_of[sid]
    imgs = op.images
    d1 = _image_derivative(imgs, neighbors[:, :, 2], grid.h)
    d2 = _image_derivative(imgs, neighbors[:, 2, :], grid.h)
    normal = np.cross(d1, d2)
    signed = np.einsum("mi,mi->m", normal, imgs[owned_pos])
    # Chart orientation: det(E1, E2, outward normal) = det(frame)/beta.
    orient = np.sign(np.linalg.det(grid.frames))[grid.chart_id[grid.owned_ids]]
    j_vol = signed * grid.bet[grid.owned_ids] * orient
    ft, gt = driver.paths(1.0)
    rho_src = np.exp(ft.logrho[grid.owned_ids])
    log_g_img = grid.interpolate(gt.logrho, imgs[owned_pos])
    rho_tgt = np.exp(log_g_img)
    gap = np.abs(rho_src - rho_tgt * j_vol)
    return float(grid.quad_weights[grid.owned_ids] @ gap)


def _image_derivative(imgs, line, h):
    """Second-order derivative of the image field along one stencil line.

    ``line`` holds five PDE positions (offsets -2..2); entries are -1 where
    the neighbor carries no image.  Falls back from centered to one-sided
    differences so rim nodes stay second-order accurate.
    """
    m = line.shape[0]
    safe = np.maximum(line, 0)
    vals = imgs[safe]
    centered = (vals[:, 3] - vals[:, 1]) / (2.0 * h)
    forward = (-3.0 * vals[:, 2] + 4.0 * vals[:, 3] - vals[:, 4]) / (2.0 * h)
    backward = (3.0 * vals[:, 2] - 4.0 * vals[:, 1] + vals[:, 0]) / (2.0 * h)
    can_center = (line[:, 1] >= 0) & (line[:, 3] >= 0)
    can_forward = (line[:, 3] >= 0) & (line[:, 4] >= 0)
    can_backward = (line[:, 0] >= 0) & (line[:, 1] >= 0)
    if not (can_center | can_forward | can_backward).all():
        raise RuntimeError("image stencil incomplete at an owned node")
    out = np.where(
        can_center[:, None],
        centered,
        np.where(can_forward[:, None], forward, backward),
    )
    return out.reshape(m, 3)


def _grid_injectivity(grid, op) -> bool:
    """No two separated nodes may map to nearly the same image point."""
    pos_of = np.full(grid.n_nodes, -1, dtype=np.int64)
    pos_of[grid.pde_ids] = np.arange(len(grid.pde_ids))
    owned_pos = pos_of[grid.owned_ids]
    images = op.images[owned_pos]
    sources = grid.ambient[grid.owned_ids]
    tree = cKDTree(images)
    pairs = tree.query_pairs(r=0.5 * grid.h, output_type="ndarray")
    if len(pairs) == 0:
        return True
    src_dist = np.linalg.norm(sources[pairs[:, 0]] - sources[pairs[:, 1]], axis=1)
    return bool((src_dist <= 2.0 * grid.h).all())


def diffeomorphism_certificate(report: SolveReport) -> bool:
    """Numerical counterpart of the main regularity conclusion.

    True iff the solve converged with gradient below 2/pi, positive map
    Jacobian everywhere, single-valued subdifferentials, and discrete
    injectivity.
    """
    return bool(
        report.converged
        and report.grad_max < NONSPLIT_BOUND
        and report.jacobian_min > 0.0
        and report.nonsplitting_passed
        and report.injective
    )


@dataclass(frozen=True)
class ZonalMap:
    """Monotone latitude rearrangement as a dense lookup table."""

    thetas: np.ndarray
    images: np.ndarray
    cdf_residual: float

    def __call__(self, theta):
        return np.interp(theta, self.thetas, self.images)

    def max_displacement(self) -> float:
        return float(np.abs(self.images - self.thetas).max())


def zonal_oracle(
    f: DensityField, g: DensityField, resolution: int = 20001
) -> ZonalMap:
    """Monotone rearrangement between zonal densities.

    Matches the latitude distribution functions ``F`` and ``G`` built by
    cumulative quadrature of ``2 pi rho(theta) sin(theta)``; valid while
    the maximal displacement stays below pi/2, where the one-dimensional
    cost is submodular and the monotone coupling is optimal.
    """
    if f.zonal_profile is None or g.zonal_profile is None:
        raise ValueError("zonal oracle requires zonal density fields")
    thetas = np.linspace(0.0, np.pi, resolution)
    f_cdf = _latitude_cdf(f.zonal_profile, thetas)
    g_cdf = _latitude_cdf(g.zonal_profile, thetas)
    images = np.interp(f_cdf, g_cdf, thetas)
    disp = float(np.abs(images - thetas).max())
    if disp >= 0.5 * np.pi:
        raise DisplacementTooLarge(f"max displacement {disp:.3f} >= pi/2")
    residual = float(np.abs(np.interp(images, thetas, g_cdf) - f_cdf).max())
    return ZonalMap(thetas=thetas, images=images, cdf_residual=residual)


def _latitude_cdf(profile, thetas):
    density = 2.0 * np.pi * np.exp(profile(thetas)) * np.sin(thetas)
    cdf = cumulative_simpson(density, x=thetas, initial=0.0)
    return cdf / cdf[-1]


def zonal_map_error(report: SolveReport, grid, oracle: ZonalMap) -> float:
    """Sup distance between the solver map and the rearrangement oracle."""
    pos_of = np.full(grid.n_nodes, -1, dtype=np.int64)
    pos_of[grid.pde_ids] = np.arange(len(grid.pde_ids))
    owned_pos = pos_of[grid.owned_ids]
    images = report.map_images[owned_pos]
    src = grid.ambient[grid.owned_ids]
    theta = np.arccos(np.clip(src[:, 2], -1.0, 1.0))
    theta_img = oracle(theta)
    phi = np.arctan2(src[:, 1], src[:, 0])
    predicted = np.stack(
        [
            np.sin(theta_img) * np.cos(phi),
            np.sin(theta_img) * np.sin(phi),
            np.cos(theta_img),
        ],
        axis=1,
    )
    return float(np.linalg.norm(images - predicted, axis=1).max())
