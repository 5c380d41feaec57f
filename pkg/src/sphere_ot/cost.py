"""Cost kernel on the sphere: derivative jets, branch inverses, MTW tensor.

The cost is half the squared ambient Euclidean distance, which on the unit
sphere is ``1 - <x, y>``.  With both points written as hemisphere graphs in
one rotated frame (x on the branch with sign ``sx``, y with sign ``sy``),

    c(x, y) = 1 - <x, y> - sx*sy * beta(x) * beta(y),

and all mixed derivatives follow from the beta jets.  The inverse of the
map ``y -> -d_x c(x, y) = p`` has two branches Y+/Y- distinguished by the
sign of ``<x, y>``; in a chart centered at x their coordinates are
``(p, +beta(p))`` and ``(p, -beta(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .errors import ChartDegeneracy, GradientTooLarge, SingularCrossDifference
from .geometry import (
    Chart,
    ChartPoint,
    as_unit,
    beta,
    beta_jet,
    chart_at,
    covector_norm,
    geodesic_distance,
    lift,
    metric_jet,
    rotations_to_pole,
    to_chart,
    vector_norm,
)

EQUATOR_TOL = 1e-8
GRAD_TOL = 1e-10
CROSS_DET_TOL = 1e-12


@dataclass(frozen=True)
class CostJet:
    """All cost derivatives at a pair, up to two orders in each argument.

    Index convention: plain indices differentiate in x, indices after the
    comma differentiate in y, e.g. ``cij_kl[i, j, k, l]`` is
    d^2/dx_i dx_j d^2/dy_k dy_l of the cost.  ``y_coords`` and ``y_sign``
    record the graph coordinates and hemisphere branch used for the
    y-derivatives, taken in the frame of x's chart.
    """

    c: float
    ci: np.ndarray
    cij: np.ndarray
    ci_k: np.ndarray
    cij_k: np.ndarray
    ci_kl: np.ndarray
    cij_kl: np.ndarray
    y_coords: np.ndarray
    y_sign: int


@dataclass(frozen=True)
class MtwForm:
    """Fourth-order cost curvature coefficients at a pair (x, y).

    ``coefficients[i, j, k, l]`` contracts with two tangent vectors (i, j)
    and two covectors (k, l) at x; symmetric under i<->j and k<->l.
    """

    coefficients: np.ndarray
    x: ChartPoint
    y: np.ndarray


def cost(p, q) -> float:
    """Half squared chordal distance, ``1 - <p, q>``."""
    return float(1.0 - as_unit(p) @ as_unit(q))


def _branch_sign(height: float) -> int:
    # Equator ties resolve to the upper branch.
    return 1 if height >= 0.0 else -1


def _jet_blocks(x, sx: int, ycc, sy: int) -> CostJet:
    """Derivative blocks of ``1 - <x,y> - sx*sy*beta(x)*beta(y)``."""
    sigma = sx * sy
    bx = beta_jet(x)
    by = beta_jet(ycc)
    n = x.shape[0]
    return CostJet(
        c=float(1.0 - x @ ycc - sigma * bx.beta * by.beta),
        ci=-ycc - sigma * bx.d1 * by.beta,
        cij=-sigma * bx.d2 * by.beta,
        ci_k=-np.eye(n) - sigma * np.outer(bx.d1, by.d1),
        cij_k=-sigma * np.einsum("ij,k->ijk", bx.d2, by.d1),
        ci_kl=-sigma * np.einsum("i,kl->ikl", bx.d1, by.d2),
        cij_kl=-sigma * np.einsum("ij,kl->ijkl", bx.d2, by.d2),
        y_coords=ycc,
        y_sign=sy,
    )


def cost_jet(point: ChartPoint, y) -> CostJet:
    """Derivative bundle of the cost at (x, y).

    x-derivatives are taken in the chart of ``point``; y-derivatives in
    the graph over the same frame, on the hemisphere branch that contains
    y.  Raises ChartDegeneracy if either point sits within 1e-8 of its
    chart equator.
    """
    x = point.x
    chart = point.chart
    q = chart.frame @ as_unit(y)
    ycc = q[:-1]
    sy = _branch_sign(q[-1])
    if 1.0 - np.linalg.norm(x) < EQUATOR_TOL or 1.0 - np.linalg.norm(ycc) < EQUATOR_TOL:
        raise ChartDegeneracy("point within 1e-8 of a chart equator")
    return _jet_blocks(x, chart.hemisphere, ycc, sy)


def _y_branch(point: ChartPoint, p, sign: int) -> np.ndarray:
    x = point.x
    chart = point.chart
    p = np.asarray(p, dtype=float)
    if covector_norm(x, p) >= 1.0 - GRAD_TOL:
        raise GradientTooLarge("covector length must stay below 1")
    ambient = lift(point)
    pole = chart_at(ambient, 1)
    n = x.shape[0]
    # Differential of chart coordinates through the transition to the
    # chart centered at the point itself.
    emb = np.vstack([np.eye(n), chart.hemisphere * beta_jet(x).d1])
    trans = pole.frame @ chart.frame.T @ emb
    m = trans[:n, :]
    p_centered = np.linalg.solve(m.T, p)
    height = sign * beta(p_centered)
    return pole.frame.T @ np.concatenate([p_centered, [height]])


def y_plus(point: ChartPoint, p) -> np.ndarray:
    """Upper branch inverse of the cost map: ``-d_x c(x, Y) = p, <x,Y> > 0``."""
    return _y_branch(point, p, 1)


def y_minus(point: ChartPoint, p) -> np.ndarray:
    """Lower branch inverse: ``-d_x c(x, Y) = p`` with ``<x, Y> < 0``."""
    return _y_branch(point, p, -1)


def mtw_form(point: ChartPoint, y) -> MtwForm:
    """Assemble the fourth-order curvature form of the cost at (x, y).

    The coefficients are the second derivatives in p of
    ``-c_ij(x, Y+(x, p))``, assembled in closed form as
    ``(-c_{ij,pq} + c_{ij,a} c^{a,b} c_{b,pq})`` with both y-indices raised
    by the inverse cross-difference; the assembly is chart-covariant.

    Targets beyond a quarter turn are first moved to the upper-branch
    image carrying the same cost gradient: that is the branch the
    transport map uses, where the uniform lower bound 1 holds at every
    separation (the raw form along the lower branch is negative and
    carries no regularity content).  Pairs within roundoff of a quarter
    turn make that inversion degenerate and raise GradientTooLarge.
    """
    y = as_unit(y)
    jet = cost_jet(point, y)
    if float(lift(point) @ y) <= 0.0:
        y = y_plus(point, -jet.ci)
        jet = cost_jet(point, y)
    det = np.linalg.det(jet.ci_k)
    if abs(det) < CROSS_DET_TOL:
        raise SingularCrossDifference(f"|det c_(i,k)| = {abs(det):.3e}")
    b = np.linalg.inv(jet.ci_k)  # rows: y-index, cols: x-index
    inner = -jet.cij_kl + np.einsum("ija,ab,bkl->ijkl", jet.cij_k, b, jet.ci_kl)
    coeff = np.einsum("ijpq,pk,ql->ijkl", inner, b, b)
    coeff = 0.5 * (coeff + coeff.transpose(1, 0, 2, 3))
    coeff = 0.5 * (coeff + coeff.transpose(0, 1, 3, 2))
    return MtwForm(coefficients=coeff, x=point, y=as_unit(y))


def mtw_value(form: MtwForm, v, eta) -> float:
    """Contract the form with a tangent vector v and a covector eta."""
    return float(np.einsum("ijkl,i,j,k,l", form.coefficients, v, v, eta, eta))


def a3s_margin(point: ChartPoint, y, samples: int = 512, seed: int = 0) -> float:
    """Minimum of the curvature form over unit vectors and covectors.

    Directions are drawn from a seeded Halton sequence and normalized to
    unit Riemannian length at x, so the return value is directly
    comparable to the uniform lower bound 1.
    """
    form = mtw_form(point, y)
    x = point.x
    n = x.shape[0]
    halton = qmc.Halton(d=2 * n, seed=seed)
    u = halton.random(samples)
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    best = np.inf
    for row in z:
        v = row[:n]
        eta = row[n:]
        nv = vector_norm(x, v)
        ne = covector_norm(x, eta)
        if nv < 1e-12 or ne < 1e-12:
            continue
        best = min(best, mtw_value(form, v / nv, eta / ne))
    return float(best)


def scan_a3s(
    dim: int = 2,
    samples: int = 10_000,
    dmin: float = 0.01,
    dmax: float = np.pi - 0.05,
    seed: int = 0,
):
    """Scan the normalized curvature form over random pairs and directions.

    Each Halton sample draws a base point, a chart center keeping the base
    point interior, a target at geodesic distance in (dmin, dmax), and a
    direction pair.  Returns ``(min_margin, info)`` with the argmin sample.
    """
    n = dim
    d_halton = 3 * (n + 1) + 1 + 2 * n
    halton = qmc.Halton(d=d_halton, seed=seed)
    u = halton.random(samples)
    best = np.inf
    info = None
    for row in u:
        z = norm.ppf(np.clip(row, 1e-12, 1.0 - 1e-12))
        base = z[: n + 1]
        base /= np.linalg.norm(base)
        cvec = z[n + 1 : 2 * (n + 1)]
        cvec /= np.linalg.norm(cvec)
        if base @ cvec < 0:
            cvec = -cvec
        # Keep the base point at a bounded chart radius.
        cvec = cvec + 1.5 * base
        cvec /= np.linalg.norm(cvec)
        tau = z[2 * (n + 1) : 3 * (n + 1)]
        tau -= (tau @ base) * base
        nrm = np.linalg.norm(tau)
        if nrm < 1e-12:
            continue
        tau /= nrm
        dist = dmin + row[3 * (n + 1)] * (dmax - dmin)
        target = np.cos(dist) * base + np.sin(dist) * tau
        point = to_chart(chart_at(cvec, 1), base)
        try:
            form = mtw_form(point, target)
        except (ChartDegeneracy, GradientTooLarge, SingularCrossDifference):
            continue
        v = z[3 * (n + 1) + 1 : 3 * (n + 1) + 1 + n]
        eta = z[3 * (n + 1) + 1 + n :]
        nv = vector_norm(point.x, v)
        ne = covector_norm(point.x, eta)
        if nv < 1e-12 or ne < 1e-12:
            continue
        value = mtw_value(form, v / nv, eta / ne)
        if value < best:
            best = value
            info = {
                "x": base.tolist(),
                "y": target.tolist(),
                "distance": float(dist),
                "value": float(value),
            }
    return float(best), info


# ---------------------------------------------------------------------------
# Vectorized kernels shared with the PDE solver (S^2, batched over nodes).
# ---------------------------------------------------------------------------


def batch_cost_blocks(xs: np.ndarray, sx: int, ys: np.ndarray, sy: np.ndarray) -> dict:
    """Cost derivative blocks for node batches, all in one chart frame.

    ``xs``/``ys`` are (m, n) graph coordinates in the same frame, ``sx`` a
    scalar branch sign for x and ``sy`` per-node branch signs for y.
    Returns the blocks needed by the elliptic operator.
    """
    m, n = xs.shape
    sigma = (sx * sy).astype(float)[:, None, None]
    bx = 1.0 - np.einsum("mi,mi->m", xs, xs)
    by = 1.0 - np.einsum("mi,mi->m", ys, ys)
    bx = np.sqrt(bx)
    by = np.sqrt(by)
    eye = np.eye(n)
    dbx = -xs / bx[:, None]
    dby = -ys / by[:, None]
    d2bx = -eye / bx[:, None, None] - np.einsum("mi,mj->mij", xs, xs) / bx[:, None, None] ** 3
    d2by = -eye / by[:, None, None] - np.einsum("mk,ml->mkl", ys, ys) / by[:, None, None] ** 3
    cij = -sigma * d2bx * by[:, None, None]
    ci_k = -eye[None, :, :] - sigma * np.einsum("mi,mk->mik", dbx, dby)
    cij_k = -sigma[..., None] * np.einsum("mij,mk->mijk", d2bx, dby)
    ci_kl = -sigma[..., None] * np.einsum("mi,mkl->mikl", dbx, d2by)
    return {
        "cij": cij,
        "ci_k": ci_k,
        "cij_k": cij_k,
        "ci_kl": ci_kl,
        "beta_x": bx,
        "beta_y": by,
    }


def batch_y_plus(xs: np.ndarray, sx: int, frame: np.ndarray, p: np.ndarray):
    """Vectorized upper-branch inverse for S^2 chart nodes.

    ``xs`` are (m, 2) coordinates in a chart with frame ``frame`` and
    branch sign ``sx``; ``p`` are covectors in the same coordinates.
    Returns ``(ambient_images, centered_covectors)`` and raises
    GradientTooLarge if any covector reaches unit length.
    """
    m = xs.shape[0]
    bet = np.sqrt(1.0 - np.einsum("mi,mi->m", xs, xs))
    ambient = np.column_stack([xs, sx * bet]) @ frame
    rots = rotations_to_pole(ambient)
    emb = np.zeros((m, 3, 2))
    emb[:, 0, 0] = 1.0
    emb[:, 1, 1] = 1.0
    emb[:, 2, :] = sx * (-xs / bet[:, None])
    trans = np.einsum("mab,bc,mcd->mad", rots, frame.T, emb)
    mmat = trans[:, :2, :]
    p_centered = np.linalg.solve(mmat.transpose(0, 2, 1), p[:, :, None])[:, :, 0]
    r2 = np.einsum("mi,mi->m", p_centered, p_centered)
    if np.any(r2 >= (1.0 - GRAD_TOL) ** 2):
        raise GradientTooLarge("gradient reached unit length at a node")
    height = np.sqrt(1.0 - r2)
    vec = np.column_stack([p_centered, height])
    images = np.einsum("mba,mb->ma", rots, vec)
    return images, p_centered
