"""c-convex analysis on gridded potentials.

The c-transform is evaluated exactly over the grid's owned node set (one
node per sphere point), so the algebraic identities of the transform hold
to rounding error: the triple transform equals the single transform, and
the double transform never exceeds the potential.  The map fields push
grid nodes through the two branch inverses of the cost map, and the
nonsplitting certificate localizes every touching support around the
upper-branch image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import batch_y_plus
from .errors import GradientTooLarge, NotCConvex
from .fields import Potential
from .geometry import rotations_to_pole

_CHUNK = 1024
NONSPLIT_GRAD_BOUND = 2.0 / np.pi


@dataclass(frozen=True)
class SubdifferentialWitness:
    """Supports ``-c(., y) + lam`` touching the potential at x."""

    x: np.ndarray
    supports: tuple


@dataclass(frozen=True)
class NonsplittingReport:
    passed: bool
    reason: str
    grad_max: float
    offenders: int
    worst_cell_offset: float


def _owned_values(u: Potential):
    grid = u.grid
    ids = grid.owned_ids
    return grid.ambient[ids], u.values[ids]


def c_transform(u: Potential) -> Potential:
    """Exact grid c-transform ``u^c(y) = max_x (-c(x,y) - u(x))``.

    The maximum runs over owned nodes; the result is evaluated at every
    grid node.
    """
    grid = u.grid
    src_pts, src_vals = _owned_values(u)
    shifted = src_vals + 1.0
    out = np.empty(grid.n_nodes)
    for start in range(0, grid.n_nodes, _CHUNK):
        sel = slice(start, min(start + _CHUNK, grid.n_nodes))
        dots = grid.ambient[sel] @ src_pts.T
        out[sel] = (dots - shifted[None, :]).max(axis=1)
    return Potential(grid, out)


def is_c_convex(u: Potential, tol: float = 1e-8):
    """Whether the double transform reproduces u on owned nodes.

    Returns ``(flag, defect)`` with the maximal deviation; exact
    c-convexity on the grid means defect at rounding level, while smooth
    c-convex functions sampled on the grid carry an O(h^2) defect.
    """
    ucc = c_transform(c_transform(u))
    ids = u.grid.owned_ids
    defect = float(np.abs(ucc.values[ids] - u.values[ids]).max())
    return defect <= tol, defect


def c_subdifferential(
    u: Potential, x, tol: float = 1e-8, convexity_tol: float = 1e-8
) -> SubdifferentialWitness:
    """All grid targets whose support functions touch u at x."""
    ok, defect = is_c_convex(u, convexity_tol)
    if not ok:
        raise NotCConvex(f"double-transform defect {defect:.3e}")
    grid = u.grid
    x = np.asarray(x, dtype=float)
    ux = float(grid.interpolate(u.values, x[None, :])[0])
    src_pts, _ = _owned_values(u)
    uc = c_transform(u).values[grid.owned_ids]
    score = (x @ src_pts.T - 1.0) - ux - uc
    touching = np.nonzero(score >= -tol)[0]
    supports = tuple(
        (src_pts[j].copy(), float(ux + 1.0 - x @ src_pts[j])) for j in touching
    )
    return SubdifferentialWitness(x=x, supports=supports)


def _owned_gradients(u: Potential) -> np.ndarray:
    grid = u.grid
    pos = np.searchsorted(grid.pde_ids, grid.owned_ids)
    if not np.array_equal(grid.pde_ids[pos], grid.owned_ids):
        raise RuntimeError("owned nodes must carry finite-difference stencils")
    return grid.fd_gradient(u.values)[pos]


def _map_field(u: Potential, sign: int) -> np.ndarray:
    grid = u.grid
    grad = _owned_gradients(u)
    xy = grid.xy[grid.owned_ids]
    dot = np.einsum("mi,mi->m", xy, grad)
    gnorm = np.sqrt(np.einsum("mi,mi->m", grad, grad) - dot**2)
    if gnorm.max() >= 1.0 - 1e-10:
        raise GradientTooLarge(f"sup gradient {gnorm.max():.6f} reaches 1")
    images = np.empty((len(grid.owned_ids), 3))
    charts = grid.chart_id[grid.owned_ids]
    for c in range(6):
        sel = charts == c
        if not sel.any():
            continue
        img, p_centered = batch_y_plus(xy[sel], 1, grid.frames[c], grad[sel])
        if sign < 0:
            # Lower branch: flip the height in the point-centered chart.
            bet = np.sqrt(1.0 - np.einsum("mi,mi->m", p_centered, p_centered))
            base = grid.ambient[grid.owned_ids][sel]
            rots = rotations_to_pole(base)
            vec = np.column_stack([p_centered, -bet])
            img = np.einsum("mba,mb->ma", rots, vec)
        images[sel] = img
    return images


def t_plus_map(u: Potential) -> np.ndarray:
    """Upper-branch transport images of the owned nodes."""
    return _map_field(u, 1)


def t_minus_map(u: Potential) -> np.ndarray:
    """Lower-branch images; distances to sources lie in [pi/2, pi]."""
    return _map_field(u, -1)


def nonsplitting_check(
    u: Potential,
    touch_tol: float = 1e-8,
    convexity_tol: Optional[float] = None,
    cell_factor: float = 1.5,
) -> NonsplittingReport:
    """Certify that every touching support sits at the upper-branch image.

    Requires the potential to be c-convex (up to an O(h^2) grid defect for
    sampled smooth potentials) and its gradient below 2/pi.  A node fails
    when some touching target lies farther than ``cell_factor`` grid cells
    from the upper-branch image in the image's own chart.
    """
    grid = u.grid
    if convexity_tol is None:
        convexity_tol = max(1e-8, 4.0 * grid.h**2)
    grad = _owned_gradients(u)
    xy = grid.xy[grid.owned_ids]
    dot = np.einsum("mi,mi->m", xy, grad)
    gnorm = np.sqrt(np.einsum("mi,mi->m", grad, grad) - dot**2)
    grad_max = float(gnorm.max())
    if grad_max >= NONSPLIT_GRAD_BOUND:
        return NonsplittingReport(
            passed=False,
            reason="gradient",
            grad_max=grad_max,
            offenders=0,
            worst_cell_offset=np.nan,
        )
    images = t_plus_map(u)
    donors = grid.owner_of(images)
    img_coords = grid.chart_coords(donors, images)
    centers = grid.centers

    src_pts, src_vals = _owned_values(u)
    m = len(grid.owned_ids)
    shifted = src_vals + 1.0
    # First pass: the transform over owned targets only.
    uc = np.empty(m)
    for start in range(0, m, _CHUNK):
        sel = slice(start, min(start + _CHUNK, m))
        dots = src_pts[sel] @ src_pts.T
        uc[sel] = (dots - shifted[None, :]).max(axis=1)
    # Second pass, fused: convexity defect and near-touching candidates.
    defect = 0.0
    offenders = 0
    worst = 0.0
    for start in range(0, m, _CHUNK):
        sel = slice(start, min(start + _CHUNK, m))
        dots = src_pts[sel] @ src_pts.T
        ucc = (dots - 1.0 - uc[None, :]).max(axis=1)
        defect = max(defect, float(np.abs(ucc - src_vals[sel]).max()))
        score = dots - 1.0 - src_vals[sel][:, None] - uc[None, :]
        ii, jj = np.nonzero(score >= -touch_tol)
        ii += start
        if len(ii) == 0:
            continue
        ys = src_pts[jj]
        d = donors[ii]
        heights = np.einsum("ki,ki->k", ys, centers[d])
        y_coords = grid.chart_coords(d, ys)
        dist = np.linalg.norm(y_coords - img_coords[ii], axis=1)
        dist = np.where(heights > 0.0, dist, np.inf)
        bad = dist > cell_factor * grid.h
        offenders += int(bad.sum())
        if bad.any():
            worst = max(worst, float(dist[bad & np.isfinite(dist)].max(initial=0.0)))
            if np.isinf(dist[bad]).any():
                worst = np.inf
    if defect > convexity_tol:
        raise NotCConvex(f"double-transform defect {defect:.3e}")
    return NonsplittingReport(
        passed=offenders == 0,
        reason="" if offenders == 0 else "splitting",
        grad_max=grad_max,
        offenders=offenders,
        worst_cell_offset=worst / grid.h if np.isfinite(worst) else np.inf,
    )


def scalar_nonsplitting_margin(
    num_s: int = 100, num_t: int = 100, s_max: float = NONSPLIT_GRAD_BOUND - 1e-6
) -> float:
    """Minimum of ``1 - (s t + cos t)`` over the nonsplitting rectangle.

    Positive margin over ``[0, s_max] x [pi/2, pi]`` is the scalar
    inequality behind the single-valuedness of the subdifferential.
    """
    s = np.linspace(0.0, s_max, num_s)
    t = np.linspace(0.5 * np.pi, np.pi, num_t)
    vals = s[:, None] * t[None, :] + np.cos(t)[None, :]
    return float((1.0 - vals).min())
