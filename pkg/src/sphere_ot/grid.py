"""Composite finite-difference grid on S^2 from overlapping graph charts.

Six hemisphere graph charts centered at the coordinate axes cover the
sphere with generous overlap: every point lies within 54.74 degrees of
some center, i.e. at graph radius at most sqrt(2/3) in its best chart.
Each chart carries the same Cartesian node lattice over a disk slightly
larger than that ownership radius; a node is *owned* by the chart whose
center is nearest to it, carries a *PDE stencil* when its full 5x5
neighborhood is present, and is otherwise a *fringe* node whose value is
slaved to cross-chart interpolation.

Quadrature uses a smooth partition of unity subordinate to the charts,
with the graph area element dx/beta, so integrals are plain weighted sums
over all nodes.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .geometry import chart_at


def spsolve_triangularish(a: sparse.csc_matrix, b: sparse.csc_matrix):
    """Sparse solve with a sparse right-hand side, keeping sparsity."""
    out = spsolve(a, b)
    if not sparse.issparse(out):
        out = sparse.csc_matrix(out)
    return out

R_OWN = np.sqrt(2.0 / 3.0)
MAX_EXTENT = 0.985

CHART_TAGS = ("N", "S", "E1", "E2", "E3", "E4")
_CENTERS = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)

# 4th-order centered difference weights on +-2 stencils.
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _lagrange_cubic(t):
    """Weights and derivatives of cubic Lagrange interpolation at offset t.

    Nodes sit at offsets 0..3; returns (w, dw) of shape (..., 4).
    """
    t = np.asarray(t, dtype=float)
    w = np.stack(
        [
            -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
            t * (t - 2.0) * (t - 3.0) / 2.0,
            -t * (t - 1.0) * (t - 3.0) / 2.0,
            t * (t - 1.0) * (t - 2.0) / 6.0,
        ],
        axis=-1,
    )
    dw = np.stack(
        [
            -((t - 2.0) * (t - 3.0) + (t - 1.0) * (t - 3.0) + (t - 1.0) * (t - 2.0)) / 6.0,
            ((t - 2.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 2.0)) / 2.0,
            -((t - 1.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 1.0)) / 2.0,
            ((t - 1.0) * (t - 2.0) + t * (t - 2.0) + t * (t - 1.0)) / 6.0,
        ],
        axis=-1,
    )
    return w, dw


class InterpolationPlan:
    """Precomputed sparse evaluation of grid fields at off-grid points."""

    def __init__(self, ids, weights, dwx, dwy, donor, n_nodes):
        self.ids = ids
        self.weights = weights
        self.dwx = dwx
        self.dwy = dwy
        self.donor = donor
        self.n_nodes = n_nodes

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("mk,mk->m", values[self.ids], self.weights)

    def apply_with_gradient(self, values: np.ndarray):
        """Values and gradients with respect to donor chart coordinates."""
        v = values[self.ids]
        val = np.einsum("mk,mk->m", v, self.weights)
        gx = np.einsum("mk,mk->m", v, self.dwx)
        gy = np.einsum("mk,mk->m", v, self.dwy)
        return val, np.stack([gx, gy], axis=1)

    def matrix(self) -> sparse.csr_matrix:
        m, k = self.ids.shape
        rows = np.repeat(np.arange(m), k)
        mat = sparse.coo_matrix(
            (self.weights.ravel(), (rows, self.ids.ravel())), shape=(m, self.n_nodes)
        )
        return mat.tocsr()


class SphereGrid:
    """Six-chart composite grid with shared lattice geometry.

    ``n_across`` counts lattice nodes across the ownership diameter, so the
    spacing is ``h = 2*sqrt(2/3)/(n_across - 1)``; grids 32/48/64 halve h
    roughly geometrically for convergence studies.
    """

    def __init__(self, n_across: int):
        if n_across < 14:
            raise ValueError("grid must have at least 14 nodes across")
        self.n_across = int(n_across)
        self.h = 2.0 * R_OWN / (n_across - 1)
        self.extent = min(R_OWN + 3.0 * self.h, MAX_EXTENT)
        self.r_pu = min(R_OWN + 2.0 * self.h, self.extent - 0.5 * self.h)
        if self.r_pu <= R_OWN:
            raise ValueError("grid too coarse for a partition of unity")
        self.centers = _CENTERS.copy()
        self.tags = CHART_TAGS
        self.frames = np.stack([chart_at(c, 1).frame for c in self.centers])

        # Shared lattice: identical for every chart.
        kmax = int(np.floor(self.extent / self.h + 1e-12))
        axis = np.arange(-kmax, kmax + 1)
        gi, gj = np.meshgrid(axis, axis, indexing="ij")
        xx = gi * self.h
        yy = gj * self.h
        incl = xx**2 + yy**2 <= self.extent**2 + 1e-14
        self.kmax = kmax
        k_side = 2 * kmax + 1

        local_ids = -np.ones((k_side, k_side), dtype=np.int64)
        local_ids[incl] = np.arange(incl.sum())
        self.m_per_chart = int(incl.sum())
        self.n_nodes = 6 * self.m_per_chart

        li = gi[incl]
        lj = gj[incl]
        self._local_ids = local_ids
        self.lattice_i = np.tile(li, 6)
        self.lattice_j = np.tile(lj, 6)
        self.chart_id = np.repeat(np.arange(6), self.m_per_chart)
        xy0 = np.stack([li * self.h, lj * self.h], axis=1)
        self.xy = np.tile(xy0, (6, 1))
        bet0 = np.sqrt(1.0 - np.einsum("mi,mi->m", xy0, xy0))
        self.bet = np.tile(bet0, 6)
        amb = [
            np.column_stack([xy0, bet0]) @ self.frames[c] for c in range(6)
        ]
        self.ambient = np.vstack(amb)

        dots = self.ambient @ self.centers.T
        self.owner = np.argmax(dots, axis=1)
        self.owned_mask = self.owner == self.chart_id
        self.owned_ids = np.nonzero(self.owned_mask)[0]

        # PDE nodes: the complete 5x5 neighborhood exists on the lattice.
        ok = incl.copy()
        for da in range(-2, 3):
            for db in range(-2, 3):
                shifted = np.zeros_like(incl)
                src = incl[
                    max(0, -da) : k_side - max(0, da),
                    max(0, -db) : k_side - max(0, db),
                ]
                shifted[
                    max(0, da) : k_side - max(0, -da),
                    max(0, db) : k_side - max(0, -db),
                ] = src
                ok &= shifted
        pde0 = ok[incl]
        self.pde_mask = np.tile(pde0, 6)
        self.fringe_mask = ~self.pde_mask
        self.pde_ids = np.nonzero(self.pde_mask)[0]
        self.fringe_ids = np.nonzero(self.fringe_mask)[0]

        # 5x5 stencil node ids for PDE nodes (shared lattice + chart offset).
        ci = li[pde0] + kmax
        cj = lj[pde0] + kmax
        sid0 = np.empty((pde0.sum(), 5, 5), dtype=np.int64)
        for a in range(5):
            for b in range(5):
                sid0[:, a, b] = local_ids[ci + a - 2, cj + b - 2]
        offs = (np.arange(6) * self.m_per_chart)[:, None, None, None]
        self.stencil_ids = (sid0[None, ...] + offs).reshape(-1, 5, 5)

        # Partition-of-unity quadrature weights with the graph area element.
        s0 = 1.0 - self.r_pu**2
        bump = np.where(dots > 0.0, np.maximum(0.0, dots**2 - s0) ** 3, 0.0)
        own_bump = bump[np.arange(self.n_nodes), self.chart_id]
        self.quad_weights = self.h**2 / self.bet * own_bump / bump.sum(axis=1)
        self.area = float(self.quad_weights.sum())

        # Fringe values interpolate from other charts; interpolation chains
        # across charts are eliminated once, leaving an exact prolongation
        # from interior (PDE) values to fringe values.
        plan = self.interpolation_plan(
            self.ambient[self.fringe_ids], exclude_chart=self.chart_id[self.fringe_ids]
        )
        pmat = plan.matrix()
        self._fringe_matrix = pmat
        nf = len(self.fringe_ids)
        p_ff = pmat[:, self.fringe_ids]
        p_interior = pmat[:, self.pde_ids]
        eye = sparse.identity(nf, format="csc")
        prolong = spsolve_triangularish(
            (eye - p_ff).tocsc(), p_interior.tocsc()
        )
        prolong.data[np.abs(prolong.data) < 1e-14] = 0.0
        prolong.eliminate_zeros()
        self.fringe_prolongation = prolong.tocsr()

    # -- point location ----------------------------------------------------

    def owner_of(self, points: np.ndarray, exclude_chart=None) -> np.ndarray:
        """Chart index whose center is nearest to each point."""
        dots = np.atleast_2d(points) @ self.centers.T
        if exclude_chart is not None:
            dots[np.arange(dots.shape[0]), exclude_chart] = -np.inf
        return np.argmax(dots, axis=1)

    def chart_coords(self, chart_idx: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Graph coordinates of each point in its designated chart."""
        pts = np.atleast_2d(points)
        q = np.einsum("mab,mb->ma", self.frames[chart_idx], pts)
        return q[:, :2]

    # -- interpolation -----------------------------------------------------

    def interpolation_plan(self, points, exclude_chart=None) -> InterpolationPlan:
        """Bicubic (with bilinear fallback) evaluation plan at points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = pts.shape[0]
        donor = self.owner_of(pts, exclude_chart=exclude_chart)
        coords = self.chart_coords(donor, pts)
        t = coords / self.h
        ids = np.zeros((m, 16), dtype=np.int64)
        weights = np.zeros((m, 16))
        dwx = np.zeros((m, 16))
        dwy = np.zeros((m, 16))

        kmax = self.kmax
        local_ids = self._local_ids

        base = np.floor(t).astype(np.int64) - 1
        base = np.clip(base, -kmax, kmax - 3)
        xi = t - base

        # Gather the 4x4 block ids; -1 marks missing lattice nodes.  After
        # clamping, base indices are always within lattice bounds.
        bi = base[:, 0, None] + np.arange(4)
        bj = base[:, 1, None] + np.arange(4)
        block = local_ids[bi[:, :, None] + kmax, bj[:, None, :] + kmax]
        good = (block >= 0).all(axis=(1, 2))

        wx, dx = _lagrange_cubic(xi[:, 0])
        wy, dy = _lagrange_cubic(xi[:, 1])
        w16 = np.einsum("ma,mb->mab", wx, wy).reshape(m, 16)
        dx16 = np.einsum("ma,mb->mab", dx / self.h, wy).reshape(m, 16)
        dy16 = np.einsum("ma,mb->mab", wx, dy / self.h).reshape(m, 16)
        flat = block.reshape(m, 16)
        offs = donor * self.m_per_chart
        ids[good] = flat[good] + offs[good, None]
        weights[good] = w16[good]
        dwx[good] = dx16[good]
        dwy[good] = dy16[good]

        bad = np.nonzero(~good)[0]
        for idx in bad:
            ti = t[idx]
            b = np.floor(ti).astype(np.int64)
            b = np.clip(b, -kmax, kmax - 1)
            frac = ti - b
            cell = local_ids[b[0] + kmax : b[0] + kmax + 2, b[1] + kmax : b[1] + kmax + 2]
            if (cell >= 0).all():
                fx, fy = frac
                ww = np.array(
                    [(1 - fx) * (1 - fy), (1 - fx) * fy, fx * (1 - fy), fx * fy]
                )
                dwx_loc = np.array([-(1 - fy), -fy, (1 - fy), fy]) / self.h
                dwy_loc = np.array([-(1 - fx), (1 - fx), -fx, fx]) / self.h
                ids[idx, :4] = cell.ravel() + offs[idx]
                weights[idx, :4] = ww
                dwx[idx, :4] = dwx_loc
                dwy[idx, :4] = dwy_loc
            else:
                # Nearest existing lattice node; derivative information lost.
                ri = int(np.clip(round(ti[0]), -kmax, kmax))
                rj = int(np.clip(round(ti[1]), -kmax, kmax))
                found = -1
                for radius in range(0, 4):
                    for a in range(-radius, radius + 1):
                        for bb in range(-radius, radius + 1):
                            ia, jb = ri + a, rj + bb
                            if abs(ia) <= kmax and abs(jb) <= kmax:
                                cand = local_ids[ia + kmax, jb + kmax]
                                if cand >= 0:
                                    found = cand
                                    break
                        if found >= 0:
                            break
                    if found >= 0:
                        break
                if found < 0:
                    raise RuntimeError("no lattice node near interpolation point")
                ids[idx, 0] = found + offs[idx]
                weights[idx, 0] = 1.0
        return InterpolationPlan(ids, weights, dwx, dwy, donor, self.n_nodes)

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.interpolation_plan(points).apply(values)

    # -- fringe handling ---------------------------------------------------

    @property
    def fringe_matrix(self) -> sparse.csr_matrix:
        """Sparse map from all node values to fringe interpolants."""
        return self._fringe_matrix

    def sync_fringe(self, values: np.ndarray) -> np.ndarray:
        """Replace fringe values by cross-chart interpolation of the rest."""
        out = np.array(values, dtype=float)
        out[self.fringe_ids] = self.fringe_prolongation @ out[self.pde_ids]
        return out

    # -- finite differences at PDE nodes ------------------------------------

    def fd_gradient(self, values: np.ndarray) -> np.ndarray:
        v = values[self.stencil_ids]
        gx = np.einsum("a,ma->m", _D1, v[:, :, 2]) / self.h
        gy = np.einsum("b,mb->m", _D1, v[:, 2, :]) / self.h
        return np.stack([gx, gy], axis=1)

    def fd_hessian(self, values: np.ndarray) -> np.ndarray:
        v = values[self.stencil_ids]
        hxx = np.einsum("a,ma->m", _D2, v[:, :, 2]) / self.h**2
        hyy = np.einsum("b,mb->m", _D2, v[:, 2, :]) / self.h**2
        hxy = np.einsum("a,b,mab->m", _D1, _D1, v) / self.h**2
        hess = np.empty((v.shape[0], 2, 2))
        hess[:, 0, 0] = hxx
        hess[:, 1, 1] = hyy
        hess[:, 0, 1] = hxy
        hess[:, 1, 0] = hxy
        return hess

    def stencil_coefficients(self, a2: np.ndarray, a1: np.ndarray):
        """Per-node 5x5 stencil for ``a2 : Hess + a1 . grad`` at PDE nodes.

        ``a2`` has shape (m, 2, 2) and ``a1`` (m, 2); returns (m, 5, 5)
        coefficients aligned with ``stencil_ids``.
        """
        m = a2.shape[0]
        coef = np.zeros((m, 5, 5))
        coef[:, :, 2] += a2[:, 0, 0, None] * _D2 / self.h**2
        coef[:, 2, :] += a2[:, 1, 1, None] * _D2 / self.h**2
        coef += (
            (a2[:, 0, 1] + a2[:, 1, 0])[:, None, None]
            * np.einsum("a,b->ab", _D1, _D1)[None]
            / self.h**2
        )
        coef[:, :, 2] += a1[:, 0, None] * _D1 / self.h
        coef[:, 2, :] += a1[:, 1, None] * _D1 / self.h
        return coef

    # -- quadrature ----------------------------------------------------------

    def integrate(self, values: np.ndarray) -> float:
        return float(self.quad_weights @ values)

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values) / self.area
