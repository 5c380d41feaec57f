"""Hemisphere graph charts on the unit sphere and their derivative jets.

A point of S^n in R^{n+1} is either an ambient unit vector or, inside an
open hemisphere, a vector x in the open unit ball of R^n together with the
height function ``beta(x) = sqrt(1 - |x|^2)``.  Every chart is a rotated
copy of this graph parameterization; the rotation (``frame``) sends the
chart center to the last coordinate axis.  All derivative jets of beta and
of the induced round metric are closed forms in x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PointOutsideChart

UNIT_TOL = 1e-12


def as_unit(coords) -> np.ndarray:
    """Validate and return an ambient point as a unit-norm float array."""
    p = np.asarray(coords, dtype=float)
    nrm = np.linalg.norm(p)
    if abs(nrm - 1.0) > UNIT_TOL:
        raise ValueError(f"ambient point has norm {nrm!r}, expected 1")
    return p


def normalized(coords) -> np.ndarray:
    """Rescale an arbitrary nonzero vector onto the sphere."""
    p = np.asarray(coords, dtype=float)
    return p / np.linalg.norm(p)


@dataclass(frozen=True)
class Chart:
    """A hemisphere graph chart.

    ``frame`` is an orthogonal matrix with ``frame @ center`` equal to
    ``hemisphere * e_{n+1}``; chart coordinates of an ambient point ``p``
    are the first n entries of ``frame @ p``, valid while ``<p, center>``
    is positive.
    """

    center: np.ndarray
    frame: np.ndarray
    hemisphere: int

    @property
    def dim(self) -> int:
        return self.center.shape[0] - 1


@dataclass(frozen=True)
class ChartPoint:
    """Graph coordinates ``x`` (|x| < 1) of a point in ``chart``."""

    x: np.ndarray
    chart: Chart

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if np.linalg.norm(x) >= 1.0:
            raise ValueError("graph coordinates must lie in the open unit ball")


@dataclass(frozen=True)
class BetaJet:
    """Height function beta and its first three derivative arrays."""

    beta: float
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray


@dataclass(frozen=True)
class MetricJet:
    """Round metric in graph coordinates with two derivative orders.

    ``g = I + (d beta)(d beta)^T`` and its exact inverse ``ginv``;
    ``dg[i,j,k] = (g_ij)_k`` and ``d2g[i,j,k,l] = (g_ij)_kl``.
    """

    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    ginv: np.ndarray


def chart_at(center, hemisphere: int = 1) -> Chart:
    """Build the graph chart whose frame sends ``center`` to the pole.

    The first n frame rows complete ``center`` to an orthonormal basis by
    Gram-Schmidt over the standard basis vectors, taken in order of
    decreasing component orthogonal to ``center`` (ties to the lower
    index), so the construction is deterministic.
    """
    c = as_unit(center)
    m = c.shape[0]
    # |e_k - <e_k,c>c|^2 = 1 - c_k^2; stable argsort keeps index order on ties.
    residual = 1.0 - c**2
    order = np.argsort(-residual, kind="stable")
    rows = []
    for k in order:
        v = np.zeros(m)
        v[k] = 1.0
        v -= (v @ c) * c
        for r in rows:
            v -= (v @ r) * r
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            rows.append(v / nrm)
        if len(rows) == m - 1:
            break
    frame = np.vstack(rows + [hemisphere * c])
    return Chart(center=c, frame=frame, hemisphere=int(np.sign(hemisphere)))


def to_chart(chart: Chart, p) -> ChartPoint:
    """Graph coordinates of ``p`` in ``chart``.

    Raises PointOutsideChart when ``p`` is not strictly inside the open
    hemisphere, which signals that the caller must switch charts.
    """
    p = as_unit(p)
    if float(p @ chart.center) <= 0.0:
        raise PointOutsideChart("point is outside the chart's open hemisphere")
    q = chart.frame @ p
    return ChartPoint(x=q[:-1], chart=chart)


def lift(point: ChartPoint) -> np.ndarray:
    """Ambient coordinates of a chart point, ``frame^T (x, s*beta(x))``."""
    x = point.x
    chart = point.chart
    h = chart.hemisphere * beta(x)
    return chart.frame.T @ np.concatenate([x, [h]])


def beta(x) -> float:
    """Height ``sqrt(1 - |x|^2)`` of the graph over the unit ball."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(1.0 - x @ x))


def beta_jet(x) -> BetaJet:
    """beta and its derivatives up to third order at chart coordinates x."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    b = beta(x)
    d1 = -x / b
    eye = np.eye(n)
    d2 = -eye / b - np.outer(x, x) / b**3
    # (beta_ij)_k = -d_ij x_k / b^3 - (d_ik x_j + d_jk x_i)/b^3 - 3 x_i x_j x_k / b^5
    d3 = (
        -np.einsum("ij,k->ijk", eye, x)
        - np.einsum("ik,j->ijk", eye, x)
        - np.einsum("jk,i->ijk", eye, x)
    ) / b**3 - 3.0 * np.einsum("i,j,k->ijk", x, x, x) / b**5
    return BetaJet(beta=b, d1=d1, d2=d2, d3=d3)


def metric_jet(x) -> MetricJet:
    """Round metric, two derivative orders, and exact inverse at x."""
    x = np.asarray(x, dtype=float)
    bj = beta_jet(x)
    g = np.eye(x.shape[0]) + np.outer(bj.d1, bj.d1)
    dg = np.einsum("ik,j->ijk", bj.d2, bj.d1) + np.einsum("i,jk->ijk", bj.d1, bj.d2)
    d2g = (
        np.einsum("ikl,j->ijkl", bj.d3, bj.d1)
        + np.einsum("ik,jl->ijkl", bj.d2, bj.d2)
        + np.einsum("il,jk->ijkl", bj.d2, bj.d2)
        + np.einsum("i,jkl->ijkl", bj.d1, bj.d3)
    )
    # (I + vv^T)^{-1} with v = -x/beta collapses to I - xx^T.
    ginv = np.eye(x.shape[0]) - np.outer(x, x)
    return MetricJet(g=g, dg=dg, d2g=d2g, ginv=ginv)


def covector_norm(x, p) -> float:
    """Riemannian length of a covector p at chart coordinates x."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(np.sqrt(p @ p - (x @ p) ** 2))


def vector_norm(x, v) -> float:
    """Riemannian length of a tangent vector v at chart coordinates x."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    b2 = 1.0 - x @ x
    return float(np.sqrt(v @ v + (x @ v) ** 2 / b2))


def geodesic_distance(p, q) -> float:
    """Great-circle distance, arccos of the clamped inner product."""
    p = as_unit(p)
    q = as_unit(q)
    return float(np.arccos(np.clip(p @ q, -1.0, 1.0)))


def rotations_to_pole(points: np.ndarray) -> np.ndarray:
    """Batch of rotations R with ``R @ p = e_3`` for unit points p on S^2.

    Rodrigues form about the axis ``p x e_3``; points at the south pole
    get a 180-degree rotation about e_1.  Used by vectorized kernels, where
    any orthonormal completion is equivalent.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = pts.shape[0]
    c = pts[:, 2]
    rots = np.empty((m, 3, 3))
    south = c < -1.0 + 1e-12
    w = np.stack([pts[:, 1], -pts[:, 0], np.zeros(m)], axis=1)  # p x e3
    k = np.zeros((m, 3, 3))
    k[:, 0, 1] = -w[:, 2]
    k[:, 0, 2] = w[:, 1]
    k[:, 1, 0] = w[:, 2]
    k[:, 1, 2] = -w[:, 0]
    k[:, 2, 0] = -w[:, 1]
    k[:, 2, 1] = w[:, 0]
    denom = np.where(south, 1.0, 1.0 + c)
    rots[:] = np.eye(3) + k + (k @ k) / denom[:, None, None]
    if np.any(south):
        flip = np.diag([1.0, -1.0, -1.0])
        rots[south] = flip
    return rots
