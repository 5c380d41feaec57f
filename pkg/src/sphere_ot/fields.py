"""Gridded scalar fields on the sphere: densities and transport potentials.

A DensityField stores a log-density with respect to the round volume
measure; a Potential stores a candidate transport potential.  Both live on
all nodes of a SphereGrid.  Quadrature uses the grid's partition-of-unity
weights, so normalization and means are plain weighted sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .grid import CHART_TAGS, SphereGrid


@dataclass(frozen=True)
class DensityField:
    """Log-density on a sphere grid, normalized to unit total mass.

    ``zonal_profile``, when present, is the log-density as a callable of
    the polar angle; it survives along density interpolation paths and
    feeds the one-dimensional rearrangement oracle.
    """

    grid: SphereGrid
    logrho: np.ndarray
    zonal_profile: Optional[Callable] = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return 2

    def mass(self) -> float:
        return self.grid.integrate(np.exp(self.logrho))

    def normalized(self) -> "DensityField":
        """Shift the log-density so the grid mass is exactly one."""
        shift = np.log(self.mass())
        profile = self.zonal_profile
        if profile is not None:
            old = profile
            profile = lambda theta: old(theta) - shift  # noqa: E731
        return DensityField(self.grid, self.logrho - shift, profile)

    def gradient_norms(self) -> np.ndarray:
        """Riemannian gradient lengths of the log-density at PDE nodes."""
        g = self.grid.fd_gradient(self.logrho)
        xy = self.grid.xy[self.grid.pde_ids]
        dot = np.einsum("mi,mi->m", xy, g)
        return np.sqrt(np.einsum("mi,mi->m", g, g) - dot**2)

    def sup_gradient_norm(self) -> float:
        return float(self.gradient_norms().max())

    def rho_min(self) -> float:
        return float(np.exp(self.logrho.min()))

    def rho_max(self) -> float:
        return float(np.exp(self.logrho.max()))


@dataclass(frozen=True)
class Potential:
    """Scalar potential on a sphere grid."""

    grid: SphereGrid
    values: np.ndarray

    def synced(self) -> "Potential":
        """Return a copy with fringe values slaved to interpolation."""
        return Potential(self.grid, self.grid.sync_fringe(self.values))

    def mean_zero(self) -> "Potential":
        shift = self.grid.mean(self.values)
        return Potential(self.grid, self.values - shift)

    def quadrature_mean(self) -> float:
        return self.grid.mean(self.values)

    def gradient(self) -> np.ndarray:
        """Chart-coordinate gradient at PDE nodes."""
        return self.grid.fd_gradient(self.values)

    def gradient_norms(self) -> np.ndarray:
        g = self.gradient()
        xy = self.grid.xy[self.grid.pde_ids]
        dot = np.einsum("mi,mi->m", xy, g)
        return np.sqrt(np.einsum("mi,mi->m", g, g) - dot**2)

    def sup_gradient_norm(self) -> float:
        return float(self.gradient_norms().max())


# -- constructors ------------------------------------------------------------


def density_from_function(grid: SphereGrid, logrho_fn, zonal_profile=None) -> DensityField:
    """Evaluate an ambient-point log-density on every grid node."""
    vals = np.asarray(logrho_fn(grid.ambient), dtype=float)
    return DensityField(grid, vals, zonal_profile).normalized()


def uniform_density(grid: SphereGrid) -> DensityField:
    vals = np.zeros(grid.n_nodes)
    f = DensityField(grid, vals, zonal_profile=lambda theta: np.zeros_like(theta))
    return f.normalized()


def zonal_density(grid: SphereGrid, eps: float) -> DensityField:
    """Density proportional to ``1 + eps * cos(theta)`` about the north pole."""
    if not -1.0 < eps < 1.0:
        raise ValueError("zonal amplitude must be in (-1, 1)")

    def profile(theta):
        return np.log1p(eps * np.cos(theta)) - np.log(4.0 * np.pi)

    vals = np.log1p(eps * grid.ambient[:, 2]) - np.log(4.0 * np.pi)
    return DensityField(grid, vals, zonal_profile=profile).normalized()


def bump_density(grid: SphereGrid, center, eps: float, width: float = 0.5) -> DensityField:
    """Density proportional to ``1 + eps * exp(-(angle/width)^2)``."""
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    ang = np.arccos(np.clip(grid.ambient @ c, -1.0, 1.0))
    vals = np.log1p(eps * np.exp(-((ang / width) ** 2)))
    return DensityField(grid, vals).normalized()


def zonal_eps_for_gradient(target_sup: float) -> float:
    """Amplitude whose log-density gradient sup equals ``target_sup``.

    For ``rho ~ 1 + eps cos(theta)`` the sup of |d/dtheta log rho| is
    ``eps / sqrt(1 - eps^2)``.
    """
    return target_sup / np.sqrt(1.0 + target_sup**2)


# -- CSV formats -------------------------------------------------------------

_TAG_INDEX = {tag: i for i, tag in enumerate(CHART_TAGS)}


def write_density_csv(density: DensityField, path: str) -> None:
    """Write the gridded format: header ``chart,i,j,logrho``, LF endings."""
    grid = density.grid
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["chart", "i", "j", "logrho"])
        for nid in range(grid.n_nodes):
            writer.writerow(
                [
                    CHART_TAGS[grid.chart_id[nid]],
                    int(grid.lattice_i[nid]),
                    int(grid.lattice_j[nid]),
                    f"{density.logrho[nid]:.17g}",
                ]
            )


def read_density_csv(grid: SphereGrid, path: str) -> DensityField:
    """Read a density file in gridded or zonal format.

    Gridded format: ``chart,i,j,logrho`` with chart tags N, S (polar) and
    optionally E1..E4 (equatorial).  Files carrying only the two polar
    charts leave an equatorial band without data; missing nodes are filled
    from the nearest provided node.  Zonal format: ``theta,logrho``.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        header = [cell.strip().lower() for cell in header]
        rows = [row for row in reader if row]

    if header == ["theta", "logrho"]:
        thetas = np.array([float(r[0]) for r in rows])
        logs = np.array([float(r[1]) for r in rows])
        order = np.argsort(thetas)
        thetas, logs = thetas[order], logs[order]

        def profile(theta):
            return np.interp(theta, thetas, logs)

        vals = profile(np.arccos(np.clip(grid.ambient[:, 2], -1.0, 1.0)))
        return DensityField(grid, vals, zonal_profile=profile).normalized()

    if header != ["chart", "i", "j", "logrho"]:
        raise ValueError(f"unrecognized density header {header!r}")

    key_to_id = {}
    base = slice(0, grid.m_per_chart)
    for local, (ii, jj) in enumerate(zip(grid.lattice_i[base], grid.lattice_j[base])):
        key_to_id[(ii, jj)] = local
    vals = np.full(grid.n_nodes, np.nan)
    for row in rows:
        tag = row[0].strip()
        if tag not in _TAG_INDEX:
            raise ValueError(f"unknown chart tag {tag!r}")
        local = key_to_id.get((int(row[1]), int(row[2])))
        if local is None:
            raise ValueError(f"node ({row[1]}, {row[2]}) not on this grid")
        vals[_TAG_INDEX[tag] * grid.m_per_chart + local] = float(row[3])
    missing = np.isnan(vals)
    if missing.all():
        raise ValueError("density file contains no usable rows")
    if missing.any():
        tree = cKDTree(grid.ambient[~missing])
        _, nearest = tree.query(grid.ambient[missing])
        vals[missing] = vals[~missing][nearest]
    return DensityField(grid, vals).normalized()


def parse_density_spec(grid: SphereGrid, spec: str) -> DensityField:
    """Built-in density generators for the command line.

    ``uniform``, ``zonal:eps=0.1``, ``bump:center=0,0,1,eps=0.5,width=0.5``,
    or a path to a CSV file.
    """
    if spec == "uniform":
        return uniform_density(grid)
    if spec.startswith("zonal:"):
        params = _parse_params(spec[len("zonal:") :])
        return zonal_density(grid, float(params["eps"]))
    if spec.startswith("bump:"):
        params = _parse_params(spec[len("bump:") :])
        center = [float(v) for v in params.get("center", "0,0,1").split(",")]
        return bump_density(
            grid, center, float(params["eps"]), float(params.get("width", 0.5))
        )
    return read_density_csv(grid, spec)


def _parse_params(text: str) -> dict:
    # "center=0,0,1,eps=0.5" style: keys take everything up to the next key.
    out = {}
    key = None
    buf = []
    for token in text.split(","):
        if "=" in token:
            if key is not None:
                out[key] = ",".join(buf)
            key, first = token.split("=", 1)
            buf = [first]
        else:
            buf.append(token)
    if key is not None:
        out[key] = ",".join(buf)
    return out
