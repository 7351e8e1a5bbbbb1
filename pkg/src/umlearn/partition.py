"""Rectilinear grids that turn continuous observations into category counts.

Each dimension carries a sorted list of hyperplanes.  Hyperplanes extend to
infinity, so ``len(hyperplanes[h]) + 1`` cells per dimension tile all of R^d
and the outermost cells are unbounded.  Cells are half-open, ``[c_k, c_k+1)``:
a point lying on a hyperplane belongs to the cell above it.  Flat indices are
row-major (last dimension varies fastest).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import multivariate_normal, norm

from .errors import ConfigError
from .truth import DistributionSpec, GaussianSpec, MixtureSpec


@dataclass(frozen=True, eq=False)
class RectilinearGrid:
    hyperplanes: tuple[np.ndarray, ...]
    cells_per_dim: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        planes = tuple(np.asarray(h, dtype=float).ravel() for h in self.hyperplanes)
        if not planes:
            raise ConfigError("a grid needs at least one dimension")
        for h, c in enumerate(planes):
            if c.size == 0:
                raise ConfigError(f"dimension {h} has no hyperplanes")
            if not np.all(np.isfinite(c)) or np.any(np.diff(c) <= 0):
                raise ConfigError(f"hyperplanes of dimension {h} must be finite and strictly increasing")
        object.__setattr__(self, "hyperplanes", planes)
        object.__setattr__(self, "cells_per_dim", tuple(len(c) + 1 for c in planes))

    @property
    def dims(self) -> int:
        return len(self.hyperplanes)

    @property
    def cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    def to_json(self) -> dict:
        return {"dims": self.dims, "hyperplanes": [c.tolist() for c in self.hyperplanes]}

    @classmethod
    def from_json(cls, obj: dict) -> "RectilinearGrid":
        if "hyperplanes" in obj:
            grid = cls(tuple(obj["hyperplanes"]))
            if "dims" in obj and int(obj["dims"]) != grid.dims:
                raise ConfigError("dims does not match the hyperplane lists")
            return grid
        try:
            return build_uniform_grid(obj["lo"], obj["hi"], int(obj["cells"]))
        except KeyError as exc:
            raise ConfigError(f"grid description is missing {exc}") from None


def build_uniform_grid(lo, hi, g: int) -> RectilinearGrid:
    """``g`` cells per dimension: ``g - 1`` evenly spaced hyperplanes strictly inside [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ConfigError("need lo < hi componentwise")
    if g < 2:
        raise ConfigError("need at least 2 cells per dimension")
    k = np.arange(1, g)
    return RectilinearGrid(tuple(a + k * (b - a) / g for a, b in zip(lo, hi)))


def cell_indices(grid: RectilinearGrid, points) -> np.ndarray:
    """Per-dimension cell indices, shape (n, d)."""
    x = np.asarray(points, dtype=float).reshape(-1, grid.dims)
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return np.stack(
        [np.searchsorted(c, x[:, h], side="right") for h, c in enumerate(grid.hyperplanes)], axis=1
    )


def cell_of(grid: RectilinearGrid, points):
    """Flat cell index of one point (returns int) or of each row (returns array)."""
    pts = np.asarray(points, dtype=float)
    flat = np.ravel_multi_index(cell_indices(grid, pts).T, grid.cells_per_dim)
    return int(flat[0]) if pts.ndim == 1 else flat


def histogram(grid: RectilinearGrid, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, grid.dims)
    if len(pts) == 0:
        return np.zeros(grid.cells, dtype=np.int64)
    return np.bincount(cell_of(grid, pts), minlength=grid.cells)


def _edges(c: np.ndarray) -> np.ndarray:
    return np.r_[-np.inf, c, np.inf]


def cell_probabilities(grid: RectilinearGrid, spec: DistributionSpec) -> np.ndarray:
    """Exact probability mass of every cell under a Gaussian or mixture spec."""
    if isinstance(spec, GaussianSpec):
        parts = [(1.0, spec.mean, spec.cov)]
    elif isinstance(spec, MixtureSpec):
        parts = list(zip(spec.weights, spec.means, spec.covs))
    else:
        raise TypeError("cell probabilities need a continuous spec")
    if parts[0][1].shape[0] != grid.dims:
        raise ValueError("spec and grid dimensions differ")
    total = np.zeros(grid.cells)
    for w, mean, cov in parts:
        total += w * _gaussian_cell_masses(grid, mean, cov)
    return total


def _gaussian_cell_masses(grid, mean, cov) -> np.ndarray:
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        per_dim = []
        for h, c in enumerate(grid.hyperplanes):
            cdf = norm.cdf(_edges(c), loc=mean[h], scale=np.sqrt(cov[h, h]))
            sf = norm.sf(_edges(c), loc=mean[h], scale=np.sqrt(cov[h, h]))
            # use whichever tail is more accurate on each side of the mean
            mass = np.where(_edges(c)[1:] <= mean[h], np.diff(cdf), -np.diff(sf))
            per_dim.append(mass)
        out = per_dim[0]
        for mass in per_dim[1:]:
            out = np.multiply.outer(out, mass)
        return out.ravel()
    dist = multivariate_normal(mean, cov)
    out = np.empty(grid.cells)
    edges = [_edges(c) for c in grid.hyperplanes]
    for flat in range(grid.cells):
        idx = np.unravel_index(flat, grid.cells_per_dim)
        lower = np.array([edges[h][i] for h, i in enumerate(idx)])
        upper = np.array([edges[h][i + 1] for h, i in enumerate(idx)])
        out[flat] = dist.cdf(upper, lower_limit=lower)
    return out
