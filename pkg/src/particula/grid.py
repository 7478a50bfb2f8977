"""Uniform node-centered grids with B-spline particle-grid interpolation.

Supported spline orders: 1 (CIC/linear), 2 (quadratic), 3 (cubic). Odd
orders center their stencil on nodes, even orders on cell midpoints, the
standard cardinal B-spline placement.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .aosoa import FieldView

SUPPORTED_ORDERS = (1, 2, 3)


class StructuredGrid:
    """Uniform Cartesian grid; fields live on nodes.

    Periodic axes have `cells` nodes (the upper face aliases the lower),
    non-periodic axes have `cells + 1`.
    """

    def __init__(self, cells, lengths, origin=None, periodic=True):
        self.cells = np.atleast_1d(np.asarray(cells, dtype=np.int64))
        self.d = self.cells.shape[0]
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.float64), (self.d,))
        if np.any(self.cells < 1) or np.any(lengths <= 0):
            raise ValueError("cells must be >= 1 and lengths positive")
        self.lengths = lengths.copy()
        self.spacing = self.lengths / self.cells
        self.origin = (np.zeros(self.d) if origin is None
                       else np.broadcast_to(np.asarray(origin, dtype=np.float64), (self.d,)).copy())
        if isinstance(periodic, bool):
            periodic = [periodic] * self.d
        self.periodic = np.asarray(periodic, dtype=bool)
        self.nodes = np.where(self.periodic, self.cells, self.cells + 1)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def scalar_field(self) -> np.ndarray:
        return np.zeros(tuple(self.nodes))

    def vector_field(self, m: int | None = None) -> np.ndarray:
        return np.zeros((*self.nodes, m if m is not None else self.d))

    def node_coords(self) -> list[np.ndarray]:
        return [self.origin[a] + self.spacing[a] * np.arange(self.nodes[a])
                for a in range(self.d)]


@dataclass(frozen=True)
class SplineStencil:
    """Per-axis stencil at one point: indices (d, k+1), weights, weight gradients."""

    order: int
    indices: np.ndarray
    weights: np.ndarray
    gradients: np.ndarray


def _axis_stencil(order: int, u: np.ndarray, h: float):
    """Stencil along one axis for normalized coordinates u = (x - origin)/h.

    Returns (base node index, weights (n, k+1), gradients (n, k+1))."""
    u = np.asarray(u, dtype=np.float64)
    if order == 1:
        i0 = np.floor(u).astype(np.int64)
        t = u - i0
        w = np.empty(t.shape + (2,))
        w[..., 0] = 1.0 - t
        w[..., 1] = t
        # constant gradient: a read-only broadcast avoids two dense allocations
        g = np.broadcast_to(np.array([-1.0 / h, 1.0 / h]), w.shape)
        return i0, w, g
    if order == 2:
        m = np.floor(u + 0.5).astype(np.int64)
        dlt = u - m
        w = np.stack([0.5 * (0.5 - dlt) ** 2,
                      0.75 - dlt ** 2,
                      0.5 * (0.5 + dlt) ** 2], axis=-1)
        g = np.stack([-(0.5 - dlt), -2.0 * dlt, (0.5 + dlt)], axis=-1) / h
        return m - 1, w, g
    if order == 3:
        i0 = np.floor(u).astype(np.int64)
        t = u - i0
        w = np.stack([(1 - t) ** 3 / 6.0,
                      (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
                      (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0,
                      t ** 3 / 6.0], axis=-1)
        g = np.stack([-0.5 * (1 - t) ** 2,
                      (3 * t ** 2 - 4 * t) / 2.0,
                      (-3 * t ** 2 + 2 * t + 1) / 2.0,
                      0.5 * t ** 2], axis=-1) / h
        return i0 - 1, w, g
    raise ValueError(f"unsupported spline order {order}; supported: {SUPPORTED_ORDERS}")


def _stencils(grid: StructuredGrid, x: np.ndarray, order: int):
    """Vectorized per-axis stencils for points x (n, d).

    Returns lists (per axis) of (index array (n, k+1), weights, gradients),
    indices wrapped on periodic axes and validated on non-periodic ones."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    out = []
    for a in range(grid.d):
        u = (x[:, a] - grid.origin[a]) / grid.spacing[a]
        i0, w, g = _axis_stencil(order, u, grid.spacing[a])
        idx = i0[:, None] + np.arange(order + 1)[None, :]
        if grid.periodic[a]:
            idx = np.mod(idx, grid.cells[a])
        else:
            if np.any(idx < 0) or np.any(idx > grid.cells[a]):
                raise ValueError("stencil reaches outside non-periodic grid")
        out.append((idx, w, g))
    return out


def spline_weights(order: int, x, grid: StructuredGrid) -> SplineStencil:
    """Stencil for one point; weights sum to 1, gradients to 0 per axis."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    per_axis = _stencils(grid, x[None, :], order)
    idx = np.stack([p[0][0] for p in per_axis])
    w = np.stack([p[1][0] for p in per_axis])
    g = np.stack([p[2][0] for p in per_axis])
    return SplineStencil(order, idx, w, g)


def _combined(per_axis, combo, kind="value"):
    """Tensor-product weight for one stencil-offset combination.

    kind "value": prod of weights. kind int a: gradient along axis a."""
    d = len(per_axis)
    w = 1.0
    for a in range(d):
        idx, wa, ga = per_axis[a]
        factor = ga[:, combo[a]] if kind == a else wa[:, combo[a]]
        w = w * factor
    return w


def _scaled_indices(per_axis, nodes):
    """Per-axis stencil indices pre-multiplied by row-major strides, so a
    flat node index is just the sum over axes of one column each."""
    d = len(per_axis)
    strides = [1] * d
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * int(nodes[a + 1])
    return [per_axis[a][0] * strides[a] for a in range(d)]


def _flat_indices(per_axis, combo, nodes, scaled=None):
    if scaled is None:
        scaled = _scaled_indices(per_axis, nodes)
    fi = scaled[0][:, combo[0]].copy()
    for a in range(1, len(scaled)):
        fi += scaled[a][:, combo[a]]
    return fi


def p2g(grid: StructuredGrid, field: np.ndarray, positions, values,
        order: int = 1, op: str = "value") -> None:
    """Scatter particle values to grid nodes, accumulating into `field`.

    op "value": field (scalar) += value * weight.
    op "gradient": field (d-vector) += value * weight-gradient.
    Accumulation is deterministic (per stencil offset, ascending particle).
    """
    if isinstance(positions, FieldView):
        positions = positions.copy_out()
    if isinstance(values, FieldView):
        values = values.copy_out()
    x = np.asarray(positions, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    v = np.asarray(values, dtype=np.float64)
    per_axis = _stencils(grid, x, order)
    nn = grid.num_nodes
    combos = list(itertools.product(*[range(order + 1)] * grid.d))
    scaled = _scaled_indices(per_axis, grid.nodes)
    if op == "value":
        flat_field = field.reshape(-1)
        for combo in combos:
            w = _combined(per_axis, combo)
            fi = _flat_indices(per_axis, combo, grid.nodes, scaled)
            flat_field += np.bincount(fi, weights=v * w, minlength=nn)
    elif op == "gradient":
        flat_field = field.reshape(-1, grid.d)
        for combo in combos:
            fi = _flat_indices(per_axis, combo, grid.nodes, scaled)
            for a in range(grid.d):
                g = _combined(per_axis, combo, kind=a)
                flat_field[:, a] += np.bincount(fi, weights=v * g, minlength=nn)
    else:
        raise ValueError(f"unknown p2g op {op!r}")


def g2p(grid: StructuredGrid, field: np.ndarray, positions,
        order: int = 1, op: str = "value") -> np.ndarray:
    """Gather grid values to particle locations.

    op "value": scalar field -> (n,), vector field (..., m) -> (n, m).
    op "gradient": scalar field -> (n, d).
    op "divergence": d-vector field -> (n,).
    """
    if isinstance(positions, FieldView):
        positions = positions.copy_out()
    x = np.asarray(positions, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    per_axis = _stencils(grid, x, order)
    combos = list(itertools.product(*[range(order + 1)] * grid.d))
    scaled = _scaled_indices(per_axis, grid.nodes)
    node_shape = tuple(grid.nodes)
    if op == "value":
        extra = field.shape[grid.d:]
        flat = field.reshape(-1, *extra)
        out = np.zeros((n, *extra))
        for combo in combos:
            w = _combined(per_axis, combo)
            fi = _flat_indices(per_axis, combo, grid.nodes, scaled)
            vals = flat[fi]
            out += vals * w.reshape(n, *([1] * len(extra)))
        return out
    if op == "gradient":
        if field.shape != node_shape:
            raise ValueError("gradient op expects a scalar field")
        flat = field.reshape(-1)
        out = np.zeros((n, grid.d))
        for combo in combos:
            fi = _flat_indices(per_axis, combo, grid.nodes, scaled)
            vals = flat[fi]
            for a in range(grid.d):
                out[:, a] += vals * _combined(per_axis, combo, kind=a)
        return out
    if op == "divergence":
        if field.shape != (*node_shape, grid.d):
            raise ValueError("divergence op expects a d-vector field")
        flat = field.reshape(-1, grid.d)
        out = np.zeros(n)
        for combo in combos:
            fi = _flat_indices(per_axis, combo, grid.nodes, scaled)
            for a in range(grid.d):
                out += flat[fi, a] * _combined(per_axis, combo, kind=a)
        return out
    raise ValueError(f"unknown g2p op {op!r}")
