"""Key-based and geometric (linked-cell) binning producing reorder permutations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aosoa import FieldView, ParticleSet
from .geometry import Box


@dataclass(frozen=True)
class Permutation:
    """map[source index] = destination index; a bijection on [0, n)."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        object.__setattr__(self, "map", m)

    @property
    def n(self) -> int:
        return self.map.shape[0]

    def is_bijection(self) -> bool:
        seen = np.zeros(self.n, dtype=bool)
        valid = (self.map >= 0) & (self.map < self.n)
        if not valid.all():
            return False
        seen[self.map] = True
        return bool(seen.all())


@dataclass(frozen=True)
class CellBinning:
    cells: np.ndarray          # counts per axis
    cell_size: np.ndarray
    origin: np.ndarray
    offsets: np.ndarray        # prefix sums, len prod(cells) + 1
    permutation: Permutation

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells))


def bin_by_key(keys) -> Permutation:
    """Stable sort permutation: applying it yields nondecreasing keys."""
    keys = np.asarray(keys)
    order = np.argsort(keys, kind="stable")  # order[dst] = src
    dest = np.empty(keys.shape[0], dtype=np.int64)
    dest[order] = np.arange(keys.shape[0])
    return Permutation(dest)


def cell_indices(positions: np.ndarray, box: Box, cell_size) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis cell index of each position under the half-open convention.

    Returns (cells_per_axis, per-particle index array (n, d)). Coordinates
    exactly on the box upper face clamp to the top cell.
    """
    x = np.asarray(positions, dtype=np.float64)
    cs = np.broadcast_to(np.asarray(cell_size, dtype=np.float64), (box.ndim,))
    if np.any(cs <= 0):
        raise ValueError("cell_size must be positive")
    if np.any(x < box.low) or np.any(x > box.high):
        raise ValueError("position outside box")
    nc = np.maximum(1, np.ceil((box.lengths / cs) - 1e-12).astype(np.int64))
    idx = np.floor((x - box.low) / cs).astype(np.int64)
    idx = np.minimum(idx, nc - 1)
    return nc, idx


def bin_by_position(positions, box: Box, cell_size) -> CellBinning:
    """Geometric binning; permutation groups cells contiguously in row-major order."""
    if isinstance(positions, FieldView):
        positions = positions.copy_out()
    x = np.asarray(positions, dtype=np.float64)
    nc, idx = cell_indices(x, box, cell_size)
    flat = np.ravel_multi_index(tuple(idx.T), tuple(nc))
    counts = np.bincount(flat, minlength=int(np.prod(nc)))
    offsets = np.concatenate(([0], np.cumsum(counts)))
    perm = bin_by_key(flat)
    cs = np.broadcast_to(np.asarray(cell_size, dtype=np.float64), (box.ndim,)).copy()
    return CellBinning(nc, cs, box.low.copy(), offsets, perm)


def permute(pset: ParticleSet, p: Permutation) -> None:
    """Reorder all fields so tuple i moves to index p.map[i]."""
    if p.n != pset.size:
        raise ValueError(f"permutation length {p.n} != set size {pset.size}")
    if not p.is_bijection():
        raise ValueError("permutation is not a bijection")
    for name in pset.schema.names():
        view = pset.slice(name)
        src = view.copy_out()
        dst = np.empty_like(src)
        dst[p.map] = src
        view.copy_in(dst)
