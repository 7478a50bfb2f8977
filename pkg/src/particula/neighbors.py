"""Cell-accelerated Verlet neighbor lists in dense and compressed layouts."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .aosoa import FieldView
from .geometry import Box


@dataclass
class VerletList:
    layout: str                 # "dense" | "compressed"
    half_or_full: str           # "half" | "full"
    cutoff: float
    counts: np.ndarray
    # dense storage
    table: np.ndarray | None = None      # (n, max_count), -1 padded
    # compressed storage
    indices: np.ndarray | None = None    # concatenated neighbor indices
    offsets: np.ndarray | None = None    # prefix sums, len n + 1

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def neighbors(self, i: int) -> np.ndarray:
        if self.layout == "dense":
            return self.table[i, : self.counts[i]]
        return self.indices[self.offsets[i] : self.offsets[i + 1]]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored (i, j) entries as flat arrays, ascending i then stored j."""
        if self.layout == "compressed":
            i = np.repeat(np.arange(self.n), self.counts)
            return i, self.indices.copy()
        i = np.repeat(np.arange(self.n), self.counts)
        mask = self.table >= 0
        return i, self.table[mask]


def _neighbor_sets(positions: np.ndarray, box: Box, periodic, cutoff: float,
                   cell_ratio: float) -> list[np.ndarray]:
    """Sorted neighbor index array per particle (full convention, no self)."""
    x = np.asarray(positions, dtype=np.float64)
    n, d = x.shape
    per = np.asarray(periodic, dtype=bool)
    L = box.lengths
    edge = cutoff * cell_ratio
    nc = np.maximum(1, np.floor(L / edge).astype(np.int64))
    # half-open cell assignment, top face clamps down
    idx = np.floor((x - box.low) / (L / nc)).astype(np.int64)
    idx = np.clip(idx, 0, nc - 1)
    flat = np.ravel_multi_index(tuple(idx.T), tuple(nc)) if n else np.empty(0, np.int64)
    ncells = int(np.prod(nc))
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=ncells)
    cell_start = np.concatenate(([0], np.cumsum(counts)))
    members = [order[cell_start[c] : cell_start[c + 1]] for c in range(ncells)]

    stencil = list(itertools.product(*[(-1, 0, 1)] * d))
    rc2 = cutoff * cutoff
    result: list[np.ndarray] = [np.empty(0, np.int64)] * n
    for c in range(ncells):
        mine = members[c]
        if mine.size == 0:
            continue
        cc = np.array(np.unravel_index(c, tuple(nc)))
        cand_cells = set()
        for off in stencil:
            cell = cc + np.array(off)
            ok = True
            for a in range(d):
                if per[a]:
                    cell[a] %= nc[a]
                elif not (0 <= cell[a] < nc[a]):
                    ok = False
                    break
            if ok:
                cand_cells.add(int(np.ravel_multi_index(tuple(cell), tuple(nc))))
        cand = np.concatenate([members[cc2] for cc2 in sorted(cand_cells)])
        cand = np.unique(cand)
        dx = x[cand][None, :, :] - x[mine][:, None, :]
        dx = box.min_image(dx, per)
        r2 = np.einsum("ijk,ijk->ij", dx, dx)
        hit = r2 < rc2
        for row, i in enumerate(mine):
            js = cand[hit[row]]
            result[int(i)] = js[js != i]
    return result


def build_verlet(positions, box: Box, periodic, cutoff: float,
                 layout: str = "compressed", half_or_full: str = "full",
                 cell_ratio: float = 1.0) -> VerletList:
    """Neighbors are pairs with minimum-image distance strictly below cutoff."""
    if isinstance(positions, FieldView):
        positions = positions.copy_out()
    x = np.asarray(positions, dtype=np.float64)
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if cell_ratio < 1.0:
        raise ValueError("cell_ratio must be >= 1")
    if layout not in ("dense", "compressed"):
        raise ValueError(f"unknown layout {layout!r}")
    if half_or_full not in ("half", "full"):
        raise ValueError(f"unknown pair convention {half_or_full!r}")
    per = np.asarray(periodic, dtype=bool)
    for a in np.flatnonzero(per):
        if cutoff > 0.5 * box.lengths[a]:
            raise ValueError("cutoff exceeds half the box length on a periodic axis")

    sets = _neighbor_sets(x, box, per, cutoff, cell_ratio)
    if half_or_full == "half":
        sets = [js[js > i] for i, js in enumerate(sets)]
    counts = np.array([js.size for js in sets], dtype=np.int64)

    if layout == "compressed":
        indices = np.concatenate(sets) if sets else np.empty(0, np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return VerletList(layout, half_or_full, cutoff, counts,
                          indices=indices.astype(np.int64), offsets=offsets)
    maxc = int(counts.max()) if counts.size else 0
    table = np.full((len(sets), maxc), -1, dtype=np.int64)
    for i, js in enumerate(sets):
        table[i, : js.size] = js
    return VerletList(layout, half_or_full, cutoff, counts, table=table)


def for_each_neighbor(vlist: VerletList, i_range, kernel) -> None:
    """kernel(i, j) once per stored entry; ascending i, stored j order."""
    begin, end = i_range
    for i in range(begin, end):
        for j in vlist.neighbors(i):
            kernel(i, int(j))


def for_each_neighbor2(vlist: VerletList, i_range, kernel) -> None:
    """kernel(i, j, k) per ordered pair of distinct neighbors, j stored before k."""
    if vlist.half_or_full != "full":
        raise ValueError("second-level traversal requires a full list")
    begin, end = i_range
    for i in range(begin, end):
        js = vlist.neighbors(i)
        for a in range(js.size):
            for b in range(a + 1, js.size):
                kernel(i, int(js[a]), int(js[b]))
