"""Simulated multi-rank spatial decomposition: migration and ghost halos.

Ranks are in-process state machines: each owns one block of a uniform
Cartesian split of the global box and a ParticleSet holding owned
particles followed by ghost copies (ParticleSet.ghosts counts the tail).
Message delivery is deterministic: receives are processed in ascending
source-rank order, so scatter sums are bitwise reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .aosoa import ParticleSet
from .geometry import Box


@dataclass(frozen=True)
class DomainFabric:
    global_box: Box
    rank_dims: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        dims = np.atleast_1d(np.asarray(self.rank_dims, dtype=np.int64))
        per = np.atleast_1d(np.asarray(self.periodic, dtype=bool))
        if dims.shape[0] != self.global_box.ndim or per.shape[0] != self.global_box.ndim:
            raise ValueError("rank_dims/periodic must match box dimensionality")
        if np.any(dims < 1):
            raise ValueError("rank_dims must be >= 1 per axis")
        object.__setattr__(self, "rank_dims", dims)
        object.__setattr__(self, "periodic", per)

    @property
    def n_ranks(self) -> int:
        return int(np.prod(self.rank_dims))

    @property
    def block_lengths(self) -> np.ndarray:
        return self.global_box.lengths / self.rank_dims

    def coords_of(self, rank: int) -> np.ndarray:
        return np.array(np.unravel_index(rank, tuple(self.rank_dims)))

    def rank_of(self, coords) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(coords)), tuple(self.rank_dims)))

    def local_box(self, rank: int) -> Box:
        c = self.coords_of(rank)
        bl = self.block_lengths
        low = self.global_box.low + c * bl
        high = np.where(c == self.rank_dims - 1, self.global_box.high, low + bl)
        return Box(low, high)

    def owner_of(self, x: np.ndarray) -> np.ndarray:
        """Rank owning each position; positions must lie inside the global box."""
        x = np.asarray(x, dtype=np.float64)
        gb = self.global_box
        if np.any(x < gb.low) or np.any(x > gb.high):
            raise ValueError("position outside global box")
        idx = np.floor((x - gb.low) / self.block_lengths).astype(np.int64)
        idx = np.minimum(idx, self.rank_dims - 1)  # upper-global-face closure
        return np.ravel_multi_index(tuple(idx.T), tuple(self.rank_dims))


def decompose(global_box: Box, rank_dims, periodic) -> DomainFabric:
    return DomainFabric(global_box, rank_dims, periodic)


def _tuples_out(pset: ParticleSet) -> dict[str, np.ndarray]:
    return {name: pset.slice(name).copy_out() for name in pset.schema.names()}


def migrate(fabric: DomainFabric, sets: list[ParticleSet], position_field: str = "x") -> None:
    """Move every particle to the rank whose half-open box contains it.

    Ghosts are discarded first. Periodic axes are wrapped into the global
    box before the ownership test; a particle outside on a non-periodic
    axis is an error. Each destination receives tuples sorted by source
    rank then source index, so the result is deterministic.
    """
    if len(sets) != fabric.n_ranks:
        raise ValueError("one ParticleSet per rank required")
    gb = fabric.global_box
    outgoing = []  # per source rank: (owner ids, field dict)
    for r, pset in enumerate(sets):
        pset.resize(pset.owned)
        pset.ghosts = 0
        data = _tuples_out(pset)
        x = gb.wrap(data[position_field], fabric.periodic)
        for a in np.flatnonzero(~fabric.periodic):
            if np.any(x[:, a] < gb.low[a]) or np.any(x[:, a] > gb.high[a]):
                raise ValueError(f"particle outside global box on non-periodic axis {a}")
        data[position_field] = x
        outgoing.append((fabric.owner_of(x), data))

    for r, pset in enumerate(sets):
        parts = {name: [] for name in pset.schema.names()}
        total = 0
        for s in range(fabric.n_ranks):
            owners, data = outgoing[s]
            sel = owners == r
            total += int(sel.sum())
            for name in parts:
                parts[name].append(data[name][sel])
        pset.resize(total)
        pset.ghosts = 0
        for name, chunks in parts.items():
            pset.slice(name).copy_in(np.concatenate(chunks, axis=0))


def _dist2_to_box(x: np.ndarray, box: Box) -> np.ndarray:
    """Squared distance from points (n, d) to the closed box."""
    below = np.maximum(box.low - x, 0.0)
    above = np.maximum(x - box.high, 0.0)
    d = below + above
    return np.einsum("ij,ij->i", d, d)


@dataclass
class HaloPlan:
    fabric: DomainFabric
    width: float
    position_field: str
    # per source rank, records sorted by (dest, local index)
    export_index: list[np.ndarray]
    export_dest: list[np.ndarray]
    export_shift: list[np.ndarray]     # ghost position = x + shift
    import_layout: list[list[tuple[int, int]]]  # per dest: [(src, count), ...] src ascending
    owned_snapshot: tuple

    def import_total(self, rank: int) -> int:
        return sum(c for _, c in self.import_layout[rank])

    def check_fresh(self, sets: list[ParticleSet]) -> None:
        if tuple(p.owned for p in sets) != self.owned_snapshot:
            raise RuntimeError("stale halo plan: particle residency changed since build")


def build_halo(fabric: DomainFabric, sets: list[ParticleSet], width: float,
               position_field: str = "x") -> HaloPlan:
    """Plan ghost exports: particle -> every adjacent rank whose box is within width.

    Single-shell halo: width must not exceed the smallest local box edge.
    (particle, destination) pairs are unique; the periodic image shift is
    the one minimizing the distance to the destination box.
    """
    bl = fabric.block_lengths
    if width <= 0:
        raise ValueError("halo width must be positive")
    if width > bl.min() * (1 + 1e-12):
        raise ValueError("halo width exceeds the smallest local box edge")
    d = fabric.global_box.ndim
    L = fabric.global_box.lengths
    dims = fabric.rank_dims
    w2 = width * width

    export_index, export_dest, export_shift = [], [], []
    for r in range(fabric.n_ranks):
        pset = sets[r]
        n = pset.owned
        x = pset.slice(position_field).copy_out()[:n]
        coords = fabric.coords_of(r)
        # candidate (dest, shift): best squared distance per (particle, dest)
        best: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for off in itertools.product(*[(-1, 0, 1)] * d):
            if all(o == 0 for o in off):
                continue
            target = coords + np.array(off)
            shift = np.zeros(d)
            ok = True
            for a in range(d):
                if 0 <= target[a] < dims[a]:
                    continue
                if not fabric.periodic[a]:
                    ok = False
                    break
                if target[a] < 0:
                    # crossing the global low face: the image sits above high
                    target[a] += dims[a]
                    shift[a] = L[a]
                else:
                    target[a] -= dims[a]
                    shift[a] = -L[a]
            if not ok:
                continue
            dest = fabric.rank_of(target)
            if dest == r and not np.any(shift):
                continue
            if dest == r:
                continue  # self-images handled by periodic kernels, not ghosts
            d2 = _dist2_to_box(x + shift, fabric.local_box(dest))
            if dest in best:
                bd2, bsh = best[dest]
                upd = d2 < bd2
                bd2 = np.where(upd, d2, bd2)
                bsh = np.where(upd[:, None], shift, bsh)
                best[dest] = (bd2, bsh)
            else:
                best[dest] = (d2, np.broadcast_to(shift, (n, d)).copy())
        idxs, dests, shifts = [], [], []
        for dest in sorted(best):
            d2, sh = best[dest]
            sel = np.flatnonzero(d2 < w2)
            idxs.append(sel)
            dests.append(np.full(sel.size, dest, dtype=np.int64))
            shifts.append(sh[sel])
        if idxs:
            export_index.append(np.concatenate(idxs))
            export_dest.append(np.concatenate(dests))
            export_shift.append(np.concatenate(shifts, axis=0))
        else:
            export_index.append(np.empty(0, np.int64))
            export_dest.append(np.empty(0, np.int64))
            export_shift.append(np.empty((0, d)))

    import_layout = [[] for _ in range(fabric.n_ranks)]
    for s in range(fabric.n_ranks):
        for dest in np.unique(export_dest[s]):
            count = int((export_dest[s] == dest).sum())
            import_layout[int(dest)].append((s, count))
    for lay in import_layout:
        lay.sort()
    return HaloPlan(fabric, width, position_field, export_index, export_dest,
                    export_shift, import_layout, tuple(p.owned for p in sets))


def halo_gather(plan: HaloPlan, sets: list[ParticleSet], fields=None) -> None:
    """Append ghost copies after owned particles; positions get the image shift.

    Rebuilds the ghost region from scratch; unrequested fields are zeroed
    on ghosts. Ghost slots are ordered by ascending source rank.
    """
    plan.check_fresh(sets)
    if fields is not None and plan.position_field not in fields:
        fields = list(fields) + [plan.position_field]
    # stage outgoing field data per source
    staged = []
    for s, pset in enumerate(sets):
        names = fields if fields is not None else pset.schema.names()
        data = {name: pset.slice(name).copy_out()[plan.export_index[s]] for name in names}
        data[plan.position_field] = data[plan.position_field] + plan.export_shift[s]
        staged.append(data)
    for r, pset in enumerate(sets):
        owned = pset.owned
        pset.resize(owned)
        pset.resize(owned + plan.import_total(r))
        pset.ghosts = plan.import_total(r)
        pos = owned
        for s, count in plan.import_layout[r]:
            sel = plan.export_dest[s] == r
            for name, arr in staged[s].items():
                view = pset.slice(name)
                full = view.copy_out()
                full[pos : pos + count] = arr[sel]
                view.copy_in(full)
            pos += count


def halo_scatter(plan: HaloPlan, sets: list[ParticleSet], fields) -> None:
    """Sum ghost-accumulated field values back onto owners, then clear ghosts.

    Owners accumulate contributions in ascending destination-rank order.
    """
    plan.check_fresh(sets)
    for r, pset in enumerate(sets):
        if pset.size != pset.owned + plan.import_total(r):
            raise RuntimeError("halo_scatter without matching gather")
    # locate each source's ghost block on every destination
    ghost_base = []
    for r, pset in enumerate(sets):
        base = {}
        pos = pset.owned
        for s, count in plan.import_layout[r]:
            base[s] = pos
            pos += count
        ghost_base.append(base)
    for name in fields:
        ghost_data = [p.slice(name).copy_out() for p in sets]
        for r, pset in enumerate(sets):
            view = pset.slice(name)
            local = view.copy_out()
            dests = plan.export_dest[r]
            for dest in np.unique(dests):
                sel = dests == dest
                idx = plan.export_index[r][sel]
                base = ghost_base[int(dest)][r]
                count = int(sel.sum())
                np.add.at(local, idx, ghost_data[int(dest)][base : base + count])
            view.copy_in(local)
        # clear ghost contributions
        for r, pset in enumerate(sets):
            if pset.ghosts:
                view = pset.slice(name)
                full = view.copy_out()
                full[pset.owned :] = 0
                view.copy_in(full)
