"""Mini molecular dynamics: Lennard-Jones NVE with the decomposed timestep.

Each step runs the classic phase sequence: integrate (half kick + drift),
sort, migrate, halo exchange, neighbor build, force, final half kick.
Reduced LJ units (epsilon = sigma = m = 1 by default).

Deterministic mode contract: pair contributions are accumulated in
ascending (global id i, global id j) order using minimum-image
displacements of the owners' stored positions, and diagnostics are summed
in global id order. Any rank decomposition therefore reproduces the
single-rank energy series bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import aosoa, binning, decomp, neighbors
from .geometry import Box, cube

MD_SCHEMA = aosoa.schema(
    x=("float64", (3,)),      # wrapped position; ghosts carry the image shift
    x0=("float64", (3,)),     # owner's stored position (no shift), for physics
    v=("float64", (3,)),
    f=("float64", (3,)),
    id=("int64", ()),
)

# geometric margin so last-ulp effects cannot drop a true pair; the exact
# cutoff is re-applied canonically in the force kernel
_CUTOFF_MARGIN = 1.0 + 1e-9


@dataclass
class MDConfig:
    lattice_cells: int = 4           # FCC cells per axis; atoms = 4 * cells^3
    density: float = 0.8442          # reduced number density
    temperature: float = 0.8
    dt: float = 0.005
    steps: int = 100
    cutoff: float = 2.5
    skin: float = 0.0
    rebuild_stride: int = 1
    sort_stride: int = 0             # 0 disables locality sorting
    seed: int = 1
    vector_length: int = 16
    rank_dims: tuple = (1, 1, 1)
    epsilon: float = 1.0
    sigma: float = 1.0
    mass: float = 1.0

    def validate(self):
        if self.rebuild_stride > 1 and self.skin <= 0:
            raise ValueError("rebuild_stride > 1 requires a positive skin")
        if self.sort_stride and self.sort_stride % self.rebuild_stride:
            raise ValueError("sort_stride must be a multiple of rebuild_stride")
        for name in ("lattice_cells", "steps", "vector_length", "rebuild_stride"):
            if getattr(self, name) < 1 and name != "steps":
                raise ValueError(f"{name} must be >= 1")
        if self.dt <= 0 or self.cutoff <= 0 or self.density <= 0:
            raise ValueError("dt, cutoff and density must be positive")


def fcc_lattice(cells: int, spacing: float) -> np.ndarray:
    """4-atom FCC basis replicated cells^3 times."""
    basis = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    cell = np.arange(cells)
    CX, CY, CZ = np.meshgrid(cell, cell, cell, indexing="ij")
    corners = np.stack([CX.ravel(), CY.ravel(), CZ.ravel()], axis=1)
    pos = (corners[:, None, :] + basis[None, :, :]).reshape(-1, 3)
    return pos * spacing


def initial_velocities(n: int, temperature: float, mass: float, seed: int) -> np.ndarray:
    """Seeded Gaussian velocities, momentum-zeroed, rescaled to the target T."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v -= v.mean(axis=0)
    ke = 0.5 * mass * np.einsum("ij,ij->", v, v)
    target = 1.5 * n * temperature
    if ke > 0:
        v *= np.sqrt(target / ke)
    return v


def lj_pair(dx: np.ndarray, r2: np.ndarray, eps: float, sigma: float):
    """Pair energies and the force on particle i, for dx = x_j - x_i."""
    sr2 = sigma * sigma / r2
    sr6 = sr2 * sr2 * sr2
    sr12 = sr6 * sr6
    energy = 4.0 * eps * (sr12 - sr6)
    fmag = 24.0 * eps * (2.0 * sr12 - sr6) / r2
    return energy, -fmag[:, None] * dx


def lj_forces(x_phys: np.ndarray, ids: np.ndarray, owned: int,
              vlist: neighbors.VerletList, box: Box, periodic,
              eps: float, sigma: float, cutoff: float):
    """Canonical LJ force/energy for the first `owned` particles.

    Pairs are re-filtered with the exact minimum-image criterion and
    accumulated in ascending (gid_i, gid_j) order; the per-particle energy
    row i holds each pair once, on the smaller global id.
    Returns (forces (owned, 3), per-particle energies (owned,)).
    """
    ii, jj = vlist.pairs()
    sel = ii < owned
    ii, jj = ii[sel], jj[sel]
    order = np.lexsort((ids[jj], ids[ii]))
    ii, jj = ii[order], jj[order]
    dx = box.min_image(x_phys[jj] - x_phys[ii], periodic)
    r2 = np.einsum("ij,ij->i", dx, dx)
    keep = r2 < cutoff * cutoff
    ii, jj, dx, r2 = ii[keep], jj[keep], dx[keep], r2[keep]
    if r2.size and r2.min() < (1e-10 * sigma) ** 2:
        raise FloatingPointError("overlapping particles in LJ kernel")
    energy, fvec = lj_pair(dx, r2, eps, sigma)
    forces = np.zeros((owned, 3))
    np.add.at(forces, ii, fvec)
    pe = np.zeros(owned)
    half = ids[jj] > ids[ii]
    np.add.at(pe, ii[half], energy[half])
    return forces, pe


class MDDriver:
    """Owns the rank fabric, per-rank particle sets, and the step loop."""

    def __init__(self, cfg: MDConfig):
        cfg.validate()
        self.cfg = cfg
        a = (4.0 / cfg.density) ** (1.0 / 3.0)
        self.box = cube(cfg.lattice_cells * a)
        self.periodic = np.array([True, True, True])
        self.n = 4 * cfg.lattice_cells ** 3
        self.fabric = decomp.decompose(self.box, cfg.rank_dims, self.periodic)
        halo_w = (cfg.cutoff + cfg.skin) * _CUTOFF_MARGIN
        if halo_w > self.fabric.block_lengths.min():
            raise ValueError("cutoff + skin exceeds the local box edge for this rank grid")
        self.halo_width = halo_w

        x = fcc_lattice(cfg.lattice_cells, a)
        v = initial_velocities(self.n, cfg.temperature, cfg.mass, cfg.seed)
        self.sets = [aosoa.create(MD_SCHEMA, cfg.vector_length, 0)
                     for _ in range(self.fabric.n_ranks)]
        s0 = self.sets[0]
        s0.resize(self.n)
        s0.slice("x").copy_in(x)
        s0.slice("v").copy_in(v)
        s0.slice("id").copy_in(np.arange(self.n, dtype=np.int64))
        decomp.migrate(self.fabric, self.sets)
        self.plan = None
        self.vlists = None
        self._pe_rows = {}
        self.timings = {k: 0.0 for k in
                        ("integrate", "sort", "migrate", "halo", "neighbor", "force")}
        self._rebuild_and_force()

    # -- per-rank helpers ------------------------------------------------

    def _rank_arrays(self, rank: int):
        p = self.sets[rank]
        return (p.slice("x").copy_out(), p.slice("x0").copy_out(),
                p.slice("id").copy_out(), p.owned)

    def _rebuild_and_force(self):
        t0 = time.perf_counter()
        decomp.migrate(self.fabric, self.sets)
        self.timings["migrate"] += time.perf_counter() - t0
        for p in self.sets:
            xv = p.slice("x").copy_out()
            p.slice("x0").copy_in(xv)
        t0 = time.perf_counter()
        self.plan = decomp.build_halo(self.fabric, self.sets, self.halo_width)
        decomp.halo_gather(self.plan, self.sets, fields=["x0", "id"])
        self.timings["halo"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        # pair search on raw owner positions with global min-image: a single
        # ghost copy per (particle, rank) then covers every periodic image
        self.vlists = []
        search = (self.cfg.cutoff + self.cfg.skin) * _CUTOFF_MARGIN
        for r in range(self.fabric.n_ranks):
            xloc = self.sets[r].slice("x0").copy_out()
            self.vlists.append(neighbors.build_verlet(xloc, self.box,
                                                      self.periodic, search))
        self.timings["neighbor"] += time.perf_counter() - t0
        self._forces()

    def _refresh_ghosts_and_force(self):
        for p in self.sets:
            xv = p.slice("x").copy_out()
            xv[p.owned:] = 0.0
            p.slice("x0").copy_in(xv)
        t0 = time.perf_counter()
        decomp.halo_gather(self.plan, self.sets, fields=["x0", "id"])
        self.timings["halo"] += time.perf_counter() - t0
        self._forces()

    def _forces(self):
        t0 = time.perf_counter()
        cfg = self.cfg
        for r in range(self.fabric.n_ranks):
            p = self.sets[r]
            _, x0, ids, owned = self._rank_arrays(r)
            f, pe = lj_forces(x0, ids, owned, self.vlists[r], self.box,
                              self.periodic, cfg.epsilon, cfg.sigma, cfg.cutoff)
            fv = p.slice("f")
            full = np.zeros((p.size, 3))
            full[:owned] = f
            fv.copy_in(full)
            self._pe_rows[r] = pe
        self.timings["force"] += time.perf_counter() - t0

    # -- step loop --------------------------------------------------------

    def step(self, step_index: int):
        cfg = self.cfg
        dtm = 0.5 * cfg.dt / cfg.mass
        t0 = time.perf_counter()
        for p in self.sets:
            v = p.slice("v").copy_out()
            f = p.slice("f").copy_out()
            x = p.slice("x").copy_out()
            v[: p.owned] += dtm * f[: p.owned]
            x[: p.owned] += cfg.dt * v[: p.owned]
            p.slice("v").copy_in(v)
            p.slice("x").copy_in(self.box.wrap(x, self.periodic))
        self.timings["integrate"] += time.perf_counter() - t0

        if step_index % cfg.rebuild_stride == 0:
            # locality sort only on rebuild steps: reordering would stale
            # the cached halo plan and Verlet lists otherwise
            if cfg.sort_stride and step_index % cfg.sort_stride == 0:
                t0 = time.perf_counter()
                for r, p in enumerate(self.sets):
                    p.resize(p.owned)
                    p.ghosts = 0
                    if p.owned < 2:
                        continue
                    xs = self.box.wrap(p.slice("x").copy_out(), self.periodic)
                    cb = binning.bin_by_position(xs, self.box, cfg.cutoff)
                    binning.permute(p, cb.permutation)
                self.timings["sort"] += time.perf_counter() - t0
            self._rebuild_and_force()
        else:
            self._refresh_ghosts_and_force()

        t0 = time.perf_counter()
        for p in self.sets:
            v = p.slice("v").copy_out()
            f = p.slice("f").copy_out()
            v[: p.owned] += dtm * f[: p.owned]
            p.slice("v").copy_in(v)
        self.timings["integrate"] += time.perf_counter() - t0

    # -- diagnostics -------------------------------------------------------

    def diagnostics(self):
        """Global energies summed in global-id order (fabric independent)."""
        cfg = self.cfg
        ke_g = np.zeros(self.n)
        pe_g = np.zeros(self.n)
        mom_g = np.zeros((self.n, 3))
        for r, p in enumerate(self.sets):
            ids = p.slice("id").copy_out()[: p.owned]
            v = p.slice("v").copy_out()[: p.owned]
            ke_g[ids] = 0.5 * cfg.mass * np.einsum("ij,ij->i", v, v)
            mom_g[ids] = cfg.mass * v
            pe_g[ids] = self._pe_rows[r]
        ke = float(np.sum(ke_g))
        pe = float(np.sum(pe_g))
        return {"KE": ke, "PE": pe, "E_total": ke + pe,
                "temperature": 2.0 * ke / (3.0 * self.n),
                "momentum": mom_g.sum(axis=0)}

    def gather_state(self):
        """Positions and velocities in global-id order."""
        x = np.zeros((self.n, 3))
        v = np.zeros((self.n, 3))
        for p in self.sets:
            ids = p.slice("id").copy_out()[: p.owned]
            x[ids] = p.slice("x").copy_out()[: p.owned]
            v[ids] = p.slice("v").copy_out()[: p.owned]
        return x, v

    def negate_velocities(self):
        for p in self.sets:
            view = p.slice("v")
            view.copy_in(-view.copy_out())


def run_md(cfg: MDConfig):
    """Run the NVE loop; returns (per-step diagnostic rows, phase timings)."""
    drv = MDDriver(cfg)
    # reset phase timers accumulated during setup
    drv.timings = {k: 0.0 for k in drv.timings}
    rows = [dict(step=0, **{k: v for k, v in drv.diagnostics().items()
                            if k != "momentum"})]
    for s in range(1, cfg.steps + 1):
        drv.step(s)
        d = drv.diagnostics()
        rows.append(dict(step=s, KE=d["KE"], PE=d["PE"], E_total=d["E_total"],
                         temperature=d["temperature"]))
    return rows, dict(drv.timings)
