"""Acceptance suite: one test (one pass/fail line under pytest -v) per
criterion, each asserting the stated tolerances and printing the measured
numbers."""

import itertools
import json
import time

import numpy as np
import pytest

from particula import cli, decomp, grid as gm, longrange as lr, md, neighbors, pfft, pic
from particula.geometry import cube


def report(num, detail):
    print(f"\n[criterion {num:2d}] {detail}")


# -- 1: neighbor lists vs O(N^2) oracle -----------------------------------------

def test_criterion_01_neighbor_list_oracle_equivalence():
    t0 = time.perf_counter()
    n = 1000
    L = 1.0
    box = cube(L)
    # cutoff chosen for a mean neighbor count near 30
    r_c = (30 * 3 / (4 * np.pi * n)) ** (1 / 3)
    mean_counts = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.random((n, 3))
        dx = x[:, None, :] - x[None, :, :]
        dx -= L * np.round(dx / L)
        r2 = np.einsum("ijk,ijk->ij", dx, dx)
        np.fill_diagonal(r2, np.inf)
        full_sets = [np.flatnonzero(r2[i] < r_c * r_c) for i in range(n)]
        mean_counts.append(np.mean([s.size for s in full_sets]))
        for layout in ("dense", "compressed"):
            for conv in ("half", "full"):
                vl = neighbors.build_verlet(x, box, [True] * 3, r_c,
                                            layout=layout, half_or_full=conv)
                for i in range(n):
                    want = full_sets[i] if conv == "full" else \
                        full_sets[i][full_sets[i] > i]
                    assert np.array_equal(np.sort(vl.neighbors(i)), want)
    dt = time.perf_counter() - t0
    report(1, f"4 list variants == oracle over 20 seeds, mean count "
              f"{np.mean(mean_counts):.1f}, {dt:.1f}s")
    assert dt < 10.0


# -- 2: layout transparency through the CLI --------------------------------------

def test_criterion_02_layout_transparency(tmp_path):
    t0 = time.perf_counter()
    n_md = 4 * 4 ** 3      # AoS (V=1) through degenerate SoA (V >= capacity)
    for sub, base, vs in (
            ("md", ["--steps", "10", "--lattice-cells", "4",
                    "--density", "1.1", "--cutoff", "2.3"], [1, 4, 8, 16, n_md]),
            ("pic", ["--steps", "10", "--particles", "1024",
                     "--grid-cells", "16"], [1, 4, 8, 16, 1024])):
        outs = []
        for v in vs:
            p = tmp_path / f"{sub}_{v}.csv"
            assert cli.main([sub] + base + ["--vector-length", str(v),
                                            "--output", str(p)]) == 0
            # compare physics rows; the '#' echo differs by vector_length
            outs.append(p.read_bytes().split(b"\n", 1)[1])
        assert all(o == outs[0] for o in outs)
    dt = time.perf_counter() - t0
    report(2, f"md+pic physics CSVs bitwise identical for V in "
              f"{{1,4,8,16,SoA}}, {dt:.1f}s")
    assert dt < 30.0


# -- 3: serial vs distributed MD --------------------------------------------------

def test_criterion_03_serial_distributed_equivalence():
    t0 = time.perf_counter()
    def series(ranks):
        rows, _ = md.run_md(md.MDConfig(lattice_cells=4, density=1.1,
                                        cutoff=2.3, seed=2, steps=200,
                                        rank_dims=ranks))
        return [(r["KE"], r["PE"], r["E_total"]) for r in rows]
    ref = series((1, 1, 1))
    assert series((2, 1, 1)) == ref
    assert series((2, 2, 2)) == ref
    dt = time.perf_counter() - t0
    report(3, f"2x1x1 and 2x2x2 fabrics bitwise-match the 1-rank energy "
              f"series (256 atoms, 200 steps), {dt:.1f}s")
    assert dt < 60.0


# -- 4: NVE drift and time reversal ------------------------------------------------

def test_criterion_04_nve_energy_drift_and_reversal():
    t0 = time.perf_counter()
    cfg = md.MDConfig(lattice_cells=4, density=1.1, cutoff=2.3, seed=2,
                      dt=0.005, steps=1000)
    rows, _ = md.run_md(cfg)
    e0 = rows[0]["E_total"]
    drift = abs(rows[-1]["E_total"] - e0) / abs(e0)
    assert drift < 1e-4

    drv = md.MDDriver(md.MDConfig(lattice_cells=4, density=1.1, cutoff=2.3,
                                  seed=2, dt=0.005, steps=0))
    x0, v0 = drv.gather_state()
    for s in range(1, 101):
        drv.step(s)
    drv.negate_velocities()
    for s in range(101, 201):
        drv.step(s)
    x1, _ = drv.gather_state()
    dx = x1 - x0
    box = drv.box.lengths
    dx -= box * np.round(dx / box)
    ret = np.max(np.abs(dx))
    assert ret < 1e-6       # sigma = 1
    dt = time.perf_counter() - t0
    report(4, f"1000-step drift {drift:.3e} < 1e-4; 100+100 reversal return "
              f"{ret:.2e} sigma, {dt:.1f}s")
    assert dt < 60.0


# -- 5: SPME vs direct Ewald --------------------------------------------------------

def test_criterion_05_spme_vs_direct_ewald():
    t0 = time.perf_counter()
    L = 6.0
    n = 64
    q = np.tile([1.0, -1.0], n // 2)
    params = lr.EwaldParams(alpha=lr.default_alpha(2.9), r_cut=2.9, k_max=14,
                            mesh=128, spline_order=3)
    max_f = 0.0
    max_e = 0.0
    for seed in range(10):
        x = np.random.default_rng(seed).random((n, 3)) * L
        e0, f0 = lr.ewald_direct(x, q, L, params)
        e1, f1 = lr.spme(x, q, L, params)
        max_e = max(max_e, abs(e1 - e0) / abs(e0))
        max_f = max(max_f, float(np.abs(f1 - f0).max()))
    assert max_e < 1e-4 and max_f < 1e-4

    # force-energy finite-difference consistency of the SPME surface itself
    x = np.random.default_rng(0).random((n, 3)) * L
    _, f = lr.spme(x, q, L, params)
    eps = 1e-5
    fd_err = 0.0
    for (i, a) in ((0, 0), (1, 1), (2, 2)):
        xp = x.copy(); xp[i, a] += eps
        xm = x.copy(); xm[i, a] -= eps
        ep, _ = lr.spme(xp, q, L, params)
        em, _ = lr.spme(xm, q, L, params)
        fd_err = max(fd_err, abs(f[i, a] + (ep - em) / (2 * eps)))
    assert fd_err < 1e-5

    # frozen rock-salt Madelung energy, direct oracle at tight cutoffs
    pts = np.array(list(itertools.product([0.0, 0.5], repeat=3)))
    qs = np.array([(-1.0) ** round(2 * (u + v + w)) for u, v, w in pts])
    mp = lr.EwaldParams(alpha=lr.default_alpha(0.45), r_cut=0.45, k_max=16)
    e_mad, _ = lr.ewald_direct(pts, qs, 1.0, mp)
    assert abs(e_mad - (-13.980516757065)) < 1e-6 * 13.980516757065
    dt = time.perf_counter() - t0
    report(5, f"10 configs: energy rel {max_e:.2e}, force {max_f:.2e}, FD "
              f"{fd_err:.2e}; Madelung {e_mad:.9f}, {dt:.1f}s")
    assert dt < 120.0


# -- 6: distributed FFT ---------------------------------------------------------------

def test_criterion_06_distributed_fft():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    g = rng.standard_normal((32, 32, 32)) + 1j * rng.standard_normal((32, 32, 32))
    ref = pfft.dft3_reference(g, "forward")
    scale = np.max(np.abs(ref))
    for rd in ((1, 1, 1), (2, 2, 2), (4, 2, 1)):
        fab = decomp.decompose(cube(1.0), rd, [True] * 3)
        plan = pfft.make_pencil_plan(fab, g.shape)
        blocks = pfft.scatter_to_layout(plan, g, "brick")
        fwd = pfft.fft3_distributed(plan, blocks, "forward")
        out = pfft.gather_from_layout(plan, fwd, "brick")
        assert np.max(np.abs(out - ref)) < 1e-10 * scale
        back = pfft.gather_from_layout(
            plan, pfft.fft3_distributed(plan, fwd, "backward"), "brick")
        assert np.max(np.abs(back - g)) < 1e-10
        par = abs(np.sum(np.abs(out) ** 2) / g.size - np.sum(np.abs(g) ** 2))
        assert par < 1e-12 * np.sum(np.abs(g) ** 2)

    # message-pair table: enumeration values and the cube-root trend
    table = {}
    for rd in ((1, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4)):
        fab = decomp.decompose(cube(1.0), rd, [True] * 3)
        plan = pfft.make_pencil_plan(fab, (32, 32, 32))
        counts = pfft.message_pair_count(plan)
        n_r = int(np.prod(rd))
        table[n_r] = max(counts[f"brick<->pencil_{a}"] for a in "xyz")
    assert table == {1: 0, 8: 12, 27: 72, 64: 252}
    for n_r in (8, 27, 64):
        per_rank = table[n_r] / n_r
        assert 0.5 * n_r ** (1 / 3) <= per_rank <= 1.1 * n_r ** (1 / 3)
    dt = time.perf_counter() - t0
    report(6, f"3 fabrics match reference DFT; pair table {table} tracks "
              f"n_R^(1/3), {dt:.1f}s")
    assert dt < 120.0


# -- 7: Boris pusher ---------------------------------------------------------------------

def test_criterion_07_boris_pusher():
    t0 = time.perf_counter()
    x = np.zeros((1, 3))
    v = np.array([[1.0, 0.0, 0.0]])
    B = np.array([0.0, 0.0, 1.0])
    one = np.ones(1)
    dt = 0.01               # Omega_c dt = 0.01
    worst = 0.0
    phase = [0.0]
    prev = 0.0
    for _ in range(10000):
        x, v = pic.boris_push(x, v, np.zeros((1, 3)), B, dt, one, one)
        worst = max(worst, abs(np.linalg.norm(v[0]) - 1.0))
        a = np.arctan2(v[0, 1], v[0, 0])
        phase.append(phase[-1] + np.mod(a - prev + np.pi, 2 * np.pi) - np.pi)
        prev = a
    assert worst < 5e-15    # |v| at machine epsilon, every step
    p = np.abs(np.array(phase))
    k = int(np.searchsorted(p, 2 * np.pi))
    frac = (2 * np.pi - p[k - 1]) / (p[k] - p[k - 1])
    period_err = abs((k - 1 + frac) * dt - 2 * np.pi) / (2 * np.pi)
    assert period_err < 1e-3
    el = time.perf_counter() - t0
    report(7, f"|v| error {worst:.1e} over 1e4 steps; gyro-period error "
              f"{period_err:.2e}, {el:.1f}s")


# -- 8: implicit energy conservation ---------------------------------------------------------

def test_criterion_08_implicit_energy_conservation():
    t0 = time.perf_counter()
    dt = 10.0               # 5x the explicit stability limit 2/omega_p
    steps = 500
    state = pic.perturbed_beam(64, 10 ** 5, dt=dt)
    rho = pic.deposit_rho(state)
    phi, _ = pic.solve_fields(state, rho)
    e0 = pic.kinetic_energy(state) + pic.field_energy(state, rho, phi)
    drift = 0.0
    iters = 0
    for _ in range(steps):
        out = pic.cn_implicit_step(state, picard_tol=1e-13)
        drift = max(drift, abs(out["E_total"] - e0) / abs(e0))
        iters = max(iters, out["iterations"])
    assert drift < 1e-10

    # contrast: the explicit step at the same dt is violently unstable
    ex = pic.perturbed_beam(64, 10 ** 5, dt=dt)
    ex_drift = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            out = pic.es_explicit_step(ex)
            if not np.isfinite(out["E_total"]):
                break
            ex_drift = max(ex_drift, abs(out["E_total"] - e0) / abs(e0))
            if ex_drift > 1e6 * max(drift, 1e-12):
                break       # contrast established beyond any doubt
    assert ex_drift >= 100 * drift
    el = time.perf_counter() - t0
    report(8, f"implicit |dE/E0| {drift:.2e} < 1e-10 over 500 steps "
              f"(<= {iters} Picard iters); explicit drift {ex_drift:.2e} "
              f"({ex_drift / max(drift, 1e-300):.1e}x), {el:.0f}s")
    assert el < 300.0


# -- 9: SGCT noise reduction --------------------------------------------------------------------

def test_criterion_09_sgct_noise_reduction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    x = rng.random((10 ** 6, 2))
    q = 1e-6
    ratios = {}
    for n in (4, 5, 6):
        cfg = pic.SGCTConfig(level=n)
        combined, info = pic.sgct_deposit(x, q, cfg)
        dense = pic.dense_deposit(x, q, cfg)
        vs, vd = float(np.var(combined)), float(np.var(dense))
        assert vs < vd
        for _i, _j, _c, mass in info:
            assert abs(mass - 1.0) < 1e-12      # exact mass per component
        ratios[n] = vs / vd
    assert ratios[5] < ratios[4] and ratios[6] < ratios[5]
    el = time.perf_counter() - t0
    report(9, "variance ratios " +
              ", ".join(f"n={n}: {r:.3f}" for n, r in ratios.items()) +
              f" (monotone decreasing), {el:.0f}s")
    assert el < 180.0


# -- 10: interpolation suite -----------------------------------------------------------------------

def test_criterion_10_interpolation_suite():
    t0 = time.perf_counter()
    g = gm.StructuredGrid([12, 10, 14], [1.2, 1.0, 1.4], periodic=True)
    rng = np.random.default_rng(3)
    x = rng.random((10 ** 4, 3)) * [1.2, 1.0, 1.4]
    h = float(g.spacing.min())
    for order in (1, 2, 3):
        ones = np.ones(tuple(g.nodes))
        pou = np.max(np.abs(gm.g2p(g, ones, x, order=order) - 1.0))
        assert pou < 1e-14
        gz = np.max(np.abs(gm.g2p(g, ones, x, order=order, op="gradient")))
        assert gz < 1e-12 / h
        # affine exactness in the interior
        coords = g.node_coords()
        X, Y, Z = np.meshgrid(*coords, indexing="ij")
        a = np.array([0.4, -0.9, 1.3])
        field = 0.2 + a[0] * X + a[1] * Y + a[2] * Z
        xin = 0.3 + 0.4 * rng.random((2000, 3))
        vals = gm.g2p(g, field, xin, order=order)
        assert np.max(np.abs(vals - (0.2 + xin @ a))) < 1e-12
        # adjointness and charge conservation
        v = rng.standard_normal(x.shape[0])
        u = rng.standard_normal(tuple(g.nodes))
        f = g.scalar_field()
        gm.p2g(g, f, x, v, order=order)
        assert abs(float(np.sum(u * f)) - float(gm.g2p(g, u, x, order=order) @ v)) \
            < 1e-12 * max(1.0, abs(float(np.sum(u * f))))
        assert abs(f.sum() - v.sum()) < 1e-12 * max(1.0, abs(v.sum()))
    el = time.perf_counter() - t0
    report(10, f"partition of unity, gradient-sum-zero, affine exactness, "
               f"adjointness, charge conservation: orders 1-3, {el:.1f}s")
    assert el < 10.0


# -- 11: CLI contract -------------------------------------------------------------------------------

def test_criterion_11_cli_contract(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"steps": 5, "lattice_sells": 4}))
    assert cli.main(["md", "--config", str(bad)]) == 2
    assert "lattice_sells" in capsys.readouterr().err
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["md", "--steps", "5", "--lattice-cells", "3", "--density", "1.1",
            "--cutoff", "2.0", "--seed", "9"]
    assert cli.main(args + ["--output", str(a)]) == 0
    assert cli.main(args + ["--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report(11, "unknown key exits 2 naming the key; seeded runs byte-identical")
