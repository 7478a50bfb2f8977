"""Ewald electrostatics: a direct-sum oracle and smooth particle mesh Ewald.

Reduced units: Coulomb constant = 1. Systems must be charge neutral.
The direct sum converges independently of the splitting parameter alpha
given sufficient real and reciprocal cutoffs, which is the property the
SPME implementation is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import grid as gridmod
from .geometry import Box, cube
from .neighbors import VerletList, build_verlet

_SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class EwaldParams:
    alpha: float                # splitting parameter (inverse length)
    r_cut: float                # real-space cutoff
    k_max: int = 12             # reciprocal shells for the direct oracle
    mesh: int = 32              # SPME mesh points per axis
    spline_order: int = 3       # SPME spreading order (1 or 3)

    def __post_init__(self):
        if self.alpha <= 0 or self.r_cut <= 0:
            raise ValueError("alpha and r_cut must be positive")


def default_alpha(r_cut: float, target: float = 1e-8) -> float:
    """Splitting parameter making erfc(alpha * r_cut) <= target."""
    from scipy.special import erfcinv
    return float(erfcinv(target)) / r_cut


def _check_neutral(q: np.ndarray):
    if abs(q.sum()) > 1e-9 * np.abs(q).sum():
        raise ValueError("system is not charge neutral")


def _real_space(positions, q, L, alpha, r_cut, pairs=None):
    """erfc-screened pair sum; pairs as (i, j) half-list arrays or all pairs."""
    x = np.asarray(positions, dtype=np.float64)
    n = x.shape[0]
    if pairs is None:
        ii, jj = np.triu_indices(n, k=1)
    else:
        ii, jj = pairs
    dx = x[jj] - x[ii]
    dx -= L * np.round(dx / L)
    r2 = np.einsum("ij,ij->i", dx, dx)
    sel = r2 < r_cut * r_cut
    ii, jj, dx, r2 = ii[sel], jj[sel], dx[sel], r2[sel]
    r = np.sqrt(r2)
    if r.size and r.min() < 1e-10:
        raise ValueError("overlapping charges in real-space sum")
    qq = q[ii] * q[jj]
    energy = float(np.sum(qq * erfc(alpha * r) / r))
    # -dU/dr directed along dx
    mag = qq * (erfc(alpha * r) / r2 + 2 * alpha / _SQRT_PI * np.exp(-(alpha * r) ** 2) / r)
    fvec = (mag / r)[:, None] * dx
    forces = np.zeros_like(x)
    np.add.at(forces, jj, fvec)
    np.add.at(forces, ii, -fvec)
    return energy, forces


def ewald_direct(positions, q, box_length: float, params: EwaldParams):
    """Direct Ewald sum: real erfc pairs + reciprocal shell sum + self term.

    Returns (energy, forces). Oracle-grade: O(N^2) real space, explicit
    k-vector enumeration up to |m| <= k_max.
    """
    x = np.asarray(positions, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_neutral(q)
    L = float(box_length)
    V = L ** 3
    alpha = params.alpha

    e_real, f_real = _real_space(x, q, L, alpha, params.r_cut)

    m = np.arange(-params.k_max, params.k_max + 1)
    MX, MY, MZ = np.meshgrid(m, m, m, indexing="ij")
    M = np.stack([MX.ravel(), MY.ravel(), MZ.ravel()], axis=1)
    M = M[np.einsum("ij,ij->i", M, M) > 0]
    M = M[np.einsum("ij,ij->i", M, M) <= params.k_max ** 2]
    k = 2 * np.pi / L * M.astype(np.float64)
    k2 = np.einsum("ij,ij->i", k, k)
    gauss = np.exp(-k2 / (4 * alpha * alpha)) / k2
    phase = np.exp(1j * (k @ x.T))          # (nk, n)
    S = phase @ q                            # (nk,)
    e_recip = float(2 * np.pi / V * np.sum(gauss * np.abs(S) ** 2))
    # F_i = (4 pi / V) q_i sum_k gauss * k * Im(e^{i k r_i} conj(S))
    im = np.imag(phase * np.conj(S)[:, None])   # (nk, n)
    f_recip = (4 * np.pi / V) * q[:, None] * np.einsum("k,ka,ki->ia", gauss, k, im)

    e_self = -alpha / _SQRT_PI * float(np.sum(q * q))
    return e_real + e_recip + e_self, f_real + f_recip


def _bspline_modulus(order: int, mesh: int) -> np.ndarray:
    """|b(m)|^2 deconvolution factor for spreading order `order` (order+1 points)."""
    npts = order + 1
    if npts % 2:
        raise ValueError("SPME spreading requires an even point count (order 1 or 3)")
    # cardinal B-spline M_{npts} values at integers 1 .. npts-1, by recursion
    vals = np.array([1.0])  # M_2 at 1
    for n in range(3, npts + 1):
        prev = np.concatenate(([0.0], vals, [0.0]))  # M_{n-1} at 0 .. n-1
        x = np.arange(1, n)
        vals = (x * prev[1:] + (n - x) * prev[:-1]) / (n - 1)
    j = np.arange(npts - 1)
    mvec = np.arange(mesh)
    denom = np.abs(np.exp(2j * np.pi * np.outer(mvec, j) / mesh) @ vals) ** 2
    return 1.0 / denom


def spme(positions, q, box_length: float, params: EwaldParams,
         neighbor_list: VerletList | None = None):
    """Smooth particle mesh Ewald energy and forces.

    Real-space part over a Verlet half list; reciprocal part by spline
    charge spreading, FFT convolution with the Gaussian/|b|^2 kernel, and
    a gradient gather of the resulting mesh potential.
    """
    x = np.asarray(positions, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_neutral(q)
    L = float(box_length)
    V = L ** 3
    alpha = params.alpha
    n_mesh = int(params.mesh)
    order = int(params.spline_order)

    if neighbor_list is None:
        neighbor_list = build_verlet(x, cube(L), [True] * 3, params.r_cut,
                                     half_or_full="half")
    e_real, f_real = _real_space(x, q, L, alpha, params.r_cut,
                                 pairs=neighbor_list.pairs())

    g = gridmod.StructuredGrid([n_mesh] * 3, L, periodic=True)
    Q = g.scalar_field()
    gridmod.p2g(g, Q, x, q, order=order, op="value")
    Qk = np.fft.fftn(Q)

    mvec = np.fft.fftfreq(n_mesh, d=1.0 / n_mesh)
    KX, KY, KZ = np.meshgrid(*([2 * np.pi / L * mvec] * 3), indexing="ij")
    k2 = KX**2 + KY**2 + KZ**2
    b2 = _bspline_modulus(order, n_mesh)
    B2 = b2[:, None, None] * b2[None, :, None] * b2[None, None, :]
    theta = np.zeros_like(k2)
    nz = k2 > 0
    theta[nz] = 2 * np.pi / V * np.exp(-k2[nz] / (4 * alpha * alpha)) / k2[nz] * B2[nz]

    e_recip = float(np.sum(theta * np.abs(Qk) ** 2))
    phi_mesh = (n_mesh ** 3) * np.fft.ifftn(theta * Qk).real
    grad = gridmod.g2p(g, phi_mesh, x, order=order, op="gradient")
    f_recip = -2.0 * q[:, None] * grad
    # spline interpolation leaves an O(h^{order+1}) net force; remove it
    # uniformly so total momentum is conserved exactly
    f_recip -= f_recip.mean(axis=0)

    e_self = -alpha / _SQRT_PI * float(np.sum(q * q))
    return e_real + e_recip + e_self, f_real + f_recip
