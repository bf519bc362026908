"""Coefficient fields y = (uhat, vhat) on truncated Z^{d+nu} and the map F.

Fields are dense real arrays over an origin-centred box with axes
``(j_1..j_d, n_1..n_nu)``.  ``convolve_n`` acts on the n axes only and
drops terms whose index leaves the box; ``eval_F`` treats y as zero
outside its box and keeps every remaining term.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .disorder import DisorderRealization
from .lattice import Box, Dims, l1_norms

_CHUNK = 4_000_000
_FIT_FLOOR = 1e-300


@lru_cache(maxsize=32)
def _diff_table(n_radii: tuple[int, ...]) -> np.ndarray:
    """``table[a, b]`` = flat index of n_a - n_b in the n-box, or K if outside."""
    nbox = Box((0,) * len(n_radii), n_radii)
    grid = nbox.sites()
    # flat index must follow C order of the n axes, which Box.sites gives for nu=0
    diff = grid[:, None, :] - grid[None, :, :]
    inside = np.all(np.abs(diff) <= np.asarray(n_radii), axis=-1)
    shape = np.asarray(nbox.shape)
    flat = np.ravel_multi_index(tuple(np.moveaxis(np.where(inside[..., None], diff, 0) + np.asarray(n_radii), -1, 0)), tuple(shape))
    table = np.where(inside, flat, len(grid))
    table.setflags(write=False)
    return table


def convolve_n(x: np.ndarray, z: np.ndarray, nu: int) -> np.ndarray:
    """``out(j, n) = sum_m x(j, m) z(j, n - m)`` over the box, pointwise in j.

    The last ``nu`` axes are frequency axes and must have odd extents
    (origin-centred).  Each output is a sum of the sorted products, so the
    result is a function of the multiset of products: convolution is
    exactly commutative and mirror symmetries survive bit-for-bit.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"mismatched grids {x.shape} vs {z.shape}")
    nshape = x.shape[x.ndim - nu:]
    if any(s % 2 == 0 for s in nshape):
        raise ValueError("frequency axes must be origin-centred (odd extent)")
    table = _diff_table(tuple((s - 1) // 2 for s in nshape))
    k = table.shape[0]
    x2 = x.reshape(-1, k)
    z2 = np.concatenate([z.reshape(-1, k), np.zeros((x2.shape[0], 1))], axis=1)
    out = np.empty_like(x2)
    rows = max(1, _CHUNK // (k * k))
    live = np.flatnonzero(np.any(x2 != 0, axis=1) & np.any(z2 != 0, axis=1))
    out[:] = 0.0
    for start in range(0, len(live), rows):
        sel = live[start:start + rows]
        prod = x2[sel, None, :] * z2[sel][:, table]
        prod.sort(axis=-1)
        out[sel] = prod.sum(axis=-1)
    return out.reshape(x.shape)


def convolve_power(w: np.ndarray, p: int, nu: int) -> np.ndarray:
    """p-fold self convolution ``w * w * ... * w`` (left to right)."""
    if p < 1:
        raise ValueError("p must be positive")
    out = w
    for _ in range(p - 1):
        out = convolve_n(out, w, nu)
    return out


def laplacian(a: np.ndarray, d: int) -> np.ndarray:
    """Nearest-neighbour sum over the first ``d`` axes with zero padding."""
    out = np.zeros_like(a)
    for ax in range(d):
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out[tuple(lo)] += a[tuple(hi)]
        out[tuple(hi)] += a[tuple(lo)]
    return out


@dataclass(frozen=True)
class Frequencies:
    omega: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.omega, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("frequencies must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @property
    def nu(self) -> int:
        return len(self.omega)


@dataclass
class CoeffField:
    """The doubled coefficient vector y = (uhat, vhat) on a box in Z^{d+nu}.

    ``resonant`` lists the spatial sites j_k; the pinned sets are
    S = {(j_k, -e_k)} for uhat and -S = {(j_k, e_k)} for vhat.
    """

    dims: Dims
    box: Box
    uhat: np.ndarray
    vhat: np.ndarray
    p: int
    amplitudes: np.ndarray
    resonant: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if self.box.nu != self.dims.nu or self.box.dim != self.dims.total:
            raise ValueError("box does not match dims")
        if any(c != 0 for c in self.box.center):
            raise ValueError("coefficient boxes must be origin-centred")
        self.uhat = np.asarray(self.uhat, dtype=float)
        self.vhat = np.asarray(self.vhat, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        self.resonant = tuple(tuple(int(c) for c in j) for j in self.resonant)
        if self.uhat.shape != self.box.shape or self.vhat.shape != self.box.shape:
            raise ValueError("component shapes must equal the box shape")
        if len(self.amplitudes) != self.dims.nu or len(self.resonant) != self.dims.nu:
            raise ValueError("need one amplitude and one resonant site per frequency")
        if self.p < 1:
            raise ValueError("p must be a positive integer")

    # ---- construction -------------------------------------------------
    @classmethod
    def initial(
        cls,
        dims: Dims,
        box: Box,
        p: int,
        amplitudes: Sequence[float],
        resonant: Sequence[Sequence[int]],
    ) -> "CoeffField":
        """The unperturbed y_0: uhat = a_k at (j_k, -e_k), vhat = a_k at (j_k, e_k)."""
        z = np.zeros(box.shape)
        f = cls(dims, box, z, z.copy(), p, np.asarray(amplitudes, float), tuple(map(tuple, resonant)))
        if not np.all(box.contains(f.pinned_sites("u"))):
            raise ValueError("box does not contain the resonant set")
        f.uhat[box.array_index(f.pinned_sites("u"))] = f.amplitudes
        f.vhat[box.array_index(f.pinned_sites("v"))] = f.amplitudes
        return f

    def copy(self) -> "CoeffField":
        return CoeffField(self.dims, self.box, self.uhat.copy(), self.vhat.copy(), self.p, self.amplitudes.copy(), self.resonant)

    def with_components(self, uhat: np.ndarray, vhat: np.ndarray) -> "CoeffField":
        return CoeffField(self.dims, self.box, uhat, vhat, self.p, self.amplitudes.copy(), self.resonant)

    def padded(self, box: Box) -> "CoeffField":
        """Embed into a larger origin-centred box (zero extension)."""
        if not box.contains_box(self.box):
            raise ValueError("target box must contain the current box")
        u = np.zeros(box.shape)
        v = np.zeros(box.shape)
        sl = tuple(slice(R - r, R + r + 1) for R, r in zip(box.radii, self.box.radii))
        u[sl] = self.uhat
        v[sl] = self.vhat
        return CoeffField(self.dims, box, u, v, self.p, self.amplitudes.copy(), self.resonant)

    def restricted(self, box: Box) -> "CoeffField":
        if not self.box.contains_box(box):
            raise ValueError("target box must lie inside the current box")
        sl = tuple(slice(R - r, R + r + 1) for R, r in zip(self.box.radii, box.radii))
        return CoeffField(self.dims, box, self.uhat[sl].copy(), self.vhat[sl].copy(), self.p, self.amplitudes.copy(), self.resonant)

    # ---- resonant set -------------------------------------------------
    def pinned_sites(self, which: str = "u") -> np.ndarray:
        """Coordinates of S (``"u"``) or -S (``"v"``)."""
        sign = -1 if which == "u" else 1
        e = np.eye(self.dims.nu, dtype=np.int64) * sign
        return np.array([list(j) + list(e[k]) for k, j in enumerate(self.resonant)], dtype=np.int64)

    def free_mask(self) -> np.ndarray:
        """True off S u -S (the P-equation index set)."""
        mask = np.ones(self.box.shape, dtype=bool)
        for which in ("u", "v"):
            mask[self.box.array_index(self.pinned_sites(which))] = False
        return mask

    def pinning_error(self) -> float:
        u = self.uhat[self.box.array_index(self.pinned_sites("u"))]
        v = self.vhat[self.box.array_index(self.pinned_sites("v"))]
        return float(max(np.max(np.abs(u - self.amplitudes)), np.max(np.abs(v - self.amplitudes))))

    def symmetry_error(self) -> float:
        """max |vhat(j, n) - uhat(j, -n)|."""
        flipped = np.flip(self.uhat, axis=tuple(range(self.dims.d, self.dims.total)))
        return float(np.max(np.abs(self.vhat - flipped)))

    def site_norms(self) -> np.ndarray:
        return l1_norms(self.box.sites()).reshape(-1)

    def l1_grid(self) -> np.ndarray:
        """|k|_1 for every array cell."""
        axes = np.meshgrid(*[np.abs(np.arange(-r, r + 1)) for r in self.box.radii], indexing="ij")
        return np.sum(axes, axis=0)

    def support_radius(self) -> int:
        """Smallest sup-norm radius containing the nonzero entries."""
        nz = (self.uhat != 0) | (self.vhat != 0)
        if not nz.any():
            return 0
        idx = np.argwhere(nz)
        return int(np.max(np.abs(idx - np.asarray(self.box.radii))))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.uhat**2) + np.sum(self.vhat**2)))

    def dump(self) -> str:
        """Text table ``j, n, uhat, vhat`` in canonical site order."""
        buf = io.StringIO()
        buf.write(f"# p = {self.p}\n# amplitudes = {' '.join(repr(float(a)) for a in self.amplitudes)}\n")
        buf.write(f"# resonant = {'; '.join(' '.join(map(str, j)) for j in self.resonant)}\n")
        cols = [f"j{i + 1}" for i in range(self.dims.d)] + [f"n{i + 1}" for i in range(self.dims.nu)]
        buf.write(",".join(cols + ["uhat", "vhat"]) + "\n")
        sites = self.box.sites()
        idx = self.box.array_index(sites)
        for s, u, v in zip(sites, self.uhat[idx], self.vhat[idx]):
            buf.write(",".join([str(int(c)) for c in s] + [repr(float(u)), repr(float(v))]) + "\n")
        return buf.getvalue()


def load_field(text: str, dims: Dims) -> CoeffField:
    """Inverse of :meth:`CoeffField.dump`."""
    meta: dict[str, str] = {}
    rows = []
    header = False
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        elif line.strip():
            if not header:
                header = True
                continue
            rows.append(line.split(","))
    coords = np.array([[int(c) for c in r[: dims.total]] for r in rows])
    radii = tuple(int(r) for r in np.max(np.abs(coords), axis=0))
    box = Box((0,) * dims.total, radii, dims.nu)
    u = np.zeros(box.shape)
    v = np.zeros(box.shape)
    idx = box.array_index(coords)
    u[idx] = [float(r[dims.total]) for r in rows]
    v[idx] = [float(r[dims.total + 1]) for r in rows]
    amps = [float(a) for a in meta["amplitudes"].split()]
    res = [tuple(int(c) for c in part.split()) for part in meta["resonant"].split(";")]
    return CoeffField(dims, box, u, v, int(meta["p"]), np.array(amps), tuple(res))


def n_dot_omega(box: Box, omega: Frequencies) -> np.ndarray:
    """Array of n . omega over the box (broadcast along spatial axes)."""
    d = box.d
    out = np.zeros(box.shape)
    for k in range(box.nu):
        shape = [1] * box.dim
        shape[d + k] = box.shape[d + k]
        n = np.arange(-box.radii[d + k], box.radii[d + k] + 1).reshape(shape)
        out = out + n * omega.omega[k]
    return out


def potential_grid(y: CoeffField, pot: DisorderRealization) -> np.ndarray:
    """V_j broadcast over the box of ``y``."""
    sbox = y.box.spatial()
    if not pot.covers(sbox):
        raise ValueError("potential does not cover the spatial projection of the box")
    sl = tuple(slice(r0 - pot.box.center[i] - r, r0 - pot.box.center[i] + r + 1)
               for i, (r0, r) in enumerate(zip(pot.box.radii, sbox.radii)))
    v = pot.values[sl]
    return v.reshape(v.shape + (1,) * y.dims.nu)


def n_support_radius(y: CoeffField) -> int:
    """Largest |n_i| carrying a nonzero coefficient."""
    nz = (y.uhat != 0) | (y.vhat != 0)
    if not nz.any():
        return 0
    idx = np.argwhere(nz)[:, y.dims.d:]
    return int(np.max(np.abs(idx - np.asarray(y.box.radii[y.dims.d:]))))


def exact_padding(y: CoeffField) -> CoeffField:
    """Copy of ``y`` padded along n so that no convolution term is dropped.

    Every intermediate product of the p-fold nonlinearity is supported in
    |n| <= 2p s (s the n-support radius), so padding to that radius makes
    the truncated sums equal to the untruncated ones for a field that
    vanishes outside its box.
    """
    d = y.dims.d
    need = 2 * y.p * n_support_radius(y)
    radii = y.box.radii[:d] + tuple(max(r, need) for r in y.box.radii[d:])
    if radii == y.box.radii:
        return y
    return y.padded(Box((0,) * y.dims.total, radii, y.dims.nu))


def nonlinear_terms(y: CoeffField) -> tuple[np.ndarray, np.ndarray]:
    """``((u*v)^{*p} * u, (u*v)^{*p} * v)`` on the box of ``y``.

    ``y`` is taken to vanish outside its box; the sums are otherwise
    complete.
    """
    nu = y.dims.nu
    big = exact_padding(y)
    w = convolve_power(convolve_n(big.uhat, big.vhat, nu), y.p, nu)
    out_u, out_v = convolve_n(w, big.uhat, nu), convolve_n(w, big.vhat, nu)
    if big is y:
        return out_u, out_v
    sl = tuple(slice(R - r, R + r + 1) for R, r in zip(big.box.radii, y.box.radii))
    return out_u[sl], out_v[sl]


def eval_F(
    y: CoeffField,
    omega: Frequencies,
    eps: float,
    delta: float,
    pot: DisorderRealization,
) -> tuple[np.ndarray, np.ndarray]:
    """Both components of the doubled P-system on the whole box.

    Entries on S u -S are computed too (the Q-equations read them); use
    :func:`residual_norm` for the P-residual.
    """
    nw = n_dot_omega(y.box, omega)
    vj = potential_grid(y, pot)
    d = y.dims.d
    f1 = (nw + vj) * y.uhat + eps * laplacian(y.uhat, d)
    f2 = (vj - nw) * y.vhat + eps * laplacian(y.vhat, d)
    if delta != 0.0:
        nu_u, nu_v = nonlinear_terms(y)
        f1 = f1 + delta * nu_u
        f2 = f2 + delta * nu_v
    return f1, f2


def residual_norm(y: CoeffField, F: tuple[np.ndarray, np.ndarray]) -> float:
    """l2 norm of F off S u -S."""
    mask = y.free_mask()
    return float(np.sqrt(np.sum(F[0][mask] ** 2) + np.sum(F[1][mask] ** 2)))


def reconstruct_u(y: CoeffField, omega: Frequencies, site: Sequence[int], t) -> np.ndarray | complex:
    """``sum_n uhat(site, n) exp(i n.omega t)``; vectorised over ``t``."""
    j = np.asarray(site, dtype=np.int64)
    sbox = y.box.spatial()
    if not sbox.contains(j):
        return 0j if np.ndim(t) == 0 else np.zeros(np.shape(t), complex)
    coeffs = y.uhat[sbox.array_index(j[None, :])][0]
    nbox = Box((0,) * y.dims.nu, y.box.radii[y.dims.d:])
    ns = nbox.sites()
    c = coeffs[nbox.array_index(ns)]
    keep = c != 0
    phase = ns[keep] @ omega.omega
    tt = np.asarray(t, dtype=float)
    out = np.exp(1j * np.multiply.outer(tt, phase)) @ c[keep].astype(complex)
    return complex(out) if np.ndim(t) == 0 else out


def reconstruct_field(y: CoeffField, omega: Frequencies, times) -> np.ndarray:
    """Spatial field u(., t) at each time; shape (len(times),) + spatial shape."""
    d = y.dims.d
    nbox = Box((0,) * y.dims.nu, y.box.radii[d:])
    ns = nbox.sites()
    c = y.uhat.reshape(y.box.spatial().shape + (-1,))
    # reshape flattens n axes in C order, which matches nbox.sites() order
    phases = np.exp(1j * np.multiply.outer(np.asarray(times, float), ns @ omega.omega))
    return np.tensordot(phases, c, axes=([1], [c.ndim - 1])).reshape((len(phases),) + y.box.spatial().shape)


@dataclass(frozen=True)
class DecayFit:
    alpha: float
    max_violation: float
    n_points: int = 0
    intercept: float = 0.0


def decay_fit(y: CoeffField, min_norm: int | None = None) -> DecayFit:
    """Exponential decay rate of |y(k)| in |k|_1, off S u -S.

    ``alpha`` is the least-squares slope of -log|y(k)| against |k| over the
    entries with |k| > min_norm (default d + nu) and |y| > 1e-300;
    ``max_violation`` is max(|y(k)| e^{alpha |k|} - 1, 0) over all free
    entries.  No usable entries gives ``alpha = inf``.
    """
    min_norm = y.dims.total if min_norm is None else min_norm
    mask = y.free_mask()
    k = y.l1_grid()
    ks, vals = [], []
    for comp in (y.uhat, y.vhat):
        a = np.abs(comp)
        sel = mask & (a > _FIT_FLOOR)
        ks.append(k[sel])
        vals.append(a[sel])
    kk = np.concatenate(ks)
    vv = np.concatenate(vals)
    if kk.size == 0:
        return DecayFit(np.inf, 0.0, 0)
    fit_sel = kk > min_norm
    if np.count_nonzero(fit_sel) < 2 or np.unique(kk[fit_sel]).size < 2:
        return DecayFit(np.inf, 0.0, int(np.count_nonzero(fit_sel)))
    slope, icpt = np.polyfit(kk[fit_sel].astype(float), -np.log(vv[fit_sel]), 1)
    viol = np.max(vv * np.exp(slope * kk) - 1.0)
    return DecayFit(float(slope), float(max(viol, 0.0)), int(np.count_nonzero(fit_sel)), float(icpt))
