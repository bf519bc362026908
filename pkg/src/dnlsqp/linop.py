"""Linearized operators T^theta(y) = D^theta + delta*S(y) and their inverses.

Unknowns are laid out as ``[u rows for every site; v rows for every
site]`` with sites in canonical (n-major) order.  Sites may be deleted
(the pinned set), in which case both of their rows disappear.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .disorder import DisorderRealization
from .field import CoeffField, Frequencies, convolve_n, convolve_power, exact_padding
from .lattice import Box, Dims, ElementaryRegion, SiteIndex, interior_boundary

DENSE_CAP = 6000
EXACT_NORM_CAP = 1500
POWER_ITERS = 50
_MACH = np.finfo(float).eps


class Singular(ArithmeticError):
    """Factorization met a pivot that is zero relative to the matrix scale."""

    def __init__(self, index: int, pivot: float, label: str = ""):
        self.index = int(index)
        self.pivot = float(pivot)
        self.label = label
        super().__init__(f"singular pivot {pivot:.3e} at row {index} {label}".strip())


class NoContraction(ArithmeticError):
    def __init__(self, factor: float):
        self.factor = float(factor)
        super().__init__(f"boundary coupling factor {factor:.3g} >= 1/2")


class PatchMissing(ValueError):
    def __init__(self, site):
        self.site = tuple(int(c) for c in site)
        super().__init__(f"no admissible covering block for site {self.site}")


@dataclass
class InverseReport:
    norm_inv: float
    offdiag_rate: float
    max_entry_beyond: float
    condition: float
    contraction: float = 0.0
    norm_bound: float = float("nan")


@dataclass
class LinearizedOp:
    """T^theta restricted to ``sites`` (rows: u block then v block)."""

    dims: Dims
    region: ElementaryRegion
    sites: np.ndarray
    matrix: sp.csr_matrix
    omega: Frequencies
    theta: float
    eps: float
    delta: float
    p: int = 1

    def __post_init__(self) -> None:
        self.region = ElementaryRegion.of(self.region)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def signs(self) -> np.ndarray:
        """+1 on u rows, -1 on v rows; T^theta = J (J T^0 + theta I)."""
        m = self.n_sites
        return np.concatenate([np.ones(m), -np.ones(m)])

    def row_sites(self) -> np.ndarray:
        return np.concatenate([self.sites, self.sites])

    def rows_of(self, site_idx: np.ndarray) -> np.ndarray:
        site_idx = np.asarray(site_idx, dtype=np.int64)
        return np.concatenate([site_idx, site_idx + self.n_sites])

    def submatrix(self, site_idx: np.ndarray) -> sp.csr_matrix:
        rows = self.rows_of(site_idx)
        return self.matrix[rows][:, rows]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def dump(self) -> str:
        """Coordinate listing ``row-site, col-site, value``."""
        labels = row_labels(self.sites)
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        buf = io.StringIO()
        buf.write("row_site,col_site,value\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            buf.write(f"{labels[r]},{labels[c]},{float(v)!r}\n")
        return buf.getvalue()


def row_labels(sites: np.ndarray) -> list[str]:
    base = [" ".join(str(int(c)) for c in s) for s in sites]
    return [f"u:{b}" for b in base] + [f"v:{b}" for b in base]


def jacobian_kernels(y: CoeffField) -> tuple[Box, np.ndarray, np.ndarray, np.ndarray]:
    """Kernels of S(y) as arrays over a padded box, indexed by (j, n - n').

    Returns ``(box, diag, uv, vu)`` with diag = (p+1)(u*v)^{*p},
    uv = p (u*v)^{*(p-1)} * u * u and vu = p (u*v)^{*(p-1)} * v * v.
    """
    nu = y.dims.nu
    big = exact_padding(y)
    u, v = big.uhat, big.vhat
    w = convolve_n(u, v, nu)
    wp = convolve_power(w, y.p, nu)
    uu = convolve_n(u, u, nu)
    vv = convolve_n(v, v, nu)
    if y.p > 1:
        wq = convolve_power(w, y.p - 1, nu)
        uu = convolve_n(wq, uu, nu)
        vv = convolve_n(wq, vv, nu)
    return big.box, (y.p + 1) * wp, y.p * uu, y.p * vv


def assemble_T(
    y: CoeffField,
    omega: Frequencies,
    theta: float,
    eps: float,
    delta: float,
    pot: DisorderRealization,
    region: ElementaryRegion | Box,
    exclude: np.ndarray | None = None,
) -> LinearizedOp:
    """Sparse T^theta(y) on ``region`` minus the ``exclude`` sites.

    ``y`` is taken to vanish outside its box, so the S kernels are exact
    for any region.
    """
    region = ElementaryRegion.of(region)
    dims = y.dims
    d = dims.d
    sites = region.sites()
    if exclude is not None and len(exclude):
        drop = SiteIndex(np.asarray(exclude)).lookup(sites) >= 0
        sites = sites[~drop]
    m = len(sites)
    if m and not np.all(pot.box.contains(sites[:, :d])):
        raise ValueError("region escapes the potential box")
    index = SiteIndex(sites) if m else None
    rows, cols, vals = [], [], []

    nw = sites[:, d:] @ omega.omega + theta if m else np.zeros(0)
    vj = pot.at(sites[:, :d]) if m else np.zeros(0)
    ar = np.arange(m)
    rows += [ar, ar + m]
    cols += [ar, ar + m]
    vals += [nw + vj, vj - nw]

    if eps != 0.0 and m:
        for a in range(d):
            for s in (1, -1):
                shift = np.zeros(dims.total, dtype=np.int64)
                shift[a] = s
                nb = index.lookup(sites + shift)
                ok = nb >= 0
                for off in (0, m):
                    rows.append(ar[ok] + off)
                    cols.append(nb[ok] + off)
                    vals.append(np.full(ok.sum(), float(eps)))

    if delta != 0.0 and m:
        kbox, kd, kuv, kvu = jacobian_kernels(y)
        sbox = kbox.spatial()
        js = sites[:, :d]
        inside = sbox.contains(js)
        jflat = np.full(m, -1, dtype=np.int64)
        if inside.any():
            jflat[inside] = np.ravel_multi_index(sbox.array_index(js[inside]), sbox.shape)
        nshape = kbox.shape[d:]
        kd2, kuv2, kvu2 = (k.reshape(int(np.prod(sbox.shape)), -1) for k in (kd, kuv, kvu))
        live = np.flatnonzero(np.any((kd2 != 0) | (kuv2 != 0) | (kvu2 != 0), axis=0))
        nrad = np.asarray(kbox.radii[d:])
        for q in live:
            dn = np.array(np.unravel_index(q, nshape)) - nrad
            shift = np.concatenate([np.zeros(d, np.int64), dn])
            nb = index.lookup(sites - shift)
            ok = (nb >= 0) & (jflat >= 0)
            r, c, jj = ar[ok], nb[ok], jflat[ok]
            for (ro, co), ker in (((0, 0), kd2), ((0, m), kuv2), ((m, 0), kvu2), ((m, m), kd2)):
                val = ker[jj, q]
                nz = val != 0
                rows.append(r[nz] + ro)
                cols.append(c[nz] + co)
                vals.append(delta * val[nz])

    if m:
        mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * m, 2 * m)).tocsr()
    else:
        mat = sp.csr_matrix((0, 0))
    mat.sum_duplicates()
    return LinearizedOp(dims, region, sites, mat, omega, float(theta), float(eps), float(delta), y.p)


# ---- norms --------------------------------------------------------------

def power_norm(apply, apply_t, n: int, iters: int = POWER_ITERS, seed: int = 0) -> float:
    """2-norm estimate from ``iters`` power steps on A^T A."""
    if n == 0:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        z = apply_t(apply(x))
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        est = math.sqrt(nz)
        x = z / nz
    return est


def norm2(a) -> float:
    """Operator 2-norm: exact for small matrices, power method otherwise."""
    if sp.issparse(a):
        if max(a.shape) <= EXACT_NORM_CAP:
            a = a.toarray()
        else:
            return power_norm(lambda x: a @ x, lambda x: a.T @ x, a.shape[1])
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    if max(a.shape) <= EXACT_NORM_CAP:
        return float(np.linalg.norm(a, 2))
    return power_norm(lambda x: a @ x, lambda x: a.T @ x, a.shape[1])


def _pivot_floor(scale: float) -> float:
    return max(1e-300, _MACH * scale)


# ---- dense --------------------------------------------------------------

def dense_inverse(t: np.ndarray, labels: Sequence[str] | None = None) -> np.ndarray:
    """LU-based inverse; raises :class:`Singular` on a negligible pivot."""
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = sla.lu_factor(t, check_finite=False)
    diag = np.abs(np.diag(lu))
    k = int(np.argmin(diag))
    if diag[k] <= _pivot_floor(float(np.max(np.abs(t)))):
        raise Singular(k, float(diag[k]), labels[k] if labels is not None else "")
    return sla.lu_solve((lu, piv), np.eye(n), check_finite=False)


def invert_dense(op: LinearizedOp, dense_cap: int = DENSE_CAP, decay: bool = True) -> tuple[np.ndarray, InverseReport]:
    if op.n_sites > dense_cap:
        raise ValueError(f"{op.n_sites} sites exceed the dense cap {dense_cap}")
    t = op.dense()
    g = dense_inverse(t, row_labels(op.sites))
    ninv = norm2(g)
    rep = InverseReport(ninv, np.inf, 0.0, norm2(t) * ninv)
    if decay:
        rate, beyond = green_rate(g, op.sites, op.region.diameter / 10.0)
        rep.offdiag_rate, rep.max_entry_beyond = rate, beyond
    return g, rep


# ---- sparse -------------------------------------------------------------

class Factorization:
    """Sparse LU of a LinearizedOp with a 1-norm condition estimate."""

    def __init__(self, op: LinearizedOp):
        self.op = op
        a = op.matrix.tocsc()
        self.n = a.shape[0]
        self.norm1 = float(abs(a).sum(axis=0).max()) if self.n else 0.0
        if self.n == 0:
            self.lu = None
            return
        labels = row_labels(op.sites)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self.lu = spla.splu(a, permc_spec="COLAMD")
        except RuntimeError:
            raise Singular(0, 0.0, "exactly singular factor") from None
        diag = np.abs(self.lu.U.diagonal())
        k = int(np.argmin(diag))
        if diag[k] <= _pivot_floor(float(abs(a).max())):
            col = int(self.lu.perm_c[k]) if hasattr(self.lu, "perm_c") else k
            raise Singular(col, float(diag[k]), labels[col])

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return self.lu.solve(np.asarray(b, dtype=float), trans=trans)

    def condition(self) -> float:
        """||T||_1 * est ||T^-1||_1."""
        if self.n == 0:
            return 0.0
        if self.n <= 4:
            return self.norm1 * float(np.abs(self.solve(np.eye(self.n))).sum(axis=0).max())
        lin = spla.LinearOperator((self.n, self.n), matvec=self.solve, rmatvec=lambda x: self.solve(x, "T"), dtype=float)
        return self.norm1 * float(spla.onenormest(lin))

    def norm_inv(self) -> float:
        return power_norm(self.solve, lambda x: self.solve(x, "T"), self.n)


# ---- Green's function decay --------------------------------------------

def site_magnitudes(g: np.ndarray, n_sites: int) -> np.ndarray:
    """max over the (u, v) x (u, v) blocks of |G| for every site pair."""
    b = g.shape[0] // n_sites if n_sites else 1
    a = np.abs(g).reshape(b, n_sites, b, n_sites)
    return a.max(axis=(0, 2))


def green_rate(g: np.ndarray, sites: np.ndarray, cutoff: float) -> tuple[float, float]:
    """Exponential rate of the envelope of |G(k, k')| over |k - k'| > cutoff.

    The envelope is the largest entry at each l1 distance; its logarithm
    is fitted linearly.  Returns ``(rate, max entry beyond cutoff)``;
    rate is +inf when fewer than two distances carry nonzero entries.
    """
    m = len(sites)
    if m == 0:
        return np.inf, 0.0
    mag = site_magnitudes(g, m) if g.shape[0] != m else np.abs(g)
    dist = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=-1)
    sel = dist > cutoff
    if not sel.any():
        return np.inf, 0.0
    dsel, msel = dist[sel], mag[sel]
    beyond = float(msel.max())
    env = np.zeros(int(dsel.max()) + 1)
    np.maximum.at(env, dsel, msel)
    r = np.flatnonzero(env > 1e-300)
    r = r[r > cutoff]
    if len(r) < 2:
        return np.inf, beyond
    slope = np.polyfit(r.astype(float), -np.log(env[r]), 1)[0]
    return float(max(slope, 0.0)), beyond


def green_decay(op: LinearizedOp) -> InverseReport:
    return invert_dense(op)[1]


# ---- covering inverse (resolvent identity) -----------------------------

def patch_size(N: int, C: float = 4.0) -> int:
    """M0 = ceil((log N)^{C/2}), at least 1."""
    if N <= 1:
        return 1
    return max(1, math.ceil(math.log(N) ** (C / 2.0)))


def _clamped_patch(center: np.ndarray, radius: int, lo: np.ndarray, hi: np.ndarray) -> Box:
    r = np.minimum(radius, (hi - lo) // 2)
    c = np.clip(center, lo + r, hi - r)
    return Box(tuple(int(x) for x in c), tuple(int(x) for x in r))


def _boundary_distance(sites_w: np.ndarray, ambient: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """sup-norm distance from each target to the interior boundary of W."""
    bd = interior_boundary(sites_w, ambient)
    if len(bd) == 0:
        return np.full(len(targets), np.inf)
    return np.abs(targets[:, None, :] - bd[None, :, :]).max(axis=-1).min(axis=1).astype(float)


@dataclass
class CoveringInverse:
    """x = P b - K x, iterated to a fixed point."""

    P: sp.csr_matrix
    K: sp.csr_matrix
    report: InverseReport
    blocks: list[Box]
    assignment: np.ndarray
    tol: float = 1e-15
    max_iter: int = 500

    def apply(self, b: np.ndarray) -> np.ndarray:
        pb = self.P @ b
        x = pb.copy()
        scale = max(np.linalg.norm(pb), 1e-300)
        for _ in range(self.max_iter):
            nxt = pb - self.K @ x
            if np.linalg.norm(nxt - x) <= self.tol * scale:
                return nxt
            x = nxt
        return x

    def to_dense(self) -> np.ndarray:
        n = self.P.shape[0]
        return self.apply(np.eye(n))


def invert_covering(
    op: LinearizedOp,
    inner: Box,
    patches: Sequence[Box] | None = None,
    M0: int | None = None,
    C: float = 4.0,
    min_dist: float | None = None,
    tol: float = 1e-15,
) -> CoveringInverse:
    """Inverse on the op's region from an inner-box inverse and patch inverses.

    Each site k is assigned a block W(k) (the inner box if k lies within
    half its radius, otherwise a patch) whose interior boundary is at
    sup-distance at least ``min_dist`` (default M0) from k.  With
    ``patches=None`` the patch for k is the M0-box centred at k, clamped
    into the region.
    """
    sites = op.sites
    m = op.n_sites
    base = op.region.base
    N = max(base.radii) if base.radii else 0
    M0 = patch_size(N, C) if M0 is None else int(M0)
    min_dist = float(M0) if min_dist is None else float(min_dist)
    lo, hi = sites.min(axis=0), sites.max(axis=0)

    candidates: list[Box] = [inner]
    cand_index: dict[Box, int] = {inner: 0}
    assign = np.full(m, -1, dtype=np.int64)
    in_inner = inner.contains(sites)
    half = np.abs(sites - np.asarray(inner.center)).max(axis=1) <= 0.5 * min(inner.radii)
    trial = np.flatnonzero(in_inner & half)
    if len(trial):
        dist = _boundary_distance(sites[in_inner], sites, sites[trial])
        assign[trial[dist >= min_dist]] = 0

    explicit = list(patches) if patches is not None else None
    for k in np.flatnonzero(assign < 0):
        options = explicit if explicit is not None else [_clamped_patch(sites[k], M0, lo, hi)]
        for b in options:
            if not b.contains(sites[k]):
                continue
            wsel = b.contains(sites)
            if _boundary_distance(sites[wsel], sites, sites[k][None, :])[0] >= min_dist:
                if b not in cand_index:
                    cand_index[b] = len(candidates)
                    candidates.append(b)
                assign[k] = cand_index[b]
                break
        if assign[k] < 0:
            raise PatchMissing(sites[k])

    n = 2 * m
    T = op.matrix.tocsr()
    p_parts, k_parts = [], []
    worst_g = 0.0
    for bi in np.unique(assign):
        wsel = np.flatnonzero(candidates[bi].contains(sites))
        rows_w = op.rows_of(wsel)
        g = dense_inverse(T[rows_w][:, rows_w].toarray())
        worst_g = max(worst_g, norm2(g))
        ks = np.flatnonzero(assign == bi)
        local = np.searchsorted(wsel, ks)
        lrows = np.concatenate([local, local + len(wsel)])
        grow = g[lrows]
        out_rows = np.concatenate([ks, ks + m])
        pb = sp.coo_matrix(grow)
        p_parts.append((out_rows[pb.row], rows_w[pb.col], pb.data))
        outside = np.setdiff1d(np.arange(n), rows_w)
        coupling = T[rows_w][:, outside]
        if coupling.nnz:
            kb = sp.coo_matrix(sp.csr_matrix(grow) @ coupling)
            k_parts.append((out_rows[kb.row], outside[kb.col], kb.data))

    def build(parts):
        if not parts:
            return sp.csr_matrix((n, n))
        r = np.concatenate([a for a, _, _ in parts])
        c = np.concatenate([b for _, b, _ in parts])
        v = np.concatenate([x for _, _, x in parts])
        return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()

    P, K = build(p_parts), build(k_parts)
    q = float(abs(K).sum(axis=1).max()) if K.nnz else 0.0
    if q >= 0.5:
        raise NoContraction(q)
    rep = InverseReport(norm_inv=0.0, offdiag_rate=np.inf, max_entry_beyond=0.0, condition=0.0,
                        contraction=q, norm_bound=float(abs(P).sum(axis=1).max()) / (1.0 - q) if n else 0.0)
    cov = CoveringInverse(P, K, rep, candidates, assign, tol)
    if n:
        rep.norm_inv = power_norm(cov.apply, lambda x: _covering_apply_t(cov, x), n)
        rep.condition = norm2(op.matrix) * rep.norm_inv
        if n <= 2 * DENSE_CAP // 4:
            rep.offdiag_rate, rep.max_entry_beyond = green_rate(cov.to_dense(), sites, op.region.diameter / 10.0)
    return cov


def _covering_apply_t(cov: CoveringInverse, b: np.ndarray) -> np.ndarray:
    # G = (I + K)^{-1} P  =>  G^T b = P^T (I + K^T)^{-1} b
    z = b.copy()
    for _ in range(cov.max_iter):
        nxt = b - cov.K.T @ z
        if np.linalg.norm(nxt - z) <= cov.tol * max(np.linalg.norm(b), 1e-300):
            z = nxt
            break
        z = nxt
    return cov.P.T @ z


# ---- Schur complement ---------------------------------------------------

@dataclass
class SchurResult:
    A: np.ndarray
    bad_rows: np.ndarray
    good_rows: np.ndarray
    G_good: np.ndarray
    report: InverseReport
    kappa: float = float("nan")
    blocks: dict = field(default_factory=dict)


def schur_reduce(op: LinearizedOp, bad_sites: np.ndarray) -> SchurResult:
    """A = T_bb - T_bg T_gg^{-1} T_gb over the rows of ``bad_sites``.

    ``kappa`` bounds ||T^{-1}|| / ||A^{-1}|| via the block-inverse formula:
    (1 + ||G_g T_gb||)(1 + ||T_bg G_g||) + ||G_g|| / ||A^{-1}||.
    """
    bad_sites = np.asarray(bad_sites, dtype=np.int64).reshape(-1, op.dims.total)
    is_bad = np.zeros(op.n_sites, dtype=bool)
    if len(bad_sites):
        hit = SiteIndex(bad_sites).lookup(op.sites)
        is_bad = hit >= 0
        if is_bad.sum() != len(bad_sites):
            raise ValueError("bad sites must be distinct sites of the operator")
    bad_rows = op.rows_of(np.flatnonzero(is_bad))
    good_rows = op.rows_of(np.flatnonzero(~is_bad))
    t = op.dense()
    t_bb = t[np.ix_(bad_rows, bad_rows)]
    t_bg = t[np.ix_(bad_rows, good_rows)]
    t_gb = t[np.ix_(good_rows, bad_rows)]
    g_good = dense_inverse(t[np.ix_(good_rows, good_rows)])
    A = t_bb - t_bg @ (g_good @ t_gb)
    ng = norm2(g_good)
    rep = InverseReport(ng, np.inf, 0.0, norm2(t[np.ix_(good_rows, good_rows)]) * ng)
    kappa = float("nan")
    if len(bad_rows) and len(good_rows):
        ainv_norm = norm2(dense_inverse(A))
        kappa = (1 + norm2(g_good @ t_gb)) * (1 + norm2(t_bg @ g_good)) + ng / ainv_norm
    elif len(bad_rows):
        kappa = 1.0
    return SchurResult(A, bad_rows, good_rows, g_good, rep, kappa, {"bg": t_bg, "gb": t_gb})


def schur_inverse(res: SchurResult) -> np.ndarray:
    """Full T^{-1} rebuilt from A^{-1} and the good-block inverse."""
    nb, ng = len(res.bad_rows), len(res.good_rows)
    n = nb + ng
    out = np.zeros((n, n))
    g = res.G_good
    if nb == 0:
        out[np.ix_(res.good_rows, res.good_rows)] = g
        return out
    ainv = dense_inverse(res.A)
    if ng == 0:
        out[np.ix_(res.bad_rows, res.bad_rows)] = ainv
        return out
    gtg = g @ res.blocks["gb"]
    tbg = res.blocks["bg"] @ g
    out[np.ix_(res.bad_rows, res.bad_rows)] = ainv
    out[np.ix_(res.bad_rows, res.good_rows)] = -ainv @ tbg
    out[np.ix_(res.good_rows, res.bad_rows)] = -gtg @ ainv
    out[np.ix_(res.good_rows, res.good_rows)] = g + gtg @ ainv @ tbg
    return out
