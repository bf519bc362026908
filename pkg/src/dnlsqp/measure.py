"""Bad-theta sets: exact step-0 exclusion, grid scans of T^theta, Diophantine checks."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
from scipy.optimize import minimize_scalar

from .disorder import DisorderRealization
from .field import CoeffField, Frequencies
from .lattice import Box, Dims
from .linop import LinearizedOp, assemble_T


# ---- Diophantine condition ----------------------------------------------

@dataclass(frozen=True)
class DiophantineParams:
    A: float
    c: float
    N: int

    def __post_init__(self) -> None:
        if not (self.A > 0 and self.c > 0):
            raise ValueError("need A > 0 and c > 0")
        if self.N < 1:
            raise ValueError("need N >= 1")


def torus_norm(x: np.ndarray) -> np.ndarray:
    """Distance to the nearest integer."""
    return np.abs(x - np.round(x))


def check_diophantine(omega: Frequencies, params: DiophantineParams) -> tuple[bool, tuple]:
    """Exhaustive test of ||n.omega||_T >= c / |n|^A over 0 < |n|_inf <= N.

    ``worst`` is ``(n, ||n.omega||_T, c/|n|^A)`` at the smallest ratio.
    """
    ns = Box.cube(omega.nu, params.N).sites()
    ns = ns[np.any(ns != 0, axis=1)]
    dist = torus_norm(ns @ omega.omega)
    bound = params.c / np.abs(ns).sum(axis=1).astype(float) ** params.A
    ratio = dist / bound
    k = int(np.argmin(ratio))
    return bool(ratio[k] >= 1.0), (tuple(int(x) for x in ns[k]), float(dist[k]), float(bound[k]))


# ---- exact step-0 exclusion ---------------------------------------------

@dataclass
class ExclusionSet:
    intervals: np.ndarray
    length: float
    radius: float
    n_rows: int
    bound: float
    rigorous_bound: float

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# radius = {self.radius!r}\n# length = {self.length!r}\n# bound = {self.bound!r}\n")
        buf.write("lo,hi\n")
        for a, b in self.intervals:
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        return buf.getvalue()


def merge_intervals(iv: np.ndarray) -> np.ndarray:
    """Sorted disjoint union of closed intervals (rows ``[lo, hi]``)."""
    iv = np.asarray(iv, dtype=float).reshape(-1, 2)
    if len(iv) == 0:
        return iv
    iv = iv[np.argsort(iv[:, 0], kind="stable")]
    out = [list(iv[0])]
    for a, b in iv[1:]:
        if a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return np.array(out)


def free_sites(dims: Dims, M: int, resonant: Sequence[Sequence[int]]) -> np.ndarray:
    """[-M, M]^{d+nu} minus S u -S."""
    sites = Box.lattice(dims, M).sites()
    drop = np.zeros(len(sites), dtype=bool)
    for k, j in enumerate(resonant):
        for sgn in (-1, 1):
            target = np.array(list(j) + [sgn if i == k else 0 for i in range(dims.nu)])
            drop |= np.all(sites == target, axis=1)
    return sites[~drop]


def step0_exclusion(
    M: int,
    beta: float,
    eps: float,
    delta: float,
    omega: Frequencies,
    pot: DisorderRealization,
    resonant: Sequence[Sequence[int]],
    margin: float = 2.0,
    radius: float | None = None,
) -> ExclusionSet:
    """Union of theta where a diagonal entry of T^theta_0 is within r of zero.

    Rows are the u and v rows of every (j, n) in [-M, M]^{d+nu} off S u -S;
    entries are theta + n.omega + v_j and -(theta + n.omega) + v_j.
    r defaults to margin * max(exp(-M^beta), sqrt(eps + delta)).
    ``bound`` = 4 (2M+1)^{d+nu} max(...) counts one interval per site;
    ``rigorous_bound`` = 2 * margin * (number of rows) * max(...).
    """
    dims = Dims(pot.d, omega.nu)
    scale = max(math.exp(-(M**beta)), math.sqrt(eps + delta))
    r = margin * scale if radius is None else float(radius)
    sites = free_sites(dims, M, resonant)
    if len(sites) == 0:
        return ExclusionSet(np.zeros((0, 2)), 0.0, r, 0, 0.0, 0.0)
    nw = sites[:, dims.d:] @ omega.omega
    vj = pot.at(sites[:, :dims.d])
    centers = np.concatenate([-(nw + vj), vj - nw])
    iv = merge_intervals(np.stack([centers - r, centers + r], axis=1))
    length = float(np.sum(iv[:, 1] - iv[:, 0]))
    bound = 4.0 * (2 * M + 1) ** dims.total * scale
    return ExclusionSet(iv, length, r, len(centers), bound, 2.0 * r * len(centers))


# ---- theta scans --------------------------------------------------------

@dataclass
class ThetaScan:
    N: int
    beta: float
    gamma: float
    grid: tuple[float, float, float]
    bad_mask: np.ndarray | None
    measure_estimate: float
    count: int
    mode: str
    theta: np.ndarray | None = None
    norm: np.ndarray | None = None
    rate: np.ndarray | None = None
    norm_measure: float = 0.0
    decay_grid: tuple[float, float, float] | None = None
    decay_bad_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        buf = io.StringIO()
        lo, hi, step = self.grid
        buf.write(f"# N = {self.N}\n# beta = {self.beta!r}\n# gamma = {self.gamma!r}\n# mode = {self.mode}\n")
        buf.write(f"# grid = {lo!r} {hi!r} {step!r}\n# measure_estimate = {self.measure_estimate!r}\n")
        buf.write("theta,norm,rate,bad\n")
        if self.theta is not None:
            for t, n, r, b in zip(self.theta, self.norm, self.rate, self.bad_mask):
                buf.write(f"{float(t)!r},{float(n)!r},{float(r)!r},{int(b)}\n")
        return buf.getvalue()


def theta_window(op: LinearizedOp, pot: DisorderRealization, N: int) -> float:
    """|theta| beyond which T^theta is strictly diagonally dominant."""
    vmax = float(np.max(np.abs(pot.values)))
    t = op.matrix.tocsr()
    off = abs(t - sp.diags(t.diagonal()))
    offsum = float(off.sum(axis=1).max()) if t.shape[0] else 0.0
    return N * float(np.sum(np.abs(op.omega.omega))) + vmax + offsum + 1.0


class _Blocks:
    """T^0 split into connected components, grouped by size for batching."""

    def __init__(self, op: LinearizedOp):
        self.op = op
        t = op.matrix.tocsr()
        n = t.shape[0]
        self.n = n
        ncomp, labels = csgraph.connected_components(abs(t) + abs(t.T), directed=False)
        self.signs = op.signs()
        self.row_sites = op.row_sites()
        groups: dict[int, list[np.ndarray]] = {}
        for c in range(ncomp):
            idx = np.flatnonzero(labels == c)
            groups.setdefault(len(idx), []).append(idx)
        dense = t.toarray() if n <= 20000 and ncomp < n else None
        self.groups = []
        for size, idxs in sorted(groups.items()):
            rows = np.stack(idxs)
            if dense is not None:
                mats = dense[rows[:, :, None], rows[:, None, :]]
            else:
                mats = np.stack([t[r][:, r].toarray() for r in idxs]) if size > 1 else t.diagonal()[rows].reshape(-1, 1, 1)
            sg = self.signs[rows]
            sites = self.row_sites[rows]
            dist = np.abs(sites[:, :, None, :] - sites[:, None, :, :]).sum(axis=-1)
            self.groups.append((rows, mats, sg, dist))

    def evaluate(self, theta: float, cutoff: float, need_rate: bool = True) -> tuple[float, float]:
        """(||(T^theta)^{-1}||_2, fitted envelope rate) via block inverses."""
        norm = 0.0
        env: dict[int, float] = {}
        for rows, mats, sg, dist in self.groups:
            a = mats + theta * sg[:, :, None] * np.eye(mats.shape[1])[None]
            s = np.linalg.svd(a, compute_uv=False)
            smin = float(s[:, -1].min())
            if smin <= max(1e-300, np.finfo(float).eps * float(np.abs(a).max())):
                return math.inf, 0.0
            norm = max(norm, 1.0 / smin)
            if need_rate and mats.shape[1] > 1:
                g = np.abs(np.linalg.inv(a))
                sel = dist > cutoff
                if sel.any():
                    dd, gg = dist[sel], g[sel]
                    for d0 in np.unique(dd):
                        v = float(gg[dd == d0].max())
                        if v > env.get(int(d0), 0.0):
                            env[int(d0)] = v
        rate = math.inf
        if need_rate:
            keys = sorted(k for k, v in env.items() if v > 1e-300)
            if len(keys) >= 2:
                rate = max(0.0, float(np.polyfit(np.array(keys, float), -np.log([env[k] for k in keys]), 1)[0]))
        return norm, rate


def _bad_intervals(mat: np.ndarray, sg: np.ndarray, eta: float, lo: float, hi: float) -> list[tuple[float, float]]:
    """Closed theta-intervals in [lo, hi] where sigma_min(mat + theta J) <= eta.

    sigma_min is continuous in theta, so its level crossings are among the
    theta at which eta is a singular value, i.e. the real eigenvalues of
    -B [[-eta I, T], [T^T, -eta I]] with B = [[0, J], [J, 0]].  Each
    sub-interval between consecutive crossings is classified at its
    midpoint.
    """
    b = mat.shape[0]
    if b == 1:
        t, s0 = float(mat[0, 0]), float(sg[0])
        c = -t / s0
        return [(max(lo, c - eta), min(hi, c + eta))] if c - eta <= hi and c + eta >= lo else []
    eye = np.eye(b)
    J = np.diag(sg)
    a0 = np.block([[-eta * eye, mat], [mat.T, -eta * eye]])
    B = np.block([[np.zeros((b, b)), J], [J, np.zeros((b, b))]])
    lam = np.linalg.eigvals(-B @ a0)
    real = lam.real[np.abs(lam.imag) <= 1e-6 * np.maximum(1.0, np.abs(lam.real))]
    pts = np.unique(np.concatenate([[lo, hi], real[(real > lo) & (real < hi)]]))
    out = []
    for a, c in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + c)
        if np.linalg.svd(mat + mid * J, compute_uv=False)[-1] <= eta:
            out.append((float(a), float(c)))
    return out


def _grid_count(lo: float, step: float, n_pts: int, a: float, b: float) -> tuple[int, int]:
    """Index range [i0, i1) of grid points lo + i*step inside [a, b]."""
    i0 = max(0, math.ceil((a - lo) / step - 1e-9))
    i1 = min(n_pts, math.floor((b - lo) / step + 1e-9) + 1)
    return i0, max(i0, i1)


def theta_scan(
    y: CoeffField,
    omega: Frequencies,
    eps: float,
    delta: float,
    pot: DisorderRealization,
    N: int,
    beta: float,
    gamma: float,
    grid: tuple[float, float, float] | None = None,
    mode: str = "exact",
    decay_step: float | None = None,
    exclude_pinned: bool = True,
) -> ThetaScan:
    """Scan theta for failures of ||T^-1|| < e^{N^beta} and decay rate >= gamma.

    ``mode="exact"`` evaluates every grid point (block-wise exact inverse
    norms and Green envelopes).  ``mode="screened"`` finds the norm-bad
    set of each connected component of T^0 as exact intervals (see
    :func:`_bad_intervals`) and counts grid points inside their union.
    The decay test then runs on a coarser grid of step ``decay_step``,
    skipping norm-bad points, and its bad fraction is added to the
    measure.
    """
    box = Box.lattice(y.dims, N)
    exclude = np.concatenate([y.pinned_sites("u"), y.pinned_sites("v")]) if exclude_pinned else None
    op = assemble_T(y, omega, 0.0, eps, delta, pot, box, exclude)
    eta = math.exp(-(N**beta))
    if grid is None:
        w = theta_window(op, pot, N)
        grid = (-w, w, 1e-4)
    lo, hi, step = grid
    n_pts = int(math.floor((hi - lo) / step + 1e-9)) + 1
    blocks = _Blocks(op)
    cutoff = N / 10.0

    if mode == "exact":
        theta = lo + step * np.arange(n_pts)
        norms = np.empty(n_pts)
        rates = np.empty(n_pts)
        for i, t in enumerate(theta):
            norms[i], rates[i] = blocks.evaluate(float(t), cutoff)
        bad = (norms >= 1.0 / eta) | (rates < gamma)
        count = int(bad.sum())
        return ThetaScan(N, beta, gamma, (lo, hi, step), bad, count * step, count, mode, theta, norms, rates,
                         norm_measure=float(np.sum(norms >= 1.0 / eta)) * step)
    if mode != "screened":
        raise ValueError(f"unknown scan mode {mode!r}")

    bad_iv = []
    for rows, mats, sg, _ in blocks.groups:
        for b in range(len(rows)):
            bad_iv.extend(_bad_intervals(mats[b], sg[b], eta, lo, hi))
    bad = merge_intervals(np.array(bad_iv)) if bad_iv else np.zeros((0, 2))
    count = 0
    for a0, b0 in bad:
        i0, i1 = _grid_count(lo, step, n_pts, a0, b0)
        count += i1 - i0
    norm_measure = count * step
    cert, cert_lo = bad, bad[:, 0] if len(bad) else np.zeros(0)

    decay_step = decay_step if decay_step is not None else max(step, (hi - lo) / 2000)
    theta_d = np.arange(lo, hi + 0.5 * decay_step, decay_step)
    decay_bad = 0
    for t in theta_d:
        pos = np.searchsorted(cert_lo, t, side="right") - 1
        if pos >= 0 and t <= cert[pos, 1]:
            continue
        _, rate = blocks.evaluate(float(t), cutoff)
        decay_bad += rate < gamma
    frac = decay_bad / len(theta_d) if len(theta_d) else 0.0
    measure = norm_measure + frac * (hi - lo)
    return ThetaScan(N, beta, gamma, (lo, hi, step), None, measure, count, mode,
                     norm_measure=norm_measure, decay_grid=(lo, hi, decay_step), decay_bad_fraction=frac,
                     extra={"eta": eta, "bad_intervals": bad, "exact_norm_length": float(np.sum(bad[:, 1] - bad[:, 0])) if len(bad) else 0.0})


def fit_sigma(Ns: Sequence[float], measures: Sequence[float]) -> tuple[float, float]:
    """Fit log mes = log A - N^sigma; returns (sigma, log A)."""
    n = np.asarray(Ns, dtype=float)
    m = np.asarray(measures, dtype=float)
    if np.any(~(m > 0)) or np.any(~np.isfinite(m)):
        raise ValueError("measures must be positive")
    lm = np.log(m)

    def sse(s: float) -> float:
        resid = lm + n**s
        return float(np.sum((resid - resid.mean()) ** 2))

    res = minimize_scalar(sse, bounds=(1e-6, 5.0), method="bounded", options={"xatol": 1e-10})
    s = float(res.x)
    return s, float(np.mean(lm + n**s))
