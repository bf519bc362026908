"""Localization diagnostics for the linear operator H = eps*Delta + V."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .disorder import Distribution, DisorderRealization, assemble_H, neighbour_pairs, substream_seed
from .field import Frequencies
from .lattice import Box, ElementaryRegion, SiteIndex

EIG_CAP = 4000


class NotResolvent(ValueError):
    """E lies in the spectrum of the restricted operator."""


@dataclass
class EigenData:
    region: ElementaryRegion
    sites: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    centers: np.ndarray
    matrix: np.ndarray = field(repr=False, default=None)

    def residual(self) -> float:
        """max_k ||H psi_k - mu_k psi_k|| / max(1, |mu_k|)."""
        if len(self.mu) == 0:
            return 0.0
        r = self.matrix @ self.psi - self.psi * self.mu
        return float(np.max(np.linalg.norm(r, axis=0) / np.maximum(1.0, np.abs(self.mu))))

    def orthonormality(self) -> float:
        return float(np.max(np.abs(self.psi.T @ self.psi - np.eye(len(self.mu))))) if len(self.mu) else 0.0


def eig_region(eps: float, pot: DisorderRealization, region: ElementaryRegion | Box, cap: int = EIG_CAP) -> EigenData:
    op = assemble_H(eps, pot, region)
    n = len(op.sites)
    if n > cap:
        raise ValueError(f"region of {n} sites exceeds the eigen cap {cap}")
    mu, psi = np.linalg.eigh(op.matrix)
    centers = op.sites[np.argmax(np.abs(psi), axis=0)] if n else np.zeros((0, pot.d), np.int64)
    return EigenData(op.region, op.sites, mu, psi, centers, op.matrix)


# ---- (m, E)-regularity --------------------------------------------------

@dataclass
class RegularityReport:
    E: float
    m: float
    regular: bool
    worst_pair: tuple


def _boundary_ring(sites: np.ndarray, base: Box) -> np.ndarray:
    on = np.any((sites == base.lo) | (sites == base.hi), axis=1)
    return np.flatnonzero(on)


def check_regular(eps: float, pot: DisorderRealization, region: ElementaryRegion | Box, E: float, m: float) -> RegularityReport:
    """Test |G(E; j, j')| <= exp(-m |j - j'|) for |j - j'| > L/4.

    L is half the region diameter.  All pairs are tested for L <= 30;
    beyond that only pairs with one end on the boundary ring.
    """
    region = ElementaryRegion.of(region)
    op = assemble_H(eps, pot, region)
    sites = op.sites
    mu = np.linalg.eigvalsh(op.matrix)
    if len(mu) and np.min(np.abs(mu - E)) < 1e-12:
        raise NotResolvent(f"E = {E} is within 1e-12 of the spectrum")
    G = np.linalg.inv(op.matrix - E * np.eye(len(sites)))
    L = region.diameter / 2.0
    rows = np.arange(len(sites)) if L <= 30 else _boundary_ring(sites, region.base)
    dist = np.abs(sites[rows, None, :] - sites[None, :, :]).sum(axis=-1)
    sel = dist > L / 4.0
    if not sel.any():
        return RegularityReport(E, m, True, ())
    g = np.abs(G[rows])
    # compare in log space to avoid underflow of the bound
    excess = np.where(sel, np.log(np.maximum(g, 1e-320)) + m * dist, -np.inf)
    r, c = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = (tuple(int(x) for x in sites[rows[r]]), tuple(int(x) for x in sites[c]), float(g[r, c]), math.exp(-m * dist[r, c]))
    return RegularityReport(E, m, bool(excess[r, c] <= 0.0), worst)


def green_function(eps: float, pot: DisorderRealization, region: ElementaryRegion | Box, E: float) -> tuple[np.ndarray, np.ndarray]:
    op = assemble_H(eps, pot, region)
    return op.sites, np.linalg.inv(op.matrix - E * np.eye(len(op.sites)))


# ---- eigenvalue separation ---------------------------------------------

@dataclass
class SeparationTable:
    gaps: np.ndarray
    threshold: np.ndarray
    violation_fraction: float

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("pair,gap,threshold,violated\n")
        for i, (g, t) in enumerate(zip(self.gaps, self.threshold)):
            buf.write(f"{i},{float(g)!r},{float(t)!r},{int(g <= t)}\n")
        return buf.getvalue()


def separation_stat(
    eps: float,
    pot: DisorderRealization,
    regions: Sequence[tuple[ElementaryRegion | Box, ElementaryRegion | Box]],
    beta: float,
) -> SeparationTable:
    """dist(sigma(H_A), sigma(H_B)) per pair against exp(-L^beta), L = diameter / 2."""
    gaps, thr = [], []
    for a, b in regions:
        a, b = ElementaryRegion.of(a), ElementaryRegion.of(b)
        sa, sb = a.sites(), b.sites()
        if len(sa) and len(sb):
            if np.any(SiteIndex(sa).lookup(sb) >= 0):
                raise ValueError("region pairs must be disjoint")
        ea = np.linalg.eigvalsh(assemble_H(eps, pot, a).matrix)
        eb = np.linalg.eigvalsh(assemble_H(eps, pot, b).matrix)
        gaps.append(float(np.min(np.abs(ea[:, None] - eb[None, :]))) if len(ea) and len(eb) else math.inf)
        L = max(a.diameter, b.diameter) / 2.0
        thr.append(math.exp(-(L**beta)))
    gaps_a, thr_a = np.array(gaps), np.array(thr)
    frac = float(np.mean(gaps_a <= thr_a)) if len(gaps) else 0.0
    return SeparationTable(gaps_a, thr_a, frac)


# ---- Wegner statistics --------------------------------------------------

@dataclass
class WegnerTable:
    kappas: np.ndarray
    prob: np.ndarray
    trials: int
    size: int
    slope: float
    bound_slope: float

    def stderr(self) -> np.ndarray:
        return np.sqrt(self.prob * (1 - self.prob) / self.trials)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# trials = {self.trials}\n# size = {self.size}\n# slope = {self.slope!r}\n# size_times_density = {self.bound_slope!r}\n")
        buf.write("kappa,prob,stderr\n")
        for k, p, s in zip(self.kappas, self.prob, self.stderr()):
            buf.write(f"{float(k)!r},{float(p)!r},{float(s)!r}\n")
        return buf.getvalue()


def wegner_stat(
    eps: float,
    dist: Distribution,
    S: ElementaryRegion | Box,
    E: float,
    kappas: Sequence[float],
    trials: int,
    seed: int = 0,
) -> WegnerTable:
    """Empirical Prob{dist(E, sigma(H_S)) <= kappa} over fresh realizations.

    ``slope`` is the least-squares slope through the origin of prob vs
    kappa; ``bound_slope`` is |S| * sup density (the Wegner scaling
    without its constant).
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    S = ElementaryRegion.of(S)
    sites = S.sites()
    n = len(sites)
    rng = np.random.default_rng(substream_seed(seed, "wegner"))
    v = dist.from_unit(rng.random((trials, n)))
    h = np.zeros((trials, n, n))
    h[:, np.arange(n), np.arange(n)] = v
    r, c = neighbour_pairs(sites)
    h[:, r, c] = eps
    mu = np.linalg.eigvalsh(h)
    dmin = np.min(np.abs(mu - E), axis=1)
    ks = np.asarray(kappas, dtype=float)
    prob = np.array([np.mean(dmin <= k) for k in ks])
    denom = float(np.sum(ks * ks))
    slope = float(np.sum(ks * prob) / denom) if denom > 0 else 0.0
    return WegnerTable(ks, prob, trials, n, slope, n * dist.density_sup)


# ---- spectral separation of the linearized spectrum ---------------------

@dataclass
class SeparationRatios:
    distances: np.ndarray
    ratios: np.ndarray
    band_median: dict
    cutoff: float


def mode_separation(
    eps: float,
    pot: DisorderRealization,
    omega: Frequencies,
    region: ElementaryRegion | Box,
    chi_rate: float = 1.0,
    n_radius: int = 2,
    threshold: float = 10.0,
) -> SeparationRatios:
    """Ratios |lambda_i - lambda_i'| / |K(i, i')| for i != i'.

    i = (n, eigen-index), lambda_i = n.omega + mu, K(i, i') =
    sum_l phi(l) chi(l) phi'(l) with chi(l) = exp(-chi_rate |l|).
    |i - i'| is the l1 distance between (n, center).  ``cutoff`` is the
    smallest distance from which every band median is at least
    ``threshold``.  Zero K gives an infinite ratio.
    """
    data = eig_region(eps, pot, region)
    chi = np.exp(-chi_rate * np.abs(data.sites).sum(axis=1))
    K = data.psi.T @ (chi[:, None] * data.psi)
    nu = omega.nu
    ns = Box.cube(nu, n_radius).sites()
    nw = ns @ omega.omega
    m = len(data.mu)
    lam = (nw[:, None] + data.mu[None, :]).reshape(-1)
    pos = np.concatenate([np.repeat(ns, m, axis=0), np.tile(data.centers, (len(ns), 1))], axis=1)
    eig_idx = np.tile(np.arange(m), len(ns))
    dist = np.abs(pos[:, None, :] - pos[None, :, :]).sum(axis=-1)
    kk = np.abs(K[eig_idx[:, None], eig_idx[None, :]])
    gap = np.abs(lam[:, None] - lam[None, :])
    off = ~np.eye(len(lam), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(kk > 0, gap / np.where(kk > 0, kk, 1.0), np.inf)
    dsel, rsel = dist[off], ratio[off]
    med = {int(d): float(np.median(rsel[dsel == d])) for d in np.unique(dsel)}
    cutoff = math.inf
    for d in sorted(med, reverse=True):
        if med[d] >= threshold:
            cutoff = d
        else:
            break
    return SeparationRatios(dsel, rsel, med, float(cutoff))


# ---- eigenvector decay about the centers --------------------------------

def eigenvector_decay(data: EigenData, edge: float | None = None) -> np.ndarray:
    """Per-eigenvector fitted exponential rate about its center.

    Vectors centred within ``edge`` (default a quarter of the region
    diameter) of the region boundary get NaN.
    """
    base = data.region.base
    edge = data.region.diameter / 4.0 if edge is None else edge
    out = np.full(len(data.mu), np.nan)
    for k in range(len(data.mu)):
        c = data.centers[k]
        if np.any(c - base.lo < edge) or np.any(base.hi - c < edge):
            continue
        a = np.abs(data.psi[:, k])
        r = np.abs(data.sites - c).sum(axis=1)
        sel = (a > 1e-300) & (r > 0)
        if np.unique(r[sel]).size < 2:
            out[k] = np.inf
            continue
        out[k] = -np.polyfit(r[sel].astype(float), np.log(a[sel]), 1)[0]
    return out
