"""I.i.d. random potentials and the linear operator H = eps*Delta + V."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .lattice import Box, ElementaryRegion, SiteIndex, unit_vectors

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Distribution:
    """Uniform law on [lo, hi]."""

    lo: float = 0.0
    hi: float = 1.0
    kind: str = "uniform"

    def __post_init__(self) -> None:
        if self.kind != "uniform":
            raise ValueError(f"unsupported distribution kind {self.kind!r}")
        if not self.lo <= self.hi:
            raise ValueError(f"need lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def density_sup(self) -> float:
        """sup of the density; infinite for a point mass."""
        width = self.hi - self.lo
        return np.inf if width == 0 else 1.0 / width

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * u


def _zigzag(x: int) -> int:
    return 2 * x if x >= 0 else -2 * x - 1


def site_uniform(seed: int, j: Sequence[int]) -> float:
    """A uniform [0, 1) variate that is a pure function of (seed, j)."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(_zigzag(int(c)) for c in j))
    word = int(ss.generate_state(1, np.uint64)[0])
    return (word >> 11) * 2.0**-53


def substream_seed(seed: int, key: str) -> int:
    """Derive a named 64-bit sub-seed from the global seed."""
    ss = np.random.SeedSequence(entropy=[int(seed) & _MASK64, *key.encode()])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DisorderRealization:
    """Potential values {v_j} on a spatial box.

    ``values`` has shape ``box.shape``.  ``overrides`` records sites whose
    value was set explicitly (the resonant parameters); they survive
    regeneration from the seed.
    """

    box: Box
    values: np.ndarray
    seed: int | None
    dist: Distribution
    overrides: Mapping[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.box.shape:
            raise ValueError(f"values shape {vals.shape} does not match box {self.box.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "overrides", {tuple(int(c) for c in k): float(v) for k, v in self.overrides.items()})

    @property
    def d(self) -> int:
        return self.box.dim

    def covers(self, box: Box) -> bool:
        return self.box.contains_box(box)

    def at(self, coords: np.ndarray) -> np.ndarray:
        """Potential at spatial coordinates (array of shape (..., d))."""
        coords = np.asarray(coords)
        if not np.all(self.box.contains(coords)):
            raise ValueError("site outside the potential box")
        return self.values[self.box.array_index(coords)]

    def value(self, j: Sequence[int]) -> float:
        return float(self.at(np.asarray([j]))[0])

    def with_overrides(self, overrides: Mapping[Sequence[int], float]) -> "DisorderRealization":
        vals = np.array(self.values)
        merged = dict(self.overrides)
        for j, v in overrides.items():
            j = tuple(int(c) for c in j)
            if not self.box.contains(np.asarray(j)):
                raise ValueError(f"override site {j} outside the potential box")
            vals[self.box.array_index(np.asarray(j))] = v
            merged[j] = float(v)
        return DisorderRealization(self.box, vals, self.seed, self.dist, merged)

    def resampled(self, box: Box) -> "DisorderRealization":
        """Same seed on a different box; overlapping sites keep their values."""
        if self.seed is None:
            raise ValueError("realization has no seed")
        out = sample(self.dist, box, self.seed)
        keep = {j: v for j, v in self.overrides.items() if box.contains(np.asarray(j))}
        return out.with_overrides(keep) if keep else out

    def to_table(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed = {self.seed}\n")
        buf.write(f"# dist = {self.dist.kind} {self.dist.lo!r} {self.dist.hi!r}\n")
        buf.write(f"# box_center = {' '.join(map(str, self.box.center))}\n")
        buf.write(f"# box_radii = {' '.join(map(str, self.box.radii))}\n")
        for j, v in sorted(self.overrides.items()):
            buf.write(f"# override = {' '.join(map(str, j))} {v!r}\n")
        buf.write(",".join([f"j{i + 1}" for i in range(self.d)] + ["value"]) + "\n")
        for s in self.box.sites():
            buf.write(",".join([str(int(c)) for c in s] + [repr(float(self.values[tuple(s - self.box.lo)]))]) + "\n")
        return buf.getvalue()


def sample(dist: Distribution, box: Box, seed: int) -> DisorderRealization:
    """Per-site keyed i.i.d. sample on ``box``."""
    if len(box) == 0:
        raise ValueError("empty box")
    sites = box.sites()
    u = np.array([site_uniform(seed, s) for s in sites])
    vals = np.empty(box.shape)
    vals[box.array_index(sites)] = dist.from_unit(u)
    if dist.lo == dist.hi:
        vals[...] = dist.lo
    return DisorderRealization(box, vals, int(seed), dist)


def from_values(values: Sequence[float] | np.ndarray, dist: Distribution | None = None, center=None) -> DisorderRealization:
    """Realization with explicit values on a box centred at ``center``."""
    vals = np.asarray(values, dtype=float)
    center = (0,) * vals.ndim if center is None else tuple(center)
    radii = tuple((s - 1) // 2 for s in vals.shape)
    if any(s % 2 == 0 for s in vals.shape):
        raise ValueError("explicit value arrays need odd extents")
    dist = dist or Distribution(float(vals.min()), float(vals.max()))
    return DisorderRealization(Box(center, radii), vals, None, dist)


def parse_table(text: str) -> tuple[dict[str, str], list[str], list[tuple[str, ...]]]:
    """Split a table into header metadata, override lines, and data rows."""
    meta: dict[str, str] = {}
    overrides: list[str] = []
    rows: list[tuple[str, ...]] = []
    header_seen = False
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key, val = key.strip(), val.strip()
            if key == "override":
                overrides.append(val)
            else:
                meta[key] = val
        elif not header_seen:
            header_seen = True
        else:
            rows.append(tuple(line.split(",")))
    return meta, overrides, rows


def load_realization(text: str, use: str = "table") -> DisorderRealization:
    """Reload a realization written by :meth:`DisorderRealization.to_table`.

    ``use="header"`` regenerates from (seed, dist, box) and re-applies
    overrides; ``use="table"`` reads the decimal values directly.
    """
    meta, ov_lines, rows = parse_table(text)
    kind, lo, hi = meta["dist"].split()
    dist = Distribution(float(lo), float(hi), kind)
    box = Box(tuple(int(c) for c in meta["box_center"].split()), tuple(int(r) for r in meta["box_radii"].split()))
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    overrides = {}
    for line in ov_lines:
        parts = line.split()
        overrides[tuple(int(c) for c in parts[:-1])] = float(parts[-1])
    if use == "header":
        if seed is None:
            raise ValueError("table has no seed; header reload impossible")
        pot = sample(dist, box, seed)
        return pot.with_overrides(overrides) if overrides else pot
    if use != "table":
        raise ValueError(f"unknown reload mode {use!r}")
    vals = np.empty(box.shape)
    for row in rows:
        j = np.asarray([int(c) for c in row[:-1]])
        vals[tuple(j - box.lo)] = float(row[-1])
    return DisorderRealization(box, vals, seed, dist, overrides)


def read_realization(path: str | Path, use: str = "table") -> DisorderRealization:
    return load_realization(Path(path).read_text(), use)


@dataclass(frozen=True)
class SpatialOperator:
    """Dense matrix of eps*Delta + V restricted to a spatial region."""

    region: ElementaryRegion
    epsilon: float
    potential: DisorderRealization
    sites: np.ndarray
    matrix: np.ndarray

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def neighbour_pairs(sites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of all ordered l1-neighbour pairs within ``sites``."""
    idx = SiteIndex(sites)
    rows, cols = [], []
    for e in unit_vectors(sites.shape[1]):
        nb = idx.lookup(sites + e)
        ok = nb >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nb[ok])
    if not rows:
        return np.zeros(0, int), np.zeros(0, int)
    return np.concatenate(rows), np.concatenate(cols)


def assemble_H(eps: float, pot: DisorderRealization, region: ElementaryRegion | Box) -> SpatialOperator:
    region = ElementaryRegion.of(region)
    sites = region.sites()
    if len(sites) and not np.all(pot.box.contains(sites)):
        raise ValueError("region escapes the potential box")
    h = np.diag(pot.at(sites)) if len(sites) else np.zeros((0, 0))
    r, c = neighbour_pairs(sites)
    h[r, c] = eps
    return SpatialOperator(region, float(eps), pot, sites, h)


def spectrum_bounds(eps: float, dist: Distribution, d: int) -> tuple[float, float]:
    return (-2.0 * eps * d + dist.lo, 2.0 * eps * d + dist.hi)
