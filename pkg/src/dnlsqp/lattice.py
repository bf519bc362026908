"""Index spaces on Z^{d+nu}: sites, boxes, elementary regions.

Coordinates are stored as integer rows ``(j_1..j_d, n_1..n_nu)``.  Site
enumeration is lexicographic on ``(n, j)`` so that every frequency slice
of a region is contiguous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

COORD_DTYPE = np.int64


@dataclass(frozen=True)
class Dims:
    d: int
    nu: int

    def __post_init__(self) -> None:
        if self.d < 1 or self.nu < 1:
            raise ValueError(f"need d >= 1 and nu >= 1, got d={self.d}, nu={self.nu}")

    @property
    def total(self) -> int:
        return self.d + self.nu


@dataclass(frozen=True)
class LatticeSite:
    """A point (j, n) of Z^{d+nu}."""

    j: tuple[int, ...]
    n: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "j", tuple(int(x) for x in self.j))
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))

    @property
    def coords(self) -> tuple[int, ...]:
        return self.j + self.n

    @classmethod
    def from_coords(cls, coords: Sequence[int], d: int) -> "LatticeSite":
        coords = tuple(int(c) for c in coords)
        return cls(coords[:d], coords[d:])

    def __add__(self, other: "LatticeSite") -> "LatticeSite":
        return LatticeSite(
            tuple(a + b for a, b in zip(self.j, other.j)),
            tuple(a + b for a, b in zip(self.n, other.n)),
        )

    def __neg__(self) -> "LatticeSite":
        return LatticeSite(tuple(-a for a in self.j), tuple(-a for a in self.n))


def l1_norm(s: LatticeSite | Sequence[int] | np.ndarray) -> int:
    """Return sum |j_i| + sum |n_i|."""
    if isinstance(s, LatticeSite):
        return sum(abs(x) for x in s.coords)
    return int(np.abs(np.asarray(s)).sum())


def l1_norms(coords: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(coords)).sum(axis=-1)


@dataclass(frozen=True)
class Box:
    """Hyper-rectangle ``{l : |l_i - center_i| <= radii_i}``.

    ``nu`` counts the trailing frequency axes; it only affects the
    enumeration order (n-major).  Spatial boxes have ``nu = 0``.
    """

    center: tuple[int, ...]
    radii: tuple[int, ...]
    nu: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        if len(self.center) != len(self.radii):
            raise ValueError("center and radii must have equal length")
        if any(r < 0 for r in self.radii):
            raise ValueError(f"radii must be nonnegative, got {self.radii}")
        if not 0 <= self.nu <= len(self.radii):
            raise ValueError("nu exceeds box dimension")

    @classmethod
    def cube(cls, dim: int, radius: int, nu: int = 0) -> "Box":
        return cls((0,) * dim, (radius,) * dim, nu)

    @classmethod
    def lattice(cls, dims: Dims, radius_j: int, radius_n: int | None = None) -> "Box":
        """Origin-centred box in Z^{d+nu} with one radius per coordinate kind."""
        radius_n = radius_j if radius_n is None else radius_n
        return cls((0,) * dims.total, (radius_j,) * dims.d + (radius_n,) * dims.nu, dims.nu)

    @property
    def dim(self) -> int:
        return len(self.radii)

    @property
    def d(self) -> int:
        return self.dim - self.nu

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, COORD_DTYPE) - np.asarray(self.radii, COORD_DTYPE)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, COORD_DTYPE) + np.asarray(self.radii, COORD_DTYPE)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(2 * r + 1 for r in self.radii)

    def __len__(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def contains(self, coords: np.ndarray) -> np.ndarray:
        c = np.asarray(coords)
        return np.all(np.abs(c - np.asarray(self.center)) <= np.asarray(self.radii), axis=-1)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def spatial(self) -> "Box":
        """Projection onto the spatial axes."""
        return Box(self.center[: self.d], self.radii[: self.d], 0)

    def shifted(self, k: Sequence[int]) -> "Box":
        return Box(tuple(c + int(s) for c, s in zip(self.center, k)), self.radii, self.nu)

    def with_radii(self, radii: Sequence[int]) -> "Box":
        return Box(self.center, tuple(radii), self.nu)

    def sites(self) -> np.ndarray:
        """All sites in n-major lexicographic order, shape (|box|, dim)."""
        axes = [np.arange(l, h + 1, dtype=COORD_DTYPE) for l, h in zip(self.lo, self.hi)]
        # meshgrid over (n..., j...) so that n is the slowest-varying key
        order = list(range(self.d, self.dim)) + list(range(self.d))
        grids = np.meshgrid(*[axes[a] for a in order], indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=1)
        out = np.empty_like(flat)
        out[:, order] = flat
        return out

    def array_index(self, coords: np.ndarray) -> tuple[np.ndarray, ...]:
        """Index tuple into an ndarray of shape ``self.shape`` (axes in (j, n) order)."""
        c = np.asarray(coords) - self.lo
        return tuple(c[..., a] for a in range(self.dim))


@dataclass(frozen=True)
class ElementaryRegion:
    """``R`` or ``R \\ (R + k)`` for a box ``R``."""

    base: Box
    cut: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.cut is not None:
            cut = tuple(int(c) for c in self.cut)
            if len(cut) != self.base.dim:
                raise ValueError("cut shift must match base dimension")
            object.__setattr__(self, "cut", cut)

    @classmethod
    def of(cls, region: "ElementaryRegion | Box") -> "ElementaryRegion":
        return region if isinstance(region, ElementaryRegion) else cls(region)

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def diameter(self) -> int:
        return 2 * max(self.base.radii) if self.base.radii else 0

    def contains(self, coords: np.ndarray) -> np.ndarray:
        inside = self.base.contains(coords)
        if self.cut is not None:
            inside &= ~self.base.shifted(self.cut).contains(coords)
        return inside

    def sites(self) -> np.ndarray:
        s = self.base.sites()
        if self.cut is None:
            return s
        return s[~self.base.shifted(self.cut).contains(s)]

    def __len__(self) -> int:
        return len(self.sites())

    def spatial(self) -> "ElementaryRegion":
        cut = None if self.cut is None else self.cut[: self.base.d]
        if cut is not None and any(self.cut[self.base.d:]):
            raise ValueError("cut with a frequency component has no spatial projection")
        return ElementaryRegion(self.base.spatial(), cut)


def enumerate_region(region: ElementaryRegion | Box) -> list[LatticeSite]:
    """Sites of ``region`` as LatticeSite values in canonical order."""
    region = ElementaryRegion.of(region)
    d = region.base.d
    return [LatticeSite.from_coords(row, d) for row in region.sites()]


class SiteIndex:
    """Dense lookup from coordinates to row numbers of a site array."""

    def __init__(self, sites: np.ndarray):
        self.sites = np.asarray(sites, dtype=COORD_DTYPE)
        if self.sites.ndim != 2:
            raise ValueError("sites must be a 2-d array")
        if len(self.sites) == 0:
            self.lo = np.zeros(self.sites.shape[1], COORD_DTYPE)
            self._table = np.full((1,) * self.sites.shape[1], -1, dtype=np.int64)
            return
        self.lo = self.sites.min(axis=0)
        shape = tuple(self.sites.max(axis=0) - self.lo + 1)
        self._table = np.full(shape, -1, dtype=np.int64)
        self._table[tuple((self.sites - self.lo).T)] = np.arange(len(self.sites))
        if (self._table >= 0).sum() != len(self.sites):
            raise ValueError("duplicate sites")

    def __len__(self) -> int:
        return len(self.sites)

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row numbers of ``coords``; -1 where absent."""
        c = np.asarray(coords, dtype=COORD_DTYPE) - self.lo
        shape = np.asarray(self._table.shape)
        ok = np.all((c >= 0) & (c < shape), axis=-1)
        out = np.full(c.shape[:-1], -1, dtype=np.int64)
        if np.any(ok):
            out[ok] = self._table[tuple(c[ok].T)]
        return out


def unit_vectors(dim: int) -> np.ndarray:
    return np.concatenate([np.eye(dim, dtype=COORD_DTYPE), -np.eye(dim, dtype=COORD_DTYPE)])


def interior_boundary(
    region: ElementaryRegion | Box | np.ndarray, ambient: ElementaryRegion | Box | np.ndarray
) -> np.ndarray:
    """Sites of ``region`` with an l1-neighbour in ``ambient \\ region``.

    Both arguments may be regions or explicit site arrays.  Raises
    ``ValueError`` when ``region`` is not contained in ``ambient``.
    """
    w = _as_sites(region)
    amb = SiteIndex(_as_sites(ambient))
    if len(w) and np.any(amb.lookup(w) < 0):
        raise ValueError("region is not contained in ambient")
    widx = SiteIndex(w)
    keep = np.zeros(len(w), dtype=bool)
    for e in unit_vectors(w.shape[1] if len(w) else amb.sites.shape[1]):
        nb = w + e
        keep |= (amb.lookup(nb) >= 0) & (widx.lookup(nb) < 0)
    return w[keep]


def _as_sites(obj: ElementaryRegion | Box | np.ndarray | Iterable) -> np.ndarray:
    if isinstance(obj, (ElementaryRegion, Box)):
        return ElementaryRegion.of(obj).sites()
    arr = np.asarray(obj, dtype=COORD_DTYPE)
    return arr.reshape(-1, arr.shape[-1]) if arr.size else arr.reshape(0, 1)
