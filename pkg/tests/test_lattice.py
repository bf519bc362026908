import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnlsqp.lattice import Box, Dims, ElementaryRegion, LatticeSite, SiteIndex, enumerate_region, interior_boundary, l1_norm


def test_l1_norm_examples():
    assert l1_norm(LatticeSite((0,), (0,))) == 0
    assert l1_norm(LatticeSite((3,), (-4,))) == 7
    assert l1_norm(LatticeSite((1, -2), (0, 5))) == 8


@given(st.lists(st.integers(-50, 50), min_size=3, max_size=3), st.lists(st.integers(-50, 50), min_size=3, max_size=3))
def test_l1_triangle(a, b):
    sa, sb = LatticeSite(a[:1], a[1:]), LatticeSite(b[:1], b[1:])
    assert l1_norm(sa + sb) <= l1_norm(sa) + l1_norm(sb)
    assert l1_norm(-sa) == l1_norm(sa)


def test_enumerate_counts():
    assert len(enumerate_region(Box.cube(2, 1))) == 9
    assert len(ElementaryRegion(Box.cube(2, 2), (5, 5)).sites()) == 25
    assert len(ElementaryRegion(Box.cube(2, 2), (2, 2)).sites()) == 16


@settings(max_examples=40)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(-6, 6), st.integers(-6, 6))
def test_enumerate_matches_bruteforce(r1, r2, k1, k2):
    reg = ElementaryRegion(Box((0, 0), (r1, r2)), (k1, k2))
    brute = [
        (a, b)
        for a in range(-r1, r1 + 1)
        for b in range(-r2, r2 + 1)
        if not (abs(a - k1) <= r1 and abs(b - k2) <= r2)
    ]
    assert sorted(map(tuple, reg.sites().tolist())) == sorted(brute)


def test_site_order_is_n_major():
    s = Box.lattice(Dims(1, 1), 1).sites()
    # n (last column) is the slowest key
    assert s[:, 1].tolist() == [-1, -1, -1, 0, 0, 0, 1, 1, 1]
    assert s[:3, 0].tolist() == [-1, 0, 1]


def test_interior_boundary_examples():
    amb = Box.cube(2, 3)
    assert len(interior_boundary(amb, amb)) == 0
    single = np.array([[0, 0]])
    assert interior_boundary(single, amb).tolist() == [[0, 0]]
    ring = interior_boundary(Box.cube(2, 1), amb)
    assert len(ring) == 8 and [0, 0] not in ring.tolist()


def test_interior_boundary_requires_containment():
    with pytest.raises(ValueError):
        interior_boundary(Box.cube(2, 4), Box.cube(2, 3))


@settings(max_examples=30)
@given(st.integers(0, 2), st.integers(-2, 2), st.integers(-2, 2))
def test_interior_boundary_property(r, c1, c2):
    amb = ElementaryRegion(Box.cube(2, 4), (6, 0))
    w = Box((c1, c2), (r, r))
    ws = w.sites()
    amb_idx = SiteIndex(amb.sites())
    if np.any(amb_idx.lookup(ws) < 0):
        return
    out = interior_boundary(w, amb)
    w_idx = SiteIndex(ws)
    assert np.all(w_idx.lookup(out) >= 0)
    for s in out:
        nbs = [s + e for e in ([1, 0], [-1, 0], [0, 1], [0, -1])]
        assert any(amb_idx.lookup(np.array(n)) >= 0 and w_idx.lookup(np.array(n)) < 0 for n in nbs)


def test_site_index_roundtrip():
    s = ElementaryRegion(Box.cube(3, 2), (1, 1, 1)).sites()
    idx = SiteIndex(s)
    assert idx.lookup(s).tolist() == list(range(len(s)))
    assert idx.lookup(np.array([[9, 9, 9]]))[0] == -1


def test_dims_validation():
    with pytest.raises(ValueError):
        Dims(0, 1)
    with pytest.raises(ValueError):
        Box((0,), (-1,))
