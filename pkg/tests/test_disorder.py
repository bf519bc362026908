import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnlsqp.disorder import Distribution, assemble_H, from_values, load_realization, sample, spectrum_bounds, substream_seed
from dnlsqp.lattice import Box, ElementaryRegion


def test_degenerate_distribution():
    pot = sample(Distribution(0.5, 0.5), Box.cube(2, 3), 1)
    assert np.all(pot.values == 0.5)


def test_same_seed_same_values():
    a = sample(Distribution(), Box.cube(2, 4), 99)
    b = sample(Distribution(), Box.cube(2, 4), 99)
    assert np.array_equal(a.values, b.values)
    c = sample(Distribution(), Box.cube(2, 4), 100)
    assert not np.array_equal(a.values, c.values)


def test_law_of_large_numbers():
    pot = sample(Distribution(), Box.cube(1, 5000), 3)
    assert pot.values.size >= 10_000
    assert abs(pot.values.mean() - 0.5) < 0.02
    assert pot.values.min() >= 0 and pot.values.max() < 1


def test_per_site_keying_survives_box_change():
    a = sample(Distribution(), Box.cube(2, 3), 5)
    b = sample(Distribution(), Box((2, -1), (3, 3)), 5)
    overlap = a.box.sites()[b.box.contains(a.box.sites())]
    assert np.array_equal(a.at(overlap), b.at(overlap))


def test_overrides_and_reload():
    pot = sample(Distribution(), Box.cube(1, 4), 8).with_overrides({(0,): 0.25, (2,): 0.75})
    assert pot.value((0,)) == 0.25 and pot.value((2,)) == 0.75
    for use in ("table", "header"):
        back = load_realization(pot.to_table(), use)
        assert np.array_equal(back.values, pot.values)
        assert back.overrides == pot.overrides
    grown = pot.resampled(Box.cube(1, 6))
    assert grown.value((0,)) == 0.25
    assert grown.value((1,)) == pot.value((1,))


def test_assemble_H_structure():
    pot = from_values([0.1, 0.2, 0.3])
    h = assemble_H(0.0, pot, Box.cube(1, 1)).matrix
    assert np.array_equal(h, np.diag([0.1, 0.2, 0.3]))
    h = assemble_H(0.1, pot, Box.cube(1, 1)).matrix
    expect = np.diag([0.1, 0.2, 0.3]) + 0.1 * (np.eye(3, k=1) + np.eye(3, k=-1))
    assert np.array_equal(h, expect)


def test_spectrum_bounds_examples():
    assert spectrum_bounds(0.01, Distribution(), 1) == pytest.approx((-0.02, 1.02))
    assert spectrum_bounds(0.0, Distribution(0.2, 0.7), 3) == (0.2, 0.7)
    assert spectrum_bounds(0.05, Distribution(), 2) == pytest.approx((-0.2, 1.2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.integers(1, 2))
def test_assembly_symmetric_and_bounded(seed, eps, d):
    pot = sample(Distribution(), Box.cube(d, 3), seed)
    region = ElementaryRegion(Box.cube(d, 3), (2,) * d)
    h = assemble_H(eps, pot, region).matrix
    assert np.array_equal(h, h.T)
    lo, hi = spectrum_bounds(eps, pot.dist, d)
    ev = np.linalg.eigvalsh(h)
    assert ev.min() >= lo - 1e-12 and ev.max() <= hi + 1e-12


def test_region_outside_potential():
    with pytest.raises(ValueError):
        assemble_H(0.1, sample(Distribution(), Box.cube(1, 2), 0), Box.cube(1, 3))


def test_substreams_are_distinct():
    assert substream_seed(1, "a") != substream_seed(1, "b")
    assert substream_seed(1, "a") == substream_seed(1, "a")
