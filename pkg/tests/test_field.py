import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnlsqp.disorder import Distribution, from_values, sample
from dnlsqp.field import (
    CoeffField,
    Frequencies,
    convolve_n,
    decay_fit,
    eval_F,
    load_field,
    nonlinear_terms,
    reconstruct_field,
    reconstruct_u,
)
from dnlsqp.lattice import Box, Dims


def brute_convolve(x, z, nr):
    """Nested-loop reference with zero padding, one spatial axis, nu = 1."""
    out = np.zeros_like(x)
    for j in range(x.shape[0]):
        for n in range(-nr, nr + 1):
            s = 0.0
            for m in range(-nr, nr + 1):
                if abs(n - m) <= nr:
                    s += x[j, m + nr] * z[j, n - m + nr]
            out[j, n + nr] = s
    return out


def as_dict(a, radii):
    return {tuple(np.array(i) - radii): v for i, v in np.ndenumerate(a) if v != 0}


def dict_conv(a, b, d):
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            if ka[:d] != kb[:d]:
                continue
            k = ka[:d] + tuple(x + y for x, y in zip(ka[d:], kb[d:]))
            out[k] = out.get(k, 0.0) + va * vb
    return out


def brute_nonlinear(y):
    """Untruncated ((u*v)^{*p} * u, ... * v) by dictionary sums, read back on the box."""
    d, r = y.dims.d, np.asarray(y.box.radii)
    u, v = as_dict(y.uhat, r), as_dict(y.vhat, r)
    w = dict_conv(u, v, d)
    acc = w
    for _ in range(y.p - 1):
        acc = dict_conv(acc, w, d)
    nu, nv = dict_conv(acc, u, d), dict_conv(acc, v, d)
    outs = []
    for m in (nu, nv):
        arr = np.zeros(y.box.shape)
        for k, val in m.items():
            if np.all(np.abs(k) <= r):
                arr[tuple(np.array(k) + r)] = val
        outs.append(arr)
    return outs


def random_field(rng, dims, radius, p=1, scale=0.05, support=None):
    box = Box.lattice(dims, radius)
    y = CoeffField.initial(dims, box, p, [0.1] * dims.nu, [tuple([k] + [0] * (dims.d - 1)) for k in range(dims.nu)])
    u = rng.normal(size=box.shape) * scale
    if support is not None:
        u[y.l1_grid() > support] = 0.0
    u[box.array_index(y.pinned_sites("u"))] = y.amplitudes
    v = np.flip(u, axis=tuple(range(dims.d, dims.total)))
    return y.with_components(u, v)


def test_convolve_identity_and_single_term():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 7))
    delta0 = np.zeros((3, 7))
    delta0[:, 3] = 1.0
    assert np.array_equal(convolve_n(x, delta0, 1), x)
    a = 0.3
    xs = np.zeros((3, 7))
    zs = np.zeros((3, 7))
    xs[1, 2] = a
    zs[1, 4] = a
    out = convolve_n(xs, zs, 1)
    expect = np.zeros((3, 7))
    expect[1, 3] = a * a
    assert np.array_equal(out, expect)


def test_convolve_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=(4, 9)) * (rng.random((4, 9)) < 0.4)
        z = rng.normal(size=(4, 9)) * (rng.random((4, 9)) < 0.4)
        assert np.allclose(convolve_n(x, z, 1), brute_convolve(x, z, 4), atol=1e-15)


def test_convolve_two_frequency_axes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5))
    z = rng.normal(size=(2, 5, 5))
    out = convolve_n(x, z, 2)
    ref = np.zeros_like(x)
    for j, a, b, c, e in itertools.product(range(2), range(-2, 3), range(-2, 3), range(-2, 3), range(-2, 3)):
        if abs(a - c) <= 2 and abs(b - e) <= 2:
            ref[j, a + 2, b + 2] += x[j, c + 2, e + 2] * z[j, a - c + 2, b - e + 2]
    assert np.allclose(out, ref, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_convolve_commutative_exactly(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 11))
    z = rng.normal(size=(3, 11))
    assert np.array_equal(convolve_n(x, z, 1), convolve_n(z, x, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_convolve_associative_small_support(seed):
    rng = np.random.default_rng(seed)
    r, s = 9, 3  # support radius <= box radius / (p + 1) with p = 2
    def small():
        a = np.zeros((2, 2 * r + 1))
        a[:, r - s:r + s + 1] = rng.normal(size=(2, 2 * s + 1))
        return a
    x, y, z = small(), small(), small()
    left = convolve_n(convolve_n(x, y, 1), z, 1)
    right = convolve_n(x, convolve_n(y, z, 1), 1)
    assert np.allclose(left, right, atol=1e-13)


def test_convolve_rejects_even_axes():
    with pytest.raises(ValueError):
        convolve_n(np.zeros((2, 4)), np.zeros((2, 4)), 1)


def test_eval_F_unperturbed_zero():
    dims = Dims(1, 2)
    pot = sample(Distribution(), Box.cube(1, 5), 4)
    y = CoeffField.initial(dims, Box.lattice(dims, 3), 1, [0.1, 0.2], [(0,), (2,)])
    om = Frequencies([pot.value((0,)), pot.value((2,))])
    f1, f2 = eval_F(y, om, 0.0, 0.0, pot)
    assert np.all(f1 == 0) and np.all(f2 == 0)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_eval_F_breather_zero(p):
    dims = Dims(1, 1)
    pot = sample(Distribution(), Box.cube(1, 4), 11)
    a, delta = 0.1, 1e-2
    y = CoeffField.initial(dims, Box.lattice(dims, 3), p, [a], [(0,)])
    om = Frequencies([pot.value((0,)) + delta * a ** (2 * p)])
    f1, f2 = eval_F(y, om, 0.0, delta, pot)
    mask = y.free_mask()
    assert np.max(np.abs(f1[mask])) == 0.0 and np.max(np.abs(f2[mask])) == 0.0
    # the Q-equation entry vanishes as well: -omega a + v a + delta a^{2p+1} = 0
    idx = y.box.array_index(y.pinned_sites("u"))
    assert abs(f1[idx][0]) < 1e-17


@pytest.mark.parametrize("p", [1, 2])
def test_nonlinear_terms_match_bruteforce(p):
    rng = np.random.default_rng(3 + p)
    y = random_field(rng, Dims(1, 1), 3, p=p)
    got = nonlinear_terms(y)
    ref = brute_nonlinear(y)
    for g, r in zip(got, ref):
        assert np.allclose(g, r, atol=1e-15, rtol=1e-12)


def test_nonlinear_terms_two_frequencies():
    rng = np.random.default_rng(9)
    y = random_field(rng, Dims(1, 2), 2)
    for g, r in zip(nonlinear_terms(y), brute_nonlinear(y)):
        assert np.allclose(g, r, atol=1e-15, rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2))
def test_conjugate_symmetry_propagates(seed, p):
    rng = np.random.default_rng(seed)
    y = random_field(rng, Dims(1, 1), 3, p=p)
    pot = sample(Distribution(), Box.cube(1, 3), seed % 1000)
    f1, f2 = eval_F(y, Frequencies([0.37]), 0.01, 0.05, pot)
    assert np.max(np.abs(f2 - np.flip(f1, axis=1))) <= 1e-13


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_linear_in_y_without_nonlinearity(seed):
    rng = np.random.default_rng(seed)
    dims = Dims(1, 1)
    pot = sample(Distribution(), Box.cube(1, 3), 1)
    y1, y2 = random_field(rng, dims, 3), random_field(rng, dims, 3)
    zero = y1.with_components(np.zeros_like(y1.uhat), np.zeros_like(y1.vhat))
    ysum = y1.with_components(y1.uhat + y2.uhat, y1.vhat + y2.vhat)
    om = Frequencies([0.41])
    F = [eval_F(y, om, 0.02, 0.0, pot) for y in (ysum, y1, y2, zero)]
    for c in range(2):
        assert np.max(np.abs(F[0][c] - (F[1][c] + F[2][c] - F[3][c]))) <= 1e-12


def test_enlarging_box_keeps_values():
    rng = np.random.default_rng(5)
    dims = Dims(1, 1)
    pot = sample(Distribution(), Box.cube(1, 8), 2)
    y = random_field(rng, dims, 3, support=2)
    big = y.padded(Box.lattice(dims, 6))
    om = Frequencies([0.3])
    small_F = eval_F(y, om, 0.01, 0.02, pot)
    big_F = eval_F(big, om, 0.01, 0.02, pot)
    sl = (slice(3, 10), slice(3, 10))
    for c in range(2):
        assert np.array_equal(small_F[c], big_F[c][sl])


def test_reconstruct_initial_and_single_mode():
    dims = Dims(1, 2)
    y = CoeffField.initial(dims, Box.lattice(dims, 2), 1, [0.1, 0.2], [(0,), (1,)])
    om = Frequencies([0.3, 0.7])
    assert reconstruct_u(y, om, (0,), 0.0) == pytest.approx(0.1)
    assert reconstruct_u(y, om, (1,), 0.0) == pytest.approx(0.2)
    assert reconstruct_u(y, om, (2,), 0.0) == 0
    ts = np.linspace(0, 50, 17)
    assert np.allclose(np.abs(reconstruct_u(y, om, (0,), ts)), 0.1, atol=1e-15)
    # single mode at (0, -e_1): u = a exp(-i w1 t)
    assert np.allclose(reconstruct_u(y, om, (0,), ts), 0.1 * np.exp(-1j * 0.3 * ts))


def test_reconstruct_two_terms():
    dims = Dims(1, 1)
    y = CoeffField.initial(dims, Box.lattice(dims, 2), 1, [0.1], [(0,)])
    y.uhat[2, 2 + 2] = 0.03  # n = +2
    om = Frequencies([0.45])
    t = np.array([0.0, 1.3, 7.7])
    expect = 0.1 * np.exp(-1j * 0.45 * t) + 0.03 * np.exp(2j * 0.45 * t)
    assert np.allclose(reconstruct_u(y, om, (0,), t), expect, atol=1e-16)
    field = reconstruct_field(y, om, t)
    assert np.allclose(field[:, 2], expect, atol=1e-16)


def test_decay_fit_exact_exponential():
    dims = Dims(1, 1)
    y = CoeffField.initial(dims, Box.lattice(dims, 6), 1, [0.1], [(0,)])
    vals = np.exp(-0.7 * y.l1_grid())
    y = y.with_components(vals, vals.copy())
    fit = decay_fit(y)
    assert fit.alpha == pytest.approx(0.7, abs=1e-9)
    assert fit.max_violation <= 1e-12


def test_decay_fit_sentinel_and_noise():
    dims = Dims(1, 1)
    y = CoeffField.initial(dims, Box.lattice(dims, 6), 1, [0.1], [(0,)])
    assert decay_fit(y).alpha == np.inf
    rng = np.random.default_rng(6)
    vals = np.exp(-0.5 * y.l1_grid()) * (1 + 0.01 * rng.normal(size=y.box.shape))
    fit = decay_fit(y.with_components(vals, np.flip(vals, axis=1)))
    assert abs(fit.alpha - 0.5) < 0.02


def test_dump_roundtrip():
    rng = np.random.default_rng(7)
    y = random_field(rng, Dims(1, 1), 3)
    back = load_field(y.dump(), Dims(1, 1))
    assert np.array_equal(back.uhat, y.uhat) and np.array_equal(back.vhat, y.vhat)
    assert back.resonant == y.resonant and np.array_equal(back.amplitudes, y.amplitudes)


def test_padding_and_restriction():
    rng = np.random.default_rng(8)
    y = random_field(rng, Dims(1, 1), 2)
    big = y.padded(Box.lattice(Dims(1, 1), 4))
    assert big.support_radius() <= 2
    back = big.restricted(y.box)
    assert np.array_equal(back.uhat, y.uhat)
    with pytest.raises(ValueError):
        y.padded(Box.lattice(Dims(1, 1), 1))
