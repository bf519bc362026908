import math

import numpy as np
import pytest

from dnlsqp.disorder import Distribution, sample
from dnlsqp.field import CoeffField, Frequencies, eval_F
from dnlsqp.lattice import Box, Dims
from dnlsqp.solver import (
    CONVERGED,
    RESONANT,
    SolverConfig,
    SolverState,
    ZeroAmplitude,
    continuation_sweep,
    initial_state,
    newton_step,
    q_update,
    solve,
    sweep_table,
)

DIMS = Dims(1, 1)


@pytest.fixture(scope="module")
def pot():
    return sample(Distribution(), Box.cube(1, 20), 2024)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(DIMS, [0.1], [(0,)], M=2, p=1)
    with pytest.raises(ValueError):
        SolverConfig(DIMS, [0.6, 0.5], [(0,), (1,)])
    with pytest.raises(ValueError):
        SolverConfig(DIMS, [1.2], [(0,)])
    with pytest.raises(ValueError):
        SolverConfig(DIMS, [0.1], [(40,)], box_cap=16)
    cfg = SolverConfig(DIMS, [0.1], [(0,)], M=4, box_cap=16)
    assert [cfg.box_radius(i) for i in range(4)] == [1, 4, 16, 16]


def test_q_update_examples(pot):
    y = CoeffField.initial(DIMS, Box.lattice(DIMS, 3), 1, [0.1], [(0,)])
    assert q_update(y, 0.0, 0.0, pot).omega[0] == pot.value((0,))
    w = q_update(y, 0.0, 1e-2, pot).omega[0]
    assert w - pot.value((0,)) == pytest.approx(1e-2 * 0.01, abs=1e-16)
    y.amplitudes[0] = 0.0
    with pytest.raises(ZeroAmplitude):
        q_update(y, 0.0, 0.0, pot)


def test_q_update_redundant_path(pot):
    rng = np.random.default_rng(0)
    dims = Dims(1, 2)
    y = CoeffField.initial(dims, Box.lattice(dims, 2), 1, [0.1, 0.05], [(0,), (1,)])
    u = rng.normal(size=y.box.shape) * 0.01
    u[y.box.array_index(y.pinned_sites("u"))] = y.amplitudes
    y = y.with_components(u, np.flip(u, axis=(1, 2)))
    w = q_update(y, 0.01, 0.02, pot).omega
    f1, _ = eval_F(y, Frequencies([0.0, 0.0]), 0.01, 0.02, pot)
    ref = f1[y.box.array_index(y.pinned_sites("u"))] / y.amplitudes
    assert np.allclose(w, ref, rtol=1e-13, atol=0)


def test_zero_residual_step_is_identity(pot):
    cfg = SolverConfig(DIMS, [0.1], [(0,)], eps=0.0, delta=0.0)
    st = initial_state(cfg, pot)
    nxt = newton_step(st, pot, cfg)
    assert nxt.kappa == 0.0
    inner = nxt.y.restricted(st.y.box)
    assert np.array_equal(inner.uhat, st.y.uhat) and np.array_equal(inner.vhat, st.y.vhat)


def test_unperturbed_solve(pot):
    res = solve(SolverConfig(DIMS, [0.1], [(0,)], eps=0.0, delta=0.0), pot)
    assert res.status == CONVERGED and res.state.stage == 0
    assert res.state.kappa == 0.0
    assert res.state.omega.omega[0] == pot.value((0,))


@pytest.mark.parametrize("p", [1, 2])
def test_breather_solve(pot, p):
    a, delta = 0.1, 1e-2
    res = solve(SolverConfig(DIMS, [a], [(0,)], eps=0.0, delta=delta, p=p, M=2 * p + 2), pot)
    assert res.converged and res.state.stage == 0
    y0 = CoeffField.initial(DIMS, res.state.y.box, p, [a], [(0,)])
    assert np.array_equal(res.state.y.uhat, y0.uhat)
    assert abs(res.state.omega.omega[0] - pot.value((0,)) - delta * a ** (2 * p)) <= 1e-12


def test_desk_solve(desk_solution):
    res = desk_solution
    assert res.converged and res.state.kappa <= 1e-10 and res.state.stage <= 8
    d = res.diagnostics
    assert d["pinning_error"] <= 1e-12 and d["symmetry_error"] <= 1e-12
    assert d["alpha_final"] >= 0.5 * d["alpha_stage1"]
    assert d["omega_error"] <= 10 * 2e-3


def test_stagewise_invariants(desk_config, desk_pot):
    st = initial_state(desk_config, desk_pot)
    kappas = [st.kappa]
    while st.kappa > desk_config.residual_target and st.stage < desk_config.max_stage:
        st = newton_step(st, desk_pot, desk_config)
        kappas.append(st.kappa)
        assert st.y.pinning_error() == 0.0
        assert st.y.symmetry_error() <= 1e-12
        assert st.y.support_radius() <= max(desk_config.M**st.stage, 1)
        assert st.y.box.radii[0] == desk_config.box_radius(st.stage)
    assert all(b < a for a, b in zip(kappas, kappas[1:]))
    # super-linear once the residual is small
    for a, b in zip(kappas, kappas[1:]):
        if a <= 1e-3:
            assert b <= a**1.3


def test_residual_target_respected(desk_config, desk_pot):
    res = solve(desk_config, desk_pot)
    assert res.state.kappa <= desk_config.residual_target
    text = res.table_text()
    assert text.splitlines()[0] == "stage,N,kappa,delta,alpha,omega_error,condition"
    assert len(text.splitlines()) == len(res.table) + 1


def test_sweep_unperturbed(pot):
    cfg = SolverConfig(DIMS, [0.1], [(0,)], eps=0.0, delta=0.0)
    pts = continuation_sweep(cfg, pot, [[v] for v in np.linspace(0.1, 0.9, 5)])
    assert all(p.status == CONVERGED for p in pts)
    assert all(p.omega[0] == p.V[0] for p in pts)


def test_sweep_frequency_proximity(pot):
    eps = 1e-3
    cfg = SolverConfig(DIMS, [0.1], [(0,)], eps=eps, delta=0.0)
    pts = continuation_sweep(cfg, pot, [[v] for v in np.linspace(0.05, 0.95, 7)])
    conv = [p for p in pts if p.status == CONVERGED]
    assert len(conv) >= 5
    C = max(abs(p.omega[0] - p.V[0]) for p in conv) / eps
    assert C <= 10


def test_sweep_hits_forced_resonance(pot):
    v2 = pot.value((1,))
    cfg = SolverConfig(DIMS, [0.1], [(0,)], eps=1e-3, delta=0.0, condition_cap=1e5)
    grid = [[v2 - 0.1], [v2], [v2 + 0.1]]
    pts = continuation_sweep(cfg, pot, grid)
    assert any(p.status == RESONANT for p in pts)
    assert pts[1].status == RESONANT and pts[1].condition > 1e5
    assert sweep_table(pts).count("Resonant") >= 1
