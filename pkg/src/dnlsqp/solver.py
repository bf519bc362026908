"""Modified Newton iteration on growing boxes with explicit frequency updates."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .disorder import DisorderRealization
from .field import CoeffField, DecayFit, Frequencies, decay_fit, eval_F, laplacian, nonlinear_terms
from .lattice import Box, Dims
from .linop import Factorization, Singular, assemble_T

CONVERGED = "Converged"
RESONANT = "Resonant"
STAGNATED = "Stagnated"
BUDGET = "BudgetExceeded"


class ZeroAmplitude(ValueError):
    def __init__(self, k: int):
        self.k = k
        super().__init__(f"amplitude a_{k} is zero")


class ResonantStep(ArithmeticError):
    def __init__(self, message: str, condition: float = math.inf, site: str = ""):
        self.condition = condition
        self.site = site
        super().__init__(message)


@dataclass
class SolverConfig:
    dims: Dims
    amplitudes: Sequence[float]
    resonant: Sequence[Sequence[int]]
    eps: float = 1e-3
    delta: float = 1e-3
    p: int = 1
    M: int = 4
    max_stage: int = 8
    box_cap: int = 16
    residual_target: float = 1e-11
    condition_cap: float = 1e12
    dense_cap: int = 6000

    def __post_init__(self) -> None:
        self.amplitudes = tuple(float(a) for a in self.amplitudes)
        self.resonant = tuple(tuple(int(c) for c in j) for j in self.resonant)
        self.validate()

    def validate(self) -> None:
        if self.M < 2 or self.M <= 2 * self.p:
            raise ValueError(f"M must exceed 2p and be >= 2 (M={self.M}, p={self.p})")
        if self.p < 1:
            raise ValueError("p must be a positive integer")
        if len(self.amplitudes) != self.dims.nu or len(self.resonant) != self.dims.nu:
            raise ValueError("need nu amplitudes and nu resonant sites")
        if any(len(j) != self.dims.d for j in self.resonant):
            raise ValueError("resonant sites must have d coordinates")
        if len(set(self.resonant)) != len(self.resonant):
            raise ValueError("resonant sites must be distinct")
        if sum(abs(a) for a in self.amplitudes) >= 1:
            raise ValueError("sum of |a_k| must be below 1")
        if self.eps < 0 or self.delta < 0:
            raise ValueError("eps and delta must be nonnegative")
        if self.max_stage < 0 or self.box_cap < 1:
            raise ValueError("max_stage >= 0 and box_cap >= 1 required")
        if not self.residual_target > 0 or not self.condition_cap > 0:
            raise ValueError("residual_target and condition_cap must be positive")
        if self.min_radius > self.box_cap:
            raise ValueError("box_cap does not contain the resonant set")

    @property
    def min_radius(self) -> int:
        """Smallest origin-centred radius containing S u -S."""
        return max(1, max(max(abs(c) for c in j) for j in self.resonant))

    def box_radius(self, stage: int) -> int:
        """M^stage, floored at the resonant set and capped at ``box_cap``."""
        return int(min(max(self.M**stage, self.min_radius), self.box_cap))

    def box(self, stage: int) -> Box:
        return Box.lattice(self.dims, self.box_radius(stage))


@dataclass
class SolverState:
    stage: int
    N: int
    y: CoeffField
    omega: Frequencies
    kappa: float
    delta_step: float
    alpha: float
    condition: float = 0.0
    F: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)


@dataclass
class StageRow:
    stage: int
    N: int
    kappa: float
    delta: float
    alpha: float
    omega_error: float
    condition: float


@dataclass
class SolveOutcome:
    status: str
    state: SolverState
    table: list[StageRow]
    diagnostics: dict = field(default_factory=dict)
    failure: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def table_text(self) -> str:
        buf = io.StringIO()
        buf.write("stage,N,kappa,delta,alpha,omega_error,condition\n")
        for r in self.table:
            buf.write(f"{r.stage},{r.N},{float(r.kappa)!r},{float(r.delta)!r},{float(r.alpha)!r},{float(r.omega_error)!r},{float(r.condition)!r}\n")
        return buf.getvalue()


def resonant_potentials(y: CoeffField, pot: DisorderRealization) -> np.ndarray:
    return np.array([pot.value(j) for j in y.resonant])


def q_update(y: CoeffField, eps: float, delta: float, pot: DisorderRealization) -> Frequencies:
    """Frequencies from the Q-equations at (j_k, -e_k)."""
    for k, a in enumerate(y.amplitudes):
        if a == 0:
            raise ZeroAmplitude(k)
    idx = y.box.array_index(y.pinned_sites("u"))
    # v * (u / a) is exactly v at the pinned value a, so the unperturbed case is exact
    rest = eps * laplacian(y.uhat, y.dims.d)[idx]
    if delta != 0.0:
        rest = rest + delta * nonlinear_terms(y)[0][idx]
    return Frequencies(resonant_potentials(y, pot) * (y.uhat[idx] / y.amplitudes) + rest / y.amplitudes)


def _measure(y: CoeffField, eps: float, delta: float, pot: DisorderRealization):
    omega = q_update(y, eps, delta, pot)
    F = eval_F(y, omega, eps, delta, pot)
    mask = y.free_mask()
    kappa = float(np.sqrt(np.sum(F[0][mask] ** 2) + np.sum(F[1][mask] ** 2)))
    return omega, F, kappa


def initial_state(config: SolverConfig, pot: DisorderRealization, y_init: CoeffField | None = None) -> SolverState:
    if y_init is None:
        y = CoeffField.initial(config.dims, config.box(0), config.p, config.amplitudes, config.resonant)
    else:
        y = y_init.copy()
        y.amplitudes = np.asarray(config.amplitudes, dtype=float)
        y.uhat[y.box.array_index(y.pinned_sites("u"))] = y.amplitudes
        y.vhat[y.box.array_index(y.pinned_sites("v"))] = y.amplitudes
    omega, F, kappa = _measure(y, config.eps, config.delta, pot)
    return SolverState(0, max(y.box.radii), y, omega, kappa, 0.0, decay_fit(y).alpha, 0.0, F)


def newton_step(state: SolverState, pot: DisorderRealization, config: SolverConfig) -> SolverState:
    """One stage: pad to the next box, refresh omega, solve T Delta = -F."""
    stage = state.stage + 1
    N = max(config.box_radius(stage), state.N)
    box = Box.lattice(config.dims, N)
    y = state.y.padded(box) if box != state.y.box else state.y.copy()
    if not pot.covers(box.spatial()):
        raise ValueError("potential box does not cover the solver box")
    omega, F, kappa = _measure(y, config.eps, config.delta, pot)
    if kappa == 0.0:
        return SolverState(stage, N, y, omega, 0.0, 0.0, decay_fit(y).alpha, state.condition, F)
    exclude = np.concatenate([y.pinned_sites("u"), y.pinned_sites("v")])
    op = assemble_T(y, omega, 0.0, config.eps, config.delta, pot, box, exclude)
    if op.n_sites > config.dense_cap * 4:
        raise ValueError(f"{op.n_sites} unknown sites exceed the solver budget")
    try:
        fac = Factorization(op)
    except Singular as exc:
        raise ResonantStep(str(exc), math.inf, exc.label) from None
    cond = fac.condition()
    if not cond <= config.condition_cap:
        raise ResonantStep(f"condition {cond:.3e} exceeds cap {config.condition_cap:.1e}", cond)
    idx = box.array_index(op.sites)
    rhs = np.concatenate([F[0][idx], F[1][idx]])
    step = -fac.solve(rhs)
    m = op.n_sites
    new = y.copy()
    new.uhat[idx] += step[:m]
    new.vhat[idx] += step[m:]
    omega, F, kappa = _measure(new, config.eps, config.delta, pot)
    dstep = float(np.linalg.norm(step))
    return SolverState(stage, N, new, omega, kappa, dstep, decay_fit(new).alpha, cond, F)


def weighted_decay_sum(y: CoeffField, c: float) -> float:
    """sum over (j, n) not in S of e^{c(|n| + |j|)} |uhat(j, n)|."""
    mask = np.ones(y.box.shape, dtype=bool)
    mask[y.box.array_index(y.pinned_sites("u"))] = False
    w = np.exp(c * y.l1_grid()) * np.abs(y.uhat)
    return float(np.sum(w[mask]))


def _row(state: SolverState, vv: np.ndarray) -> StageRow:
    err = float(np.max(np.abs(state.omega.omega - vv)))
    return StageRow(state.stage, state.N, state.kappa, state.delta_step, state.alpha, err, state.condition)


def solve(config: SolverConfig, pot: DisorderRealization, y_init: CoeffField | None = None) -> SolveOutcome:
    """Iterate :func:`newton_step` until the residual target or the stage budget."""
    state = initial_state(config, pot, y_init)
    vv = resonant_potentials(state.y, pot)
    table = [_row(state, vv)]
    alpha1 = None
    status = BUDGET
    failure: dict = {}
    while True:
        if state.kappa <= config.residual_target:
            status = CONVERGED
            break
        if state.stage >= config.max_stage:
            break
        if len(table) >= 3 and table[-1].kappa > 0.9 * table[-3].kappa:
            status = STAGNATED
            break
        try:
            state = newton_step(state, pot, config)
        except ResonantStep as exc:
            status = RESONANT
            failure = {"message": str(exc), "condition": exc.condition, "site": exc.site, "stage": state.stage + 1}
            break
        table.append(_row(state, vv))
        if state.stage == 1:
            alpha1 = state.alpha
    diag = diagnostics(state, vv, config, alpha1)
    return SolveOutcome(status, state, table, diag, failure)


def diagnostics(state: SolverState, vv: np.ndarray, config: SolverConfig, alpha1: float | None) -> dict:
    y = state.y
    fit: DecayFit = decay_fit(y)
    c = fit.alpha / 2 if np.isfinite(fit.alpha) else math.inf
    wsum = weighted_decay_sum(y, c) if np.isfinite(c) else (0.0 if weighted_decay_sum(y, 0.0) == 0 else math.inf)
    scale = config.eps + config.delta
    return {
        "pinning_error": y.pinning_error(),
        "symmetry_error": y.symmetry_error(),
        "alpha_final": fit.alpha,
        "alpha_stage1": alpha1,
        "weighted_sum": wsum,
        "weighted_bound": math.sqrt(scale),
        "omega_error": float(np.max(np.abs(state.omega.omega - vv))),
        "omega_error_ratio": float(np.max(np.abs(state.omega.omega - vv)) / scale) if scale > 0 else 0.0,
        "support_radius": y.support_radius(),
    }


@dataclass
class SweepPoint:
    V: np.ndarray
    status: str
    omega: np.ndarray
    kappa: float
    condition: float


def continuation_sweep(
    config: SolverConfig,
    pot: DisorderRealization,
    grid: Sequence[Sequence[float]],
    warm_start: bool = True,
) -> list[SweepPoint]:
    """Independent solves with v_{j_k} set to each grid point."""
    out = []
    prev: CoeffField | None = None
    for point in grid:
        V = np.atleast_1d(np.asarray(point, dtype=float))
        local = pot.with_overrides({j: float(v) for j, v in zip(config.resonant, V)})
        res = solve(config, local, prev if warm_start else None)
        cond = res.failure.get("condition", res.state.condition)
        out.append(SweepPoint(V, res.status, np.array(res.state.omega.omega), res.state.kappa, cond))
        prev = res.state.y if res.converged else None
    return out


def sweep_table(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    nu = len(points[0].V) if points else 0
    buf.write(",".join([f"V{k + 1}" for k in range(nu)] + ["status"] + [f"omega{k + 1}" for k in range(nu)] + ["kappa", "condition"]) + "\n")
    for p in points:
        buf.write(",".join([repr(float(v)) for v in p.V] + [p.status] + [repr(float(w)) for w in p.omega] + [repr(p.kappa), repr(float(p.condition))]) + "\n")
    return buf.getvalue()
