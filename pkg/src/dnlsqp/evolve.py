"""Direct time integration of the truncated lattice equation and comparisons."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .disorder import DisorderRealization, assemble_H, neighbour_pairs
from .field import CoeffField, DecayFit, Frequencies, decay_fit, reconstruct_field
from .lattice import Box

N_SAMPLES = 200
N_CHECKPOINTS = 10
# fourth-order composition of a symmetric second-order step
_YOSHIDA = (1.0 / (2.0 - 2.0 ** (1.0 / 3.0)), -(2.0 ** (1.0 / 3.0)) / (2.0 - 2.0 ** (1.0 / 3.0)))


class Unstable(ArithmeticError):
    def __init__(self, drift: float, dt: float):
        self.drift = drift
        super().__init__(f"norm drift {drift:.3e} exceeds 1e-2; reduce dt below {dt:g}")


@dataclass
class EvolutionConfig:
    box: Box
    eps: float
    delta: float
    p: int
    pot: DisorderRealization
    t_end: float
    dt: float
    integrator: str = "split"

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.integrator not in ("split", "split4", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.box.nu != 0:
            raise ValueError("evolution box must be spatial")
        if not self.pot.covers(self.box):
            raise ValueError("potential does not cover the evolution box")


@dataclass
class EvolutionReport:
    times: np.ndarray
    states: np.ndarray
    norm_drift: float
    energy_drift: float
    sites: np.ndarray
    norms: np.ndarray = field(repr=False, default=None)
    energies: np.ndarray = field(repr=False, default=None)
    checkpoints: np.ndarray = field(repr=False, default=None)

    def tail_mass(self, R: int, k: int | None = None) -> np.ndarray:
        """||u(t)||^2 outside [-R, R]^d at every sample (or sample ``k``)."""
        out = np.max(np.abs(self.sites), axis=1) > R
        mass = np.sum(np.abs(self.states[:, out]) ** 2, axis=1)
        return mass if k is None else mass[k]

    def summary_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# norm_drift = {self.norm_drift!r}\n# energy_drift = {self.energy_drift!r}\n")
        buf.write("t,norm2,energy\n")
        for t, n, e in zip(self.times, self.norms, self.energies):
            buf.write(f"{float(t)!r},{float(n)!r},{float(e)!r}\n")
        return buf.getvalue()


class _System:
    def __init__(self, cfg: EvolutionConfig):
        self.cfg = cfg
        self.sites = cfg.box.sites()
        self.index = cfg.box.array_index(self.sites)
        self.v = cfg.pot.at(self.sites)
        n = len(self.sites)
        self.lap = np.zeros((n, n))
        r, c = neighbour_pairs(self.sites)
        self.lap[r, c] = 1.0
        self.h = cfg.eps * self.lap + np.diag(self.v)
        lam, q = np.linalg.eigh(self.lap)
        self._lam, self._q = lam, q
        self._prop_cache: dict[float, np.ndarray] = {}

    def flat(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=complex)[self.index]

    def hopping(self, tau: float) -> np.ndarray:
        """exp(-i eps Delta tau) on the box (Dirichlet)."""
        key = round(tau, 15)
        if key not in self._prop_cache:
            if self.cfg.eps == 0.0:
                # Q Q^T is the identity only up to rounding
                self._prop_cache[key] = np.eye(len(self._lam), dtype=complex)
                return self._prop_cache[key]
            ph = np.exp(-1j * self.cfg.eps * self._lam * tau)
            self._prop_cache[key] = (self._q * ph) @ self._q.T
        return self._prop_cache[key]

    def local(self, u: np.ndarray, tau: float) -> np.ndarray:
        # |u_j| is invariant under this flow, so the phase is exact
        return u * np.exp(-1j * tau * (self.v + self.cfg.delta * np.abs(u) ** (2 * self.cfg.p)))

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return -1j * (self.h @ u + self.cfg.delta * np.abs(u) ** (2 * self.cfg.p) * u)

    def energy(self, u: np.ndarray) -> float:
        quad = np.real(np.vdot(u, self.h @ u))
        nl = self.cfg.delta / (self.cfg.p + 1) * np.sum(np.abs(u) ** (2 * self.cfg.p + 2))
        return 0.5 * float(quad + nl)


def _strang(sys: _System, u: np.ndarray, dt: float) -> np.ndarray:
    u = sys.local(u, 0.5 * dt)
    u = sys.hopping(dt) @ u
    return sys.local(u, 0.5 * dt)


def _stepper(sys: _System, dt: float):
    kind = sys.cfg.integrator
    if kind == "split":
        ha = sys.hopping(dt)

        def step(u):
            u = sys.local(u, 0.5 * dt)
            u = ha @ u
            return sys.local(u, 0.5 * dt)

        return step
    if kind == "split4":
        w1, w0 = _YOSHIDA
        subs = (w1 * dt, w0 * dt, w1 * dt)
        props = [sys.hopping(s) for s in subs]

        def step(u):
            for s, pr in zip(subs, props):
                u = sys.local(u, 0.5 * s)
                u = pr @ u
                u = sys.local(u, 0.5 * s)
            return u

        return step

    def step(u):
        k1 = sys.rhs(u)
        k2 = sys.rhs(u + 0.5 * dt * k1)
        k3 = sys.rhs(u + 0.5 * dt * k2)
        k4 = sys.rhs(u + dt * k3)
        return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    return step


def integrate(u0: np.ndarray, cfg: EvolutionConfig, n_samples: int = N_SAMPLES) -> EvolutionReport:
    """Integrate i u' = (eps Delta + V) u + delta |u|^{2p} u with zero boundary.

    The step is shrunk so that ``n_samples`` uniformly spaced sample
    times fall on step boundaries.
    """
    sys = _System(cfg)
    u = sys.flat(u0).copy()
    if u.shape != (len(sys.sites),):
        raise ValueError("initial field must have the box shape")
    if cfg.t_end == 0 or n_samples < 2:
        times = np.zeros(1)
        per, dt = 0, cfg.dt
    else:
        times = np.linspace(0.0, cfg.t_end, n_samples)
        gap = times[1] - times[0]
        per = max(1, math.ceil(gap / cfg.dt - 1e-12))
        dt = gap / per
    step = _stepper(sys, dt)
    states = np.empty((len(times), len(u)), dtype=complex)
    norms = np.empty(len(times))
    energies = np.empty(len(times))
    states[0], norms[0], energies[0] = u, np.vdot(u, u).real, sys.energy(u)
    for k in range(1, len(times)):
        for _ in range(per):
            u = step(u)
        states[k] = u
        norms[k] = np.vdot(u, u).real
        energies[k] = sys.energy(u)
        drift = abs(norms[k] - norms[0])
        if drift > 1e-2 or not np.isfinite(drift):
            raise Unstable(float(drift), dt)
    ck = np.unique(np.linspace(0, len(times) - 1, min(N_CHECKPOINTS, len(times))).astype(int))
    return EvolutionReport(
        times,
        states,
        float(np.max(np.abs(norms - norms[0]))),
        float(np.max(np.abs(energies - energies[0]))),
        sys.sites,
        norms,
        energies,
        ck,
    )


def spatial_initial(y: CoeffField, omega: Frequencies, box: Box, t: float = 0.0) -> np.ndarray:
    """The reconstructed field at time t, zero-extended to ``box``."""
    u = reconstruct_field(y, omega, [t])[0]
    out = np.zeros(box.shape, dtype=complex)
    src = y.box.spatial()
    sites = src.sites()
    inside = box.contains(sites)
    out[box.array_index(sites[inside])] = u[src.array_index(sites[inside])]
    return out


def effective_support(y: CoeffField, rel: float = 1e-16) -> int:
    """sup-norm radius in j of coefficients above ``rel`` * max."""
    a = np.max(np.abs(y.uhat).reshape(y.box.spatial().shape + (-1,)), axis=-1)
    keep = a > rel * a.max()
    if not keep.any():
        return 0
    return int(np.max(np.abs(np.argwhere(keep) - np.asarray(y.box.radii[: y.dims.d]))))


def compare_quasiperiodic(y: CoeffField, omega: Frequencies, cfg: EvolutionConfig) -> tuple[float, EvolutionReport]:
    """sup over samples of ||reconstruction(t) - integrated u(t)||_2."""
    fit: DecayFit = decay_fit(y)
    margin = 0 if not np.isfinite(fit.alpha) or fit.alpha <= 0 else math.ceil(3.0 / fit.alpha)
    need = effective_support(y) + margin
    if min(cfg.box.radii) < need:
        raise ValueError(f"evolution box radius must be at least {need}")
    u0 = spatial_initial(y, omega, cfg.box)
    rep = integrate(u0, cfg)
    ref = reconstruct_field(y, omega, rep.times)
    src = y.box.spatial()
    sites = src.sites()
    inside = cfg.box.contains(sites)
    pos = cfg.box.array_index(sites[inside])
    full = np.zeros((len(rep.times),) + cfg.box.shape, dtype=complex)
    full[(slice(None),) + pos] = ref[(slice(None),) + src.array_index(sites[inside])]
    ref_flat = full[(slice(None),) + cfg.box.array_index(rep.sites)]
    err = np.linalg.norm(ref_flat - rep.states, axis=1)
    return float(err.max()), rep


def localization_profile(report: EvolutionReport, radii) -> dict[int, float]:
    """max over samples of the tail mass outside [-R, R]^d, per R."""
    return {int(R): float(report.tail_mass(int(R)).max()) for R in radii}


def eigen_solution(eps: float, pot: DisorderRealization, box: Box, u0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Linear (delta = 0) evolution from the dense eigendecomposition."""
    h = assemble_H(eps, pot, box)
    mu, phi = np.linalg.eigh(h.matrix)
    coeff = phi.T @ np.asarray(u0, dtype=complex)[box.array_index(h.sites)]
    return (phi[None, :, :] * (coeff[None, :] * np.exp(-1j * np.multiply.outer(times, mu)))[:, None, :]).sum(axis=-1)
