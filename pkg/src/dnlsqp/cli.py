"""Command-line orchestration: config parsing, runs, and result files.

Config files are INI: a ``[global]`` section (seed, out, threads) plus one
section per module.  Every run writes CSV tables with ``#`` metadata
lines and a ``manifest.json`` listing each output with its sha256.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .disorder import Distribution, DisorderRealization, sample, substream_seed
from .evolve import EvolutionConfig, Unstable, compare_quasiperiodic, integrate, localization_profile
from .field import Frequencies
from .lattice import Box, Dims
from .linop import NoContraction, Singular, assemble_T, dense_inverse, invert_covering, schur_inverse, schur_reduce
from .measure import DiophantineParams, check_diophantine, fit_sigma, theta_scan
from .solver import CONVERGED, SolverConfig, continuation_sweep, solve, sweep_table
from .spectral import check_regular, eig_region, separation_stat, wegner_stat

COMMANDS = ("solve", "sweep", "spectral", "wegner", "theta-scan", "dioph", "evolve", "compare", "bench")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class NumericalFailure(ArithmeticError):
    def __init__(self, kind: str, detail: dict):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}")


# ---- config -------------------------------------------------------------

class Section:
    """Typed access to one INI section; errors name the offending key."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.used: dict[str, str] = {}

    def _raw(self, key: str, default):
        if key in self.data:
            self.used[key] = self.data[key]
            return self.data[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.name}.{key}", "missing")
        return default

    def _conv(self, key: str, default, conv):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{self.name}.{key}", f"cannot parse {raw!r} ({exc})") from None

    def float(self, key: str, default=None) -> float:
        return self._conv(key, _REQUIRED if default is None else default, float)

    def int(self, key: str, default=None) -> int:
        return self._conv(key, _REQUIRED if default is None else default, int)

    def str(self, key: str, default=None) -> str:
        return self._conv(key, _REQUIRED if default is None else default, str.strip)

    def floats(self, key: str, default=None) -> list[float]:
        return self._conv(key, _REQUIRED if default is None else default, lambda s: [float(x) for x in s.replace(",", " ").split()])

    def ints(self, key: str, default=None) -> list[int]:
        return self._conv(key, _REQUIRED if default is None else default, lambda s: [int(x) for x in s.replace(",", " ").split()])

    def sites(self, key: str, default=None) -> list[tuple[int, ...]]:
        """Sites separated by ';', coordinates by whitespace."""
        return self._conv(key, _REQUIRED if default is None else default, lambda s: [tuple(int(c) for c in part.split()) for part in s.split(";") if part.strip()])

    def sites_values(self, key: str, d: int) -> dict[tuple[int, ...], float]:
        def conv(s: str) -> dict:
            out = {}
            for part in s.split(";"):
                tok = part.split()
                if not tok:
                    continue
                if len(tok) != d + 1:
                    raise ValueError(f"entry {part.strip()!r} needs {d} coordinates and a value")
                out[tuple(int(c) for c in tok[:d])] = float(tok[d])
            return out

        return self._conv(key, "", conv)


_REQUIRED = object()

KNOWN_KEYS = {
    "global": {"seed", "out", "threads"},
    "model": {"d", "nu"},
    "disorder": {"lo", "hi", "radius", "overrides"},
    "solver": {"amplitudes", "resonant", "resonant_values", "eps", "delta", "p", "M", "max_stage", "box_cap", "residual_target", "condition_cap"},
    "sweep": {"lo", "hi", "count", "warm_start"},
    "spectral": {"eps", "E", "m", "radius", "realizations", "beta"},
    "wegner": {"eps", "E", "size", "trials", "kappas"},
    "theta_scan": {"N", "beta", "gamma", "mode", "half_width", "points_per_eta", "decay_step", "step"},
    "dioph": {"omega", "A", "c", "N"},
    "evolve": {"eps", "delta", "p", "box_radius", "t_end", "dt", "integrator", "site", "amplitude"},
    "bench": {"N", "eps", "delta", "bad_fraction", "M0"},
}


def check_keys(parser: configparser.ConfigParser) -> None:
    for name in parser.sections():
        if name not in KNOWN_KEYS:
            raise ConfigError(name, "unknown section")
        for key in parser[name]:
            if key not in KNOWN_KEYS[name]:
                raise ConfigError(f"{name}.{key}", "unknown key")


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    out: Path
    threads: int
    parser: configparser.ConfigParser
    sections: dict[str, Section] = field(default_factory=dict)

    def section(self, name: str) -> Section:
        if name not in self.sections:
            self.sections[name] = Section(self.parser, name)
        return self.sections[name]

    def snapshot(self) -> dict:
        snap = {"command": self.command, "seed": self.seed, "threads": self.threads}
        for name, sec in sorted(self.sections.items()):
            snap[name] = dict(sorted(sec.used.items()))
        return snap


def load_config(command: str, text: str, seed: int | None, out: str | None, threads: int | None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys such as N, M, E are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    check_keys(parser)
    g = Section(parser, "global")
    cfg = ExperimentConfig(
        command,
        seed if seed is not None else g.int("seed", 0),
        Path(out if out is not None else g.str("out", "out")),
        threads if threads is not None else g.int("threads", 1),
        parser,
    )
    if cfg.threads < 1:
        raise ConfigError("global.threads", "must be at least 1")
    return cfg


def _dims(cfg: ExperimentConfig) -> Dims:
    s = cfg.section("model")
    d, nu = s.int("d", 1), s.int("nu", 1)
    if d < 1 or nu < 1:
        raise ConfigError("model.d", "d and nu must be positive")
    return Dims(d, nu)


def _potential(cfg: ExperimentConfig, d: int, seed: int | None = None) -> DisorderRealization:
    s = cfg.section("disorder")
    lo, hi = s.float("lo", 0.0), s.float("hi", 1.0)
    radius = s.int("radius", 20)
    if radius < 0:
        raise ConfigError("disorder.radius", "must be nonnegative")
    try:
        dist = Distribution(lo, hi)
    except ValueError as exc:
        raise ConfigError("disorder.lo", str(exc)) from None
    pot = sample(dist, Box.cube(d, radius), cfg.seed if seed is None else seed)
    # explicit site values, "j1 .. jd value" entries separated by ';'
    entries = s.sites_values("overrides", d)
    if entries:
        try:
            pot = pot.with_overrides(entries)
        except ValueError as exc:
            raise ConfigError("disorder.overrides", str(exc)) from None
    return pot


def _solver_config(cfg: ExperimentConfig) -> SolverConfig:
    dims = _dims(cfg)
    s = cfg.section("solver")
    amps = s.floats("amplitudes", [0.1] * dims.nu)
    res = s.sites("resonant", [tuple([k] + [0] * (dims.d - 1)) for k in range(dims.nu)])
    kw = dict(
        eps=s.float("eps", 1e-3),
        delta=s.float("delta", 1e-3),
        p=s.int("p", 1),
        M=s.int("M", 4),
        max_stage=s.int("max_stage", 8),
        box_cap=s.int("box_cap", 16),
        residual_target=s.float("residual_target", 1e-11),
        condition_cap=s.float("condition_cap", 1e12),
    )
    try:
        return SolverConfig(dims, amps, res, **kw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


def _overrides(cfg: ExperimentConfig, pot: DisorderRealization, sc: SolverConfig) -> DisorderRealization:
    vals = cfg.section("solver").floats("resonant_values", [])
    if not vals:
        return pot
    if len(vals) != sc.dims.nu:
        raise ConfigError("solver.resonant_values", "need one value per resonant site")
    try:
        return pot.with_overrides(dict(zip(sc.resonant, vals)))
    except ValueError as exc:
        raise ConfigError("solver.resonant_values", str(exc)) from None


# ---- output -------------------------------------------------------------

class Writer:
    """Atomic writes into the output directory, tracking digests."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if name != "manifest.json":
            self.files[name] = hashlib.sha256(data).hexdigest()

    def table(self, name: str, meta: dict, header: list[str], rows) -> None:
        buf = io.StringIO()
        for k, v in meta.items():
            buf.write(f"# {k} = {v}\n")
        buf.write(",".join(header) + "\n")
        for r in rows:
            buf.write(",".join(_fmt(x) for x in r) + "\n")
        self.write(name, buf.getvalue())


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (tuple, list, np.ndarray)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


class Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def __call__(self, name: str, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


# ---- commands -----------------------------------------------------------

def _solve(cfg: ExperimentConfig, w: Writer, timer: Timer, result: dict):
    sc = _solver_config(cfg)
    pot = _overrides(cfg, _potential(cfg, sc.dims.d), sc)
    out = timer("solve", solve, sc, pot)
    w.write("solve_table.csv", f"# status = {out.status}\n" + out.table_text())
    w.write("coefficients.txt", out.state.y.dump())
    result.update(
        status=out.status,
        stages=out.state.stage,
        omega=[float(x) for x in out.state.omega.omega],
        kappa=out.state.kappa,
        diagnostics={k: (None if v is None else float(v)) for k, v in out.diagnostics.items()},
    )
    if out.status != CONVERGED:
        raise NumericalFailure(out.status, {k: _jsonable(v) for k, v in out.failure.items()} or {"kappa": out.state.kappa})
    return sc, pot, out


def cmd_solve(cfg, w, timer, result):
    _solve(cfg, w, timer, result)


def cmd_sweep(cfg, w, timer, result):
    sc = _solver_config(cfg)
    pot = _potential(cfg, sc.dims.d)
    s = cfg.section("sweep")
    lo, hi, count = s.float("lo"), s.float("hi"), s.int("count")
    if count < 1:
        raise ConfigError("sweep.count", "must be positive")
    grid = [[v] * sc.dims.nu for v in np.linspace(lo, hi, count)]
    pts = timer("sweep", continuation_sweep, sc, pot, grid, bool(s.int("warm_start", 1)))
    w.write("sweep.csv", sweep_table(pts))
    result["status_counts"] = {st: sum(p.status == st for p in pts) for st in sorted({p.status for p in pts})}


def cmd_spectral(cfg, w, timer, result):
    s = cfg.section("spectral")
    d = cfg.section("model").int("d", 1)
    eps, E = s.float("eps", 1e-3), s.float("E", 0.5)
    m = s.float("m", 0.5 * math.log(1.0 / eps) if eps > 0 else 1.0)
    L, count, beta = s.int("radius", 10), s.int("realizations", 20), s.float("beta", 0.5)
    if count < 1 or L < 1:
        raise ConfigError("spectral.realizations", "realizations and radius must be positive")
    region = Box.cube(d, L)
    dist = Distribution(cfg.section("disorder").float("lo", 0.0), cfg.section("disorder").float("hi", 1.0))
    seeds = [substream_seed(cfg.seed, f"spectral/{i}") for i in range(count)]

    def one(sd):
        pot = sample(dist, Box.cube(d, 3 * L + 1), sd)
        reg = check_regular(eps, pot, region, E, m)
        data = eig_region(eps, pot, region)
        sep = separation_stat(eps, pot, [(region, region.shifted([2 * L + 1] + [0] * (d - 1)))], beta)
        return reg.regular, reg.worst_pair, data.residual(), data.orthonormality(), sep.gaps[0], sep.threshold[0]

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        rows = timer("spectral", lambda: list(pool.map(one, seeds)))
    frac = float(np.mean([r[0] for r in rows]))
    w.table(
        "spectral.csv",
        {"eps": eps, "E": E, "m": m, "radius": L, "beta": beta, "regular_fraction": frac},
        ["realization", "regular", "worst_ratio", "eig_residual", "orthonormality", "gap", "threshold"],
        [(i, r[0], (r[1][2] / r[1][3]) if r[1] else 0.0, r[2], r[3], r[4], r[5]) for i, r in enumerate(rows)],
    )
    result["regular_fraction"] = frac


def cmd_wegner(cfg, w, timer, result):
    s = cfg.section("wegner")
    d = cfg.section("model").int("d", 1)
    dist = Distribution(cfg.section("disorder").float("lo", 0.0), cfg.section("disorder").float("hi", 1.0))
    size, trials = s.int("size", 5), s.int("trials", 10000)
    if size < 1:
        raise ConfigError("wegner.size", "must be positive")
    if trials < 100:
        raise ConfigError("wegner.trials", "need at least 100 trials")
    if size % 2 == 0:
        raise ConfigError("wegner.size", "must be odd (boxes are centred)")
    S = Box((0,) * d, ((size - 1) // 2,) + (0,) * (d - 1))
    tab = timer("wegner", wegner_stat, s.float("eps", 0.0), dist, S, s.float("E", 0.5), s.floats("kappas", [0.01, 0.02, 0.05, 0.1]), trials, cfg.seed)
    w.write("wegner.csv", tab.to_text())
    result.update(slope=tab.slope, size_times_density=tab.bound_slope)


def cmd_theta_scan(cfg, w, timer, result):
    sc, pot, out = _solve(cfg, w, timer, result)
    s = cfg.section("theta_scan")
    Ns = s.ints("N", [4, 8, 16])
    beta, gamma = s.float("beta", 0.9), s.float("gamma", 1.0)
    mode = s.str("mode", "screened")
    if mode not in ("exact", "screened"):
        raise ConfigError("theta_scan.mode", "must be exact or screened")
    half = s.float("half_width", 12.0)
    per_eta = s.float("points_per_eta", 50.0)
    decay_step = s.float("decay_step", 0.01)
    y, om = out.state.y, out.state.omega
    ms = []
    for N in Ns:
        if not pot.covers(Box.cube(sc.dims.d, max(N, y.box.radii[0]) + 2 * N)):
            pot = pot.resampled(Box.cube(sc.dims.d, max(N, y.box.radii[0]) + 2 * N))
        eta = math.exp(-(N**beta))
        step = eta / per_eta if mode == "screened" else s.float("step", 1e-3)
        scan = timer(f"theta_scan_N{N}", theta_scan, y, om, sc.eps, sc.delta, pot, N, beta, gamma, (-half, half, step), mode, decay_step)
        ms.append(scan.measure_estimate)
        if scan.theta is not None:
            w.write(f"theta_scan_N{N}.csv", scan.to_text())
    sigma, log_a = fit_sigma(Ns, ms) if len(Ns) >= 2 and all(m > 0 for m in ms) else (math.nan, math.nan)
    w.table("theta_trend.csv", {"beta": beta, "gamma": gamma, "mode": mode, "sigma": sigma, "logA": log_a}, ["N", "measure"], zip(Ns, ms))
    result.update(measures=ms, sigma=sigma)


def cmd_dioph(cfg, w, timer, result):
    s = cfg.section("dioph")
    om = s.floats("omega")
    try:
        params = DiophantineParams(s.float("A", 2.0), s.float("c", 0.01), s.int("N", 100))
        freq = Frequencies(om)
    except ValueError as exc:
        raise ConfigError("dioph", str(exc)) from None
    ok, worst = timer("dioph", check_diophantine, freq, params)
    w.table("dioph.csv", {"A": params.A, "c": params.c, "N": params.N}, ["omega", "ok", "worst_n", "distance", "bound"], [(om, ok, worst[0], worst[1], worst[2])])
    result.update(diophantine=ok, worst=_jsonable(worst))


def _evolution_config(cfg: ExperimentConfig, d: int, pot: DisorderRealization, eps: float, delta: float, p: int) -> EvolutionConfig:
    s = cfg.section("evolve")
    R = s.int("box_radius", min(pot.box.radii))
    try:
        return EvolutionConfig(Box.cube(d, R), eps, delta, p, pot, s.float("t_end", 100.0), s.float("dt", 0.01), s.str("integrator", "split"))
    except ValueError as exc:
        raise ConfigError("evolve", str(exc)) from None


def _write_evolution(w: Writer, rep, radii) -> None:
    w.write("trajectory.csv", rep.summary_text())
    prof = localization_profile(rep, radii)
    w.table("tail_mass.csv", {}, ["R", "max_tail_mass"], sorted(prof.items()))


def cmd_evolve(cfg, w, timer, result):
    d = cfg.section("model").int("d", 1)
    pot = _potential(cfg, d)
    s = cfg.section("evolve")
    ec = _evolution_config(cfg, d, pot, s.float("eps", 1e-3), s.float("delta", 1e-3), s.int("p", 1))
    site = s.sites("site", [(0,) * d])[0]
    u0 = np.zeros(ec.box.shape, dtype=complex)
    if len(site) != d or not ec.box.contains(np.asarray(site)):
        raise ConfigError("evolve.site", "must be a site of the evolution box")
    u0[ec.box.array_index(np.asarray([site]))] = s.float("amplitude", 0.1)
    rep = timer("integrate", integrate, u0, ec)
    _write_evolution(w, rep, range(0, min(ec.box.radii) + 1))
    result.update(norm_drift=rep.norm_drift, energy_drift=rep.energy_drift)


def cmd_compare(cfg, w, timer, result):
    sc, pot, out = _solve(cfg, w, timer, result)
    ec = _evolution_config(cfg, sc.dims.d, pot, sc.eps, sc.delta, sc.p)
    try:
        err, rep = timer("compare", compare_quasiperiodic, out.state.y, out.state.omega, ec)
    except ValueError as exc:
        raise ConfigError("evolve.box_radius", str(exc)) from None
    _write_evolution(w, rep, range(0, min(ec.box.radii) + 1))
    result.update(compare_error=err, norm_drift=rep.norm_drift, energy_drift=rep.energy_drift)


def cmd_bench(cfg, w, timer, result):
    """Dense vs covering vs Schur inverses of T on growing regions."""
    from .field import CoeffField

    dims = _dims(cfg)
    s = cfg.section("bench")
    Ns = s.ints("N", [2, 4, 6])
    eps, delta = s.float("eps", 0.01), s.float("delta", 0.01)
    bad_fraction = s.float("bad_fraction", 0.1)
    m0 = s.int("M0", 2)
    pot = _potential(cfg, dims.d)
    rng = np.random.default_rng(substream_seed(cfg.seed, "bench"))
    rows = []
    for N in Ns:
        if not pot.covers(Box.cube(dims.d, N)):
            pot = pot.resampled(Box.cube(dims.d, N))
        fbox = Box.lattice(dims, max(1, N // 2))
        y = CoeffField.initial(dims, fbox, 1, [0.1] * dims.nu, [tuple([k] + [0] * (dims.d - 1)) for k in range(dims.nu)])
        omega = Frequencies(rng.uniform(0.2, 0.8, dims.nu))
        op = assemble_T(y, omega, 0.0, eps, delta, pot, Box.lattice(dims, N))
        t0 = time.perf_counter()
        try:
            G = dense_inverse(op.dense())
        except Singular as exc:
            raise NumericalFailure("Singular", {"N": N, "pivot": exc.pivot, "site": exc.label}) from None
        t_dense = time.perf_counter() - t0
        scale = float(np.abs(G).max())
        t0 = time.perf_counter()
        try:
            cov = invert_covering(op, Box.lattice(dims, max(0, N - m0)), M0=m0)
            cov_err = float(np.abs(cov.to_dense() - G).max()) / scale
            flag = ""
        except NoContraction as exc:
            cov_err, flag = None, f"NoContraction({exc.factor:.3g})"
        t_cov = time.perf_counter() - t0
        n_bad = max(1, int(round(bad_fraction * op.n_sites))) if op.n_sites > 1 else op.n_sites
        bad = op.sites[rng.choice(op.n_sites, n_bad, replace=False)]
        t0 = time.perf_counter()
        sch = schur_inverse(schur_reduce(op, bad))
        t_schur = time.perf_counter() - t0
        sch_err = float(np.abs(sch - G).max()) / scale
        rows.append((N, op.n_sites, t_dense, t_cov, "" if cov_err is None else cov_err, flag, t_schur, sch_err))
    w.table(
        "bench.csv",
        {"eps": eps, "delta": delta, "M0": m0, "bad_fraction": bad_fraction},
        ["N", "sites", "dense_s", "covering_s", "covering_err", "covering_flag", "schur_s", "schur_err"],
        rows,
    )
    result["rows"] = len(rows)


HANDLERS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "spectral": cmd_spectral,
    "wegner": cmd_wegner,
    "theta-scan": cmd_theta_scan,
    "dioph": cmd_dioph,
    "evolve": cmd_evolve,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def run(command: str, config_path: str | None, seed: int | None = None, out: str | None = None, threads: int | None = None, stderr=None) -> int:
    """Execute one command; returns the process exit code."""
    stderr = sys.stderr if stderr is None else stderr
    t_start = time.perf_counter()
    if command not in HANDLERS:
        print(f"error: unknown command {command!r}", file=stderr)
        return EXIT_CONFIG
    try:
        text = Path(config_path).read_text() if config_path else ""
        cfg = load_config(command, text, seed, out, threads)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    w = Writer(cfg.out)
    timer = Timer()
    result: dict = {}
    code, failure = EXIT_OK, None
    try:
        HANDLERS[command](cfg, w, timer, result)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        code, failure = EXIT_CONFIG, {"kind": "ConfigError", "key": exc.key, "message": str(exc)}
    except NumericalFailure as exc:
        code, failure = EXIT_NUMERIC, {"kind": exc.kind, **exc.detail}
    except Singular as exc:
        code, failure = EXIT_NUMERIC, {"kind": "Singular", "pivot": exc.pivot, "site": exc.label}
    except Unstable as exc:
        code, failure = EXIT_NUMERIC, {"kind": "Unstable", "drift": exc.drift, "message": str(exc)}
    if failure is not None and code == EXIT_NUMERIC:
        print(f"numerical failure: {failure['kind']}", file=stderr)
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.snapshot(),
        "exit_code": code,
        "result": _jsonable(result),
        "failure": _jsonable(failure),
        "wall_clock_s": time.perf_counter() - t_start,
        "timings_s": timer.timings,
        "files": dict(sorted(w.files.items())),
    }
    w.write("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="dnlsqp", description="Quasi-periodic solutions of the random DNLS: solver and diagnostics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--seed", type=int, help="global seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    args = ap.parse_args(argv)
    return run(args.command, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
