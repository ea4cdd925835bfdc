"""Experiment driver: build the test problems, run every preconditioner, write CSV tables.

Config files are flat ``key = value`` lines (``#`` starts a comment)::

    test = test1
    ell = 2, 3
    methods = tpa, gtpa(5), pp
    repeats = 5
    out = table1.csv
"""

from __future__ import annotations

import csv
import logging
import re
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dense import SpectralData, dense_eig, omm_condition_bound, resolve_occupation, subspace_distance
from .grid import HamiltonianOp, PotentialSpec, build_grid, densify, fft, sample_potential
from .omm import OmmConfig, gradient, negative_definite_shift, pcg_minimize
from .poles import (
    GmresResolventSolver,
    ProjectionPrecond,
    SpectralWindow,
    build_poles,
    randomized_projection,
)
from .precond import KineticFilter, compute_tau
from .sparsify import GmresConfig

log = logging.getLogger(__name__)

TESTS = {
    "test1": dict(global_scale=0.01, vacancy_mode="none", vacancies=0),
    "test2": dict(global_scale=1.0, vacancy_mode="fixed_count", vacancies=1),
    "test3": dict(global_scale=100.0, vacancy_mode="fraction", vacancies=0.25),
}
METHODS = ("none", "lap", "tpa", "gtpa", "pp", "spp")
HEADER = ["method", "l", "n", "cond", "iter", "Tst", "Tomm", "Ttot", "d", "status"]
ACCURATE_D = 1e-4
FAILED_D = 1e-3


def parse_method(token: str) -> tuple[str, int | None]:
    """``"gtpa(3)" -> ("gtpa", 3)``; plain ``"gtpa"`` uses ``t = 5``."""
    m = re.fullmatch(r"\s*([a-z]+)\s*(?:\(\s*(\d+)\s*\))?\s*", token)
    if not m or m.group(1) not in METHODS:
        raise ValueError(f"unknown method {token!r}")
    name, t = m.group(1), m.group(2)
    if t is not None and name != "gtpa":
        raise ValueError(f"only gtpa takes a parameter: {token!r}")
    if name == "gtpa":
        return name, 5 if t is None else int(t)
    return name, None


def method_label(name: str, t: int | None) -> str:
    return f"gtpa({t})" if name == "gtpa" else name


@dataclass
class ExperimentConfig:
    test_id: str = "test1"
    ells: list = field(default_factory=lambda: [2])
    N_rule: object = "equals_ell"  # or a list of N, one per ell
    methods: list = field(default_factory=lambda: ["tpa", "gtpa(5)", "pp"])
    repeats: int = 5
    seeds: list | None = None
    base_seed: int = 0
    poles: int = 30
    gmres: GmresConfig = field(default_factory=GmresConfig)
    omm: OmmConfig = field(default_factory=OmmConfig)
    output_path: str | None = None
    trace_path: str | None = None
    pts_per_cell: int = 8
    well_depth: float = 40.0
    well_width: float = 0.15
    global_scale: float | None = None
    vacancy_mode: str | None = None
    vacancies: float | None = None
    potential_seed: int = 0
    min_rel_gap: float = 1e-6
    pp_mode: str = "on_the_fly"
    oversample: int = 0
    stencil_q: int = 1

    def __post_init__(self):
        if self.test_id not in (*TESTS, "custom"):
            raise ValueError(f"unknown test {self.test_id!r}")
        if self.test_id == "custom" and self.global_scale is None:
            raise ValueError("custom test needs global_scale")
        for m in self.methods:
            parse_method(m)
        if not self.ells or any(int(e) < 1 for e in self.ells):
            raise ValueError("ell list must hold positive integers")
        if self.seeds is not None:
            self.seeds = [int(s) for s in self.seeds]
            if self.repeats != len(self.seeds):
                raise ValueError("repeats must equal the number of seeds")
        if self.N_rule != "equals_ell" and len(self.N_rule) != len(self.ells):
            raise ValueError("explicit N list must match the ell list")
        if self.pp_mode not in ("on_the_fly", "precomputed"):
            raise ValueError(f"unknown pp_mode {self.pp_mode!r}")

    def potential_spec(self) -> PotentialSpec:
        base = dict(TESTS.get(self.test_id, dict(global_scale=1.0, vacancy_mode="none", vacancies=0)))
        for key in ("global_scale", "vacancy_mode", "vacancies"):
            if getattr(self, key) is not None:
                base[key] = getattr(self, key)
        return PotentialSpec(
            well_depth=self.well_depth, well_width=self.well_width, rng_seed=self.potential_seed, **base
        )

    def seed_list(self) -> list:
        return list(self.seeds) if self.seeds is not None else list(range(self.repeats))

    def N_for(self, ell: int) -> int:
        if self.N_rule == "equals_ell":
            return int(ell)
        return int(self.N_rule[list(self.ells).index(ell)])


# -- config files -------------------------------------------------------------------


def _split(v: str) -> list:
    return [t.strip() for t in re.split(r",(?![^(]*\))", v) if t.strip()]


_GMRES_KEYS = {"gmres_tol": ("rel_tol", float), "gmres_restart": ("restart", int),
               "gmres_max_restarts": ("max_restarts", int), "gmres_precond": ("preconditioning", str)}
_OMM_KEYS = {"omm_tol": ("tol", float), "omm_max_iter": ("max_iter", int),
             "omm_criterion": ("criterion", str)}
_ALIASES = {"test": "test_id", "ell": "ells", "l": "ells", "N": "N_rule", "out": "output_path",
            "trace": "trace_path", "seed": "base_seed", "p": "poles"}


def parse_config_text(text: str) -> ExperimentConfig:
    kw, gm, om = {}, {}, {}
    types = {f.name: f for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _GMRES_KEYS:
            name, conv = _GMRES_KEYS[key]
            gm[name] = conv(value)
            continue
        if key in _OMM_KEYS:
            name, conv = _OMM_KEYS[key]
            om[name] = conv(value)
            continue
        key = _ALIASES.get(key, key)
        if key not in types or key in ("gmres", "omm"):
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key == "ells":
            kw[key] = [int(v) for v in _split(value)]
        elif key == "N_rule":
            kw[key] = "equals_ell" if value == "equals_ell" else [int(v) for v in _split(value)]
        elif key == "methods":
            kw[key] = _split(value)
        elif key == "seeds":
            kw[key] = [int(v) for v in _split(value)]
        elif key in ("repeats", "base_seed", "poles", "pts_per_cell", "potential_seed", "oversample", "stencil_q"):
            kw[key] = int(value)
        elif key in ("well_depth", "well_width", "global_scale", "vacancies", "min_rel_gap"):
            kw[key] = float(value)
        else:
            kw[key] = value
    if "seeds" in kw and "repeats" not in kw:
        kw["repeats"] = len(kw["seeds"])
    return ExperimentConfig(gmres=GmresConfig(**gm), omm=OmmConfig(**om), **kw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# -- problems -------------------------------------------------------------------------


@dataclass
class Problem:
    ell: int
    H: HamiltonianOp  # shifted, negative definite
    spectral: SpectralData  # of the shifted operator
    sigma: float
    requested_N: int

    @property
    def grid(self):
        return self.H.grid

    @property
    def n(self) -> int:
        return self.H.n


def build_problem(cfg: ExperimentConfig, ell: int) -> Problem:
    """Grid, potential, dense spectrum, and the negative-definite shift for one ``ell``."""
    grid = build_grid(ell, cfg.pts_per_cell)
    V = sample_potential(grid, cfg.potential_spec())
    H0 = HamiltonianOp(grid, V)
    Hd = densify(H0)
    requested = cfg.N_for(ell)
    N = resolve_occupation(np.linalg.eigvalsh(Hd), requested, cfg.min_rel_gap)
    if N != requested:
        log.info("ell=%d: N=%d sits in a (near-)degenerate cluster; using N=%d", ell, requested, N)
    s = dense_eig(Hd, N)
    sigma = negative_definite_shift(s)
    return Problem(ell, H0.shifted(sigma), s.shifted(sigma), sigma, requested)


def cell_seed(cfg: ExperimentConfig, ell: int, seed: int) -> np.random.SeedSequence:
    """Per-cell RNG stream; the method is left out so every method sees the same guess."""
    test_index = (*TESTS, "custom").index(cfg.test_id)
    return np.random.SeedSequence([cfg.base_seed, test_index, int(ell), int(seed)])


def make_initial_guess(s: SpectralData, rng, variance_factor: float = 0.1, precond=None) -> np.ndarray:
    """``X0`` plus i.i.d. ``N(0, variance_factor * M^2)`` noise, ``M = max |X0|``.

    ``precond`` (if given) is applied once to filter the guess.
    """
    rng = np.random.default_rng(rng)
    M = np.abs(s.X0).max()
    X1 = s.X0 + rng.normal(0.0, np.sqrt(variance_factor) * M, s.X0.shape)
    return precond(X1) if precond is not None else X1


# -- preconditioner setup --------------------------------------------------------------


def build_preconditioner(cfg: ExperimentConfig, prob: Problem, method: str, rng=None):
    """Returns ``(P, setup_seconds)``; PP/SPP report setup time per pole."""
    name, t = parse_method(method)
    t0 = time.perf_counter()
    if name == "none":
        return None, 0.0
    if name in ("lap", "tpa", "gtpa"):
        tau = compute_tau(fft(prob.grid, prob.spectral.X0), prob.grid.k_squared)
        kind = {"lap": "shifted_laplacian", "tpa": "tpa", "gtpa": "gtpa"}[name]
        P = KineticFilter(prob.grid, kind, tau, t=t if t is not None else 5)
        return P, time.perf_counter() - t0

    window = SpectralWindow.from_spectrum(prob.spectral)
    poles = build_poles(window, cfg.poles)
    gcfg = replace(cfg.gmres, preconditioning="const_resolvent" if name == "pp" else "sparsifying")
    solver = GmresResolventSolver(prob.H, poles, gcfg, q=cfg.stencil_q)
    used = poles.upper()
    solver.setup(used)
    if cfg.pp_mode == "precomputed":
        U = randomized_projection(prob.H, poles, prob.spectral.N, cfg.oversample, solver, rng=rng)
        P = ProjectionPrecond(poles, solver, "precomputed", U)
    else:
        P = ProjectionPrecond(poles, solver)
    return P, (time.perf_counter() - t0) / len(used)


# -- runs ---------------------------------------------------------------------------------


@dataclass
class TableRow:
    method: str
    l: int
    n: int
    cond: float
    iter: float
    Tst: float
    Tomm: float
    Ttot: float
    d: float
    status: str

    def as_list(self) -> list:
        return [self.method, self.l, self.n, repr(float(self.cond)), repr(float(self.iter)),
                repr(float(self.Tst)), repr(float(self.Tomm)), repr(float(self.Ttot)),
                repr(float(self.d)), self.status]


def classify(d: float, converged: bool) -> str:
    if not np.isfinite(d):
        return "error"
    if d > FAILED_D:
        return "failed"
    if not converged:
        return "unconverged"
    return "accurate" if d <= ACCURATE_D else "ok"


def run_single(cfg: ExperimentConfig, prob: Problem, method: str, seed: int) -> dict:
    """One (ell, method, seed) cell.  Never raises; failures go to ``status``."""
    label = method_label(*parse_method(method))
    ss = cell_seed(cfg, prob.ell, seed)
    guess_ss, sketch_ss = ss.spawn(2)
    out = dict(method=label, seed=seed, iter=np.nan, Tst=np.nan, Tomm=np.nan, d=np.nan, trace=[],
               grad_rel=np.nan, converged=False)
    try:
        P, t_st = build_preconditioner(cfg, prob, method, rng=np.random.default_rng(sketch_ss))
        t0 = time.perf_counter()
        is_projection = isinstance(P, ProjectionPrecond)
        X1 = make_initial_guess(prob.spectral, np.random.default_rng(guess_ss),
                                precond=P if is_projection else None)
        rep = pcg_minimize(prob.H, P, X1, cfg.omm)
        t_omm = time.perf_counter() - t0
        d = subspace_distance(rep.final_X, prob.spectral.X0)
        HX = prob.H @ rep.final_X
        grad_rel = np.linalg.norm(gradient(prob.H, rep.final_X, HX)) / np.linalg.norm(HX)
        out.update(iter=rep.iterations, Tst=t_st, Tomm=t_omm, d=d, trace=rep.energy_trace,
                   grad_rel=float(grad_rel), converged=rep.converged, status=classify(d, rep.converged))
    except Exception as exc:  # recorded per row; the run continues
        log.error("ell=%d method=%s seed=%d failed: %s", prob.ell, label, seed, exc)
        out["status"] = f"error:{type(exc).__name__}"
    return out


def aggregate(cfg: ExperimentConfig, prob: Problem, cells: list) -> TableRow:
    """Median over repeats; status is the worst status seen."""
    order = ["accurate", "ok", "unconverged", "failed"]
    errors = [c["status"] for c in cells if c["status"].startswith("error")]
    good = [c for c in cells if not c["status"].startswith("error")]
    if errors:
        status = errors[0]
    else:
        status = max((c["status"] for c in cells), key=order.index)

    def med(key):
        return float(np.median([c[key] for c in good])) if good else float("nan")

    t_st, t_omm = med("Tst"), med("Tomm")
    return TableRow(
        method=cells[0]["method"], l=prob.ell, n=prob.n, cond=omm_condition_bound(prob.spectral),
        iter=med("iter"), Tst=t_st, Tomm=t_omm, Ttot=t_st + t_omm, d=med("d"), status=status,
    )


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list:
    """All (ell, method) rows of one table; cells are visited in (ell, method, seed) order."""
    rows, traces = [], []
    for ell in cfg.ells:
        try:
            prob = build_problem(cfg, ell)
        except Exception as exc:
            log.error("ell=%d: problem setup failed: %s", ell, exc)
            for m in cfg.methods:
                rows.append(TableRow(method_label(*parse_method(m)), ell, 0, np.nan, np.nan, np.nan,
                                     np.nan, np.nan, np.nan, f"error:{type(exc).__name__}"))
            continue
        for m in cfg.methods:
            cells = [run_single(cfg, prob, m, seed) for seed in cfg.seed_list()]
            rows.append(aggregate(cfg, prob, cells))
            for c in cells:
                traces.extend((cfg.test_id, ell, c["method"], c["seed"], k, e) for k, e in enumerate(c["trace"]))
    if write and cfg.output_path:
        emit_report(rows, cfg.output_path)
    if write and cfg.trace_path:
        emit_trace(traces, cfg.trace_path)
    return rows


# -- reports --------------------------------------------------------------------------------


def emit_report(rows: list, path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HEADER)
        for r in rows:
            wr.writerow(r.as_list())


def emit_trace(records: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["test", "l", "method", "seed", "iter", "energy"])
        for rec in records:
            wr.writerow([*rec[:5], repr(float(rec[5]))])


def read_report(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for rec in rd:
            m, l, n, *nums, status = rec
            rows.append(TableRow(m, int(l), int(n), *(float(v) for v in nums), status))
    return rows


def all_succeeded(rows: list) -> bool:
    return all(not r.status.startswith("error") for r in rows)
