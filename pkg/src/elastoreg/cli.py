"""Command-line driver: single solves, sweeps, material checks and convergence studies.

Usage::

    elastoreg solve run.cfg [--out DIR]
    elastoreg sweep-kappa run.cfg
    elastoreg sweep-lifespan run.cfg
    elastoreg validate-material run.cfg
    elastoreg convergence run.cfg

The output directory is ``--out`` if given, else $ELASTOREG_OUT, else
``elastoreg_out``. Exit codes: 0 success, 2 config error, 3 solver
abort, 4 lifespan hit (solve only).
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from .config import ConfigError, RunConfig
from .constitutive import stress_gradient_check, validate_A1, validate_A3prime
from .diagnostics import (ABORTED, COMPLETED, LIFESPAN_HIT, RunRow, energy_estimate_check,
                          lifespan_run)
from .elastodyn import kappa_continuation, simulate
from .fem import NodalField, l2_error
from .mesh import build_rectangle_mesh
from .plaplace import PLaplaceProblem, pl_solve

OUT_ENV = "ELASTOREG_OUT"
DEFAULT_OUT = "elastoreg_out"
CSV_VERSION = "# elastoreg run v1"
RUN_COLUMNS = RunRow._fields

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_LIFESPAN = 0, 2, 3, 4

log = logging.getLogger("elastoreg")


# -- lifespan law ---------------------------------------------------------------

class LifespanFitRefused(ValueError):
    def __init__(self, n_uncensored: int, n_censored: int):
        super().__init__(f"fit needs >= 3 uncensored runs; got {n_uncensored} "
                         f"({n_censored} censored)")
        self.n_uncensored = n_uncensored
        self.n_censored = n_censored


@dataclass(frozen=True)
class LifespanFit:
    slope: float
    intercept: float
    r2: float
    n_used: int
    n_censored: int


def fit_lifespan_law(pairs, t_end: float = math.inf) -> LifespanFit:
    """Least-squares fit T_max = a log(1/eps) + b over the uncensored pairs.

    A pair is censored when T_max >= t_end; censored pairs are dropped and
    counted. Fewer than 3 uncensored pairs raise LifespanFitRefused.
    """
    pairs = [(float(e), float(t)) for e, t in pairs]
    used = [(e, t) for e, t in pairs if t < t_end]
    n_cens = len(pairs) - len(used)
    if len(used) < 3:
        raise LifespanFitRefused(len(used), n_cens)
    x = np.log(1.0 / np.array([e for e, _ in used]))
    y = np.array([t for _, t in used])
    if np.ptp(x) == 0.0:
        raise ValueError("need at least two distinct eps values")
    res = linregress(x, y)
    return LifespanFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), len(used), n_cens)


# -- output helpers ---------------------------------------------------------------

def output_dir(flag: str | None) -> Path:
    out = Path(flag or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.12e}"


class RunCSV:
    """Streams RunRecord rows so a partial file survives an abort."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self._fh.write(CSV_VERSION + "\n" + ",".join(RUN_COLUMNS) + "\n")

    def __call__(self, row: RunRow):
        self._fh.write(",".join(_cell(v) for v in row) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else _cell(v) for v in r) + "\n")


def _summary(path: Path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k}: {v if isinstance(v, str) else _cell(v)}\n")


def _nanmax(a):
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(a.max()) if a.size else math.nan


# -- commands ---------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    mesh = cfg.mesh()
    u0, u1, f, g = cfg.data(mesh)
    scfg = cfg.solver()
    sink = RunCSV(out / "run.csv")
    try:
        rec = simulate(scfg, mesh, u0, u1, f, g, keep_snapshots=False, on_row=sink)
    finally:
        sink.close()
    chk = energy_estimate_check(rec)
    _summary(out / "summary.txt", [
        ("verdict", rec.verdict),
        ("t_star", "none" if rec.t_star is None else rec.t_star),
        ("steps", len(rec.rows) - 1),
        ("eta", rec.eta),
        ("C0_min", chk.c0_min),
        ("C_K_emp", _nanmax(rec.column("korn_ratio"))),
        ("message", rec.message or "none"),
    ])
    return {COMPLETED: EXIT_OK, LIFESPAN_HIT: EXIT_LIFESPAN, ABORTED: EXIT_ABORT}[rec.verdict]


def cmd_sweep_kappa(cfg: RunConfig, out: Path) -> int:
    mesh = cfg.mesh()
    u0, u1, f, g = cfg.data(mesh)
    try:
        sw = kappa_continuation(cfg.solver(), cfg["experiment.kappas"], mesh, u0, u1, f, g,
                                workers=cfg["experiment.workers"])
    except ValueError as exc:
        raise ConfigError("experiment.kappas", str(exc)) from None
    rows = []
    for i, (k, rec) in enumerate(zip(sw.kappas, sw.records)):
        gap = sw.gaps[i] if i < len(sw.gaps) else math.nan
        rows.append([k, rec.verdict, sw.u_sup[i], sw.w_sup[i], sw.viscous_total[i],
                     energy_estimate_check(rec).c0_min, gap])
    write_table(out / "kappa.csv",
                ["kappa", "verdict", "u_sup_vp", "w_sup_l2", "viscous_total", "c0_min", "gap_next"], rows)
    return EXIT_ABORT if any(r.verdict == ABORTED for r in sw.records) else EXIT_OK


def cmd_sweep_lifespan(cfg: RunConfig, out: Path) -> int:
    mesh = cfg.mesh()
    u0, u1, f, g = cfg.data(mesh)
    scfg = cfg.solver()
    results = []
    for eps in cfg["experiment.eps_schedule"]:
        try:
            results.append(lifespan_run(scfg, mesh, u0, u1, f, g, eps=eps))
        except ValueError as exc:
            raise ConfigError("data.u0", str(exc)) from None
    write_table(out / "lifespan.csv", ["eps", "log_inv_eps", "t_max", "censored", "verdict"],
                [[r.eps, math.log(1.0 / r.eps), r.t_max, str(int(r.censored)), r.record.verdict]
                 for r in results])
    prev = None
    for r in results:
        if prev is not None and r.eps < prev.eps and r.t_max < prev.t_max:
            log.warning("lifespan not monotone: T(%g) = %g < T(%g) = %g", r.eps, r.t_max, prev.eps, prev.t_max)
        prev = r
    items = []
    try:
        fit = fit_lifespan_law([(r.eps, scfg.t_end if r.censored else r.t_max) for r in results],
                               t_end=scfg.t_end)
        items += [("slope", fit.slope), ("intercept", fit.intercept), ("r2", fit.r2),
                  ("uncensored", fit.n_used), ("censored", fit.n_censored)]
    except LifespanFitRefused as exc:
        items += [("fit", f"refused: {exc}")]
    _summary(out / "summary.txt", items)
    return EXIT_ABORT if any(r.record.verdict == ABORTED for r in results) else EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    m = cfg.material()
    mesh = cfg.mesh()
    seed, n = cfg["experiment.seed"], cfg["experiment.samples"]
    a1 = validate_A1(m, n, mesh=mesh, seed=seed)
    a3 = validate_A3prime(m, n, mesh=mesh, seed=seed)
    grad = stress_gradient_check(m, n, seed=seed)
    write_table(out / "validation.csv", ["quantity", "value"],
                [["p", m.p], ["A1_constant", a1.constant], ["A1_samples", a1.samples_used],
                 ["A1_rejected", a1.rejected], ["A3prime_constant", a3.constant],
                 ["A3prime_samples", a3.samples_used], ["gradient_rel_error", grad]])
    _summary(out / "summary.txt", [("material", m.kind), ("A1_positive", str(a1.constant > 0)),
                                   ("gradient_rel_error", grad)])
    return EXIT_OK


def manufactured_error(n: int, dt: float, t_end: float) -> float:
    """L^2 error at t_end of the p = 2 step for w = e^{-t} sin(pi x) sin(pi y) (1, 1)."""
    mesh = build_rectangle_mesh(n, n, dirichlet_sides=("left", "right", "bottom", "top"))
    pi2 = np.pi ** 2

    def exact(t):
        return lambda x, y: (np.exp(-t) * np.sin(np.pi * x) * np.sin(np.pi * y),) * 2

    def f(t):
        # rho w_t - kappa lap w = (2 pi^2 - 1) w
        return NodalField.interpolate(mesh, lambda x, y: tuple((2 * pi2 - 1) * c for c in exact(t)(x, y)),
                                      constrained=False)

    prob = PLaplaceProblem(mesh, kappa=1.0, p=2.0, f=f,
                           u1=NodalField.interpolate(mesh, exact(0.0), apply_mask=True))
    steps = int(round(t_end / dt))
    w = pl_solve(prob, dt, steps)[-1]
    return l2_error(w, exact(steps * dt))


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    levels = [int(v) for v in cfg["experiment.levels"]]
    dt, t_end = cfg["solver.dt"], cfg["solver.t_end"]
    errs = [manufactured_error(n, dt, t_end) for n in levels]
    rows = []
    for i, (n, e) in enumerate(zip(levels, errs)):
        order = math.log(errs[i - 1] / e) / math.log(n / levels[i - 1]) if i else math.nan
        rows.append([1.0 / n, e, order])
    write_table(out / "convergence.csv", ["h", "l2_error", "order"], rows)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "sweep-kappa": cmd_sweep_kappa,
    "sweep-lifespan": cmd_sweep_lifespan,
    "validate-material": cmd_validate,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elastoreg", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        sp.add_argument("--out", default=None, help=f"output directory (else ${OUT_ENV})")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        out = output_dir(args.out)
        (out / "config.cfg").write_text(cfg.serialize())
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
