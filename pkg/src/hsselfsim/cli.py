"""Command-line front end.

    hsselfsim [--config run.json] [--out DIR] [--jobs N] [--strict] COMMAND

Commands: constants, eigen, minimize, ground-state, shoot, pohozaev, sweep-eps,
evolve. A run writes ``report.json``, CSV tables, field snapshots under
``fields/`` and ``manifest.json`` into one directory. The exit status is 0 iff
every threshold check of the run passes; ``--strict`` additionally fails on
any sweep row or solver result whose status is not ok.

Config (JSON, every key optional):

    {"command": "eigen",
     "params": {"N": 5, "s": 1.0, "q": null, "alpha": 1.5},   # q null -> 2*(s)
     "grid": {"R_max": 16, "M": 4000, "grading": 2},
     "options": {...command specific, see DEFAULT_OPTIONS...},
     "seed": 0}

The output directory comes from --out, else $HSSELFSIM_OUT, else
./hsselfsim-runs/<command>.
"""

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .core import ConfigError, ProblemParams, make_grid, read_field_csv, write_field_csv

COMMANDS = ("constants", "eigen", "minimize", "ground-state", "shoot", "pohozaev",
            "sweep-eps", "evolve")

DEFAULT_PARAMS = {
    "constants": {"N": 5, "s": 1.0, "q": None, "alpha": 1.5},
    "eigen": {"N": 4, "s": 0.0, "q": None, "alpha": 0.0},
    "minimize": {"N": 5, "s": 1.0, "q": None, "alpha": 1.5},
    "ground-state": {"N": 3, "s": 0.5, "q": 3.0, "alpha": 0.75},
    "shoot": {"N": 3, "s": 0.5, "q": 3.0, "alpha": 0.75},
    "pohozaev": {"N": 5, "s": 1.0, "q": None, "alpha": 1.5},
    "sweep-eps": {"N": 7, "s": 0.5, "q": None, "alpha": 1.75},
    "evolve": {"N": 3, "s": 0.5, "q": 3.0, "alpha": None},   # alpha None -> alpha_ss
}
DEFAULT_GRID = {"R_max": 16.0, "M": 4000, "grading": 2.0}
DEFAULT_OPTIONS = {
    "constants": {"hardy_eps": [0.5, 0.2, 0.1, 0.05], "tol_lambda": 1e-3, "min_cosine": 0.9999,
                  "tol_s0": 1e-3,
                  "tol_moment": 1e-6},
    "eigen": {"tol_lambda": 1e-3, "min_cosine": 0.9999},
    "minimize": {"variants": ["weighted"], "eps_init": 0.1, "maxiter": 100000,
                 "maxiter_concentrating": 3000, "tol_residual": 1e-2},
    "ground-state": {"M": 16000, "tol_residual": 1e-6, "tol_nehari": 1e-6},
    "shoot": {"max_nodes": 1, "d0_lo": 1e-2, "d0_hi": 1e3, "n_scan": 61},
    "pohozaev": {"field": None, "tol": 1e-2},
    "sweep-eps": {"alphas": [1.4, 2.1], "eps": None, "variant": "general"},
    "evolve": {"M": 16000, "t0": 1.0, "t_check": 2.0, "t_end": 10.0, "n_times": 11,
               "dt0": 1e-3, "M_phys": 16000, "R_phys": 40.0, "dt_max": 0.005,
               "tol_selfsim": 2e-2, "tol_decay": 0.05},
}


@dataclass
class RunConfig:
    command: str
    params: dict
    grid: dict
    options: dict
    seed: int = 0
    out: str | None = None

    def to_dict(self):
        return {"command": self.command, "params": self.params, "grid": self.grid,
                "options": self.options, "seed": self.seed}

    def problem(self) -> ProblemParams:
        P = self.params
        if P.get("q") is None:
            return ProblemParams.critical(P["N"], P["s"], P["alpha"])
        if P.get("alpha") is None:
            return ProblemParams.self_similar(P["N"], P["s"], P["q"])
        return ProblemParams(P["N"], P["s"], P["q"], P["alpha"])

    def make_grid(self, M=None):
        g = self.grid
        return make_grid(self.params["N"], g["R_max"], M or g["M"], g["grading"])


@dataclass
class Outcome:
    report: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    fields: dict = field(default_factory=dict)   # name -> RadialField
    checks: list = field(default_factory=list)
    statuses: list = field(default_factory=list)

    def check(self, name, value, threshold, passed):
        self.checks.append({"name": name, "value": _jsonable(value),
                            "threshold": _jsonable(threshold), "passed": bool(passed)})


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def build_config(raw: dict, command: str | None = None) -> RunConfig:
    """Merge defaults, validate, and return a RunConfig (raises ConfigError)."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    cmd = command or raw.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"command: expected one of {COMMANDS}, got {cmd!r}")
    unknown = set(raw) - {"command", "params", "grid", "options", "seed", "out"}
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    params = {**DEFAULT_PARAMS[cmd], **raw.get("params", {})}
    grid = {**DEFAULT_GRID, **raw.get("grid", {})}
    opts_in = raw.get("options", {})
    bad = set(opts_in) - set(DEFAULT_OPTIONS[cmd])
    if bad:
        raise ConfigError(f"options: unknown keys {sorted(bad)} for {cmd}")
    options = {**DEFAULT_OPTIONS[cmd], **opts_in}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")
    cfg = RunConfig(cmd, params, grid, options, seed, raw.get("out"))
    for key in ("N", "s"):
        if not isinstance(params.get(key), (int, float)) or isinstance(params.get(key), bool):
            raise ConfigError(f"params.{key}: must be a number")
    try:
        cfg.problem()
    except ConfigError as exc:
        raise ConfigError(f"params: {exc}") from None
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"params: {exc}") from None
    try:
        make_grid(params["N"], grid["R_max"], grid["M"], grid["grading"])
    except ConfigError as exc:
        raise ConfigError(f"grid: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"grid: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_eigen(cfg: RunConfig, jobs: int) -> Outcome:
    from .core import gaussian
    from .solver import cosine_K, first_eigenpair

    out = Outcome()
    g = cfg.make_grid()
    e = first_eigenpair(g)
    cos = cosine_K(e.eigenfield, gaussian(g))
    N = g.N
    rel = abs(e.lambda1 - N / 2) / (N / 2)
    out.report = {**e.to_dict(), "expected": N / 2, "rel_err": rel, "cosine_gaussian": cos}
    out.fields["eigenfield"] = e.eigenfield
    out.check("lambda1_rel_err", rel, cfg.options["tol_lambda"], rel <= cfg.options["tol_lambda"])
    out.check("cosine_gaussian", cos, cfg.options["min_cosine"], cos >= cfg.options["min_cosine"])
    return out


def _cmd_constants(cfg: RunConfig, jobs: int) -> Outcome:
    from . import bubbles as B
    from .functionals import hardy_ratio

    out = _cmd_eigen(cfg, jobs)
    out.checks = [c for c in out.checks if c["name"] == "lambda1_rel_err"]
    p = cfg.problem()
    g = cfg.make_grid()
    N = p.N
    CN = ((N - 2) / 2) ** 2
    rows = []
    for eps in cfg.options["hardy_eps"]:
        rows.append([eps, hardy_ratio(B.hardy_test_field(g, eps)),
                     B.hardy_ratio_concentrating(N, eps)])
    out.tables["hardy"] = (["eps", "ratio_test_family", "ratio_concentrating"], rows)
    lower_ok = all(r[1] >= CN * (1 - 1e-3) for r in rows)
    out.check("hardy_ratio_lower_bound", min(r[1] for r in rows), CN * (1 - 1e-3), lower_ok)
    pc = ProblemParams.critical(N, p.s, p.alpha)
    m = B.moment_integrals(pc)
    s0_mom = B.s0_from_moments(m, pc)
    s0_bub = B.s0_reference(pc)
    rel = abs(s0_mom - s0_bub) / s0_bub
    out.check("S0_two_route", rel, cfg.options["tol_s0"], rel <= cfg.options["tol_s0"])
    out.report.update({"C_N": CN, "moments": _jsonable(m.to_dict()), "S0_moments": s0_mom,
                       "S0_bubble": s0_bub})
    if m.valid_flags["A2"]:
        rid = abs(m.A2 - N / 4 * m.A4) / abs(m.A2)
        out.report["A2_identity_rel_err"] = rid
        out.check("A2_eq_N_over_4_A4", rid, cfg.options["tol_moment"],
                  rid <= cfg.options["tol_moment"])
    out.fields = {}
    return out


def _cmd_minimize(cfg: RunConfig, jobs: int) -> Outcome:
    from .bubbles import s0_reference
    from .solver import cutoff_bubble_init, minimize_quotient

    out = Outcome()
    p = cfg.problem()
    g = cfg.make_grid()
    s0 = s0_reference(p)
    opts = cfg.options
    rows = []
    for variant in opts["variants"]:
        if variant == "weighted":
            pv, weighted, cap = p, True, opts["maxiter"]
        elif variant == "weighted_alpha0":
            pv, weighted, cap = p.with_alpha(0.0), True, opts["maxiter_concentrating"]
        elif variant == "unweighted":
            pv, weighted, cap = p.with_alpha(0.0), False, opts["maxiter_concentrating"]
        else:
            raise ConfigError(f"options.variants: unknown variant {variant!r}")
        init = cutoff_bubble_init(g, pv, opts["eps_init"] if weighted else 1.0, weighted)
        rep = minimize_quotient(pv, weighted, init, maxiter=cap)
        out.report[variant] = rep.to_dict()
        out.fields[f"minimizer_{variant}"] = rep.minimizer
        rows.append([variant, pv.alpha, rep.S_value, s0, rep.iterations, rep.converged,
                     rep.residual_after_rescale, rep.status])
        out.statuses.append(rep.status if variant == "weighted" else "ok")
        if variant == "weighted" and p.N / 4 < p.alpha < p.N / 2:
            out.check("S_K_alpha_below_S0", rep.S_value, s0, rep.S_value < s0)
            out.check("residual_after_rescale", rep.residual_after_rescale,
                      opts["tol_residual"], rep.residual_after_rescale <= opts["tol_residual"])
        if variant == "unweighted":
            out.check("S_unweighted_le_S0_1pct", rep.S_value, s0 * 1.01, rep.S_value <= s0 * 1.01)
    out.report["S0"] = s0
    out.tables["minimize"] = (["variant", "alpha", "S_value", "S0", "iterations", "converged",
                               "residual_after_rescale", "status"], rows)
    return out


def _cmd_ground_state(cfg: RunConfig, jobs: int) -> Outcome:
    from .solver import ground_state, pohozaev_check

    out = Outcome()
    p = cfg.problem()
    g = cfg.make_grid(M=cfg.options["M"])
    rep = ground_state(p, grid=g)
    v = rep.rescaled
    ph = pohozaev_check(v, p)
    out.report = {**rep.to_dict(), "pohozaev": ph.to_dict()}
    out.fields["ground_state"] = v
    out.statuses.append(rep.status)
    e = rep.energy
    ident = abs(e["E"] - (0.5 - 1 / p.q) * e["B"]) / abs(e["E"])
    out.check("weak_residual", rep.residual_after_rescale, cfg.options["tol_residual"],
              rep.residual_after_rescale <= cfg.options["tol_residual"])
    out.check("nehari_gap", e["nehari_gap"], cfg.options["tol_nehari"],
              e["nehari_gap"] <= cfg.options["tol_nehari"])
    out.check("energy_identity", ident, 1e-6, ident <= 1e-6)
    return out


def _cmd_shoot(cfg: RunConfig, jobs: int) -> Outcome:
    from .functionals import energy_breakdown
    from .solver import shooting_ladder

    out = Outcome()
    p = cfg.problem()
    g = cfg.make_grid()
    o = cfg.options
    lad = shooting_ladder(p, g, o["max_nodes"], o["d0_lo"], o["d0_hi"], o["n_scan"])
    rows = []
    energies = []
    for k in range(o["max_nodes"] + 1):
        sol = lad.get(k)
        if sol is None:
            rows.append([k, "nan", "nan", False, "nan", "not_found"])
            out.statuses.append("not_found")
            continue
        E = energy_breakdown(sol.field, p).E
        energies.append(E)
        rows.append([k, sol.d0, sol.node_count, sol.admissible, E, sol.status])
        out.statuses.append(sol.status if sol.admissible else "inadmissible")
        out.fields[f"shoot_nodes{k}"] = sol.field
        out.report[f"nodes{k}"] = {**sol.to_dict(), "E_K": E}
    out.tables["shoot"] = (["target_nodes", "d0", "node_count", "admissible", "E_K", "status"], rows)
    inc = len(energies) == o["max_nodes"] + 1 and all(b > a for a, b in zip(energies, energies[1:]))
    out.check("energy_increasing_in_nodes", energies, "strictly increasing", inc)
    return out


def _cmd_pohozaev(cfg: RunConfig, jobs: int) -> Outcome:
    from .solver import cutoff_bubble_init, minimize_quotient, pohozaev_check

    out = Outcome()
    p = cfg.problem()
    g = cfg.make_grid()
    path = cfg.options["field"]
    if path:
        v = read_field_csv(path, grid=g)
        source = str(path)
    else:
        rep = minimize_quotient(p, True, cutoff_bubble_init(g, p))
        v = rep.rescaled
        source = "minimize_quotient (Nehari-rescaled)"
        out.statuses.append(rep.status)
    ph = pohozaev_check(v, p)
    out.report = {"source": source, **ph.to_dict()}
    tol = cfg.options["tol"]
    out.check("rel_err1", ph.rel_err1, tol, ph.rel_err1 <= tol)
    out.check("rel_err3", ph.rel_err3, tol, ph.rel_err3 <= tol)
    return out


def _sweep_point(args):
    from .bubbles import family_quotients

    pdict, eps, variant = args
    p = ProblemParams(**pdict)
    try:
        return family_quotients(p, eps, variant)
    except (ArithmeticError, ValueError) as exc:
        from .bubbles import SweepRow
        nan = float("nan")
        return SweepRow(eps, nan, nan, nan, nan, f"error: {exc}")


def _pool_map(fn, items, jobs):
    """Map preserving input order, serially or on a process pool."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _cmd_sweep_eps(cfg: RunConfig, jobs: int) -> Outcome:
    from . import bubbles as B

    out = Outcome()
    p = cfg.problem()
    o = cfg.options
    eps = o["eps"] if o["eps"] is not None else [float(e) for e in B.default_eps_sweep()]
    alphas = [float(a) for a in o["alphas"]]
    pts = [({"N": p.N, "s": p.s, "q": p.q, "alpha": a}, float(e), o["variant"])
           for a in alphas for e in eps]
    res = _pool_map(_sweep_point, pts, jobs)
    s0 = B.s0_reference(p)
    slope_rows = []
    slopes = []
    for i, a in enumerate(alphas):
        rows = res[i * len(eps):(i + 1) * len(eps)]
        out.tables[f"sweep_alpha_{a:g}"] = (
            ["eps", "Q_weighted", "Q_unweighted", "A", "B", "status"],
            [[r.eps, r.Q_weighted, r.Q_unweighted, r.A, r.B, r.status] for r in rows])
        out.statuses.extend(r.status for r in rows)
        fit = B.fit_expansion_slope([r.eps for r in rows], [r.Q_weighted for r in rows], p.s)
        below = any(r.Q_weighted < s0 for r in rows)
        slopes.append(fit.slope)
        slope_rows.append([a, fit.slope, fit.intercept, fit.curvature, fit.rms, below])
    out.tables["slopes"] = (["alpha", "slope", "intercept", "curvature", "rms",
                             "some_Q_below_S0"], slope_rows)
    out.report = {"S0": s0, "alphas": alphas, "slopes": slopes, "N_over_4": p.N / 4}
    if len(alphas) >= 2:
        a_lo, a_hi = alphas[0], alphas[-1]
        f_lo, f_hi = slopes[0], slopes[-1]
        flip = a_lo - f_lo * (a_hi - a_lo) / (f_hi - f_lo) if f_hi != f_lo else float("nan")
        out.report["flip_alpha_interpolated"] = flip
        out.report["flip_rel_dev_from_N_over_4"] = abs(flip / (p.N / 4) - 1)
        if p.N >= 5 and o["variant"] == "general":
            out.report["flip_alpha_two_term_expansion"] = B.predicted_flip_alpha(p)
        out.check("slopes_opposite_sign", [f_lo, f_hi], "opposite signs", f_lo * f_hi < 0)
    return out


def _cmd_evolve(cfg: RunConfig, jobs: int) -> Outcome:
    from .selfsim import decay_fit, evolve_series, selfsim_error
    from .solver import ground_state

    out = Outcome()
    p = cfg.problem()
    o = cfg.options
    if abs(p.alpha - p.alpha_ss) > 1e-12 * max(1.0, abs(p.alpha_ss)):
        raise ConfigError("params.alpha: the self-similar run needs alpha = alpha_ss "
                          "(leave alpha null)")
    g = cfg.make_grid(M=o["M"])
    v = ground_state(p, grid=g).rescaled
    times = sorted({o["t0"], o["t_check"], *np.geomspace(o["t0"], o["t_end"], o["n_times"])})
    states = evolve_series(v, p, o["t0"], times, o["dt0"], M_phys=o["M_phys"],
                           R_phys=o["R_phys"], dt_max=o["dt_max"])
    out.statuses.extend(s.status for s in states)
    at = {s.t: s for s in states}
    err2 = selfsim_error(v, at[o["t_check"]], p) if o["t_check"] in at else float("nan")
    fit = decay_fit([s for s in states if o["t0"] <= s.t <= o["t_end"]], p)
    rel = abs(fit.fitted_exponent / fit.expected - 1)
    rows = [[s.t, s.mass_q, s.sup_u, selfsim_error(v, s, p)] for s in states]
    out.tables["time_series"] = (["t", "mass_q", "sup_u", "selfsim_error"], rows)
    out.fields["profile"] = v
    out.fields[f"u_t{states[-1].t:g}"] = states[-1].field
    out.report = {"selfsim_error_t_check": err2, "decay_fit": fit.to_dict(),
                  "decay_rel_err": rel, "final": states[-1].to_dict()}
    out.check("selfsim_error", err2, o["tol_selfsim"], err2 <= o["tol_selfsim"])
    out.check("decay_exponent", rel, o["tol_decay"], rel <= o["tol_decay"])
    return out


HANDLERS = {
    "constants": _cmd_constants, "eigen": _cmd_eigen, "minimize": _cmd_minimize,
    "ground-state": _cmd_ground_state, "shoot": _cmd_shoot, "pohozaev": _cmd_pohozaev,
    "sweep-eps": _cmd_sweep_eps, "evolve": _cmd_evolve,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(x) for x in row])


def _versions():
    import scipy

    v = {"hsselfsim": __version__, "python": platform.python_version(),
         "numpy": np.__version__, "scipy": scipy.__version__, "backend": backend()}
    try:
        import numba
        v["numba"] = numba.__version__
    except ImportError:
        v["numba"] = None
    return v


def run(cfg: RunConfig, out_dir: Path, jobs: int = 1, strict: bool = False) -> int:
    np.random.seed(cfg.seed)
    t_start = time.time()
    outcome = HANDLERS[cfg.command](cfg, jobs)
    wall = time.time() - t_start
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in outcome.tables.items():
        write_table(out_dir / f"{name}.csv", header, rows)
    for name, f in outcome.fields.items():
        write_field_csv(f, out_dir / "fields" / f"{name}.csv")
    failed = [c["name"] for c in outcome.checks if not c["passed"]]
    bad_status = [s for s in outcome.statuses if s not in ("ok", "converged")]
    passed = not failed and not (strict and bad_status)
    report = {"command": cfg.command, "params": cfg.problem().to_dict(),
              "result": _jsonable(outcome.report), "checks": outcome.checks,
              "non_ok_statuses": bad_status, "passed": passed}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest = {"config": cfg.to_dict(), "versions": _versions(), "wall_time_s": wall,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "jobs": jobs,
                "strict": strict, "argv": sys.argv[1:]}
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    for c in outcome.checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['value']} "
              f"(threshold {c['threshold']})")
    if strict and bad_status:
        print(f"[FAIL] non-ok statuses: {sorted(set(bad_status))}")
    print(f"wrote {out_dir}")
    return 0 if passed else 1


def make_parser():
    ap = argparse.ArgumentParser(
        prog="hsselfsim",
        description="Gaussian-weighted Hardy-Sobolev problems: constants, minimizers, "
                    "shooting, Pohozaev certificates, epsilon-sweeps and parabolic runs.",
        epilog="Defaults per command:\n" + "\n".join(
            f"  {c}: params={json.dumps(DEFAULT_PARAMS[c])} options={json.dumps(DEFAULT_OPTIONS[c])}"
            for c in COMMANDS) + f"\n  grid: {json.dumps(DEFAULT_GRID)}",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="subcommand (may instead be given as 'command' in the config)")
    ap.add_argument("--config", type=Path, help="JSON run configuration")
    ap.add_argument("--out", type=Path, help="output directory (overrides $HSSELFSIM_OUT)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--strict", action="store_true",
                    help="also fail on any non-ok sweep row or solver status")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
        cfg = build_config(raw, args.command)
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or cfg.out or os.environ.get("HSSELFSIM_OUT") \
        or Path("hsselfsim-runs") / cfg.command
    try:
        return run(cfg, Path(out_dir), args.jobs, args.strict)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
