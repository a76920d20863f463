"""Radial simulation of u_t - Lap u = |u|^{q-2} u |x|^{-s} and self-similarity checks.

Space: finite volumes on a physical radial grid. Cell i spans the midpoints
around node i (the first cell reaches the origin), so volumes and face areas
are exact. Time: Crank-Nicolson for diffusion, the reaction taken explicitly
with a Heun predictor-corrector. The step size adapts to the relative change
per step and to the explicit-reaction stability limit.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .core import ConfigError, ProblemParams, RadialField, RadialGrid, make_grid, resample, \
    sphere_area


@dataclass
class EvolutionState:
    t: float
    field: RadialField
    mass_q: float
    dt_last: float
    sup_u: float = float("nan")
    status: str = "ok"
    blowup_bracket: tuple | None = None
    steps: int = 0

    def to_dict(self):
        return {"t": self.t, "mass_q": self.mass_q, "dt_last": self.dt_last,
                "sup_u": self.sup_u, "status": self.status,
                "blowup_bracket": self.blowup_bracket, "steps": self.steps}


def physical_grid(N: int, R_phys: float, M: int = 4000, grading: float = 1.0) -> RadialGrid:
    # unweighted fields only, so the K-overflow cap does not apply
    return make_grid(N, R_phys, M, grading, radius_cap=math.inf)


@dataclass(frozen=True, eq=False)
class _FV:
    grid: RadialGrid
    sub: np.ndarray
    sup: np.ndarray
    rho: np.ndarray    # cell average of r^{-s}
    vol: np.ndarray


def _finite_volumes(grid: RadialGrid, s: float) -> _FV:
    x = grid.nodes
    N = grid.N
    w = sphere_area(N)
    faces = np.concatenate(([0.0], 0.5 * (x[:-1] + x[1:]), [x[-1]]))
    lo, hi = faces[:-1], faces[1:]
    vol = w / N * (hi ** N - lo ** N)
    h = np.diff(x)
    area = w * faces[1:-1] ** (N - 1)          # interior faces
    sup = np.zeros(x.size)
    sub = np.zeros(x.size)
    sup[:-1] = area / (h * vol[:-1])
    sub[1:] = area / (h * vol[1:])
    rho = N / (N - s) * (hi ** (N - s) - lo ** (N - s)) / (hi ** N - lo ** N)
    return _FV(grid, sub, sup, rho, vol)


def _mass(u, fv: _FV, power):
    return float(np.sum(fv.vol * np.abs(u) ** power))


def _reaction(u, fv, q):
    return np.abs(u) ** (q - 2.0) * u * fv.rho


class _Stepper:
    def __init__(self, u, fv, p, nonlinear, rel_change, dt_max):
        self.u = u
        self.fv = fv
        self.p = p
        self.nonlinear = nonlinear
        self.rel_change = rel_change
        self.dt_max = dt_max
        self.steps = 0

    def _src(self, u):
        if not self.nonlinear:
            return np.zeros_like(u)
        return _reaction(u, self.fv, self.p.q)

    def stable_dt(self, u):
        if not self.nonlinear:
            return math.inf
        rate = np.max((self.p.q - 1.0) * np.abs(u) ** (self.p.q - 2.0) * self.fv.rho)
        return 0.5 / rate if rate > 0 else math.inf

    def step(self, dt):
        fv = self.fv
        u = self.u
        f0 = self._src(u)
        pred = kernels.imex_cn_step(fv.sub, fv.sup, u, f0, dt)
        if self.nonlinear:
            f1 = self._src(pred)
            return kernels.imex_cn_step(fv.sub, fv.sup, u, 0.5 * (f0 + f1), dt)
        return pred


def _to_physical(u0: RadialField, grid: RadialGrid):
    if u0.grid is grid:
        return u0.values.copy()
    vals = resample(u0, grid.nodes, outside=0.0)
    vals[-1] = 0.0
    return vals


def evolve_series(u0: RadialField, p: ProblemParams, t0: float, times, dt0: float = 1e-3, *,
                  nonlinear: bool = True, R_phys: float | None = None, M_phys: int = 8000,
                  grading: float = 1.0, rel_change: float = 0.1, dt_max: float = 0.01,
                  blowup_factor: float = 1e6):
    """Evolve from t0 and return one :class:`EvolutionState` per requested time.

    ``R_phys`` defaults to 2 R_max sqrt(t_end), with R_max the radius of the
    grid carrying ``u0``. The evolution halts early if sup|u| exceeds
    ``blowup_factor`` times its initial value; the last state then carries
    status ``blowup`` and the bracketing times.
    """
    times = sorted(float(t) for t in times)
    if not times or not times[0] >= t0 or not t0 > 0:
        raise ConfigError("need t_end > t0 > 0")
    if not dt0 > 0:
        raise ConfigError("dt0 must be positive")
    t_end = times[-1]
    if R_phys is None:
        R_phys = 2.0 * u0.grid.R_max * math.sqrt(t_end)
    grid = physical_grid(p.N, R_phys, M_phys, grading)
    fv = _finite_volumes(grid, p.s)
    u = _to_physical(u0, grid)
    sup0 = float(np.max(np.abs(u)))
    st = _Stepper(u, fv, p, nonlinear, rel_change, dt_max)
    out = []
    t = float(t0)
    dt = float(dt0)

    def snapshot(status="ok", bracket=None):
        return EvolutionState(t, RadialField(grid, st.u), _mass(st.u, fv, p.q), dt,
                              float(np.max(np.abs(st.u))), status, bracket, st.steps)

    k = 0
    while k < len(times) and times[k] <= t:
        out.append(snapshot())
        k += 1
    while k < len(times):
        target = times[k]
        dt = min(dt, st.stable_dt(st.u), dt_max)
        h = min(dt, target - t)
        if sup0 == 0.0:
            # zero data stays zero; jump straight to the target
            t = target
            out.append(snapshot())
            k += 1
            continue
        new = st.step(h)
        scale = max(float(np.max(np.abs(st.u))), 1e-300)
        change = float(np.max(np.abs(new - st.u))) / scale
        if not np.all(np.isfinite(new)) or change > rel_change:
            dt = 0.5 * h
            if dt < 1e-14 * max(1.0, t):
                out.append(snapshot("step_underflow"))
                return out
            continue
        t_prev = t
        st.u = new
        st.steps += 1
        t = target if h == target - t else t + h
        if float(np.max(np.abs(new))) > blowup_factor * sup0:
            out.append(snapshot("blowup", (t_prev, t)))
            return out
        if change < 0.2 * rel_change:
            dt = 1.25 * max(dt, h)
        if t >= target:
            out.append(snapshot())
            k += 1
    return out


def evolve(u0: RadialField, p: ProblemParams, t0: float, t1: float, dt0: float = 1e-3,
           **kw) -> EvolutionState:
    """State at t1 of the radial parabolic problem started from u0 at t0."""
    if not t1 > t0:
        raise ConfigError("need t1 > t0")
    return evolve_series(u0, p, t0, [t1], dt0, **kw)[-1]


def self_similar_profile(v: RadialField, p: ProblemParams, t: float, x):
    """t^{-alpha_ss} v(x / sqrt(t)) with monotone cubic resampling of v."""
    return t ** (-p.alpha_ss) * resample(v, np.asarray(x) / math.sqrt(t), outside=0.0)


def selfsim_error(v: RadialField, state: EvolutionState, p: ProblemParams) -> float:
    """Relative L2(dx) distance between the state and t^{-alpha_ss} v(x/sqrt t)."""
    if not state.t > 0:
        raise ConfigError("state time must be positive")
    grid = state.field.grid
    ref = self_similar_profile(v, p, state.t, grid.nodes)
    u = state.field.values
    w = grid.quad_weights
    num = math.sqrt(float(np.sum(w * (u - ref) ** 2)))
    den = math.sqrt(float(np.sum(w * ref ** 2)))
    if den == 0.0:
        den = math.sqrt(float(np.sum(w * u ** 2)))
        if den == 0.0:
            return 0.0
    return num / den


@dataclass(frozen=True)
class DecayFit:
    fitted_exponent: float
    r2: float
    n_used: int
    expected: float = float("nan")

    def to_dict(self):
        return dict(self.__dict__)


def decay_fit(states, p: ProblemParams, power: float | None = None) -> DecayFit:
    """Least-squares slope of log(int |u|^power dx) against log t.

    ``power`` defaults to q (the stored ``mass_q``). ``expected`` is the
    change-of-variables exponent -(alpha_ss * power - N/2).
    """
    ts, ms = [], []
    for st in states:
        if power is None:
            m = st.mass_q
        else:
            grid = st.field.grid
            m = float(np.sum(grid.quad_weights * np.abs(st.field.values) ** power))
        if m > 0 and math.isfinite(m):
            ts.append(st.t)
            ms.append(m)
    if len(ts) < 2:
        raise ValueError("no positive masses to fit")
    x = np.log(ts)
    y = np.log(ms)
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    pw = p.q if power is None else power
    return DecayFit(float(slope), r2, len(ts), -(p.alpha_ss * pw - p.N / 2.0))


def write_time_series(states, path, v: RadialField | None = None, p: ProblemParams | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass_q", "sup_u", "selfsim_error"])
        for st in states:
            err = selfsim_error(v, st, p) if v is not None else float("nan")
            wr.writerow([repr(st.t), repr(st.mass_q), repr(st.sup_u), repr(err)])


def heat_kernel_solution(x, t, t0=1.0, sigma=1.0, N=3):
    """Exact heat flow of exp(-|x|^2/(4 sigma)) started at t0."""
    tau = sigma + (t - t0)
    return (sigma / tau) ** (N / 2.0) * np.exp(-np.asarray(x) ** 2 / (4.0 * tau))
