"""Closed-form test families, moment integrals and the epsilon-sweep of Q_{K,alpha}.

Notation (radial, b = 2 - s):

    V_eps(r) = (eps + r^b)^{-(N-2)/b}
    U_eps(r) = (eps (N-s)(N-2))^{(N-2)/(2b)} V_eps(r)      solves -Lap U = U^{2*-1} r^{-s}
    u_eps    = K^{-1/2} phi V_eps                          (cut-off family)
    u_eps    = exp(-r^2/4) U_eps                           (N = 3 family)

Sweep quotients are evaluated with adaptive 1-D quadrature of the analytic
integrands rather than on a finite-difference grid: slope fits in eps need
more digits than a desk-scale mesh delivers.
"""

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .core import ConfigError, ProblemParams, RadialField, RadialGrid, sphere_area

_QUAD = dict(epsabs=0.0, epsrel=1e-13, limit=400)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def bubble_norm_const(N, s, eps):
    return (eps * (N - s) * (N - 2.0)) ** ((N - 2.0) / (2.0 * (2.0 - s)))


def V_profile(r, N, s, eps):
    b = 2.0 - s
    return (eps + r ** b) ** (-(N - 2.0) / b)


def V_profile_dr(r, N, s, eps):
    b = 2.0 - s
    return -(N - 2.0) * r ** (1.0 - s) * (eps + r ** b) ** (-(N - 2.0) / b - 1.0)


def cutoff(r):
    """C^1 cutoff: 1 on [0,1], cubic smoothstep down to 0 on [1,2], 0 beyond."""
    t = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def cutoff_dr(r):
    r = np.asarray(r, dtype=float)
    t = np.clip(r - 1.0, 0.0, 1.0)
    return np.where((r > 1.0) & (r < 2.0), -6.0 * t * (1.0 - t), 0.0)


def hardy_test_field(grid: RadialGrid, eps: float) -> RadialField:
    """V = 1 on [0,1], e^{1/4} r^{-gamma} e^{-r^2/4} beyond, gamma = (N-2+2 eps)/2.

    The factor e^{1/4} makes V continuous at r = 1.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    r = grid.nodes
    gamma = (grid.N - 2.0 + 2.0 * eps) / 2.0
    outer = np.exp(0.25 - 0.25 * r * r) * r ** (-gamma)
    return RadialField(grid, np.where(r <= 1.0, 1.0, outer))


def hardy_concentrating_field(grid: RadialGrid, eps: float) -> RadialField:
    """r^{-beta} on (0,1], r^{-beta} e^{-(r^2-1)/4} beyond, beta = (N-2-2 eps)/2.

    Concentrates at the origin, where the Hardy quotient approaches its
    infimum ((N-2)/2)^2 as eps -> 0.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    r = grid.nodes
    beta = (grid.N - 2.0 - 2.0 * eps) / 2.0
    return RadialField(grid, r ** (-beta) * np.exp(-0.25 * np.maximum(r * r - 1.0, 0.0)))


def bubble_U(grid: RadialGrid, p: ProblemParams, eps: float) -> RadialField:
    if not eps > 0:
        raise ConfigError("eps must be positive")
    c = bubble_norm_const(p.N, p.s, eps)
    return RadialField(grid, c * V_profile(grid.nodes, p.N, p.s, eps))


def bubble_residual(grid: RadialGrid, p: ProblemParams, eps: float = 1.0) -> float:
    """Relative unweighted L2 residual of -Lap U - U^{2*-1} r^{-s} on interior nodes."""
    from . import kernels

    U = bubble_U(grid, p, eps)
    r = grid.nodes
    d1 = kernels.first_derivative(U.values, r)
    d2 = kernels.second_derivative(U.values, r)
    rhs = U.values ** (p.crit_exp - 1.0) * r ** (-p.s)
    res = -d2 - (p.N - 1.0) / r * d1 - rhs
    w = grid.quad_weights[1:-1]
    return math.sqrt(np.sum(w * res[1:-1] ** 2) / np.sum(w * rhs[1:-1] ** 2))


def comparison_family(grid: RadialGrid, p: ProblemParams, eps: float,
                      variant: str = "general") -> RadialField:
    """Test fields whose quotient dips below S_0 for suitable alpha.

    ``general``: K^{-1/2} phi V_eps with the smoothstep cutoff phi.
    ``dim3``: exp(-r^2/4) U_eps (N = 3 only).
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    r = grid.nodes
    if variant == "general":
        vals = np.exp(-r * r / 8.0) * cutoff(r) * V_profile(r, p.N, p.s, eps)
    elif variant == "dim3":
        if p.N != 3:
            raise ConfigError("the dim3 family needs N = 3")
        vals = np.exp(-r * r / 4.0) * bubble_norm_const(3, p.s, eps) * V_profile(r, 3, p.s, eps)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return RadialField(grid, vals)


# ---------------------------------------------------------------------------
# 1-D radial quadrature of analytic integrands
# ---------------------------------------------------------------------------

def radial_quad(f, N, upper, breaks=()):
    """omega_{N-1} * int_0^upper f(r) r^{N-1} dr, split at the given radii."""
    pts = sorted({0.0, *[b for b in breaks if 0.0 < b < upper], float(upper)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if math.isinf(b):
            val, _ = quad(lambda r: f(r) * r ** (N - 1), a, b, epsabs=0.0, epsrel=1e-12,
                          limit=400)
        else:
            val, _ = quad(lambda r: f(r) * r ** (N - 1), a, b, **_QUAD)
        total += val
    return sphere_area(N) * total


def _power_tail(c, a, b, p, R, tol=1e-18):
    """int_R^inf c r^a (1 + r^b)^{-p} dr by the binomial series in r^{-b}."""
    total = 0.0
    coef = 1.0  # binomial coefficient C(-p, k), built recursively
    for k in range(200):
        if k > 0:
            coef *= (-p - k + 1.0) / k
        e = a - b * p - b * k + 1.0
        if e >= 0:
            raise ValueError("integrand not integrable at infinity")
        term = c * coef * R ** e / (-e)
        total += term
        if abs(term) <= tol * abs(total):
            break
    return total


def _power_moment(c, a, b, p, N, R=1.0e4):
    """omega_{N-1} int_0^inf c r^{a+N-1} (1+r^b)^{-p} dr: quad on [0,R] + series tail."""
    m = a + N - 1.0
    breaks = [10.0 ** k for k in range(-2, int(math.log10(R)))]
    head = radial_quad(lambda r: c * r ** a * (1.0 + r ** b) ** (-p), N, R, breaks)
    tail = sphere_area(N) * _power_tail(c, m, b, p, R)
    return head + tail


@dataclass(frozen=True)
class MomentIntegrals:
    A0: float
    A1: float
    A2: float
    A3: float
    A4: float
    valid_flags: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        for k, ok in self.valid_flags.items():
            if not ok:
                d[k] = None
        return d


# name -> (coefficient(N,s), power a, exponent p(N,s), minimal N)
_MOMENTS = {
    "A0": (lambda N, s: 1.0, lambda N, s: -s, lambda N, s: (2 * N - 2 * s) / (2 - s), 3),
    "A1": (lambda N, s: (N - 2.0) ** 2, lambda N, s: 2 - 2 * s,
           lambda N, s: 2 * (N - s) / (2 - s), 3),
    "A2": (lambda N, s: (N - 2.0) / 2, lambda N, s: 2 - s,
           lambda N, s: (2 * N - s - 2) / (2 - s), 5),
    "A3": (lambda N, s: 1.0 / 16, lambda N, s: 2.0, lambda N, s: 2 * (N - 2) / (2 - s), 7),
    "A4": (lambda N, s: 1.0, lambda N, s: 0.0, lambda N, s: (2 * N - 4) / (2 - s), 5),
}


def moment_integrals(p: ProblemParams, R_A: float = 1.0e4) -> MomentIntegrals:
    """A0..A4 as integrals over R^N; entries below their dimension threshold are nan and flagged."""
    N, s = p.N, p.s
    vals, flags = {}, {}
    for name, (cf, af, pf, n_min) in _MOMENTS.items():
        ok = N >= n_min
        flags[name] = ok
        vals[name] = _power_moment(cf(N, s), af(N, s), 2.0 - s, pf(N, s), N, R_A) if ok \
            else float("nan")
    return MomentIntegrals(valid_flags=flags, **vals)


def s0_reference(p: ProblemParams, eps: float = 1.0) -> float:
    """S_0 = (int |grad U_eps|^2)^{(2-s)/(N-s)} by quadrature of the closed-form bubble."""
    N, s = p.N, p.s
    c = bubble_norm_const(N, s, eps)
    scale = eps ** (1.0 / (2.0 - s))
    R = 1.0e4 * scale
    breaks = [scale * 10.0 ** k for k in range(-2, 4)]
    head = radial_quad(lambda r: (c * V_profile_dr(r, N, s, eps)) ** 2, N, R, breaks)
    # tail: |U'|^2 r^{N-1} = c^2 (N-2)^2 r^{2-2s+N-1} (eps + r^b)^{-2(N-s)/b}
    b = 2.0 - s
    m = 2.0 - 2.0 * s + N - 1.0
    pw = 2.0 * (N - s) / b
    # factor eps out: (eps + r^b)^{-pw} = eps^{-pw} (1 + (r/scale)^b)^{-pw}
    tail = c * c * (N - 2.0) ** 2 * eps ** (-pw) * scale ** (m + 1.0) \
        * _power_tail(1.0, m, b, pw, R / scale)
    grad2 = head + sphere_area(N) * tail
    return grad2 ** ((2.0 - s) / (N - s))


def s0_from_moments(m: MomentIntegrals, p: ProblemParams) -> float:
    return m.A0 ** ((2.0 - p.N) / (p.N - p.s)) * m.A1


# ---------------------------------------------------------------------------
# epsilon sweeps of the comparison quotients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    eps: float
    Q_weighted: float
    Q_unweighted: float
    A: float
    B: float
    status: str = "ok"


def _family_parts(p: ProblemParams, eps: float, variant: str):
    """(w, w', upper) with u = exp(-r^2/8) w."""
    N, s = p.N, p.s
    if variant == "general":
        def w(r):
            return cutoff(r) * V_profile(r, N, s, eps)

        def dw(r):
            return cutoff_dr(r) * V_profile(r, N, s, eps) + cutoff(r) * V_profile_dr(r, N, s, eps)
        return w, dw, 2.0
    if variant == "dim3":
        if N != 3:
            raise ConfigError("the dim3 family needs N = 3")
        c = bubble_norm_const(N, s, eps)

        def w(r):
            return c * math.exp(-r * r / 8.0) * V_profile(r, N, s, eps)

        def dw(r):
            e = math.exp(-r * r / 8.0)
            return c * e * (V_profile_dr(r, N, s, eps) - 0.25 * r * V_profile(r, N, s, eps))
        return w, dw, math.inf
    raise ConfigError(f"unknown variant {variant!r}")


def family_quotients(p: ProblemParams, eps: float, variant: str = "general") -> SweepRow:
    """Q_{K,alpha}(u_eps) and Q_alpha(u_eps) from analytic integrands.

    With u = exp(-r^2/8) w, integration by parts gives
        int |grad u|^2 K - alpha int u^2 K
            = int |w'|^2 + (N/4 - alpha) int w^2 + (1/16) int r^2 w^2,
        int |u|^{2*} r^{-s} K = int exp(-(2-s) r^2 / (4(N-2))) |w|^{2*} r^{-s}.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    N, s, a = p.N, p.s, p.alpha
    crit = p.crit_exp
    w, dw, upper = _family_parts(p, eps, variant)
    scale = eps ** (1.0 / (2.0 - s))
    breaks = [scale * 10.0 ** k for k in range(-2, 3)] + [1.0, 2.0, 4.0, 8.0]
    if math.isinf(upper):
        breaks.append(40.0)
    def rq(f):
        return radial_quad(f, N, upper, breaks)

    g2 = rq(lambda r: dw(r) ** 2)
    m2 = rq(lambda r: w(r) ** 2)
    r2m = rq(lambda r: r * r * w(r) ** 2)
    A = g2 + (N / 4.0 - a) * m2 + r2m / 16.0
    kappa = (2.0 - s) / (4.0 * (N - 2.0))
    B = rq(lambda r: math.exp(-kappa * r * r) * abs(w(r)) ** crit * r ** (-s))
    # unweighted: u = exp(-r^2/8) w, u' = exp(-r^2/8) (w' - r w / 4)
    gu = rq(lambda r: math.exp(-r * r / 4.0) * (dw(r) - 0.25 * r * w(r)) ** 2)
    mu = rq(lambda r: math.exp(-r * r / 4.0) * w(r) ** 2)
    Bu = rq(lambda r: math.exp(-crit * r * r / 8.0) * abs(w(r)) ** crit * r ** (-s))
    Qw = A / B ** (2.0 / crit)
    Qu = (gu - a * mu) / Bu ** (2.0 / crit)
    return SweepRow(float(eps), Qw, Qu, A, B)


def sweep_eps(p: ProblemParams, eps_list, variant: str = "general"):
    rows = []
    for e in eps_list:
        try:
            rows.append(family_quotients(p, e, variant))
        except (ArithmeticError, ValueError) as exc:  # keep the row, mark it
            nan = float("nan")
            rows.append(SweepRow(float(e), nan, nan, nan, nan, f"error: {exc}"))
    return rows


def write_sweep_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eps", "Q_weighted", "Q_unweighted", "A", "B", "status"])
        for row in rows:
            wr.writerow([repr(row.eps), repr(row.Q_weighted), repr(row.Q_unweighted),
                         repr(row.A), repr(row.B), row.status])


@dataclass(frozen=True)
class SlopeFit:
    intercept: float
    slope: float
    curvature: float
    rms: float


def fit_expansion_slope(eps, Q, s: float, degree: int = 2) -> SlopeFit:
    """Fit Q = c0 + c1 x + c2 x^2 with x = eps^{2/(2-s)}; c1 is the expansion slope."""
    eps = np.asarray(eps, dtype=float)
    Q = np.asarray(Q, dtype=float)
    ok = np.isfinite(Q)
    x = eps[ok] ** (2.0 / (2.0 - s))
    coef = np.polynomial.polynomial.polyfit(x, Q[ok], degree)
    resid = Q[ok] - np.polynomial.polynomial.polyval(x, coef)
    curv = coef[2] if degree >= 2 else 0.0
    return SlopeFit(float(coef[0]), float(coef[1]), float(curv),
                    float(np.sqrt(np.mean(resid ** 2))))


def default_eps_sweep(n: int = 13, lo: float = 1e-4, hi: float = 1e-1):
    return np.geomspace(lo, hi, n)


def slope_at(p: ProblemParams, eps_list=None, variant: str = "general") -> SlopeFit:
    eps_list = default_eps_sweep() if eps_list is None else eps_list
    rows = sweep_eps(p, eps_list, variant)
    return fit_expansion_slope([r.eps for r in rows], [r.Q_weighted for r in rows], p.s)


def flip_alpha(p: ProblemParams, alpha_lo: float, alpha_hi: float, eps_list=None):
    """alpha at which the fitted slope changes sign.

    For fixed eps the quotient is affine in alpha (only the numerator depends
    on it), so the fitted slope is affine too and two evaluations locate the root.
    """
    f_lo = slope_at(p.with_alpha(alpha_lo), eps_list).slope
    f_hi = slope_at(p.with_alpha(alpha_hi), eps_list).slope
    if f_lo == f_hi:
        return float("nan"), f_lo, f_hi
    return alpha_lo - f_lo * (alpha_hi - alpha_lo) / (f_hi - f_lo), f_lo, f_hi


# ---------------------------------------------------------------------------
# logarithmic terms in low dimensions
# ---------------------------------------------------------------------------

def log_term_n6(s: float, eps: float) -> float:
    """(1/16) int_{R^6} |y|^2 phi^2 (eps + |y|^{2-s})^{-8/(2-s)} dy."""
    b = 2.0 - s
    scale = eps ** (1.0 / b)
    breaks = [scale * 10.0 ** k for k in range(-2, 3)] + [1.0]
    return radial_quad(lambda r: r * r * cutoff(r) ** 2 * (eps + r ** b) ** (-8.0 / b),
                       6, 2.0, breaks) / 16.0


def log_terms_n4(s: float, eps: float):
    """N = 4: (second gradient term, mass term without alpha) of the cut-off family."""
    b = 2.0 - s
    scale = eps ** (1.0 / b)
    breaks = [scale * 10.0 ** k for k in range(-2, 3)] + [1.0]
    t2 = radial_quad(lambda r: r ** b * cutoff(r) ** 2 * (eps + r ** b) ** (-(6.0 - s) / b),
                     4, 2.0, breaks)
    mass = radial_quad(lambda r: cutoff(r) ** 2 * (eps + r ** b) ** (-4.0 / b), 4, 2.0, breaks)
    return t2, mass


def log_coefficient(N: int, s: float) -> float:
    """omega_{N-1} / (2-s), the |log eps| coefficient of the borderline integrals."""
    return sphere_area(N) / (2.0 - s)


def predicted_flip_alpha(p: ProblemParams) -> float:
    """Root in alpha of the eps^{2/(2-s)} coefficient of Q_{K,alpha}(u_eps), N >= 5.

    Besides A2 - alpha A4 from the numerator, the denominator carries the factor
    exp(-(2-s) r^2 / (4(N-2))) whose expansion adds a term of the same order:

        alpha* = A2/A4 + (2/2*) kappa A1 A0' / (A0 A4),
        kappa = (2-s)/(4(N-2)),   A0' = int |y|^{2-s} (1+|y|^{2-s})^{-(2N-2s)/(2-s)} dy.
    """
    N, s = p.N, p.s
    if N < 5:
        raise ConfigError("the expansion coefficient needs N >= 5")
    m = moment_integrals(p)
    A0p = _power_moment(1.0, 2.0 - s, 2.0 - s, (2.0 * N - 2.0 * s) / (2.0 - s), N)
    kappa = (2.0 - s) / (4.0 * (N - 2.0))
    return m.A2 / m.A4 + (2.0 / p.crit_exp) * kappa * m.A1 * A0p / (m.A0 * m.A4)


def hardy_ratio_concentrating(N: int, eps: float) -> float:
    """Hardy quotient of :func:`hardy_concentrating_field` on all of R^N, by quadrature."""
    beta = (N - 2.0 - 2.0 * eps) / 2.0

    def v2K(r):  # V^2 K
        return r ** (-2 * beta) * (math.exp(0.25 * r * r) if r <= 1.0
                                   else math.exp(0.5 - 0.25 * r * r))

    def dv_ratio(r):  # V'/V
        return -beta / r if r <= 1.0 else -beta / r - 0.5 * r

    brk = [1e-6, 1e-4, 1e-2, 0.5, 1.0, 4.0, 40.0]
    num = radial_quad(lambda r: dv_ratio(r) ** 2 * v2K(r), N, math.inf, brk)
    den = radial_quad(lambda r: v2K(r) / (r * r), N, math.inf, brk)
    return num / den
