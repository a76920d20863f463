"""Eigenpair of L, quotient minimization, ground states, shooting and Pohozaev checks.

The variational solvers work with a conservative discretization: for nodal
values v (last node pinned to zero)

    A_grad(v) = sum_e kappa_e (v_{i+1} - v_i)^2,
    kappa_e   = (omega r^{N-1} K)_avg(e) / h_e,
    mass(v)   = sum_i m_i v_i^2,   m_i = w_i K_i,

expressed in z = sqrt(m) v so that K never appears unscaled. The Newton polish
instead solves the strong finite-difference equations behind :func:`apply_L`.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import kernels
from .core import (ConfigError, ProblemParams, RadialField, RadialGrid, WeightMode,
                   differentiate, gaussian, integrate, L_matrix, make_grid, sphere_area)
from .functionals import energy_breakdown, mass_sq, potential, weak_residual


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# conservative discretization in the scaled variable z = sqrt(m) v
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Disc:
    grid: RadialGrid
    weighted: bool
    log_sqrt_m: np.ndarray   # active nodes (all but the last)
    diag: np.ndarray         # symmetrized stiffness
    off: np.ndarray          # off[i] couples i and i+1, length n-1
    s: float

    @property
    def n(self):
        return self.diag.size

    def to_z(self, v):
        return v[:-1] * np.exp(self.log_sqrt_m)

    def to_v(self, z):
        out = np.zeros(self.grid.M)
        out[:-1] = z * np.exp(-self.log_sqrt_m)
        return out

    def stiff(self, z):
        out = self.diag * z
        out[:-1] += self.off * z[1:]
        out[1:] += self.off * z[:-1]
        return out

    def pot_coef(self, q):
        r = self.grid.nodes[:-1]
        return np.exp((2.0 - q) * self.log_sqrt_m - self.s * np.log(r))

    def solve(self, shift, rhs):
        """(S + shift I)^{-1} rhs."""
        n = self.n
        lower = np.zeros(n)
        upper = np.zeros(n)
        lower[1:] = self.off
        upper[:-1] = self.off
        return kernels.tridiag_solve(lower, self.diag + shift, upper, rhs)


def _discretize(grid: RadialGrid, weighted: bool, s: float = 0.0) -> _Disc:
    r = grid.nodes
    logK = 0.25 * r * r if weighted else np.zeros_like(r)
    log_m = np.log(grid.quad_weights) + logK
    h = np.diff(r)
    # log of omega r^{N-1} K at nodes
    log_a = math.log(sphere_area(grid.N)) + (grid.N - 1) * np.log(r) + logK
    # edge average in log-space: log((e^x + e^y)/2)
    log_kappa = np.logaddexp(log_a[:-1], log_a[1:]) - math.log(2.0) - np.log(h)
    half = 0.5 * log_m
    M = grid.M
    # node i touches edges i-1 (if i>0) and i; only nodes 0..M-2 are active
    d = np.zeros(M - 1)
    d += np.exp(log_kappa[: M - 1] - 2.0 * half[: M - 1])
    d[1:] += np.exp(log_kappa[: M - 2] - 2.0 * half[1: M - 1])
    off = -np.exp(log_kappa[: M - 2] - half[: M - 2] - half[1: M - 1])
    return _Disc(grid, weighted, half[:-1].copy(), d, off, float(s))


# ---------------------------------------------------------------------------
# eigenpair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenResult:
    lambda1: float
    eigenfield: RadialField
    iterations: int
    converged: bool

    def to_dict(self):
        return {"lambda1": self.lambda1, "iterations": self.iterations,
                "converged": self.converged}


def first_eigenpair(grid: RadialGrid, N: int | None = None, tol: float = 1e-13,
                    maxiter: int = 2000) -> EigenResult:
    """Smallest eigenvalue of K-stiffness vs K-mass (Dirichlet at R_max) by inverse iteration."""
    if N is not None and N != grid.N:
        raise ConfigError(f"grid dimension {grid.N} differs from N={N}")
    disc = _discretize(grid, True)
    z = np.exp(-0.125 * grid.nodes[:-1] ** 2) * np.exp(disc.log_sqrt_m)
    z /= np.linalg.norm(z)
    lam = z @ disc.stiff(z)
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        y = disc.solve(0.0, z)
        z = y / np.linalg.norm(y)
        lam_new = z @ disc.stiff(z)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            converged = True
            break
        lam = lam_new
    if not converged:
        raise ConvergenceError(f"inverse iteration did not converge in {maxiter} steps")
    v = disc.to_v(z)
    if v[0] < 0:
        v = -v
    f = RadialField(grid, v)
    f = f * (1.0 / math.sqrt(mass_sq(f)))
    return EigenResult(float(lam), f, it, converged)


def cosine_K(f: RadialField, g: RadialField) -> float:
    return integrate(f, g) / math.sqrt(integrate(f, f) * integrate(g, g))


# ---------------------------------------------------------------------------
# quotient minimization
# ---------------------------------------------------------------------------

@dataclass
class MinimizeReport:
    S_value: float
    minimizer: RadialField
    iterations: int
    final_step: float
    grad_norm: float
    converged: bool
    residual_after_rescale: float
    status: str = "ok"
    weighted: bool = True
    q: float = float("nan")
    rescaled: RadialField | None = None
    energy: dict = field(default_factory=dict)
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "S_value": self.S_value, "iterations": self.iterations,
            "final_step": self.final_step, "grad_norm": self.grad_norm,
            "converged": self.converged,
            "residual_after_rescale": self.residual_after_rescale,
            "status": self.status, "weighted": self.weighted, "q": self.q,
            "energy": self.energy,
        }


def _quotient(disc, z, alpha, q, c):
    Sz = disc.stiff(z)
    A = z @ Sz - alpha * (z @ z)
    az = np.abs(z)
    B = float(np.sum(c * az ** q))
    Bq = B ** (2.0 / q)
    Q = A / Bq
    # gradient of A / B^{2/q}
    g = (2.0 / Bq) * ((Sz - alpha * z) - (A / B) * c * az ** (q - 2.0) * z)
    return Q, A, B, g


def _normalize_B(z, c, q):
    B = float(np.sum(c * np.abs(z) ** q))
    return z / B ** (1.0 / q)


def _descend(disc, z0, alpha, q, tol_q=1e-8, tol_g=1e-6, maxiter=100_000, window=10,
             armijo=1e-4):
    c = disc.pot_coef(q)
    z = _normalize_B(z0, c, q)
    Q, _, _, g = _quotient(disc, z, alpha, q, c)
    tau = 1.0
    hist = [Q]
    gnorm = float("inf")
    status = "max_iterations"
    it = 0
    for it in range(1, maxiter + 1):
        d = -disc.solve(1.0, g)          # Sobolev (stiffness + mass) preconditioner
        slope = g @ d
        pz = z @ disc.stiff(z) + z @ z
        gnorm = math.sqrt(max(-slope, 0.0) * pz) / max(abs(Q), 1e-300)
        if len(hist) > window:
            dq = abs(hist[-1 - window] - hist[-1]) / max(abs(hist[-1]), 1e-300)
            if dq <= tol_q and gnorm <= tol_g:
                status = "converged"
                break
        if slope >= 0:
            status = "ascent_direction"
            break
        tau = min(2.0 * tau, 1e6)
        while True:
            zn = _normalize_B(z + tau * d, c, q)
            Qn, _, _, gn = _quotient(disc, zn, alpha, q, c)
            # Q is 0-homogeneous, so the normalization does not affect Armijo
            if Qn <= Q + armijo * tau * slope:
                break
            tau *= 0.5
            if tau < 1e-16:
                status = "line_search_failed"
                break
        if status == "line_search_failed":
            break
        z, Q, g = zn, Qn, gn
        hist.append(Q)
    return z, Q, hist, it, tau, gnorm, status


def _check_init(init: RadialField):
    if not np.any(init.values[:-1] != 0.0):
        raise ConfigError("zero initial field")


def _nehari_scale(v: RadialField, p: ProblemParams, weighted: bool = True):
    eb = energy_breakdown(v, p, weighted)
    if not (eb.A > 0 and eb.B > 0):
        return float("nan")
    return (eb.A / eb.B) ** (1.0 / (p.q - 2.0))


def minimize_quotient(p: ProblemParams, weighted: bool, init: RadialField, *,
                      tol_q: float = 1e-8, tol_g: float = 1e-6,
                      maxiter: int = 100_000) -> MinimizeReport:
    """Minimize Q_{K,alpha} (weighted) or Q_alpha (unweighted) on the constraint B = 1."""
    if not p.is_critical:
        raise ConfigError("minimize_quotient needs q = 2*(s); use ground_state for q < 2*(s)")
    if weighted and not p.alpha < p.N / 2.0:
        raise ConfigError("weighted minimization needs alpha < N/2 (coercivity)")
    return _minimize(p, weighted, init, tol_q=tol_q, tol_g=tol_g, maxiter=maxiter)


def _minimize(p, weighted, init, tol_q, tol_g, maxiter):
    _check_init(init)
    grid = init.grid
    disc = _discretize(grid, weighted, p.s)
    z0 = disc.to_z(init.values)
    if not np.sum(disc.pot_coef(p.q) * np.abs(z0) ** p.q) > 0:
        raise ConfigError("initial field has zero potential integral")
    z, Q, hist, it, tau, gnorm, status = _descend(disc, z0, p.alpha, p.q, tol_q, tol_g, maxiter)
    v = disc.to_v(z)
    if v[0] < 0:
        v = -v
    vf = RadialField(grid, v)
    t = _nehari_scale(vf, p, weighted)
    if math.isfinite(t):
        scaled = t * vf
        res = weak_residual(scaled, p).norm if weighted else float("nan")
    else:
        scaled, res = None, float("nan")
    # persistent increase would indicate a broken line search; Armijo forbids it
    if len(hist) > 1 and hist[-1] > hist[0] * (1 + 1e-12):
        status = "diverged"
    return MinimizeReport(S_value=float(Q), minimizer=vf, iterations=it, final_step=tau,
                          grad_norm=float(gnorm), converged=(status == "converged"),
                          residual_after_rescale=res, status=status, weighted=weighted,
                          q=p.q, rescaled=scaled, history=hist)


def cutoff_bubble_init(grid: RadialGrid, p: ProblemParams, eps: float = 0.1,
                       weighted: bool = True) -> RadialField:
    """K^{-1/2} phi V_eps (weighted) or phi(2r/R) U_eps (unweighted) as a starting field."""
    from .bubbles import V_profile, bubble_norm_const, cutoff

    r = grid.nodes
    if weighted:
        vals = np.exp(-r * r / 8.0) * cutoff(r) * V_profile(r, p.N, p.s, eps)
    else:
        vals = cutoff(2.0 * r / grid.R_max) * bubble_norm_const(p.N, p.s, eps) \
            * V_profile(r, p.N, p.s, eps)
    return RadialField(grid, vals)


# ---------------------------------------------------------------------------
# strong-form Newton polish
# ---------------------------------------------------------------------------

def _first_row_stencil(r):
    a, b = r[1] - r[0], r[2] - r[1]
    return np.array([-(2 * a + b) / (a * (a + b)), (a + b) / (a * b), -a / (b * (a + b))])


def strong_system(v: np.ndarray, grid: RadialGrid, p: ProblemParams, Lmat=None):
    """Residual F(v) and Jacobian of the finite-difference equations.

    Interior rows: L v - alpha v - |v|^{q-2} v r^{-s}. First row: the series
    closure v'(r_1) = -(alpha r_1 / N) v_1 - r_1^{1-s} |v_1|^{q-2} v_1 / (N - s).
    Last row: v = 0.
    """
    r = grid.nodes
    N, s, q, a = p.N, p.s, p.q, p.alpha
    Lmat = L_matrix(grid) if Lmat is None else Lmat
    av = np.abs(v)
    nl = av ** (q - 2.0) * v * r ** (-s)
    dnl = (q - 1.0) * av ** (q - 2.0) * r ** (-s)
    F = Lmat @ v - a * v - nl
    J = (Lmat - sp.diags(a + dnl)).tolil()
    st = _first_row_stencil(r)
    F[0] = st @ v[:3] + r[0] ** (1.0 - s) * av[0] ** (q - 2.0) * v[0] / (N - s) + a * r[0] * v[0] / N
    J[0, :] = 0.0
    J[0, 0] = st[0] + (q - 1.0) * r[0] ** (1.0 - s) * av[0] ** (q - 2.0) / (N - s) + a * r[0] / N
    J[0, 1] = st[1]
    J[0, 2] = st[2]
    F[-1] = v[-1]
    J[-1, :] = 0.0
    J[-1, -1] = 1.0
    return F, J.tocsc()


def newton_polish(v: RadialField, p: ProblemParams, tol: float = 1e-13, maxiter: int = 50):
    """Damped Newton on :func:`strong_system`; returns (field, iterations, weak residual)."""
    grid = v.grid
    Lmat = L_matrix(grid)
    x = v.values.copy()
    x[-1] = 0.0

    def merit(F):
        # scale rows by sqrt(w K) so the norm matches the K-weighted residual
        return float(np.sqrt(np.sum(sw * F[1:-1] ** 2)))

    sw = np.exp(np.log(grid.quad_weights[1:-1]) + 0.25 * grid.nodes[1:-1] ** 2)
    F, J = strong_system(x, grid, p, Lmat)
    f0 = merit(F)
    it = 0
    for it in range(1, maxiter + 1):
        dx = spsolve(J, -F)
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * dx
            Fn, Jn = strong_system(xn, grid, p, Lmat)
            if merit(Fn) < merit(F) or merit(Fn) == 0.0:
                break
            lam *= 0.5
        else:
            break
        x, F, J = xn, Fn, Jn
        if np.max(np.abs(lam * dx)) <= tol * np.max(np.abs(x)) or merit(F) <= 1e-15 * f0:
            break
    out = RadialField(grid, x)
    return out, it, weak_residual(out, p).norm


# ---------------------------------------------------------------------------
# subcritical ground state
# ---------------------------------------------------------------------------

def ground_state(p: ProblemParams, init: RadialField | None = None, grid: RadialGrid | None = None,
                 *, polish: bool = True, tol_q: float = 1e-8, tol_g: float = 1e-6,
                 maxiter: int = 100_000) -> MinimizeReport:
    """Minimize A / B^{2/q}, rescale onto the Nehari set, optionally Newton-polish.

    With ``polish`` the strong solution found by Newton is rescaled once more
    onto the Nehari set, so Nehari membership holds to rounding while the
    residual picks up only the discrete Green-identity defect.
    """
    if p.is_critical or not p.q < p.crit_exp:
        raise ConfigError("ground_state needs 2 < q < 2*(s)")
    if not p.alpha < p.N / 2.0:
        raise ConfigError("ground_state needs alpha < N/2 (coercivity)")
    if init is None:
        grid = grid if grid is not None else make_grid(p.N)
        init = gaussian(grid)
    rep = _minimize(p, True, init, tol_q, tol_g, maxiter)
    if rep.rescaled is None:
        raise ConvergenceError("quotient minimizer has A <= 0")
    g = rep.rescaled
    newton_its = 0
    if polish:
        g, newton_its, _ = newton_polish(g, p)
        if g.values[0] < 0:
            g = -g
        t = _nehari_scale(g, p)
        g = t * g
    eb = energy_breakdown(g, p)
    rep.rescaled = g
    rep.residual_after_rescale = weak_residual(g, p).norm
    rep.energy = {**eb.to_dict(rep.residual_after_rescale), "newton_iterations": newton_its,
                  "nehari_gap": abs(eb.A - eb.B) / max(abs(eb.A), abs(eb.B))}
    return rep


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

R_START = 1e-6


@dataclass
class ShootingSolution:
    d0: float
    node_count: int
    field: RadialField
    admissible: bool
    terminal_value: float
    status: str = "ok"
    r_reached: float = float("nan")
    r_cut: float = float("nan")

    def to_dict(self):
        return {"d0": self.d0, "node_count": self.node_count, "admissible": self.admissible,
                "terminal_value": self.terminal_value, "status": self.status,
                "r_reached": self.r_reached, "r_cut": self.r_cut}


def count_sign_changes(values) -> int:
    x = np.asarray(values)[1:-1]
    x = x[x != 0.0]
    return int(np.count_nonzero(np.signbit(x[1:]) != np.signbit(x[:-1])))


def _integrate_profile(p: ProblemParams, d0: float, grid: RadialGrid, rtol=1e-11):
    r = np.ascontiguousarray(grid.nodes)
    blow = 1e6 * abs(d0)
    atol = 1e-16 * abs(d0)
    v, dv, status, r_reached = kernels.shoot_dp45(float(p.N), p.s, p.q, p.alpha, float(d0),
                                                  R_START, r, rtol, atol, blow)
    return v, dv, int(status), float(r_reached)


def _truncate_tail(v, dv, r, N, alpha, tail_tol=1e-6, adm_tol=1e-8):
    """Zero the profile beyond the point where it leaves the fast-decay branch.

    Decaying solutions behave like r^{2 alpha - N} exp(-r^2/4); the other
    branch decays only like r^{-2 alpha}. Rescaling the envelope |v| + |v'| by
    the fast rate makes the fast branch flat and the slow one grow, so the
    minimum of the rescaled envelope inside the tail region marks the cut.
    """
    env = np.abs(v) + np.abs(dv)
    scale = float(np.max(env))
    tail = env <= tail_tol * scale
    if not np.any(tail):
        return v, v.size - 1, False
    with np.errstate(divide="ignore"):
        g = (np.log(env) + 0.25 * r * r - np.log1p(0.5 * r)
             + (N - 2.0 * alpha) * np.log(np.maximum(r, 1.0)))
    g = np.where(tail, g, np.inf)
    k = int(np.argmin(g))
    if env[k] > adm_tol * scale:
        return v, v.size - 1, False
    out = v.copy()
    out[k + 1:] = 0.0
    return out, k, True


def shoot_radial(p: ProblemParams, d0: float, grid: RadialGrid | None = None) -> ShootingSolution:
    """Integrate the radial ODE from v(r_start) = d0, v'(r_start) = 0 across the grid."""
    if d0 == 0:
        raise ConfigError("d0 must be nonzero")
    grid = grid if grid is not None else make_grid(p.N)
    v, dv, status, r_reached = _integrate_profile(p, d0, grid)
    names = {kernels.SHOOT_OK: "ok", kernels.SHOOT_BLOWUP: "blowup",
             kernels.SHOOT_UNDERFLOW: "step_underflow"}
    if status != kernels.SHOOT_OK:
        good = np.isfinite(v)
        vals = np.where(good, v, 0.0)
        return ShootingSolution(float(d0), count_sign_changes(vals[good]), RadialField(grid, vals),
                                False, float("nan"), names[status], r_reached)
    cut, k, adm = _truncate_tail(v, dv, grid.nodes, p.N, p.alpha)
    f = RadialField(grid, cut)
    return ShootingSolution(float(d0), count_sign_changes(cut), f, adm, float(v[-1]),
                            "ok", r_reached, float(grid.nodes[k]))


def _raw_count(p, d0, grid):
    v, dv, status, _ = _integrate_profile(p, d0, grid)
    if status != kernels.SHOOT_OK:
        return None
    return count_sign_changes(v)


def shooting_ladder(p: ProblemParams, grid: RadialGrid | None = None, max_nodes: int = 1,
                    d0_lo: float = 1e-2, d0_hi: float = 1e3, n_scan: int = 61,
                    max_expand: int = 6):
    """Fast-decaying solutions with 0..max_nodes nodes by bisection in log d0.

    The k-node solution sits at the boundary where the raw sign-change count
    jumps from k to k+1. The bracket is widened geometrically when the scan
    does not reach the requested count.
    """
    grid = grid if grid is not None else make_grid(p.N)
    lo, hi = d0_lo, d0_hi
    for _ in range(max_expand):
        d0s = np.geomspace(lo, hi, n_scan)
        counts = [_raw_count(p, d, grid) for d in d0s]
        known = [c for c in counts if c is not None]
        if known and max(known) > max_nodes:
            break
        hi *= 10.0
    out = {}
    for k in range(max_nodes + 1):
        idx = None
        for i in range(len(d0s) - 1):
            if counts[i] is not None and counts[i + 1] is not None \
                    and counts[i] <= k < counts[i + 1]:
                idx = i
                break
        if idx is None:
            continue
        a, b = math.log(d0s[idx]), math.log(d0s[idx + 1])
        for _ in range(200):
            m = 0.5 * (a + b)
            if m in (a, b):
                break
            c = _raw_count(p, math.exp(m), grid)
            if c is not None and c <= k:
                a = m
            else:
                b = m
        out[k] = shoot_radial(p, math.exp(a), grid)
    return out


# ---------------------------------------------------------------------------
# Pohozaev certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PohozaevReport:
    id1_lhs: float
    id1_rhs: float
    id3_lhs: float
    id3_rhs: float
    rel_err1: float
    rel_err3: float
    hardy_bound_ok: bool
    hardy_margin: float
    degenerate: bool

    def to_dict(self):
        return dict(self.__dict__)


def _rel(a, b, floor=1e-30):
    return abs(a - b) / max(abs(a), abs(b), floor)


def pohozaev_check(v: RadialField, p: ProblemParams) -> PohozaevReport:
    """Unweighted integral identities satisfied by solutions decaying at infinity.

        int |v'|^2 + (N/4) int v^2 = int |v|^q r^{-s} + alpha int v^2
        (1/2) int r^2 v'^2 = (N(N-2)/8 + alpha) int v^2 + c_q int |v|^q r^{-s}

    with c_q = (N - s)/q - (N - 2)/2, which vanishes at q = 2*(s).
    ``hardy_bound_ok`` is the strict inequality (N^2/8) M < (N(N-2)/8 + alpha) M
    required of any nontrivial solution; ``hardy_margin`` is
    (1/2) int r^2 v'^2 - (N^2/8) M, nonnegative for every decaying field.
    """
    N, s, q, a = p.N, p.s, p.q, p.alpha
    U = WeightMode.UNWEIGHTED
    dv = differentiate(v)
    G = integrate(dv, dv, U)
    Mv = integrate(v, v, U)
    P = potential(v, q, s, weighted=False)
    rdv = RadialField(v.grid, v.grid.nodes * dv.values)
    R2 = integrate(rdv, rdv, U)
    id1_l, id1_r = G + 0.25 * N * Mv, P + a * Mv
    cq = (N - s) / q - (N - 2.0) / 2.0
    id3_l, id3_r = 0.5 * R2, (N * (N - 2.0) / 8.0 + a) * Mv + cq * P
    degenerate = not (Mv > 0.0)
    hardy_ok = (N * N / 8.0) * Mv < (N * (N - 2.0) / 8.0 + a) * Mv
    return PohozaevReport(id1_l, id1_r, id3_l, id3_r, _rel(id1_l, id1_r), _rel(id3_l, id3_r),
                          bool(hardy_ok), 0.5 * R2 - (N * N / 8.0) * Mv, degenerate)
