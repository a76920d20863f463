"""Hot numeric kernels.

Every kernel exists twice: a loop version compiled with numba (``*_nb``) and a
vectorised numpy/scipy version (``*_np``). The public name points at one of the
two according to :data:`hsselfsim._accel.USE_NUMBA`. Both variants are kept
importable so tests and ``benchmarks/`` can compare them directly.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from ._accel import USE_NUMBA, njit

# shooting status codes
SHOOT_OK = 0
SHOOT_BLOWUP = 1
SHOOT_UNDERFLOW = 2


# ---------------------------------------------------------------------------
# finite differences on a nonuniform mesh
# ---------------------------------------------------------------------------

@njit(cache=True)
def first_derivative_nb(f, r):
    n = f.shape[0]
    d = np.empty(n)
    for i in range(1, n - 1):
        h0 = r[i] - r[i - 1]
        h1 = r[i + 1] - r[i]
        d[i] = (-h1 / (h0 * (h0 + h1)) * f[i - 1]
                + (h1 - h0) / (h0 * h1) * f[i]
                + h0 / (h1 * (h0 + h1)) * f[i + 1])
    a = r[1] - r[0]
    b = r[2] - r[1]
    d[0] = (-(2 * a + b) / (a * (a + b)) * f[0] + (a + b) / (a * b) * f[1]
            - a / (b * (a + b)) * f[2])
    a = r[n - 1] - r[n - 2]
    b = r[n - 2] - r[n - 3]
    d[n - 1] = ((2 * a + b) / (a * (a + b)) * f[n - 1] - (a + b) / (a * b) * f[n - 2]
                + a / (b * (a + b)) * f[n - 3])
    return d


def first_derivative_np(f, r):
    h = np.diff(r)
    h0, h1 = h[:-1], h[1:]
    d = np.empty_like(f, dtype=float)
    d[1:-1] = (-h1 / (h0 * (h0 + h1)) * f[:-2]
               + (h1 - h0) / (h0 * h1) * f[1:-1]
               + h0 / (h1 * (h0 + h1)) * f[2:])
    a, b = h[0], h[1]
    d[0] = (-(2 * a + b) / (a * (a + b)) * f[0] + (a + b) / (a * b) * f[1]
            - a / (b * (a + b)) * f[2])
    a, b = h[-1], h[-2]
    d[-1] = ((2 * a + b) / (a * (a + b)) * f[-1] - (a + b) / (a * b) * f[-2]
             + a / (b * (a + b)) * f[-3])
    return d


@njit(cache=True)
def second_derivative_nb(f, r):
    n = f.shape[0]
    d = np.empty(n)
    for i in range(1, n - 1):
        h0 = r[i] - r[i - 1]
        h1 = r[i + 1] - r[i]
        d[i] = 2.0 * (f[i - 1] / (h0 * (h0 + h1)) - f[i] / (h0 * h1)
                      + f[i + 1] / (h1 * (h0 + h1)))
    # one-sided: second divided difference of the three end nodes
    a = r[1] - r[0]
    b = r[2] - r[1]
    d[0] = 2.0 * (f[0] / (a * (a + b)) - f[1] / (a * b) + f[2] / (b * (a + b)))
    a = r[n - 2] - r[n - 3]
    b = r[n - 1] - r[n - 2]
    d[n - 1] = 2.0 * (f[n - 3] / (a * (a + b)) - f[n - 2] / (a * b)
                      + f[n - 1] / (b * (a + b)))
    return d


def second_derivative_np(f, r):
    h = np.diff(r)
    h0, h1 = h[:-1], h[1:]
    d = np.empty_like(f, dtype=float)
    d[1:-1] = 2.0 * (f[:-2] / (h0 * (h0 + h1)) - f[1:-1] / (h0 * h1)
                     + f[2:] / (h1 * (h0 + h1)))
    a, b = h[0], h[1]
    d[0] = 2.0 * (f[0] / (a * (a + b)) - f[1] / (a * b) + f[2] / (b * (a + b)))
    a, b = h[-2], h[-1]
    d[-1] = 2.0 * (f[-3] / (a * (a + b)) - f[-2] / (a * b) + f[-1] / (b * (a + b)))
    return d


# ---------------------------------------------------------------------------
# log-space weighted quadrature
# ---------------------------------------------------------------------------

@njit(cache=True)
def log_weighted_sum_nb(log_w, f, g):
    """sum_i sign(f_i g_i) exp(log_w_i + log|f_i| + log|g_i|)"""
    total = 0.0
    for i in range(f.shape[0]):
        a = f[i]
        b = g[i]
        if a == 0.0 or b == 0.0:
            continue
        term = math.exp(log_w[i] + math.log(abs(a)) + math.log(abs(b)))
        total += term if (a > 0.0) == (b > 0.0) else -term
    return total


def log_weighted_sum_np(log_w, f, g):
    nz = (f != 0.0) & (g != 0.0)
    if not np.any(nz):
        return 0.0
    a, b = f[nz], g[nz]
    terms = np.exp(log_w[nz] + np.log(np.abs(a)) + np.log(np.abs(b)))
    return float(np.sum(np.where((a > 0.0) == (b > 0.0), terms, -terms)))


# ---------------------------------------------------------------------------
# tridiagonal solves
# ---------------------------------------------------------------------------

@njit(cache=True)
def tridiag_solve_nb(lower, diag, upper, rhs):
    """Thomas algorithm; lower[0] and upper[-1] are ignored."""
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def tridiag_solve_np(lower, diag, upper, rhs):
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


# ---------------------------------------------------------------------------
# Crank-Nicolson / explicit-reaction step for u_t = Lap_h u + src
# Lap_h u_i = sub_i (u_{i-1} - u_i) + sup_i (u_{i+1} - u_i), last node Dirichlet 0
# ---------------------------------------------------------------------------

@njit(cache=True)
def imex_cn_step_nb(sub, sup, u, src, dt):
    n = u.shape[0]
    m = n - 1
    lower = np.empty(m)
    diag = np.empty(m)
    upper = np.empty(m)
    rhs = np.empty(m)
    half = 0.5 * dt
    for i in range(m):
        left = u[i - 1] if i > 0 else 0.0
        lap = sub[i] * (left - u[i]) + sup[i] * (u[i + 1] - u[i])
        if i == 0:
            lap = sup[i] * (u[i + 1] - u[i])
        rhs[i] = u[i] + half * lap + dt * src[i]
        lower[i] = -half * sub[i]
        upper[i] = -half * sup[i]
        diag[i] = 1.0 + half * (sub[i] + sup[i])
    diag[0] = 1.0 + half * sup[0]
    out = np.zeros(n)
    out[:m] = tridiag_solve_nb(lower, diag, upper, rhs)
    return out


def imex_cn_step_np(sub, sup, u, src, dt):
    m = u.shape[0] - 1
    half = 0.5 * dt
    lap = np.empty(m)
    lap[1:] = sub[1:m] * (u[:m - 1] - u[1:m]) + sup[1:m] * (u[2:] - u[1:m])
    lap[0] = sup[0] * (u[1] - u[0])
    rhs = u[:m] + half * lap + dt * src[:m]
    diag = 1.0 + half * (sub[:m] + sup[:m])
    diag[0] = 1.0 + half * sup[0]
    out = np.zeros(m + 1)
    out[:m] = tridiag_solve_np(-half * sub[:m], diag, -half * sup[:m], rhs)
    return out


# ---------------------------------------------------------------------------
# radial shooting: v'' + ((N-1)/r + r/2) v' + alpha v + |v|^{q-2} v r^{-s} = 0
# ---------------------------------------------------------------------------

@njit(cache=True)
def _radial_rhs(r, v, w, N, s, q, alpha):
    av = abs(v)
    nl = av ** (q - 2.0) * v * r ** (-s) if av > 0.0 else 0.0
    return w, -((N - 1.0) / r + 0.5 * r) * w - alpha * v - nl


@njit(cache=True)
def shoot_dp45_nb(N, s, q, alpha, d0, r_start, r_out, rtol, atol, blowup):
    """Adaptive Dormand-Prince 5(4) with exact stops at every output radius.

    Returns (v, dv, status, r_reached); outputs beyond a failure are nan.
    """
    n_out = r_out.shape[0]
    v_out = np.full(n_out, np.nan)
    w_out = np.full(n_out, np.nan)
    r = r_start
    v = d0
    w = 0.0
    j = 0
    while j < n_out and r_out[j] <= r_start:
        v_out[j] = d0
        w_out[j] = 0.0
        j += 1
    h = 1e-3 * r_start
    k1v, k1w = _radial_rhs(r, v, w, N, s, q, alpha)
    h_min = 1e-15
    while j < n_out:
        target = r_out[j]
        hit = False
        if r + h >= target:
            h = target - r
            hit = True
        k2v, k2w = _radial_rhs(r + h / 5, v + h * k1v / 5, w + h * k1w / 5, N, s, q, alpha)
        k3v, k3w = _radial_rhs(r + 3 * h / 10,
                               v + h * (3 * k1v / 40 + 9 * k2v / 40),
                               w + h * (3 * k1w / 40 + 9 * k2w / 40), N, s, q, alpha)
        k4v, k4w = _radial_rhs(r + 4 * h / 5,
                               v + h * (44 * k1v / 45 - 56 * k2v / 15 + 32 * k3v / 9),
                               w + h * (44 * k1w / 45 - 56 * k2w / 15 + 32 * k3w / 9),
                               N, s, q, alpha)
        k5v, k5w = _radial_rhs(r + 8 * h / 9,
                               v + h * (19372 * k1v / 6561 - 25360 * k2v / 2187
                                        + 64448 * k3v / 6561 - 212 * k4v / 729),
                               w + h * (19372 * k1w / 6561 - 25360 * k2w / 2187
                                        + 64448 * k3w / 6561 - 212 * k4w / 729),
                               N, s, q, alpha)
        k6v, k6w = _radial_rhs(r + h,
                               v + h * (9017 * k1v / 3168 - 355 * k2v / 33
                                        + 46732 * k3v / 5247 + 49 * k4v / 176
                                        - 5103 * k5v / 18656),
                               w + h * (9017 * k1w / 3168 - 355 * k2w / 33
                                        + 46732 * k3w / 5247 + 49 * k4w / 176
                                        - 5103 * k5w / 18656),
                               N, s, q, alpha)
        vn = v + h * (35 * k1v / 384 + 500 * k3v / 1113 + 125 * k4v / 192
                      - 2187 * k5v / 6784 + 11 * k6v / 84)
        wn = w + h * (35 * k1w / 384 + 500 * k3w / 1113 + 125 * k4w / 192
                      - 2187 * k5w / 6784 + 11 * k6w / 84)
        k7v, k7w = _radial_rhs(r + h, vn, wn, N, s, q, alpha)
        ev = h * (71 * k1v / 57600 - 71 * k3v / 16695 + 71 * k4v / 1920
                  - 17253 * k5v / 339200 + 22 * k6v / 525 - k7v / 40)
        ew = h * (71 * k1w / 57600 - 71 * k3w / 16695 + 71 * k4w / 1920
                  - 17253 * k5w / 339200 + 22 * k6w / 525 - k7w / 40)
        sv = atol + rtol * max(abs(v), abs(vn))
        sw = atol + rtol * max(abs(w), abs(wn))
        err = math.sqrt(0.5 * ((ev / sv) ** 2 + (ew / sw) ** 2))
        if err <= 1.0 and math.isfinite(vn) and math.isfinite(wn):
            r = target if hit else r + h
            v = vn
            w = wn
            k1v = k7v
            k1w = k7w
            if hit:
                v_out[j] = v
                w_out[j] = w
                j += 1
            if abs(v) > blowup:
                return v_out, w_out, SHOOT_BLOWUP, r
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = h * fac
        else:
            fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
            h = h * fac
            if h < h_min * max(1.0, r):
                return v_out, w_out, SHOOT_UNDERFLOW, r
    return v_out, w_out, SHOOT_OK, r


def shoot_dp45_np(N, s, q, alpha, d0, r_start, r_out, rtol, atol, blowup):
    n_out = r_out.shape[0]
    v_out = np.full(n_out, np.nan)
    w_out = np.full(n_out, np.nan)
    pre = r_out <= r_start
    v_out[pre] = d0
    w_out[pre] = 0.0
    r_eval = r_out[~pre]
    if r_eval.size == 0:
        return v_out, w_out, SHOOT_OK, r_start

    def rhs(r, y):
        v, w = y
        av = abs(v)
        nl = av ** (q - 2.0) * v * r ** (-s) if av > 0.0 else 0.0
        return [w, -((N - 1.0) / r + 0.5 * r) * w - alpha * v - nl]

    def blow(r, y):
        return abs(y[0]) - blowup
    blow.terminal = True

    sol = solve_ivp(rhs, (r_start, r_eval[-1]), [d0, 0.0], method="RK45",
                    t_eval=r_eval, rtol=rtol, atol=atol, events=blow,
                    first_step=1e-3 * r_start)
    k = sol.t.size
    idx = np.flatnonzero(~pre)[:k]
    v_out[idx] = sol.y[0]
    w_out[idx] = sol.y[1]
    if sol.status == 1:
        return v_out, w_out, SHOOT_BLOWUP, float(sol.t_events[0][0])
    if sol.status == -1:
        return v_out, w_out, SHOOT_UNDERFLOW, float(sol.t[-1]) if k else r_start
    return v_out, w_out, SHOOT_OK, float(r_eval[-1])


if USE_NUMBA:
    first_derivative = first_derivative_nb
    second_derivative = second_derivative_nb
    log_weighted_sum = log_weighted_sum_nb
    tridiag_solve = tridiag_solve_nb
    imex_cn_step = imex_cn_step_nb
    shoot_dp45 = shoot_dp45_nb
else:
    first_derivative = first_derivative_np
    second_derivative = second_derivative_np
    log_weighted_sum = log_weighted_sum_np
    tridiag_solve = tridiag_solve_np
    imex_cn_step = imex_cn_step_np
    shoot_dp45 = shoot_dp45_np
