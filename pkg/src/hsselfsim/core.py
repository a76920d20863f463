"""Radial grids, fields, K-weighted quadrature and the drift operator L.

All functions here work on radial representatives: a function v(y) on R^N with
v = v(|y|) is stored as its values on a graded mesh r_1 < ... < r_M = R_max.
The Gaussian weight is K(y) = exp(|y|^2 / 4).
"""

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

R_MAX_CAP = 40.0


class ConfigError(ValueError):
    """Invalid parameters or grid settings."""


class QuadratureOverflow(ArithmeticError):
    """A weighted sum became non-finite despite the log-space guard."""


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere S^{N-1} in R^N."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def critical_exponent(N: int, s: float) -> float:
    return (2.0 * N - 2.0 * s) / (N - 2.0)


@dataclass(frozen=True)
class ProblemParams:
    """Dimension, singularity, exponent and the linear coefficient alpha.

    ``alpha`` is the free coefficient of the elliptic problem; ``alpha_ss`` is
    the self-similar decay exponent (2 - s) / (2q - 4). They agree only if the
    caller asks for it (see :meth:`self_similar`).
    """

    N: int
    s: float
    q: float
    alpha: float
    crit_exp: float = field(init=False)
    alpha_ss: float = field(init=False)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ConfigError(f"N must be an integer >= 3, got {self.N!r}")
        if not (0.0 <= self.s < 2.0):
            raise ConfigError(f"s must lie in [0, 2), got {self.s!r}")
        crit = critical_exponent(self.N, self.s)
        if not (2.0 < self.q <= crit * (1 + 1e-12)):
            raise ConfigError(f"q must satisfy 2 < q <= 2*(s) = {crit:.12g}, got {self.q!r}")
        if not math.isfinite(self.alpha):
            raise ConfigError("alpha must be finite")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "crit_exp", crit)
        object.__setattr__(self, "alpha_ss", (2.0 - self.s) / (2.0 * self.q - 4.0))

    @classmethod
    def critical(cls, N, s, alpha):
        return cls(N, s, critical_exponent(N, s), alpha)

    @classmethod
    def self_similar(cls, N, s, q):
        return cls(N, s, q, (2.0 - s) / (2.0 * q - 4.0))

    @property
    def is_critical(self) -> bool:
        return abs(self.q - self.crit_exp) <= 1e-12 * self.crit_exp

    def with_alpha(self, alpha):
        return ProblemParams(self.N, self.s, self.q, alpha)

    def to_dict(self):
        return {"N": self.N, "s": self.s, "q": self.q, "alpha": self.alpha,
                "crit_exp": self.crit_exp, "alpha_ss": self.alpha_ss}


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RadialGrid:
    N: int
    nodes: np.ndarray
    R_max: float
    quad_weights: np.ndarray
    grading: float
    M: int

    @property
    def r(self):
        return self.nodes

    @property
    def log_weights(self):
        return np.log(self.quad_weights)

    def settings(self):
        return {"N": self.N, "R_max": self.R_max, "M": self.M, "grading": self.grading}

    def to_json(self) -> str:
        return json.dumps(self.settings())

    @classmethod
    def from_json(cls, text: str):
        d = json.loads(text)
        return make_grid(d["N"], d["R_max"], d["M"], d["grading"])

    def field(self, values):
        return RadialField(self, values)

    def sample(self, fn):
        return RadialField(self, fn(self.nodes))


def make_grid(N: int, R_max: float = 16.0, M: int = 4000, grading: float = 2.0,
              radius_cap: float = R_MAX_CAP) -> RadialGrid:
    """Graded mesh r_i = R_max (i/M)^grading, i = 1..M, with trapezoid weights.

    The weights already contain the sphere area and the Jacobian r^{N-1}, so a
    sum of ``weights * f`` approximates the integral of f over the shell
    r_1 <= |y| <= R_max. ``radius_cap`` guards K-weighted work; grids that only
    carry unweighted physical fields may lift it.
    """
    if int(N) != N or N < 3:
        raise ConfigError(f"N must be an integer >= 3, got {N!r}")
    if not (R_max > 0):
        raise ConfigError(f"R_max must be positive, got {R_max!r}")
    if R_max > radius_cap:
        raise ConfigError(f"R_max capped at {radius_cap} to keep exp(R^2/4) representable")
    if int(M) != M or M < 16:
        raise ConfigError(f"M must be an integer >= 16, got {M!r}")
    if not (grading >= 1):
        raise ConfigError(f"grading must be >= 1, got {grading!r}")
    N, M = int(N), int(M)
    r = R_max * (np.arange(1, M + 1) / M) ** grading
    h = np.diff(r)
    w = np.zeros(M)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    w *= sphere_area(N) * r ** (N - 1)
    return RadialGrid(N, _readonly(r), float(R_max), _readonly(w), float(grading), M)


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.M,):
            raise ValueError(f"field has shape {v.shape}, grid has {self.grid.M} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v))

    def _check(self, other):
        if other.grid is not self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return RadialField(self.grid, c * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return RadialField(self.grid, -self.values)

    def to_csv(self, path):
        write_field_csv(self, path)


class WeightMode(enum.Enum):
    K = "K"
    K_OVER_RS = "K_over_rs"
    UNWEIGHTED = "unweighted"
    INV_RS = "inv_rs"
    R_SQUARED = "r_squared"
    INV_R2_K = "inv_r2_K"


def _log_mode_weight(mode: WeightMode, r, s):
    if mode is WeightMode.K:
        return 0.25 * r * r
    if mode is WeightMode.K_OVER_RS:
        return 0.25 * r * r - s * np.log(r)
    if mode is WeightMode.UNWEIGHTED:
        return np.zeros_like(r)
    if mode is WeightMode.INV_RS:
        return -s * np.log(r)
    if mode is WeightMode.R_SQUARED:
        return 2.0 * np.log(r)
    if mode is WeightMode.INV_R2_K:
        return 0.25 * r * r - 2.0 * np.log(r)
    raise ConfigError(f"unknown weight mode {mode!r}")


def integrate(f: RadialField, g: RadialField | None = None,
              mode: WeightMode = WeightMode.K, s: float = 0.0) -> float:
    """Trapezoid approximation of the integral of f g times the mode weight.

    The weight, the quadrature weight and log|f g| are combined before a single
    exponentiation per node, so K = exp(r^2/4) never appears on its own.
    ``s`` is the singularity exponent used by the ``*_rs`` modes.
    """
    mode = WeightMode(mode)
    grid = f.grid
    gv = np.ones(grid.M) if g is None else _same_grid(f, g).values
    log_w = grid.log_weights + _log_mode_weight(mode, grid.nodes, s)
    total = kernels.log_weighted_sum(log_w, f.values, gv)
    if not math.isfinite(total):
        raise QuadratureOverflow(f"non-finite {mode.value} integral; grid too large?")
    return float(total)


def _same_grid(f, g):
    if g.grid is not f.grid:
        raise ValueError("fields live on different grids")
    return g


def differentiate(f: RadialField) -> RadialField:
    """Second-order nonuniform finite differences, one-sided at both ends."""
    if f.grid.M < 3:
        raise ValueError("need at least three nodes")
    return RadialField(f.grid, kernels.first_derivative(f.values, f.grid.nodes))


def second_derivative(f: RadialField) -> RadialField:
    return RadialField(f.grid, kernels.second_derivative(f.values, f.grid.nodes))


def apply_L(f: RadialField) -> RadialField:
    """L v = -v'' - ((N-1)/r + r/2) v' on the radial mesh."""
    grid = f.grid
    r = grid.nodes
    d1 = kernels.first_derivative(f.values, r)
    d2 = kernels.second_derivative(f.values, r)
    return RadialField(grid, -d2 - ((grid.N - 1) / r + 0.5 * r) * d1)


def L_matrix(grid: RadialGrid):
    """Sparse matrix of :func:`apply_L` (rows for all nodes)."""
    from scipy.sparse import csr_matrix

    r = grid.nodes
    M = grid.M
    N = grid.N
    rows, cols, vals = [], [], []
    h = np.diff(r)
    drift = (N - 1) / r + 0.5 * r
    for i in range(M):
        if i == 0:
            a, b = h[0], h[1]
            idx = (0, 1, 2)
            c1 = (-(2 * a + b) / (a * (a + b)), (a + b) / (a * b), -a / (b * (a + b)))
            c2 = (2 / (a * (a + b)), -2 / (a * b), 2 / (b * (a + b)))
        elif i == M - 1:
            a, b = h[-1], h[-2]
            idx = (M - 1, M - 2, M - 3)
            c1 = ((2 * a + b) / (a * (a + b)), -(a + b) / (a * b), a / (b * (a + b)))
            a2, b2 = h[-2], h[-1]
            c2 = (2 / (b2 * (a2 + b2)), -2 / (a2 * b2), 2 / (a2 * (a2 + b2)))
        else:
            h0, h1 = h[i - 1], h[i]
            idx = (i - 1, i, i + 1)
            c1 = (-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1)))
            c2 = (2 / (h0 * (h0 + h1)), -2 / (h0 * h1), 2 / (h1 * (h0 + h1)))
        for j, a1, a2 in zip(idx, c1, c2):
            rows.append(i)
            cols.append(j)
            vals.append(-a2 - drift[i] * a1)
    return csr_matrix((vals, (rows, cols)), shape=(M, M))


def gaussian(grid: RadialGrid, scale: float = 1.0) -> RadialField:
    """exp(-r^2/4), the first eigenfunction of L, times ``scale``."""
    return RadialField(grid, scale * np.exp(-0.25 * grid.nodes ** 2))


def resample(f: RadialField, r_new, outside: float = 0.0):
    """Monotone cubic (PCHIP) interpolation of a field at new radii.

    Values for r below the first node are held at the first node value.
    """
    from scipy.interpolate import PchipInterpolator

    r = f.grid.nodes
    interp = PchipInterpolator(r, f.values, extrapolate=False)
    r_new = np.asarray(r_new, dtype=float)
    out = interp(np.clip(r_new, r[0], None))
    out = np.where(r_new > r[-1], outside, out)
    return np.nan_to_num(out, nan=outside)


# --- serialization ---------------------------------------------------------

def write_field_csv(f: RadialField, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "value"])
        for r, v in zip(f.grid.nodes, f.values):
            w.writerow([repr(float(r)), repr(float(v))])


def read_field_csv(path, grid: RadialGrid | None = None, N: int | None = None) -> RadialField:
    """Read an ``r,value`` CSV back onto ``grid`` (or onto a grid rebuilt from the radii)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if [h.strip() for h in header] != ["r", "value"]:
            raise ValueError(f"{path}: expected header r,value, got {header}")
        data = np.array([[float(a), float(b)] for a, b in rd])
    r, v = data[:, 0], data[:, 1]
    if grid is not None:
        if grid.M == r.size and np.allclose(grid.nodes, r, rtol=1e-13, atol=0):
            return RadialField(grid, v)
        return RadialField(grid, resample(RadialField(_grid_from_nodes(r, grid.N), v), grid.nodes))
    if N is None:
        raise ValueError("need a grid or a dimension to rebuild the field")
    return RadialField(_grid_from_nodes(r, N), v)


def _grid_from_nodes(r, N):
    h = np.diff(r)
    w = np.zeros(r.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    w *= sphere_area(N) * r ** (N - 1)
    grading = math.log(r[0] / r[-1]) / math.log(1.0 / r.size) if r.size > 1 else 1.0
    return RadialGrid(int(N), _readonly(r), float(r[-1]), _readonly(w), grading, r.size)

