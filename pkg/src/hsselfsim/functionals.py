"""Norms, energy, Rayleigh quotients, strong residual and the fiber maximum.

With K = exp(|y|^2/4):

    A(v) = int (|grad v|^2 - alpha v^2) K
    B(v) = int |v|^q |y|^{-s} K
    E_K(v) = A/2 - B/q
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import (ProblemParams, RadialField, WeightMode, apply_L, differentiate,
                   integrate)

_K = WeightMode.K
_U = WeightMode.UNWEIGHTED


def _pow_pair(v: RadialField, q: float):
    """Split |v|^q into two factors so the product is formed in log-space."""
    a = np.abs(v.values)
    return RadialField(v.grid, a), RadialField(v.grid, a ** (q - 1.0))


def _weights(weighted: bool):
    return (_K, WeightMode.K_OVER_RS) if weighted else (_U, WeightMode.INV_RS)


def grad_sq(v: RadialField, weighted: bool = True) -> float:
    dv = differentiate(v)
    return integrate(dv, dv, _K if weighted else _U)


def mass_sq(v: RadialField, weighted: bool = True) -> float:
    return integrate(v, v, _K if weighted else _U)


def potential(v: RadialField, q: float, s: float, weighted: bool = True) -> float:
    """int |v|^q |y|^{-s} (times K when weighted)."""
    f, g = _pow_pair(v, q)
    return integrate(f, g, _weights(weighted)[1], s=s)


def norms(v: RadialField, p: ProblemParams) -> dict:
    return {
        "grad_K": math.sqrt(grad_sq(v)),
        "l2_K": math.sqrt(mass_sq(v)),
        "lqs_K": potential(v, p.q, p.s) ** (1.0 / p.q),
    }


@dataclass(frozen=True)
class EnergyBreakdown:
    A: float
    B: float
    E: float
    Q: float  # nan when B == 0
    q: float

    @property
    def Q_defined(self) -> bool:
        return self.B > 0.0

    def to_dict(self, residual_norm=None):
        d = asdict(self)
        d.pop("q")
        d["Q"] = self.Q if self.Q_defined else None
        d["residual_norm"] = residual_norm
        return d


def energy_breakdown(v: RadialField, p: ProblemParams, weighted: bool = True) -> EnergyBreakdown:
    """A, B, E_K and the quotient A / B^{2/q}.

    For q = 2*(s) the quotient is Q_{K,alpha}. For subcritical q the same
    formula with 2/q is the scale-free functional behind the Nehari scaling.
    """
    A = grad_sq(v, weighted) - p.alpha * mass_sq(v, weighted)
    B = potential(v, p.q, p.s, weighted)
    E = 0.5 * A - B / p.q
    Q = A / B ** (2.0 / p.q) if B > 0.0 else float("nan")
    return EnergyBreakdown(A, B, E, Q, p.q)


def rayleigh_quotient(v: RadialField, p: ProblemParams, weighted: bool = True) -> float:
    """Q_{K,alpha}(v) (weighted) or Q_alpha(v) (no K), always with 2*(s) in the denominator."""
    crit = p.crit_exp
    num = grad_sq(v, weighted) - p.alpha * mass_sq(v, weighted)
    den = potential(v, crit, p.s, weighted)
    if not den > 0.0:
        raise ValueError("degenerate field: the potential integral vanishes")
    return num / den ** (2.0 / crit)


@dataclass(frozen=True)
class ResidualReport:
    field: RadialField
    norm: float
    nonlinear: bool = True


def weak_residual(v: RadialField, p: ProblemParams, nonlinear: bool = True) -> ResidualReport:
    """Strong-form residual of L v - alpha v - |v|^{q-2} v |y|^{-s} on interior nodes.

    ``norm`` is the K-weighted L2 norm of the residual relative to that of the
    right-hand side alpha v + |v|^{q-2} v |y|^{-s}. ``nonlinear=False`` drops
    the power term (pure eigenvalue problem).
    """
    r = v.grid.nodes
    x = v.values
    rhs = p.alpha * x
    if nonlinear:
        rhs = rhs + np.abs(x) ** (p.q - 2.0) * x * r ** (-p.s)
    res = apply_L(v).values - rhs
    res[0] = 0.0
    res[-1] = 0.0
    rhs = rhs.copy()
    rhs[0] = rhs[-1] = 0.0
    res_f = RadialField(v.grid, res)
    num = math.sqrt(max(integrate(res_f, res_f, _K), 0.0))
    rhs_f = RadialField(v.grid, rhs)
    den = math.sqrt(max(integrate(rhs_f, rhs_f, _K), 0.0))
    if den == 0.0:
        norm = 0.0 if num == 0.0 else float("inf")
    else:
        norm = num / den
    return ResidualReport(res_f, norm, nonlinear)


def fiber_energy(A: float, B: float, q: float, t):
    """E_K(t v) = t^2 A / 2 - t^q B / q."""
    t = np.asarray(t, dtype=float)
    return 0.5 * t * t * A - t ** q * B / q


def fiber_maximum(A: float, B: float, q: float):
    """(t_max, max_t E_K(t v)) for A, B > 0: t_max^{q-2} = A / B."""
    t_max = (A / B) ** (1.0 / (q - 2.0))
    level = (0.5 - 1.0 / q) * A * (A / B) ** (2.0 / (q - 2.0))
    return t_max, level


@dataclass(frozen=True)
class MountainPassLevel:
    value: float | None
    ok: bool
    A: float
    B: float
    reason: str = ""


def mountain_pass_from_AB(A: float, B: float, N: int, s: float) -> MountainPassLevel:
    """(2-s)/(2(N-s)) * A * (A/B)^{(N-2)/(2-s)}; flagged when A <= 0 or B <= 0."""
    if not A > 0.0:
        return MountainPassLevel(None, False, A, B, "A <= 0: fiber map has no interior maximum")
    if not B > 0.0:
        return MountainPassLevel(None, False, A, B, "B <= 0: fiber map is unbounded")
    c = (2.0 - s) / (2.0 * (N - s))
    return MountainPassLevel(c * A * (A / B) ** ((N - 2.0) / (2.0 - s)), True, A, B)


def mountain_pass_level(v: RadialField, p: ProblemParams) -> MountainPassLevel:
    """sup_{t>=0} E_K(t v) at the critical exponent, in closed form."""
    if not p.is_critical:
        raise ValueError("the closed form needs q = 2*(s)")
    eb = energy_breakdown(v, p)
    return mountain_pass_from_AB(eb.A, eb.B, p.N, p.s)


def grid_search_fiber_max(v: RadialField, p: ProblemParams, t_lo=1e-2, t_hi=1e2, n=401,
                          refine=True):
    """max_t E_K(t v) by evaluating the energy of actual scaled fields.

    A log grid locates the peak; ``refine`` polishes it with a bounded scalar
    search on the bracketing cells.
    """
    from scipy.optimize import minimize_scalar

    def e_of(t):
        return energy_breakdown(t * v, p).E

    ts = np.geomspace(t_lo, t_hi, n)
    es = np.array([e_of(t) for t in ts])
    k = int(np.argmax(es))
    best_t, best_e = ts[k], es[k]
    if refine and 0 < k < n - 1:
        res = minimize_scalar(lambda lt: -e_of(math.exp(lt)),
                              bounds=(math.log(ts[k - 1]), math.log(ts[k + 1])),
                              method="bounded", options={"xatol": 1e-12})
        if -res.fun > best_e:
            best_t, best_e = math.exp(res.x), -res.fun
    return best_t, best_e


def hardy_ratio(v: RadialField) -> float:
    """int |grad v|^2 K / int v^2 |y|^{-2} K (bounded below by ((N-2)/2)^2)."""
    return grad_sq(v) / integrate(v, v, WeightMode.INV_R2_K)


def sobolev_hardy_ratio(v: RadialField, q: float, s: float) -> float:
    """(int |v|^q |y|^{-s} K)^{2/q} / int |grad v|^2 K."""
    return potential(v, q, s) ** (2.0 / q) / grad_sq(v)
