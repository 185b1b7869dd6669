"""Extremal problem behind the detectability quantity a(r).

For a single component with Fourier coefficients theta_k, k != 0, the
quantity

    a(r)^2 = inf (1 / (2 eps^4)) sum_k theta_k^4

over the set {(2 pi)^(2 tau) sum |k|^(2 tau) theta_k^2 <= 1,
sum theta_k^2 >= r^2} plays the role of the signal energy.  Writing
v_k = theta_k^2 / sqrt(2) turns it into the minimum-norm point of a
polyhedron, whose KKT solution has the profile v_k = v0 * zeta(k / m)
with zeta(y) = (1 - |y|^(2 tau))_+.

Coefficient sequences are stored as arrays over the symmetric index set
``k_axis(kmax)`` = (-kmax, ..., -1, 1, ..., kmax).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

from .errors import ConvergenceError, DomainError, InfeasibleError

SQRT2 = math.sqrt(2.0)

__all__ = [
    "ExtremalParams",
    "ExtremalSolution",
    "k_axis",
    "pad_symmetric",
    "sobolev_alpha",
    "c1_constant",
    "c1_continuum",
    "a_asymptotic",
    "a_continuum",
    "solve_extremal",
    "brute_force_extremal",
    "brute_force_extended",
    "kappa",
    "scaling_inequality_margins",
    "scaling_inequality_check",
    "separation_rate",
    "extended_a",
    "feasibility_radius",
    "invert_a",
]


def k_axis(kmax):
    """Integer frequencies -kmax..-1, 1..kmax in storage order."""
    kmax = int(kmax)
    if kmax < 1:
        raise DomainError(f"kmax must be >= 1, got {kmax}")
    return np.concatenate([np.arange(-kmax, 0), np.arange(1, kmax + 1)])


def pad_symmetric(values, kmax):
    """Embed a sequence stored on ``k_axis(n)`` into ``k_axis(kmax)``, kmax >= n.

    Missing frequencies are filled with zeros.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size % 2:
        raise DomainError("coefficient sequences must have even length 2*kmax")
    n = values.size // 2
    if kmax < n:
        raise DomainError(f"cannot shrink a sequence with kmax={n} to kmax={kmax}")
    out = np.zeros(2 * kmax)
    out[kmax - n:kmax] = values[:n]
    out[kmax:kmax + n] = values[n:]
    return out


def sobolev_alpha(k, tau):
    """Sobolev weights (2 pi)^(2 tau) |k|^(2 tau)."""
    return (2.0 * np.pi) ** (2.0 * tau) * np.abs(np.asarray(k, dtype=float)) ** (2.0 * tau)


def feasibility_radius(tau):
    """Largest separation radius for which the class is nonempty, (2 pi)^(-tau).

    Below it the frequency-one coefficient alone can meet both constraints;
    at or above it no coefficient sequence can.
    """
    return (2.0 * np.pi) ** (-tau)


@dataclass(frozen=True)
class ExtremalParams:
    """Separation radius ``r``, noise level ``eps`` and smoothness ``tau``."""

    r: float
    eps: float
    tau: float

    def __post_init__(self):
        for name in ("r", "eps", "tau"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")
        if self.r < 0 or self.eps <= 0 or self.tau <= 0:
            raise DomainError(
                f"need r >= 0, eps > 0, tau > 0; got r={self.r}, eps={self.eps}, tau={self.tau}"
            )

    @property
    def asymptotic_reliable(self):
        """Asymptotic formulas are only trusted for small radii."""
        return self.r < 0.1


@dataclass(frozen=True)
class ExtremalSolution:
    """Solution of the extremal problem on the index set ``k_axis(kmax)``."""

    a: float
    v0: float
    m: float
    kmax: int
    theta_star: np.ndarray
    weights: np.ndarray
    params: ExtremalParams
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.theta_star, self.weights):
            arr.setflags(write=False)

    @property
    def k(self):
        return k_axis(self.kmax)

    @property
    def max_weight(self):
        return float(self.weights.max())

    def sobolev_norm(self):
        """(2 pi)^(2 tau) sum |k|^(2 tau) theta_k^2."""
        return float(sobolev_alpha(self.k, self.params.tau) @ self.theta_star**2)

    def l2_norm_sq(self):
        return float(np.sum(self.theta_star**2))

    def theta_padded(self, kmax):
        return pad_symmetric(self.theta_star, kmax)

    def weights_padded(self, kmax):
        return pad_symmetric(self.weights, kmax)


def _check_tau(tau):
    if not np.isfinite(tau) or tau <= 0:
        raise DomainError(f"tau must be positive, got {tau}")
    if tau < 1e-6:
        raise DomainError(f"tau={tau} is too small for a finite constant")


def c1_constant(tau):
    """Constant c1(tau) in the asymptotics a(r) ~ c1^(1/2) r^(2+1/(2 tau)) / eps^2.

    Composed from Beta values in closed form:
    c1 = c0 * pi * c2^-2 * (c2/c3)^((4 tau + 1)/(2 tau)) with
    c3 = B(a, b)/(4 tau), c2 = B(b, 2)/(4 tau), c0 = B(a, 3)/(8 tau),
    a = 1/(2 tau), b = 1 + 1/(2 tau).  Beta is evaluated through log-Gamma.
    """
    _check_tau(tau)
    a = 1.0 / (2.0 * tau)
    b = 1.0 + a
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            log_c3 = betaln(a, b) - math.log(4.0 * tau)
            log_c2 = betaln(b, 2.0) - math.log(4.0 * tau)
            log_c0 = betaln(a, 3.0) - math.log(8.0 * tau)
            expo = (4.0 * tau + 1.0) / (2.0 * tau)
            value = math.exp(log_c0 + math.log(math.pi) - 2.0 * log_c2 + expo * (log_c2 - log_c3))
        except (FloatingPointError, OverflowError) as exc:
            raise DomainError(f"c1 is not finite at tau={tau}") from exc
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"c1 is not finite at tau={tau}")
    return value


def c1_continuum(tau):
    """Constant that the discrete extremal problem actually converges to.

    Replacing the Lagrange sums by integrals gives, with
    I0 = B(a, 2)/tau, I1 = B(b, 2)/tau, I2 = B(a, 3)/tau,
    c1 = pi * I2 * I0^-2 * (I1/I0)^(1/(2 tau)).  This differs from
    ``c1_constant`` (0.843 vs 1.119 at tau=1); see the README.
    """
    _check_tau(tau)
    a = 1.0 / (2.0 * tau)
    b = 1.0 + a
    log_i0 = betaln(a, 2.0) - math.log(tau)
    log_i1 = betaln(b, 2.0) - math.log(tau)
    log_i2 = betaln(a, 3.0) - math.log(tau)
    value = math.exp(math.log(math.pi) + log_i2 - 2.0 * log_i0 + (log_i1 - log_i0) / (2.0 * tau))
    if not np.isfinite(value):
        raise DomainError(f"continuum constant is not finite at tau={tau}")
    return value


def _power_law(p, c1):
    return math.sqrt(c1) * p.r ** (2.0 + 1.0 / (2.0 * p.tau)) / p.eps**2


def a_asymptotic(p):
    """Asymptotic value c1(tau)^(1/2) r^(2 + 1/(2 tau)) eps^-2 with the closed-form c1."""
    if not p.asymptotic_reliable:
        warnings.warn(f"asymptotic formula used at r={p.r} >= 0.1", RuntimeWarning, stacklevel=2)
    return _power_law(p, c1_constant(p.tau))


def a_continuum(p):
    """Same power law with ``c1_continuum``; the true small-r limit of a(r)."""
    return _power_law(p, c1_continuum(p.tau))


def _profile_sums(m, tau):
    """Sums of zeta(k/m) and |k|^(2 tau) zeta(k/m) over k != 0, |k| < m."""
    k = np.arange(1, math.ceil(m) + 1, dtype=float)
    z = np.clip(1.0 - (k / m) ** (2.0 * tau), 0.0, None)
    return 2.0 * z.sum(), 2.0 * np.sum(k ** (2.0 * tau) * z)


def solve_extremal(p, tol=1e-10):
    """Exact discrete solution of the extremal problem.

    Both constraints are active at the optimum, v_k = v0 zeta(k/m).  Their
    ratio fixes m through S1(m)/S0(m) = 1 / ((2 pi)^(2 tau) r^2), which is
    increasing in m, so m is found by bisection and v0 then follows from
    the L2 constraint.  The lower bisection end is returned, so the
    Sobolev constraint never exceeds 1.
    """
    if not (0 < tol <= 1e-3):
        raise DomainError(f"tol must lie in (0, 1e-3], got {tol}")
    if p.r == 0:
        raise DomainError("r = 0 has the trivial solution theta = 0; no weights exist")
    tau = p.tau
    if p.r >= feasibility_radius(tau):
        raise InfeasibleError(
            f"infeasible: Sobolev constraint cannot hold with sum theta^2 >= r^2 "
            f"(r={p.r} >= (2 pi)^-tau={feasibility_radius(tau):.6g})",
            constraint="Sobolev constraint",
        )
    target = 1.0 / ((2.0 * np.pi) ** (2.0 * tau) * p.r**2)

    def ratio(m):
        s0, s1 = _profile_sums(m, tau)
        return s1 / s0

    lo, hi = 1.0, 2.0
    while ratio(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ConvergenceError("bandwidth bracket exceeded 1e12", {"r": p.r})
    gap = np.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ratio(mid) < target:
            lo = mid
        else:
            hi = mid
        if lo > 1.0:
            gap = 1.0 - ratio(lo) / target
            if gap <= tol:
                break
    else:
        raise ConvergenceError(
            "bandwidth bisection did not converge in 200 iterations",
            {"sobolev_gap": gap, "m_lo": lo, "m_hi": hi},
        )
    m = lo
    s0, _ = _profile_sums(m, tau)
    v0 = p.r**2 / (SQRT2 * s0)
    kmax = math.ceil(m)
    k = k_axis(kmax)
    v = v0 * np.clip(1.0 - (np.abs(k) / m) ** (2.0 * tau), 0.0, None)
    theta_sq = SQRT2 * v
    theta = np.sqrt(theta_sq)
    a = math.sqrt(np.sum(theta_sq**2) / 2.0) / p.eps**2
    w = theta_sq / (2.0 * a * p.eps**2)
    w = w / math.sqrt(2.0 * np.sum(w**2))
    residuals = {
        "l2": float(np.sum(theta_sq) - p.r**2),
        "sobolev": float(sobolev_alpha(k, tau) @ theta_sq - 1.0),
    }
    return ExtremalSolution(a=a, v0=v0, m=m, kmax=kmax, theta_star=theta, weights=w,
                            params=p, residuals=residuals)


def _project_mass(y, c):
    """Euclidean projection onto {v >= 0, sum v >= c}."""
    v = np.maximum(y, 0.0)
    if v.sum() >= c:
        return v
    ys = np.sort(y)[::-1]
    mu = (c - np.cumsum(ys)) / np.arange(1, y.size + 1)
    i = np.flatnonzero(ys + mu > 0)[-1]
    return np.maximum(y + mu[i], 0.0)


def _project_budget(y, alpha, s):
    """Euclidean projection onto {v >= 0, alpha . v <= s}, alpha > 0."""
    v = np.maximum(y, 0.0)
    if alpha @ v <= s:
        return v
    order = np.argsort(y / alpha)[::-1]
    ys, al = y[order], alpha[order]
    lam = (np.cumsum(al * ys) - s) / np.cumsum(al * al)
    i = np.flatnonzero(ys - lam * al > 0)[-1]
    return np.maximum(y - lam[i] * alpha, 0.0)


def _dykstra(y, c, alpha, s, max_iter=100_000, tol=1e-14):
    """Dykstra's alternating projections onto the two polyhedral pieces."""
    x = y.copy()
    p = np.zeros_like(y)
    q = np.zeros_like(y)
    for _ in range(max_iter):
        z = _project_mass(x + p, c)
        p = x + p - z
        x_new = _project_budget(z + q, alpha, s)
        q = z + q - x_new
        if np.max(np.abs(x_new - x)) <= tol * max(np.max(np.abs(x_new)), 1e-300):
            return x_new
        x = x_new
    raise ConvergenceError("Dykstra projection did not converge", {"iterations": max_iter})


def _minimum_norm_point(c, alpha, s, n_init, max_iter=100_000):
    """Projected gradient for min sum v^2 over V+ with the 1/L step.

    The gradient of sum v^2 is 2v and L = 2, so each step projects v/2.
    """
    v = np.full(alpha.size, n_init)
    obj = np.sum(v**2)
    for _ in range(max_iter):
        v = _dykstra(0.5 * v, c, alpha, s)
        new = np.sum(v**2)
        if abs(new - obj) <= 1e-10 * max(new, 1e-300):
            return v
        obj = new
    raise ConvergenceError("projected gradient did not converge", {"objective": obj})


def brute_force_extremal(p, kmax):
    """Independent numeric value of a(r) on the index set |k| <= kmax.

    Minimizes sum v_k^2 over {sum v >= r^2/sqrt 2, sum alpha v <= 1/sqrt 2,
    v >= 0} by projected gradient with exact Dykstra projections, and
    returns a = (2 sum v^2)^(1/2) / (sqrt 2 eps^2).
    """
    kmax = int(kmax)
    if kmax < 2:
        raise DomainError(f"kmax must be >= 2, got {kmax}")
    if p.r == 0:
        return 0.0
    if p.r >= feasibility_radius(p.tau):
        raise InfeasibleError(
            f"infeasible: Sobolev constraint cannot hold at r={p.r}", constraint="Sobolev constraint"
        )
    k = k_axis(kmax)
    alpha = sobolev_alpha(k, p.tau)
    c = p.r**2 / SQRT2
    v = _minimum_norm_point(c, alpha, 1.0 / SQRT2, p.r**2 / (SQRT2 * 2 * kmax))
    return math.sqrt(2.0 * np.sum(v**2)) / (SQRT2 * p.eps**2)


def brute_force_extended(p, K, kmax):
    """Brute-force value of the extended problem with K channels.

    The aggregate constraints are sum over channels of the L2 mass >= K r^2
    and of the Sobolev energy <= K; the objective is the quartic sum over
    all channels.  Channels are stacked into one long vector.
    """
    K = int(K)
    if K < 1:
        raise DomainError("K must be >= 1")
    if p.r == 0:
        return 0.0
    if p.r >= feasibility_radius(p.tau):
        raise InfeasibleError(f"infeasible at r={p.r}", constraint="Sobolev constraint")
    alpha = np.tile(sobolev_alpha(k_axis(kmax), p.tau), K)
    c = K * p.r**2 / SQRT2
    v = _minimum_norm_point(c, alpha, K / SQRT2, c / alpha.size)
    return math.sqrt(2.0 * np.sum(v**2)) / (SQRT2 * p.eps**2)


def kappa(theta, q):
    """kappa(theta, q) = sum_k q_k theta_k^2 on aligned symmetric index sets."""
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    n = max(theta.size, q.size) // 2
    if theta.size != q.size:
        theta = pad_symmetric(theta, n)
        q = pad_symmetric(q, n)
    return float(q @ theta**2)


def _random_profile(rng, kmax, tau, bound):
    """Random nonnegative profile g with Sobolev/L2 ratio below ``bound``."""
    k = k_axis(kmax)
    alpha = sobolev_alpha(k, tau)
    for _ in range(1000):
        kind = rng.integers(3)
        if kind == 0:  # geometric decay with random rate
            g = np.exp(-rng.uniform(0.01, 3.0) * (np.abs(k) - 1))
        elif kind == 1:  # random sparse support
            g = rng.exponential(size=k.size) * (rng.random(k.size) < rng.uniform(0.02, 1.0))
        else:  # bump around a random frequency
            c = rng.uniform(1.0, kmax)
            g = np.exp(-0.5 * ((np.abs(k) - c) / rng.uniform(0.5, kmax)) ** 2)
        g = g * rng.uniform(0.5, 1.5, size=k.size)
        if g.sum() <= 0:
            continue
        g = g / g.sum()
        ratio = alpha @ g
        if ratio <= bound:
            return g, alpha
        # mix in frequency one until the ratio is admissible
        e1 = np.zeros(k.size)
        e1[kmax - 1] = e1[kmax] = 0.5
        a1 = alpha @ e1
        if a1 < bound:
            lam = rng.uniform((ratio - bound) / (ratio - a1), 1.0)
            return (1 - lam) * g + lam * e1, alpha
    raise InfeasibleError("could not draw a feasible probe", constraint="Sobolev constraint")


def scaling_inequality_margins(p, B, n_probes, seed, sol=None):
    """Relative margins kappa(theta, w)/(eps^2 B^2 a) - 1 over random probes.

    Each probe is a random theta with sum theta^2 >= (B r)^2 and Sobolev
    energy <= 1, with the squared amplitude drawn uniformly between the two
    constraint limits.  ``w`` and ``a`` are solved at radius r.
    """
    if B < 1:
        raise DomainError(f"B must be >= 1, got {B}")
    br = B * p.r
    if br >= feasibility_radius(p.tau):
        raise InfeasibleError(f"infeasible probe class at B*r={br}", constraint="Sobolev constraint")
    sol = sol or solve_extremal(p)
    rng = np.random.default_rng(seed)
    kmax = max(4 * sol.kmax, 8)
    w = sol.weights_padded(kmax)
    margins = np.empty(n_probes)
    for i in range(n_probes):
        g, alpha = _random_profile(rng, kmax, p.tau, 1.0 / br**2)
        lo = br**2
        hi = 1.0 / (alpha @ g)
        theta_sq = rng.uniform(lo, hi) * g
        value = float(w @ theta_sq) / p.eps**2
        margins[i] = value / (B**2 * sol.a) - 1.0
    return margins


def scaling_inequality_check(p, B, n_probes, seed, tol=1e-6):
    """True iff every probe satisfies kappa/eps^2 >= B^2 a (1 - tol)."""
    return bool(np.all(scaling_inequality_margins(p, B, n_probes, seed) >= -tol))


def separation_rate(d, b, eps, tau):
    """Separation rate r*(d, b, eps, tau).

    (eps^4 d^(2b-1))^(tau/(4 tau+1)) for b <= 1/2 and
    (eps^4 T_d^2 phi(b)^2 / c1(tau))^(tau/(4 tau+1)) for b > 1/2.
    """
    from .stats import phi_boundary

    if not (0 < b < 1):
        raise DomainError(f"b must lie in (0, 1), got {b}")
    if d < 2 or eps <= 0 or tau <= 0:
        raise DomainError("need d >= 2, eps > 0, tau > 0")
    expo = tau / (4.0 * tau + 1.0)
    if b <= 0.5:
        return float((eps**4 * float(d) ** (2.0 * b - 1.0)) ** expo)
    return _high_sparsity_rate(d, phi_boundary(b), eps, tau)


def _high_sparsity_rate(d, phi, eps, tau):
    expo = tau / (4.0 * tau + 1.0)
    return float((eps**4 * math.log(d) * phi**2 / c1_constant(tau)) ** expo)


def extended_a(p, K):
    """Value for the extended class, K * a_asymptotic(p)."""
    K = int(K)
    if K < 1:
        raise DomainError("K must be >= 1")
    return K * a_asymptotic(p)


def invert_a(target, eps, tau, rtol=1e-12):
    """Radius r with solve_extremal(r).a == target, by bisection in log r."""
    if target <= 0:
        raise DomainError("target a must be positive")
    hi = feasibility_radius(tau) * (1 - 1e-9)
    p_hi = ExtremalParams(hi, eps, tau)
    if solve_extremal(p_hi).a < target:
        raise InfeasibleError(
            f"a={target} exceeds the largest attainable value at eps={eps}",
            constraint="Sobolev constraint",
        )
    lo = hi * 1e-3
    while solve_extremal(ExtremalParams(lo, eps, tau)).a > target:
        lo *= 1e-3
    while hi / lo - 1 > rtol:
        mid = math.sqrt(lo * hi)
        if solve_extremal(ExtremalParams(mid, eps, tau)).a < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)
