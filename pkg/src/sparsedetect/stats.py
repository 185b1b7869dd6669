"""Test statistics and decision rules.

Per-component weighted chi-square statistics t_j, the aggregate chi-square
test for moderate sparsity, the Higher-Criticism family over a sparsity
grid with the companion max test, and the Gaussian-vector HC baseline.
"""

from __future__ import annotations

import hashlib
import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DegenerateTailError, DomainError, ResolutionError

SQRT2 = math.sqrt(2.0)

__all__ = [
    "TailMode",
    "GAUSSIAN_APPROX",
    "EMPIRICAL_MC",
    "TestConfig",
    "TestOutcome",
    "NullTail",
    "T_d",
    "normal_sf",
    "normal_isf",
    "t_statistic",
    "t_matrix",
    "chi2_aggregate",
    "chi2_test",
    "sample_null_t",
    "null_tail",
    "hc_statistic",
    "sparsity_grid",
    "phi_boundary",
    "hc_test",
    "vector_hc_baseline",
    "MomentReport",
    "moment_audit",
    "TailReport",
    "tail_audit",
]


def T_d(d):
    """Threshold scale sqrt(log d)."""
    return math.sqrt(math.log(d))


def normal_sf(x):
    """Upper standard normal tail Phi(-x)."""
    return ndtr(-np.asarray(x, dtype=float))


def normal_isf(p):
    """Standard normal (1 - p)-quantile."""
    return -ndtri(np.asarray(p, dtype=float))


@dataclass(frozen=True)
class TailMode:
    """How the null tail of t_j is evaluated: ``gaussian`` or ``empirical``."""

    kind: str = "gaussian"
    n0: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "empirical"):
            raise ConfigError(f"unknown tail mode {self.kind!r}", field="tail_mode")
        if self.kind == "empirical" and self.n0 < 1:
            raise ConfigError("empirical tail needs n0 >= 1", field="tail_mode.n0")

    def label(self):
        return "GAUSSIAN_APPROX" if self.kind == "gaussian" else f"EMPIRICAL_MC({self.n0})"


GAUSSIAN_APPROX = TailMode("gaussian")


def EMPIRICAL_MC(n0):
    return TailMode("empirical", int(n0))


@dataclass(frozen=True)
class TestConfig:
    """Tuning of the chi-square and HC procedures.

    ``delta`` is either a positive grid step or the string ``"auto"``
    (delta = T_d^(-1/2)).  ``combine`` joins psi^L and psi^max: ``"or"``
    rejects when either does, ``"and"`` only when both do.
    """

    __test__ = False

    alpha: float = 0.05
    C_exponent: float = 0.3
    D: float = 1.6
    delta: object = "auto"
    tail_mode: TailMode = GAUSSIAN_APPROX
    combine: str = "or"
    tail_seed: int = 0

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}", field="alpha")
        if not self.C_exponent > 0.25:
            raise ConfigError(f"C_exponent must exceed 1/4, got {self.C_exponent}", field="C_exponent")
        if not self.D > SQRT2:
            raise ConfigError(f"D must exceed sqrt(2), got {self.D}", field="D")
        if self.delta != "auto" and not (isinstance(self.delta, (int, float)) and 0 < self.delta):
            raise ConfigError(f"delta must be 'auto' or positive, got {self.delta!r}", field="delta")
        if self.combine not in ("or", "and"):
            raise ConfigError(f"combine must be 'or' or 'and', got {self.combine!r}", field="combine")

    def H(self, d):
        return math.log(d) ** self.C_exponent

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "C_exponent": self.C_exponent,
            "D": self.D,
            "delta": self.delta,
            "tail_mode": self.tail_mode.kind,
            "tail_n0": self.tail_mode.n0,
            "combine": self.combine,
            "tail_seed": self.tail_seed,
        }


@dataclass(frozen=True)
class TestOutcome:
    """Statistic, threshold and decision; ``reject`` is statistic > threshold."""

    __test__ = False

    statistic: float
    threshold: float
    reject: bool
    name: str = ""
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if bool(self.reject) != bool(self.statistic > self.threshold):
            raise ValueError("reject must equal statistic > threshold")

    def to_record(self):
        """Flat record with scalar values, for CSV or JSON output."""
        rec = {
            "test": self.name,
            "statistic": float(self.statistic),
            "threshold": float(self.threshold),
            "reject": bool(self.reject),
        }
        for key, value in self.detail.items():
            if isinstance(value, (list, tuple, np.ndarray)):
                for i, item in enumerate(np.asarray(value).ravel()):
                    rec[f"{key}[{i}]"] = item.item() if hasattr(item, "item") else item
            else:
                rec[key] = value.item() if hasattr(value, "item") else value
        return rec


def _check_weights(w, tol=1e-6):
    w = np.asarray(w, dtype=float)
    s = 2.0 * np.sum(w**2)
    if abs(s - 1.0) > 2.0 * tol:
        raise DomainError(f"weights must satisfy sum w^2 = 1/2, got {s / 2:.9g}")
    return w


def _values(x):
    return x.x if hasattr(x, "x") else np.asarray(x, dtype=float)


def _weights_for(w, ncols):
    """Align a symmetric weight vector with observations having ``ncols`` columns."""
    if w.size == ncols:
        return w
    from .extremal import pad_symmetric

    if w.size < ncols:
        return pad_symmetric(w, ncols // 2)
    raise DomainError(f"weights cover {w.size // 2} frequencies but data only {ncols // 2}")


def t_statistic(x_j, w, eps):
    """t = sum_k w_k ((x_k / eps)^2 - 1).

    ``x_j`` may be one row or a 2-D array of rows; one value per row is
    returned in the latter case.
    """
    w = _check_weights(w)
    x = np.asarray(x_j, dtype=float)
    w = _weights_for(w, x.shape[-1])
    return ((x / eps) ** 2 - 1.0) @ w


def t_matrix(obs, weights_list):
    """Statistics t_{j,l} for every row j and every weight vector l, shape (d, L)."""
    x = _values(obs)
    z = (x / obs.config.eps) ** 2 - 1.0
    cols = [_weights_for(_check_weights(w), x.shape[1]) for w in weights_list]
    return z @ np.column_stack(cols)


def chi2_aggregate(obs, w):
    """t_b = d^(-1/2) sum_j t_j."""
    t = t_statistic(_values(obs), w, obs.config.eps)
    return float(np.sum(t) / math.sqrt(t.size))


def chi2_test(obs, w, alpha):
    """Reject when t_b exceeds the standard normal (1 - alpha)-quantile."""
    if not (0 < alpha < 1):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    stat = chi2_aggregate(obs, w)
    thr = float(normal_isf(alpha))
    return TestOutcome(stat, thr, stat > thr, name="chi2", detail={"alpha": alpha})


def sample_null_t(w, n, rng, chunk=None):
    """Draw n null values of t_j = sum_k w_k (eta_k^2 - 1).

    When the weights are symmetric in k (as all extremal weights are), the
    pair eta_k^2 + eta_(-k)^2 is chi-square with two degrees of freedom, so
    one exponential per positive frequency replaces two normals.
    """
    w = np.asarray(w, dtype=float)
    half = w.size // 2
    symmetric = w.size % 2 == 0 and np.array_equal(w[:half][::-1], w[half:])
    nz = w[half:] if symmetric else w
    keep = nz > 0
    nz = nz[keep]
    offset = (2.0 if symmetric else 1.0) * nz.sum()
    chunk = chunk or max(1, min(n, 4_000_000 // max(nz.size, 1)))
    out = np.empty(n)
    for start in range(0, n, chunk):
        size = min(chunk, n - start)
        if symmetric:
            draws = rng.standard_exponential((size, nz.size))
            out[start:start + size] = 2.0 * (draws @ nz) - offset
        else:
            draws = rng.standard_normal((size, nz.size))
            out[start:start + size] = (draws**2) @ nz - offset
    return out


_TAIL_CACHE = {}
_TAIL_LOCK = threading.Lock()


def _weights_key(w):
    return hashlib.sha1(np.ascontiguousarray(w, dtype=float).tobytes()).hexdigest()


def _empirical_sample(w, n0, seed):
    key = (_weights_key(w), n0, seed)
    with _TAIL_LOCK:
        cached = _TAIL_CACHE.get(key)
    if cached is None:
        ss = np.random.SeedSequence([seed, 0x7A11, int(key[0][:8], 16)])
        rng = np.random.Generator(np.random.Philox(ss))
        cached = np.sort(sample_null_t(w, n0, rng))
        cached.setflags(write=False)
        with _TAIL_LOCK:
            if len(_TAIL_CACHE) > 64:
                _TAIL_CACHE.clear()
            _TAIL_CACHE[key] = cached
    return cached


class NullTail:
    """Null survival function x -> P0(t_j > x) for fixed weights.

    Gaussian mode returns Phi(-x).  Empirical mode draws n0 null values of
    t_j once (seeded, cached per weights) and returns the exceedance
    frequency.
    """

    def __init__(self, w, mode=GAUSSIAN_APPROX, seed=0):
        self.w = np.asarray(w, dtype=float)
        self.mode = mode
        self.seed = seed
        if mode.kind == "empirical" and mode.n0 < 10_000:
            warnings.warn(f"n0={mode.n0} < 1e4 resolves only coarse tails", RuntimeWarning, stacklevel=2)

    def sf(self, x):
        if self.mode.kind == "gaussian":
            return normal_sf(x)
        sample = _empirical_sample(self.w, self.mode.n0, self.seed)
        x = np.asarray(x, dtype=float)
        return (sample.size - np.searchsorted(sample, x, side="right")) / sample.size

    def __call__(self, x):
        return self.sf(x)


def null_tail(x, w, mode=GAUSSIAN_APPROX, seed=0):
    """P0(t_j > x) under ``mode``; see ``NullTail``."""
    return NullTail(w, mode, seed).sf(x)


def phi_boundary(b):
    """Detection boundary phi(b) on (1/2, 1)."""
    if not (0.5 < b < 1):
        raise DomainError(f"phi is defined on (1/2, 1), got b={b}")
    return _phi(b)


def _phi(b):
    # also valid at b = 1 (value sqrt 2), the last grid point
    if b <= 0.75:
        return math.sqrt(2.0 * b - 1.0)
    return SQRT2 * (1.0 - math.sqrt(1.0 - b))


def _hc_from_t(t, thr, p0):
    p0 = float(p0)
    if p0 <= 0.0 or p0 >= 1.0:
        raise DegenerateTailError(f"null tail at threshold {thr:.6g} is {p0}")
    d = t.shape[0]
    count = np.count_nonzero(t > thr, axis=0)
    return (count - d * p0) / math.sqrt(d * p0 * (1.0 - p0))


def hc_statistic(obs, u, w, tail=None):
    """L(u) = (d p0 (1 - p0))^(-1/2) sum_j (1(t_j > u T_d) - p0), p0 = P0(t_j > u T_d)."""
    if not (0 < u <= SQRT2 + 1e-12):
        raise DomainError(f"u must lie in (0, sqrt 2], got {u}")
    tail = tail or NullTail(w)
    t = t_statistic(_values(obs), w, obs.config.eps)
    thr = u * T_d(t.size)
    return float(_hc_from_t(t, thr, tail.sf(thr)))


def sparsity_grid(d, delta="auto"):
    """Grid [(b_l, u_l)], b_l = 1/2 + l delta for l = 1..N, N = ceil(1/(2 delta)).

    ``delta="auto"`` uses delta = T_d^(-1/2).  b_l is clipped to 1 and
    u_l = min(2 phi(b_l), sqrt 2).
    """
    if d < 8:
        raise DomainError(f"grid needs d >= 8, got {d}")
    step = T_d(d) ** -0.5 if delta == "auto" else float(delta)
    if step <= 0:
        raise DomainError("delta must be positive")
    n = math.ceil(round(1.0 / (2.0 * step), 12))
    grid = []
    for l in range(1, n + 1):
        b = min(0.5 + l * step, 1.0)
        grid.append((b, min(2.0 * _phi(b), SQRT2)))
    return grid


def hc_test(obs, solutions, tc, tails=None):
    """Combined HC / max test over the sparsity grid.

    psi^L rejects when max_{l <= N-1} L(u_l, b_l) > (log d)^C and psi^max
    when max_{j, l <= N} t_{j, b_l} > D T_d.  ``solutions`` holds one
    weight source (an ExtremalSolution or a weight array) per grid point;
    ``tails`` optionally supplies matching ``NullTail`` objects.
    """
    d = obs.config.d
    grid = sparsity_grid(d, tc.delta)
    if len(solutions) != len(grid):
        raise ConfigError(f"need {len(grid)} extremal solutions, got {len(solutions)}", field="solutions")
    weights = [np.asarray(getattr(s, "weights", s), dtype=float) for s in solutions]
    if tails is None:
        tails = [NullTail(w, tc.tail_mode, tc.tail_seed) for w in weights]
    td = T_d(d)
    t = t_matrix(obs, weights)
    n = len(grid)
    L = np.full(n, -np.inf)
    for l in range(n - 1):
        thr = grid[l][1] * td
        L[l] = _hc_from_t(t[:, l], thr, tails[l].sf(thr))
    L_max = float(L[: n - 1].max()) if n > 1 else -math.inf
    H = tc.H(d)
    t_max = float(t.max())
    max_thr = tc.D * td
    # each part is scaled by its own threshold; the combined statistic is
    # their max (either rejects) or min (both reject) against 1
    ratio_L = L_max / H
    ratio_max = t_max / max_thr
    rej_L = ratio_L > 1.0
    rej_max = ratio_max > 1.0
    stat = max(ratio_L, ratio_max) if tc.combine == "or" else min(ratio_L, ratio_max)
    detail = {
        "rule": tc.combine,
        "L_max": L_max,
        "H": H,
        "reject_L": rej_L,
        "t_max": t_max,
        "max_threshold": max_thr,
        "reject_max": rej_max,
        "b_grid": [g[0] for g in grid],
        "u_grid": [g[1] for g in grid],
        "L": L.tolist(),
        "t_max_grid": t.max(axis=0).tolist(),
        "tail_mode": tc.tail_mode.label(),
    }
    return TestOutcome(stat, 1.0, stat > 1.0, name="hc", detail=detail)


def vector_hc_baseline(x, s0=0.0):
    """max over s_l > s0 of L_d(s_l) on the grid s_l = l delta_d T_d <= sqrt 2 T_d.

    L_d(s) = (d Phi(s) Phi(-s))^(-1/2) sum_i (1(X_i > s) - Phi(-s)),
    delta_d = T_d^(-1/2).
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if d < 2:
        raise DomainError("need d >= 2")
    td = T_d(d)
    step = td**-0.5
    u = step * np.arange(1, int(math.floor(SQRT2 / step + 1e-12)) + 1)
    s = u * td
    s = s[s > s0]
    if s.size == 0:
        raise DomainError(f"no grid threshold exceeds s0={s0}")
    p = normal_sf(s)
    xs = np.sort(x)
    count = d - np.searchsorted(xs, s, side="right")
    L = (count - d * p) / np.sqrt(d * p * (1.0 - p))
    return float(L.max())


@dataclass(frozen=True)
class MomentReport:
    mean_mc: float
    var_mc: float
    mean_exact: float
    var_exact: float
    mean_se: float
    var_se: float
    n: int
    passed: bool

    def z_scores(self):
        return ((self.mean_mc - self.mean_exact) / self.mean_se,
                (self.var_mc - self.var_exact) / self.var_se)


def moment_audit(theta_j, w, eps, n, seed, chunk=20_000):
    """Monte Carlo mean and variance of t_j against their exact values.

    E t_j = eps^-2 kappa(theta_j, w) and
    Var t_j = sum_k w_k^2 (2 + 4 eps^-2 theta_k^2).  Passes when both
    estimates lie within 4 standard errors; the variance SE uses the
    sample fourth central moment.
    """
    if n < 10_000:
        raise DomainError("moment audit needs n >= 1e4")
    w = _check_weights(w)
    theta = np.asarray(theta_j, dtype=float)
    if theta.size != w.size:
        from .extremal import pad_symmetric

        kmax = max(theta.size, w.size) // 2
        theta, w = pad_symmetric(theta, kmax), pad_symmetric(w, kmax)
    mean_exact = float(w @ theta**2) / eps**2
    var_exact = float(np.sum(w**2 * (2.0 + 4.0 * theta**2 / eps**2)))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x40E1])))
    keep = w > 0
    w_nz, th_nz = w[keep], theta[keep]
    t = np.empty(n)
    for start in range(0, n, chunk):
        size = min(chunk, n - start)
        x = th_nz + eps * rng.standard_normal((size, w_nz.size))
        t[start:start + size] = ((x / eps) ** 2 - 1.0) @ w_nz
    mean = float(t.mean())
    var = float(t.var(ddof=1))
    mu4 = float(np.mean((t - mean) ** 4))
    mean_se = math.sqrt(var / n)
    var_se = math.sqrt(max(mu4 - var**2 * (n - 3) / (n - 1), 0.0) / n)
    passed = abs(mean - mean_exact) <= 4 * mean_se and abs(var - var_exact) <= 4 * var_se
    return MomentReport(mean, var, mean_exact, var_exact, mean_se, var_se, n, passed)


@dataclass(frozen=True)
class TailReport:
    T: tuple
    survival: tuple
    ratio: tuple
    gaussian_ratio: tuple
    n: int
    max_weight: float
    precondition_ok: bool
    passed: bool
    band: tuple = (0.8, 1.25)


def tail_audit(w, T_values, n, seed, band=(0.8, 1.25)):
    """Compare -2 log P0(t_j > T) / T^2 with 1 for each T.

    Requires max w <= 0.05 (otherwise the report is flagged, not raised)
    and at least 100 expected Gaussian exceedances at every T.
    """
    w = _check_weights(w)
    T_values = tuple(float(T) for T in T_values)
    for T in T_values:
        if float(normal_sf(T)) * n < 100:
            raise ResolutionError(f"T={T} is unreachable with n={n}: fewer than 100 expected exceedances")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x7A12])))
    t = np.sort(sample_null_t(w, n, rng))
    surv, ratio, gauss = [], [], []
    for T in T_values:
        p = (n - np.searchsorted(t, T, side="right")) / n
        surv.append(float(p))
        ratio.append(-2.0 * math.log(p) / T**2 if p > 0 else math.inf)
        gauss.append(-2.0 * math.log(float(normal_sf(T))) / T**2)
    pre = float(w.max()) <= 0.05
    if not pre:
        warnings.warn(f"max weight {w.max():.3g} > 0.05: tail audit precondition violated",
                      RuntimeWarning, stacklevel=2)
    passed = pre and all(band[0] <= r <= band[1] for r in ratio)
    return TailReport(T_values, tuple(surv), tuple(ratio), tuple(gauss), n, float(w.max()), pre, passed, band)
