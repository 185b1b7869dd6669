"""Seeded Monte Carlo estimation of error probabilities.

Every replication draws its noise from its own counter-based stream keyed
by (seed, stream, replication), and replications only contribute integer
rejection counts, so results do not depend on how work is split across
threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, InfeasibleError, SparseDetectError
from .extremal import ExtremalParams, invert_a, separation_rate, solve_extremal, _high_sparsity_rate
from .model import (
    ActiveSetMode,
    Profile,
    ProblemConfig,
    SignMode,
    extended_signal,
    least_favorable_signal,
    make_active_set,
    noise_rng,
    null_signal,
    synthesize,
)
from .stats import NullTail, T_d, TestConfig, TestOutcome, chi2_test, hc_test, sparsity_grid, _phi

__all__ = [
    "ErrorEstimate",
    "SweepResult",
    "Chi2Spec",
    "HCSpec",
    "NeverReject",
    "SignalSpec",
    "chi2_spec",
    "hc_spec",
    "estimate_type1",
    "estimate_type2",
    "power_curve",
    "boundary_scan",
    "alpha_sweep",
    "LowerBoundReport",
    "lower_bound_diagnostic",
    "TechMinReport",
    "techmin_check",
    "write_sweep_csv",
    "sweep_csv_text",
    "write_manifest",
]

NULL_STREAM = 0


@dataclass(frozen=True)
class ErrorEstimate:
    """Rejection (or acceptance) frequency with its binomial standard error."""

    p_hat: float
    se: float
    n: int
    seed: int

    @classmethod
    def from_count(cls, count, n, seed):
        if n < 1:
            raise DomainError("n must be positive")
        p = count / n
        return cls(p, math.sqrt(p * (1.0 - p) / n), n, seed)


@dataclass
class SweepResult:
    """One row per sweep point plus the configuration and timing metadata."""

    kind: str
    axes: tuple
    rows: list
    config: dict
    meta: dict = field(default_factory=dict)

    @property
    def columns(self):
        return list(self.axes) + ["r", "omega", "se_omega", "beta", "se_beta", "gamma", "n", "seed", "status"]


# test specifications -------------------------------------------------------

@dataclass
class Chi2Spec:
    """Aggregate chi-square test with weights solved at ``r_weights``."""

    alpha: float
    solution: object
    name: str = "chi2"

    @property
    def kmax(self):
        return self.solution.kmax

    def __call__(self, obs):
        return chi2_test(obs, self.solution.weights, self.alpha)


@dataclass
class HCSpec:
    """Combined HC / max test with one extremal solution per grid point."""

    tc: TestConfig
    solutions: list
    tails: list
    name: str = "hc"

    @property
    def kmax(self):
        return max(s.kmax for s in self.solutions)

    def __call__(self, obs):
        return hc_test(obs, self.solutions, self.tc, self.tails)


@dataclass
class NeverReject:
    name: str = "never"
    kmax: int = 1

    def __call__(self, obs):
        return TestOutcome(0.0, 1.0, False, name=self.name)


def chi2_spec(cfg, alpha, r_weights=None):
    """Chi-square test whose weights are solved at r*(b) unless given."""
    r = r_weights if r_weights is not None else separation_rate(cfg.d, cfg.b, cfg.eps, cfg.tau)
    return Chi2Spec(alpha, solve_extremal(ExtremalParams(r, cfg.eps, cfg.tau)))


def hc_spec(cfg, tc):
    """HC test with weights at r*(b_l) for every grid point b_l.

    Grid points at b_l = 1 use phi(1) = sqrt 2 in the rate formula.
    """
    grid = sparsity_grid(cfg.d, tc.delta)
    sols = []
    for b, _ in grid:
        r = _high_sparsity_rate(cfg.d, _phi(b), cfg.eps, cfg.tau)
        sols.append(solve_extremal(ExtremalParams(r, cfg.eps, cfg.tau)))
    tails = [NullTail(s.weights, tc.tail_mode, tc.tail_seed) for s in sols]
    if tc.tail_mode.kind == "empirical":
        for tail, (b, u) in zip(tails, grid):
            tail.sf(u * T_d(cfg.d))  # draw and cache the null sample up front
    return HCSpec(tc, sols, tails)


@dataclass(frozen=True)
class SignalSpec:
    """Designated alternative: least-favorable or extended, at the config radius."""

    kind: str = "least_favorable"
    sign_mode: SignMode = SignMode.PLUS
    active: ActiveSetMode = ActiveSetMode.FIRST_K
    profile: Profile = Profile()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("least_favorable", "extended"):
            raise ConfigError(f"unknown signal kind {self.kind!r}", field="signal.kind")

    def solution(self, cfg):
        return solve_extremal(ExtremalParams(cfg.r, cfg.eps, cfg.tau))

    def build(self, cfg, sol=None):
        sol = sol or self.solution(cfg)
        xi = make_active_set(cfg.d, cfg.b, self.active, self.seed)
        if self.kind == "least_favorable":
            return least_favorable_signal(cfg, sol, xi, self.sign_mode, self.seed)
        return extended_signal(cfg, sol, xi, self.profile, self.seed)


# replication engine ----------------------------------------------------------

def _count(decide, n, threads):
    """Number of replications 0..n-1 for which ``decide(rep)`` is true."""
    if threads <= 1:
        return sum(bool(decide(rep)) for rep in range(n))
    chunks = [range(i, n, threads) for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda reps: sum(bool(decide(rep)) for rep in reps), chunks)
        return int(sum(parts))


def _check_n(n):
    if int(n) != n or n < 100:
        raise DomainError(f"need at least 100 replications, got {n}")


def _point_stream(*values):
    """Stream id derived from the sweep coordinates, independent of grid order."""
    key = ",".join(repr(float(v)) for v in values).encode()
    return 1 + (zlib.crc32(key) & 0x7FFFFFFF)


def estimate_type1(test_spec, cfg, n, seed, threads=1):
    """Rejection frequency over n null replications."""
    _check_n(n)
    null = null_signal(cfg)

    def decide(rep):
        return test_spec(synthesize(null, cfg, seed, rep, NULL_STREAM)).reject

    return ErrorEstimate.from_count(_count(decide, n, threads), n, seed)


def estimate_type2(test_spec, signal_spec, cfg, n, seed, threads=1, stream=1, signal=None):
    """Non-rejection frequency over n replications of the planted alternative."""
    _check_n(n)
    signal = signal or signal_spec.build(cfg)

    def decide(rep):
        return not test_spec(synthesize(signal, cfg, seed, rep, stream)).reject

    return ErrorEstimate.from_count(_count(decide, n, threads), n, seed)


def _row(axes, r, omega, beta, n, seed, status="ok"):
    row = dict(axes)
    row.update(
        r=r,
        omega=omega.p_hat if omega else math.nan,
        se_omega=omega.se if omega else math.nan,
        beta=beta.p_hat if beta else math.nan,
        se_beta=beta.se if beta else math.nan,
        gamma=(omega.p_hat + beta.p_hat) if (omega and beta) else math.nan,
        n=n,
        seed=seed,
        status=status,
    )
    return row


def power_curve(test_spec, cfg, ratios, n, seed, signal_spec=SignalSpec(), threads=1, r_star=None):
    """Error triplets for alternatives planted at r = rho r*(b), rho in ``ratios``.

    The test keeps its own weights, which do not depend on rho.  A ratio at
    which the class is empty is recorded with its error and skipped.
    """
    ratios = [float(x) for x in ratios]
    if ratios != sorted(ratios):
        raise DomainError("ratios must be sorted ascending")
    started = time.time()
    r_star = r_star if r_star is not None else separation_rate(cfg.d, cfg.b, cfg.eps, cfg.tau)
    plants = []
    kmax = max(cfg.kmax, test_spec.kmax)
    for rho in ratios:
        r = rho * r_star
        try:
            sol = solve_extremal(ExtremalParams(r, cfg.eps, cfg.tau))
            plants.append((rho, r, sol, None))
            kmax = max(kmax, sol.kmax)
        except SparseDetectError as exc:
            plants.append((rho, r, None, f"error: {exc}"))
    # larger kmax only appends noise columns, so one null estimate serves all points
    omega = estimate_type1(test_spec, cfg.replace(kmax=kmax), n, seed, threads) if ratios else None
    rows = []
    for rho, r, sol, err in plants:
        if err:
            rows.append(_row({"ratio": rho}, r, omega, None, n, seed, status=err))
            continue
        pcfg = cfg.replace(r=r, kmax=kmax)
        beta = estimate_type2(test_spec, signal_spec, pcfg, n, seed, threads,
                              stream=_point_stream(rho), signal=signal_spec.build(pcfg, sol))
        rows.append(_row({"ratio": rho}, r, omega, beta, n, seed))
    return SweepResult("power", ("ratio",), rows, {"problem": cfg.to_dict(), "r_star": r_star},
                       {"wall_seconds": time.time() - started})


def boundary_scan(cfg_base, b_values, c_values, n, seed, tc=TestConfig(), signal_spec=SignalSpec(),
                  threads=1, test_spec=None, c_relative=False):
    """Empirical phase diagram of the HC test.

    For every (b, c) the radius is chosen so that the exact a(r) equals
    c T_d, least-favorable (or extended) signals are planted, and the
    error triplet of the HC test is recorded.  The HC weights do not
    depend on b, so one null estimate serves every point.  With
    ``c_relative`` the c values are multiples of phi(b).
    """
    if not b_values or not c_values:
        raise DomainError("boundary scan needs nonempty b and c grids")
    started = time.time()
    test_spec = test_spec or hc_spec(cfg_base, tc)
    td = T_d(cfg_base.d)
    plants = []
    kmax = max(cfg_base.kmax, test_spec.kmax)
    for b in b_values:
        for c in c_values:
            phi = _phi(b)
            c_abs = float(c) * phi if c_relative else float(c)
            axes = {"b": float(b), "c": c_abs, "c_over_phi": c_abs / phi, "a_target": c_abs * td}
            try:
                r = invert_a(c_abs * td, cfg_base.eps, cfg_base.tau)
                sol = solve_extremal(ExtremalParams(r, cfg_base.eps, cfg_base.tau))
                plants.append((axes, r, sol, None))
                kmax = max(kmax, sol.kmax)
            except SparseDetectError as exc:
                plants.append((axes, math.nan, None, f"error: {exc}"))
    null_cfg = cfg_base.replace(kmax=kmax)
    omega = estimate_type1(test_spec, null_cfg, n, seed, threads)
    rows = []
    for axes, r, sol, err in plants:
        if err:
            rows.append(_row(axes, r, omega, None, n, seed, status=err))
            continue
        pcfg = cfg_base.replace(b=axes["b"], r=r, kmax=kmax)
        beta = estimate_type2(test_spec, signal_spec, pcfg, n, seed, threads,
                              stream=_point_stream(axes["b"], axes["c"]), signal=signal_spec.build(pcfg, sol))
        rows.append(_row(axes, r, omega, beta, n, seed))
    return SweepResult("boundary", ("b", "c", "c_over_phi", "a_target"), rows,
                       {"problem": cfg_base.to_dict(), "test": tc.to_dict()},
                       {"wall_seconds": time.time() - started})


def alpha_sweep(cfg, alphas, n, seed, threads=1, r_weights=None):
    """Type I error of the chi-square test at each level, from shared null data."""
    alphas = [float(a) for a in alphas]
    _check_n(n)
    started = time.time()
    spec = chi2_spec(cfg, 0.5, r_weights)
    pcfg = cfg.replace(kmax=max(cfg.kmax, spec.kmax))
    null = null_signal(pcfg)
    stats = np.array([
        chi2_test(synthesize(null, pcfg, seed, rep, NULL_STREAM), spec.solution.weights, 0.5).statistic
        for rep in range(n)
    ])
    from .stats import normal_isf

    rows = []
    for a in alphas:
        count = int(np.count_nonzero(stats > float(normal_isf(a))))
        omega = ErrorEstimate.from_count(count, n, seed)
        rows.append(_row({"alpha": a}, spec.solution.params.r, omega, None, n, seed))
    return SweepResult("alpha", ("alpha",), rows, {"problem": cfg.to_dict()},
                       {"wall_seconds": time.time() - started})


# lower bound diagnostic ---------------------------------------------------------

@dataclass(frozen=True)
class LowerBoundReport:
    A: float
    a_squared: float
    p_d: float
    bound: float
    exact: float
    mc_estimate: float
    mc_se: float
    mc_n: int
    verdict: str


def lower_bound_diagnostic(cfg, sol, mc_n=0, seed=0, chunk=100):
    """Second-moment bound for the least-favorable prior.

    With z_k = theta*_k / eps, E0 L_j^2 = prod_k cosh(z_k^2) <= exp(A),
    A = sum_k 2 sinh^2(z_k^2 / 2).  The prior activates each component with
    probability p_d = d^-b (1 + (log d)^-1/2), so
    E0 L^2 - 1 = (1 + p_d^2 (prod cosh - 1))^d - 1 <= exp(B) - 1 with
    B = d p_d^2 (exp(A) - 1).  ``bound`` reports B.  With ``mc_n`` > 0
    the second moment is also estimated from null data.
    """
    z = np.asarray(sol.theta_star, dtype=float) / cfg.eps
    with np.errstate(over="ignore"):
        A = float(np.sum(2.0 * np.sinh(z**2 / 2.0) ** 2))
    d = cfg.d
    p = d ** (-cfg.b) * (1.0 + math.log(d) ** -0.5)
    try:
        bound = d * p**2 * math.expm1(A)
        log_cosh = float(np.sum(np.logaddexp(z**2, -z**2) - math.log(2.0)))
        exact = math.expm1(d * math.log1p(p**2 * math.expm1(log_cosh)))
    except OverflowError:
        return LowerBoundReport(A, sol.a**2, p, math.inf, math.inf, math.nan, math.nan, 0, "INCONCLUSIVE")
    if not math.isfinite(bound):
        return LowerBoundReport(A, sol.a**2, p, math.inf, exact, math.nan, math.nan, 0, "INCONCLUSIVE")
    verdict = "NONDISTINGUISHABLE-CERTIFIED" if bound <= 0.01 else "NOT-CERTIFIED"
    mc, se = math.nan, math.nan
    if mc_n:
        rng = noise_rng(seed, 0, 0x10B)
        zz = z[z != 0]
        ratio_sq = np.empty(mc_n)
        for start in range(0, mc_n, chunk):
            size = min(chunk, mc_n - start)
            y = rng.standard_normal((size, d, zz.size))
            # log L_j = sum_k (-z^2/2 + log cosh(z y))
            log_lj = np.sum(np.logaddexp(zz * y, -zz * y) - math.log(2.0) - zz**2 / 2.0, axis=2)
            log_mix = np.log1p(p * np.expm1(log_lj))
            ratio_sq[start:start + size] = np.exp(2.0 * np.sum(log_mix, axis=1))
        mc = float(ratio_sq.mean() - 1.0)
        se = float(ratio_sq.std(ddof=1) / math.sqrt(mc_n))
    return LowerBoundReport(A, sol.a**2, p, bound, exact, mc, se, mc_n, verdict)


@dataclass(frozen=True)
class TechMinReport:
    conditions_ok: bool
    R_upper: float
    argmin: float
    grid_step: float
    F: float
    passed: bool
    message: str = ""


def techmin_check(T, eta0, R, K, grid_n):
    """Grid check that g(eta) = f_T(eta) - lambda eta is minimized at eta0 on [0, R].

    f_T(eta) = exp(-(T - eta)^2 / 2), lambda = (T - eta0) f_T(eta0).  The
    conditions are 0 < eta0 < T - 1 and
    T < R < T + ((T - eta0)^2 - 2 log(1 + 2 (T - eta0)^2))^(1/2).
    When they fail a precondition report is returned.
    """
    if grid_n < 10_000:
        raise DomainError("grid_n must be at least 1e4")
    K = int(K)
    f = lambda eta: np.exp(-((T - eta) ** 2) / 2.0)  # noqa: E731
    F = K * float(f(eta0))
    disc = (T - eta0) ** 2 - 2.0 * math.log1p(2.0 * (T - eta0) ** 2)
    r_upper = T + math.sqrt(disc) if disc > 0 else T
    ok = 0 < eta0 < T - 1 and T < R < r_upper
    if not ok:
        return TechMinReport(False, r_upper, math.nan, R / (grid_n - 1), F, False,
                             "precondition violated: need 0 < eta0 < T-1 and T < R < R_upper")
    lam = (T - eta0) * float(f(eta0))
    eta = np.linspace(0.0, R, grid_n)
    g = f(eta) - lam * eta
    step = R / (grid_n - 1)
    arg = float(eta[np.argmin(g)])
    passed = abs(arg - eta0) <= step
    return TechMinReport(True, r_upper, arg, step, F, passed)


# output ------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def sweep_csv_text(result):
    """CSV text with a fixed column order and shortest round-trip floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = result.columns
    w.writerow(cols)
    for row in result.rows:
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def write_sweep_csv(result, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(sweep_csv_text(result))


MANIFEST_VERSION = 1


def write_manifest(path, command, config, seed, data_file, started, finished, extra=None):
    """Run manifest as JSON; ``data_file`` is the one CSV it describes."""
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "software": "sparsedetect",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": command,
        "seed": seed,
        "config": config,
        "data_file": os.path.basename(data_file),
        "started": started,
        "finished": finished,
    }
    manifest.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
