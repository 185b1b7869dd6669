"""Sparse additive signals in coefficient space and their noisy observations.

Observations follow x_{j,k} = xi_j theta_{j,k} + eps eta_{j,k} for
components j = 1..d and frequencies k in ``k_axis(kmax)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError
from .extremal import k_axis, pad_symmetric, sobolev_alpha

__all__ = [
    "ActiveSetMode",
    "SignMode",
    "ClassTag",
    "Profile",
    "ProblemConfig",
    "SparseSignal",
    "ObservationMatrix",
    "sparsity_count",
    "make_active_set",
    "least_favorable_signal",
    "extended_signal",
    "null_signal",
    "synthesize",
    "noise_rng",
    "write_csv",
    "read_csv",
]

CLASS_TOL_SOBOLEV = 1e-6
CLASS_TOL_L2 = 1e-9


class ActiveSetMode(str, Enum):
    FIRST_K = "first_k"
    RANDOM = "random"


class SignMode(str, Enum):
    PLUS = "plus"
    RADEMACHER = "rademacher"


class ClassTag(str, Enum):
    COMPONENTWISE = "componentwise"
    EXTENDED = "extended"


@dataclass(frozen=True)
class Profile:
    """Amplitude profile for extended alternatives; ratio 1 is uniform."""

    ratio: float = 1.0

    @classmethod
    def uniform(cls):
        return cls(1.0)

    @classmethod
    def lopsided(cls, ratio):
        return cls(float(ratio))


def sparsity_count(d, b):
    """Number of active components K = floor(d^(1-b))."""
    if not (0 < b < 1):
        raise DomainError(f"b must lie in (0, 1), got {b}")
    # the small offset guards exact powers such as 16^0.5 against rounding down
    return int(math.floor(d ** (1.0 - b) * (1 + 1e-12)))


@dataclass(frozen=True)
class ProblemConfig:
    """Everything a run needs: d, b, eps, tau, r and the truncation kmax."""

    d: int
    b: float
    eps: float
    tau: float
    r: float
    kmax: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}", field="d")
        if not (0 < self.b < 1):
            raise ConfigError(f"b must lie in (0, 1), got {self.b}", field="b")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}", field="eps")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}", field="tau")
        if not self.r >= 0:
            raise ConfigError(f"r must be nonnegative, got {self.r}", field="r")
        if int(self.kmax) != self.kmax or self.kmax < 1:
            raise ConfigError(f"kmax must be a positive integer, got {self.kmax}", field="kmax")
        if self.K < 1:
            raise ConfigError(f"K = floor(d^(1-b)) is 0 for d={self.d}, b={self.b}", field="b")

    @property
    def K(self):
        return sparsity_count(self.d, self.b)

    @property
    def k(self):
        return k_axis(self.kmax)

    def replace(self, **changes):
        fields = {f: getattr(self, f) for f in ("d", "b", "eps", "tau", "r", "kmax")}
        fields.update(changes)
        return ProblemConfig(**fields)

    def to_dict(self):
        return {"d": self.d, "b": self.b, "eps": self.eps, "tau": self.tau, "r": self.r, "kmax": self.kmax}


@dataclass(frozen=True)
class SparseSignal:
    """Active-set indicator ``xi`` and one coefficient row per active component.

    ``theta`` has shape (K, 2 kmax) with rows ordered like the active
    indices ``np.flatnonzero(xi)``.  Class membership is verified on
    construction.
    """

    xi: np.ndarray
    theta: np.ndarray
    class_tag: ClassTag
    tau: float
    r: float

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.int8)
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "theta", theta)
        xi.setflags(write=False)
        theta.setflags(write=False)
        if theta.shape[0] != int(xi.sum()):
            raise ConfigError(f"{theta.shape[0]} coefficient rows for {int(xi.sum())} active components")
        self._check_class()

    @property
    def kmax(self):
        return self.theta.shape[1] // 2

    @property
    def active(self):
        return np.flatnonzero(self.xi)

    def sobolev(self):
        """Per-component Sobolev energy."""
        return (self.theta**2) @ sobolev_alpha(k_axis(self.kmax), self.tau)

    def l2_sq(self):
        return np.sum(self.theta**2, axis=1)

    def _check_class(self):
        if self.theta.shape[0] == 0 or self.r == 0:
            return
        sob, l2 = self.sobolev(), self.l2_sq()
        K = self.theta.shape[0]
        if self.class_tag == ClassTag.COMPONENTWISE:
            if np.any(sob > 1 + CLASS_TOL_SOBOLEV):
                raise DomainError(f"component Sobolev energy {sob.max():.9g} exceeds 1")
            if np.any(l2 < self.r**2 - CLASS_TOL_L2):
                raise DomainError(f"component L2 mass {l2.min():.9g} below r^2={self.r**2:.9g}")
        else:
            if sob.sum() > K + CLASS_TOL_SOBOLEV:
                raise DomainError(f"aggregate Sobolev energy {sob.sum():.9g} exceeds K={K}")
            if l2.sum() < K * self.r**2 - CLASS_TOL_L2:
                raise DomainError(f"aggregate L2 mass {l2.sum():.9g} below K r^2")

    def dense(self, kmax=None):
        """Full d x 2 kmax coefficient matrix with zero rows for inactive components."""
        kmax = kmax or self.kmax
        out = np.zeros((self.xi.size, 2 * kmax))
        rows = self.theta if kmax == self.kmax else np.array([pad_symmetric(t, kmax) for t in self.theta])
        out[self.active] = rows.reshape(-1, 2 * kmax)
        return out


@dataclass(frozen=True)
class ObservationMatrix:
    """Noisy coefficients x, shape (d, 2 kmax), with columns ``k_axis(kmax)``."""

    x: np.ndarray
    config: ProblemConfig
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.shape != (self.config.d, 2 * self.config.kmax):
            raise ConfigError(
                f"observation shape {x.shape} does not match d={self.config.d}, kmax={self.config.kmax}"
            )
        object.__setattr__(self, "x", x)
        x.setflags(write=False)


def make_active_set(d, b, mode=ActiveSetMode.FIRST_K, seed=0):
    """Binary vector with exactly K = floor(d^(1-b)) ones."""
    if int(d) != d or d < 1:
        raise DomainError(f"d must be a positive integer, got {d}")
    K = sparsity_count(d, b)
    if K < 1:
        raise DomainError(f"K = floor(d^(1-b)) is 0 for d={d}, b={b}")
    xi = np.zeros(d, dtype=np.int8)
    mode = ActiveSetMode(mode)
    if mode == ActiveSetMode.FIRST_K:
        xi[:K] = 1
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA5]))
        xi[rng.choice(d, size=K, replace=False)] = 1
    return xi


def _check_solution(cfg, sol):
    p = sol.params
    if not (math.isclose(p.r, cfg.r, rel_tol=1e-12) and p.eps == cfg.eps and p.tau == cfg.tau):
        raise ConfigError(
            f"solution solved at (r={p.r}, eps={p.eps}, tau={p.tau}) but config has "
            f"(r={cfg.r}, eps={cfg.eps}, tau={cfg.tau})"
        )
    if sol.kmax > cfg.kmax:
        raise ConfigError(f"config kmax={cfg.kmax} is below solution kmax={sol.kmax}", field="kmax")


def _check_xi(cfg, xi):
    xi = np.asarray(xi)
    if xi.shape != (cfg.d,) or int(xi.sum()) != cfg.K or not np.all((xi == 0) | (xi == 1)):
        raise ConfigError(f"xi must be a 0/1 vector of length {cfg.d} with {cfg.K} ones")
    return xi


def least_favorable_signal(cfg, sol, xi, sign_mode=SignMode.PLUS, seed=0):
    """Active rows s_{j,k} theta*_k with signs +1 or i.i.d. Rademacher."""
    _check_solution(cfg, sol)
    xi = _check_xi(cfg, xi)
    base = sol.theta_padded(cfg.kmax)
    K = cfg.K
    if SignMode(sign_mode) == SignMode.PLUS:
        theta = np.tile(base, (K, 1))
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5165]))
        theta = base * rng.choice([-1.0, 1.0], size=(K, base.size))
    return SparseSignal(xi, theta, ClassTag.COMPONENTWISE, cfg.tau, cfg.r)


def extended_signal(cfg, sol, xi, profile=Profile(), seed=0):
    """Alternative in the extended class built from theta*.

    Component i (in active order) gets amplitude c_i theta*, with c_i^2
    proportional to ratio^(-i/(K-1)) and sum c_i^2 = K, so both aggregate
    constraints hold exactly as they do for theta*.  The order of the
    amplitudes is a seeded random permutation.
    """
    _check_solution(cfg, sol)
    xi = _check_xi(cfg, xi)
    ratio = float(profile.ratio)
    if not np.isfinite(ratio) or ratio < 1:
        raise DomainError(f"lopsided ratio must be >= 1, got {ratio}")
    K = cfg.K
    if K == 1 or ratio == 1:
        scale = np.ones(K)
    else:
        g = ratio ** (-np.arange(K) / (K - 1))
        scale = np.sqrt(K * g / g.sum())
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE47]))
        scale = scale[rng.permutation(K)]
    if np.any(scale**2 * sol.sobolev_norm() > K + CLASS_TOL_SOBOLEV):
        raise DomainError("a single component would exceed the aggregate Sobolev budget")
    theta = scale[:, None] * sol.theta_padded(cfg.kmax)[None, :]
    tag = ClassTag.COMPONENTWISE if ratio == 1 else ClassTag.EXTENDED
    return SparseSignal(xi, theta, tag, cfg.tau, cfg.r)


def null_signal(cfg):
    """All-zero signal; K components are still marked active."""
    xi = make_active_set(cfg.d, cfg.b)
    return SparseSignal(xi, np.zeros((cfg.K, 2 * cfg.kmax)), ClassTag.COMPONENTWISE, cfg.tau, 0.0)


def noise_rng(seed, replication=0, stream=0):
    """Counter-based generator keyed by (seed, stream, replication)."""
    ss = np.random.SeedSequence([int(seed), int(stream), int(replication)])
    return np.random.Generator(np.random.Philox(ss))


def _noise(d, kmax, rng):
    # draws are ordered by |k| first, so a larger kmax only appends columns
    z = rng.standard_normal((kmax, d, 2))
    neg = z[::-1, :, 0].T
    pos = z[:, :, 1].T
    return np.concatenate([neg, pos], axis=1)


def synthesize(signal, cfg, seed, replication=0, stream=0, noise=True):
    """x = xi theta + eps eta with eta from the (seed, stream, replication) stream."""
    if signal.xi.size != cfg.d:
        raise ConfigError(f"signal has {signal.xi.size} components, config d={cfg.d}")
    if signal.kmax > cfg.kmax:
        raise ConfigError(f"signal kmax={signal.kmax} exceeds config kmax={cfg.kmax}", field="kmax")
    x = _noise(cfg.d, cfg.kmax, noise_rng(seed, replication, stream)) * cfg.eps if noise else \
        np.zeros((cfg.d, 2 * cfg.kmax))
    x[signal.active] += signal.dense(cfg.kmax)[signal.active]
    return ObservationMatrix(x, cfg, {"seed": seed, "replication": replication, "stream": stream})


def write_csv(obs, fh=None):
    """Export as CSV: header ``j,k=-kmax,...,k=kmax``, one row per component."""
    own = fh is None
    fh = fh or io.StringIO()
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["j"] + [f"k={k}" for k in k_axis(obs.config.kmax)])
    for j, row in enumerate(obs.x, start=1):
        w.writerow([j] + [repr(float(v)) for v in row])
    return fh.getvalue() if own else None


def read_csv(fh, cfg):
    """Inverse of ``write_csv``; raises ConfigError naming the bad row and column."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError("empty observation file", field="row 0") from None
    expected = ["j"] + [f"k={k}" for k in k_axis(cfg.kmax)]
    if header != expected:
        raise ConfigError(
            f"header has {len(header)} columns, expected {len(expected)} (j plus k=-{cfg.kmax}..{cfg.kmax})",
            field="row 1",
        )
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(expected):
            raise ConfigError(f"row {lineno} has {len(row)} columns, expected {len(expected)}",
                              field=f"row {lineno}")
        try:
            rows.append([float(v) for v in row[1:]])
        except ValueError:
            col = next(i for i, v in enumerate(row[1:], start=2) if not _is_float(v))
            raise ConfigError(f"row {lineno}, column {col}: not a number {row[col - 1]!r}",
                              field=f"row {lineno}, column {col}") from None
    if len(rows) != cfg.d:
        raise ConfigError(f"file has {len(rows)} component rows, expected d={cfg.d}",
                          field=f"row {len(rows) + 1}")
    return ObservationMatrix(np.array(rows), cfg, {"source": "csv"})


def _is_float(v):
    try:
        float(v)
    except ValueError:
        return False
    return True
