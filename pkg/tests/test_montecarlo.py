import json
import math

import numpy as np
import pytest

from sparsedetect.errors import DomainError
from sparsedetect.extremal import ExtremalParams, separation_rate, solve_extremal
from sparsedetect.model import ProblemConfig
from sparsedetect.montecarlo import (
    ErrorEstimate,
    NeverReject,
    SignalSpec,
    alpha_sweep,
    boundary_scan,
    chi2_spec,
    estimate_type1,
    estimate_type2,
    lower_bound_diagnostic,
    power_curve,
    sweep_csv_text,
    techmin_check,
    write_manifest,
)


@pytest.fixture(scope="module")
def moderate():
    cfg = ProblemConfig(d=4096, b=0.3, eps=0.05, tau=1.0, r=0.0, kmax=1)
    spec = chi2_spec(cfg, 0.05)
    return cfg.replace(kmax=spec.kmax), spec


class TestErrorEstimate:
    @pytest.mark.parametrize("count, n", [(0, 100), (7, 100), (50, 100), (333, 1000), (100, 100)])
    def test_se_identity(self, count, n):
        e = ErrorEstimate.from_count(count, n, seed=0)
        assert abs(e.se**2 * n - e.p_hat * (1 - e.p_hat)) <= 1e-12

    def test_needs_n(self):
        with pytest.raises(DomainError):
            ErrorEstimate.from_count(0, 0, 0)


class TestEstimates:
    def test_never_reject(self, moderate):
        cfg, _ = moderate
        e = estimate_type1(NeverReject(), cfg, 100, seed=1)
        assert e.p_hat == 0.0 and e.se == 0.0

    def test_needs_100(self, moderate):
        cfg, spec = moderate
        with pytest.raises(DomainError):
            estimate_type1(spec, cfg, 99, seed=1)

    def test_deterministic(self, moderate):
        cfg, spec = moderate
        a = estimate_type1(spec, cfg, 200, seed=3)
        b = estimate_type1(spec, cfg, 200, seed=3, threads=4)
        assert a == b

    @pytest.mark.slow
    def test_chi2_level(self, moderate):
        cfg, spec = moderate
        e = estimate_type1(spec, cfg, 10**4, seed=4)
        print(f"chi2 type I {e.p_hat:.4f} +- {e.se:.4f}")
        assert abs(e.p_hat - 0.05) <= 3 * e.se

    def test_noiseless_planted(self):
        # eps tiny relative to r: t_b is deterministic and enormous
        r, eps = 0.05, 1e-6
        sol = solve_extremal(ExtremalParams(r, eps, 1.0))
        cfg = ProblemConfig(d=256, b=0.3, eps=eps, tau=1.0, r=r, kmax=sol.kmax)
        spec = chi2_spec(cfg, 0.05, r_weights=r)
        e = estimate_type2(spec, SignalSpec(), cfg, 100, seed=5, signal=SignalSpec().build(cfg, sol))
        assert e.p_hat == 0.0


class TestPowerCurve:
    def test_empty(self, moderate):
        cfg, spec = moderate
        res = power_curve(spec, cfg, [], 100, seed=0)
        assert res.rows == []
        assert sweep_csv_text(res).splitlines()[0].startswith("ratio,r,omega")

    def test_unsorted(self, moderate):
        cfg, spec = moderate
        with pytest.raises(DomainError):
            power_curve(spec, cfg, [2.0, 1.0], 100, seed=0)

    def test_monotone_and_contrast(self, moderate):
        cfg, spec = moderate
        ratios = [0.25, 0.5, 1.0, 2.0, 3.0]
        res = power_curve(spec, cfg, ratios, 200, seed=6)
        beta = [row["beta"] for row in res.rows]
        se = [row["se_beta"] for row in res.rows]
        for i in range(len(beta) - 1):
            assert beta[i + 1] <= beta[i] + 3 * math.hypot(se[i], se[i + 1])
        assert beta[-1] < beta[0] - 0.5
        for row in res.rows:
            assert row["gamma"] == row["omega"] + row["beta"]
            assert row["status"] == "ok"

    def test_infeasible_point_recorded(self, moderate):
        cfg, spec = moderate
        res = power_curve(spec, cfg, [1.0, 4.0], 100, seed=7)
        assert res.rows[0]["status"] == "ok"
        assert res.rows[1]["status"].startswith("error: infeasible")
        assert math.isnan(res.rows[1]["beta"])


class TestBoundaryScan:
    def test_order_invariant(self):
        cfg = ProblemConfig(d=1000, b=0.8, eps=0.01, tau=1.0, r=0.0, kmax=1)
        spec = chi2_spec(cfg, 0.05, r_weights=0.05)
        a = boundary_scan(cfg, [0.7, 0.9], [1.0, 2.0], 100, seed=8, test_spec=spec)
        b = boundary_scan(cfg, [0.9, 0.7], [2.0, 1.0], 100, seed=8, test_spec=spec)
        key = lambda row: (row["b"], row["c"])  # noqa: E731
        assert sorted(a.rows, key=key) == sorted(b.rows, key=key)

    def test_empty_grid(self):
        cfg = ProblemConfig(d=1000, b=0.8, eps=0.01, tau=1.0, r=0.0, kmax=1)
        with pytest.raises(DomainError):
            boundary_scan(cfg, [], [1.0], 100, seed=0, test_spec=NeverReject())


class TestAlphaSweep:
    def test_nested_levels(self):
        cfg = ProblemConfig(d=256, b=0.3, eps=0.05, tau=1.0, r=0.0, kmax=1)
        res = alpha_sweep(cfg, [0.01, 0.05, 0.5], 400, seed=9)
        omega = [row["omega"] for row in res.rows]
        assert omega == sorted(omega)
        assert abs(omega[2] - 0.5) <= 3 * math.sqrt(0.25 / 400)


class TestLowerBound:
    def test_zero_signal(self):
        cfg = ProblemConfig(d=256, b=0.3, eps=1.0, tau=1.0, r=0.0, kmax=3)

        class Zero:
            theta_star = np.zeros(6)
            a = 0.0

        rep = lower_bound_diagnostic(cfg, Zero())
        assert rep.A == 0.0 and rep.bound == 0.0
        assert rep.verdict == "NONDISTINGUISHABLE-CERTIFIED"

    def test_taylor_regime(self):
        sol = solve_extremal(ExtremalParams(0.01, 0.05, 1.0))
        z2 = (sol.theta_star / 0.05) ** 2
        assert z2.max() <= 0.01
        cfg = ProblemConfig(d=256, b=0.3, eps=0.05, tau=1.0, r=0.01, kmax=sol.kmax)
        rep = lower_bound_diagnostic(cfg, sol)
        assert abs(rep.A / rep.a_squared - 1) <= 0.02

    def test_exact_below_bound(self):
        r = separation_rate(256, 0.3, 0.05, 1.0) / 8
        sol = solve_extremal(ExtremalParams(r, 0.05, 1.0))
        cfg = ProblemConfig(d=256, b=0.3, eps=0.05, tau=1.0, r=r, kmax=sol.kmax)
        rep = lower_bound_diagnostic(cfg, sol)
        assert rep.exact <= math.expm1(rep.bound)

    def test_inconclusive(self):
        sol = solve_extremal(ExtremalParams(0.1, 1e-3, 1.0))
        cfg = ProblemConfig(d=256, b=0.3, eps=1e-3, tau=1.0, r=0.1, kmax=sol.kmax)
        assert lower_bound_diagnostic(cfg, sol).verdict == "INCONCLUSIVE"


class TestTechMin:
    def test_reference_point(self):
        rep = techmin_check(10.0, 5.0, 12.0, 1, 10**5)
        assert rep.conditions_ok and rep.passed
        assert abs(rep.argmin - 5.0) <= rep.grid_step
        assert rep.F == pytest.approx(math.exp(-12.5), rel=1e-14)
        assert rep.R_upper == pytest.approx(10 + math.sqrt(25 - 2 * math.log(51)), rel=1e-14)

    def test_precondition(self):
        rep = techmin_check(10.0, 9.5, 12.0, 1, 10**5)
        assert not rep.conditions_ok and "precondition" in rep.message

    def test_linear_in_K(self):
        assert techmin_check(10.0, 5.0, 12.0, 7, 10**4).F == 7 * techmin_check(10.0, 5.0, 12.0, 1, 10**4).F

    def test_grid_floor(self):
        with pytest.raises(DomainError):
            techmin_check(10.0, 5.0, 12.0, 1, 100)


class TestOutput:
    def test_csv_roundtrip_floats(self, moderate):
        cfg, spec = moderate
        res = power_curve(spec, cfg, [1.0], 100, seed=10)
        line = sweep_csv_text(res).splitlines()[1].split(",")
        assert float(line[1]) == res.rows[0]["r"]

    def test_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        write_manifest(path, "sweep power", {"x": 1}, 5, str(tmp_path / "power.csv"), "t0", "t1")
        data = json.loads(path.read_text())
        assert data["manifest_version"] == 1
        assert data["data_file"] == "power.csv" and data["seed"] == 5
