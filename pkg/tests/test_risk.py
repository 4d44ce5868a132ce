"""MISE, Monte-Carlo risk, closed-form rates and rate fitting."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compound_minimax.aggregation import Candidate, CandidateSpace
from compound_minimax.basis import CoefficientMap, grid_sq_norm
from compound_minimax.compound import SobolevBall, compose, make_structure, power_law_atom
from compound_minimax.errors import DomainError, ParameterError
from compound_minimax.risk import (
    AggregateEstimator,
    Lemma1Estimator,
    ProjectionEstimator,
    RiskReport,
    active_branch,
    benchmark,
    mc_risk,
    mise,
    rate_exponent,
    rate_fit,
    theorem1_preconditions,
    theorem2_bound,
    theoretical_rate,
    write_plot_data,
    write_reports_csv,
)


class TestMise:
    def test_identity(self):
        f = CoefficientMap(2, {(1, 0): 0.3})
        assert mise(f, f, 0.0) == 0.0

    def test_single_term(self):
        assert mise(CoefficientMap(2), CoefficientMap(2, {(1, 0): 0.5})) == pytest.approx(0.25)

    def test_tail_added(self):
        assert mise(CoefficientMap(1), CoefficientMap(1), 0.125) == 0.125

    def test_quadrature_cross_check(self):
        a = CoefficientMap(2, {(0, 0): 0.2, (1, 0): 0.5, (-2, 1): 0.3, (0, 3): -0.4, (1, 1): 0.1})
        b = CoefficientMap(2, {(0, 0): -0.1, (1, 0): 0.4, (2, 2): 0.3, (0, -1): 0.2, (1, 1): 0.6})
        assert grid_sq_norm(a - b) == pytest.approx(mise(a, b), rel=1e-3)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=8))
    def test_metric_squared(self, rows):
        f, g, h = (CoefficientMap(1, {(k,): r[i] for k, r in enumerate(rows)}) for i in range(3))
        assert mise(f, g) == pytest.approx(mise(g, f))
        assert mise(f, g) >= 0.0
        # parallelogram: |f-g|^2 + |f+g-2h|^2 = 2|f-h|^2 + 2|g-h|^2
        lhs = mise(f, g) + mise(f + g, h.scaled(2.0))
        rhs = 2 * mise(f, h) + 2 * mise(g, h)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestMcRisk:
    def test_zero_function_constant_estimator(self):
        rep = mc_risk(CoefficientMap(2), ProjectionEstimator(Candidate()), 0.2, 400, seed=1, cutoff=2)
        assert abs(rep.mean_mise - 0.04) <= 3 * rep.stderr

    def test_reproducible(self):
        f = CoefficientMap(2, {(1, 0): 0.5})
        a = mc_risk(f, ProjectionEstimator(Candidate(((1,),), (1,))), 0.2, 50, seed=3, cutoff=2)
        b = mc_risk(f, ProjectionEstimator(Candidate(((1,),), (1,))), 0.2, 50, seed=3, cutoff=2)
        assert a.mean_mise == b.mean_mise and a.stderr == b.stderr

    def test_threads_match_serial(self):
        f = CoefficientMap(2, {(1, 0): 0.5})
        est = ProjectionEstimator(Candidate(((1,),), (2,)))
        a = mc_risk(f, est, 0.2, 40, seed=3, cutoff=2)
        b = mc_risk(f, est, 0.2, 40, seed=3, cutoff=2, threads=2)
        assert a.mean_mise == b.mean_mise

    def test_stderr_scaling(self):
        est = ProjectionEstimator(Candidate(((1,),), (2,)))
        f = CoefficientMap(1, {(1,): 0.5})
        small = mc_risk(f, est, 0.3, 400, seed=5, cutoff=2)
        big = mc_risk(f, est, 0.3, 800, seed=6, cutoff=2)
        assert 0.35 <= big.stderr**2 / small.stderr**2 <= 0.7

    def test_tail_charged(self):
        f = CoefficientMap(1, {(5,): 0.5})
        rep = mc_risk(f, ProjectionEstimator(Candidate()), 0.1, 10, seed=0, cutoff=2)
        assert rep.tail_energy == pytest.approx(0.25)
        assert rep.mean_mise >= 0.25


class TestRates:
    def test_rate_hand_value(self):
        assert theoretical_rate(1.0, 1.0, 0.1, 1, 1, 10) == pytest.approx(0.1 ** (4 / 3), rel=1e-12)
        assert theoretical_rate(1.0, 1.0, 0.1, 1, 1, 10) == pytest.approx(0.04642, abs=1e-5)

    def test_structural_branch(self):
        eps, d = 0.1, 10**6
        assert theoretical_rate(1.0, 1.0, eps, 1, 1, d) == pytest.approx(eps**2 * math.log(d))
        assert active_branch(1.0, 1.0, eps, 1, 1, d) == "structural"

    def test_clamp(self):
        assert theoretical_rate(1.0, 1e-4, 0.5, 1, 1, 10) == 1e-4
        assert active_branch(1.0, 1e-4, 0.5, 1, 1, 10) == "trivial"

    def test_exponent(self):
        assert rate_exponent(2.0, 1) == pytest.approx(1.6)

    def test_log_clamped_with_warning(self):
        with pytest.warns(RuntimeWarning):
            v = theoretical_rate(1.0, 1.0, 0.1, 2, 2, 2)
        # structural term clamped to 0, so the nonparametric term 2 * 0.1 is the value
        assert v == pytest.approx(0.2)

    def test_single_atom_form(self):
        # m = s = 1: max{L^{1/(2b+1)} eps^{4b/(2b+1)}, eps^2 log d}
        for beta, L, eps, d in [(1.0, 2.0, 0.05, 5), (2.5, 0.3, 0.2, 40)]:
            expect = min(max(L ** (1 / (2 * beta + 1)) * eps ** (4 * beta / (2 * beta + 1)),
                             eps**2 * math.log(d)), L)
            assert theoretical_rate(beta, L, eps, 1, 1, d) == pytest.approx(expect, rel=1e-14)


class TestStructuralBound:
    def test_hand_value(self):
        expected = 0.01 * (9 + 4 * math.log(200) + 8 * math.log(2 * math.e**3 * 10 / 2))
        assert theorem2_bound(1, 2, 1, 10, 0.1) == pytest.approx(expected, rel=1e-12)
        assert theorem2_bound(1, 2, 1, 10, 0.1) == pytest.approx(0.7261, abs=1e-4)

    def test_zero_structure(self):
        assert theorem2_bound(1, 2, 0, 10, 0.1) == 0.0

    def test_precondition(self):
        with pytest.raises(ParameterError, match="k < eps"):
            theorem2_bound(100, 1, 1, 10, 0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 8), st.integers(1, 4), st.integers(1, 4), st.floats(0.05, 0.3))
    def test_monotone(self, k, s, m, eps):
        d = 1000
        if k + 1 >= eps**-2:
            return
        base = theorem2_bound(k, s, m, d, eps)
        assert theorem2_bound(k + 1, s, m, d, eps) >= base
        assert theorem2_bound(k, s + 1, m, d, eps) >= base
        assert theorem2_bound(k, s, m + 1, d, eps) >= base

    def test_rate_preconditions(self):
        assert theorem1_preconditions(2.0, 100.0, 0.1, 1) == []
        bad = theorem1_preconditions(2.0, 1e-3, 0.1, 1)
        assert bad == ["L > eps^2 log(e eps^-2)^((2 beta + s)/s)"]


def _reports(eps, risk, branch="nonparametric"):
    return [RiskReport(e, 10, r, 0.0, 0.0, branch) for e, r in zip(eps, risk)]


class TestRateFit:
    def test_exact_power(self):
        eps = [0.3, 0.2, 0.15, 0.1, 0.07]
        fit = rate_fit(_reports(eps, [e**1.6 for e in eps]), 1.6)
        assert abs(fit.slope - 1.6) <= 1e-10
        assert fit.deviation() <= 1e-10

    def test_parametric(self):
        eps = [0.5, 0.1, 0.05, 0.01]
        fit = rate_fit(_reports(eps, [3 * e**2 for e in eps]))
        assert fit.slope == pytest.approx(2.0)

    def test_nonpositive(self):
        with pytest.raises(DomainError):
            rate_fit(_reports([0.3, 0.2, 0.1, 0.05], [1, 0, 1, 1]))

    def test_too_few(self):
        with pytest.raises(DomainError):
            rate_fit(_reports([0.3, 0.2, 0.1], [1, 1, 1]))

    def test_branch_change(self):
        reps = _reports([0.3, 0.2, 0.1, 0.05], [1, 0.5, 0.2, 0.1])
        reps[0].active_branch = "structural"
        with pytest.raises(DomainError, match="branch"):
            rate_fit(reps)


class TestBenchmark:
    def _model(self):
        s = make_structure(3, 1, [(1,)])
        return compose(0.0, s, [power_law_atom(SobolevBall(3, (1,), 2.0, 1.0), 10, 2.5)], (2.0, 1.0))

    def test_outputs(self, tmp_path):
        f = self._model()
        reps = benchmark(f, Lemma1Estimator(f.structure, 2.0, 1.0), [0.3, 0.2, 0.1, 0.05], 20, 1,
                         lambda e: 10, 2.0, 1.0, 1, 1, max_support=1)
        assert [r.active_branch for r in reps] == ["nonparametric"] * 4
        write_reports_csv(reps, tmp_path / "r.csv")
        write_plot_data(reps, tmp_path / "p.dat")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "epsilon,replicates,mean_mise,stderr,tail_energy,active_branch,theoretical_rate"
        assert len(lines) == 5
        data = np.loadtxt(tmp_path / "p.dat")
        np.testing.assert_allclose(data[:, 0], np.log([0.3, 0.2, 0.1, 0.05]))

    def test_aggregate_estimator(self):
        f = self._model()
        rep = mc_risk(f, AggregateEstimator(CandidateSpace(3, 1, 4, m_max=1)), 0.2, 10, seed=2,
                      cutoff=4, max_support=1)
        assert 0 < rep.mean_mise < f.coefficients.sq_norm() + 1
