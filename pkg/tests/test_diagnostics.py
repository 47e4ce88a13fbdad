import logging
import math

import numpy as np
import pytest

from conftest import random_graph
from oracles import dense_spectral_gap
from riccikge.diagnostics import (CurveLog, ScalarTrace, beta_warning, bound_report, contraction_report,
                                  curvature_energy, curvature_variance, estimate_spectral_gap, export_curves,
                                  flatness_entry_time, read_curves, read_trace_csv, simulate_scalar_flow,
                                  smoothed, write_trace_csv)
from riccikge.errors import TooFewEdges
from riccikge.kg import KnowledgeGraph


def test_two_node_gap():
    g = KnowledgeGraph.from_arrays(2, 1, [(0, 0, 1)])
    assert estimate_spectral_gap(g, np.ones(1)).value == pytest.approx(2.0, abs=1e-9)


def test_four_cycle_gap_matches_dense():
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    g = KnowledgeGraph.from_arrays(4, 1, [(u, 0, v) for u, v in edges])
    gap = estimate_spectral_gap(g, np.ones(4))
    assert gap.value == pytest.approx(2.0, abs=1e-9)
    assert gap.value == pytest.approx(dense_spectral_gap(4, edges, np.ones(4)), abs=1e-9)


def test_random_weighted_gap_matches_dense():
    g = random_graph(n_entities=30, n_triples=90, seed=1)
    w = np.random.default_rng(0).uniform(0.05, 1.0, 90)
    edges = [(h, t) for h, _, t in g.triples]
    gap = estimate_spectral_gap(g, w, tol=1e-10)
    assert gap.converged and gap.connected
    assert gap.value == pytest.approx(dense_spectral_gap(30, edges, w), rel=1e-6)


def test_disconnected_graph_warns(caplog):
    g = KnowledgeGraph.from_arrays(5, 1, [(0, 0, 1), (1, 0, 2), (3, 0, 4)])
    with caplog.at_level(logging.WARNING):
        gap = estimate_spectral_gap(g, np.ones(3))
    assert not gap.connected and len(gap.per_component) == 2
    assert gap.value == pytest.approx(1.0)  # path on three nodes
    assert gap.per_component[1] == pytest.approx(2.0)
    assert "components" in caplog.text


def test_curvature_energy_examples():
    assert curvature_energy(np.zeros(4), np.ones(4)) == 0.0
    assert curvature_energy(np.array([0.5]), np.array([1.0])) == 0.25
    assert curvature_energy(np.array([0.5, np.nan]), np.array([1.0, 1.0])) == 0.25


def test_curvature_variance_examples():
    assert curvature_variance(np.full(5, 0.3)) == 0.0
    assert curvature_variance(np.array([0.0, 1.0])) == 0.25
    with pytest.raises(TooFewEdges):
        curvature_variance(np.array([0.5]))


def test_bound_examples(caplog):
    rep = bound_report(2.0, 4.0, 12.0, beta=0.0)
    assert rep.admissible
    assert rep.beta_max_theorem == pytest.approx(1.0)
    assert rep.beta_max_corollary == pytest.approx(2 * math.exp(-12))
    assert rep.beta_cap_main_text == pytest.approx(4 * math.exp(-12))
    strict = bound_report(2.0, 4.0, 12.0, beta=0.1)
    assert not strict.admissible
    with caplog.at_level(logging.WARNING):
        assert beta_warning(strict)
    assert not beta_warning(rep)
    assert rep.beta_max_corollary == pytest.approx(1.23e-5, rel=1e-2)


def test_contraction_geometric_closed_form():
    # eta = beta / (2 w); pin the weight by setting eta_max so that mu * eta = 0.5 every step
    trace = simulate_scalar_flow(3.0, np.zeros(50), beta=10.0, mu=1.0, target=1.0, eta_max=0.5)
    rep = contraction_report(trace)
    assert rep.q == 0.5 and rep.bound_satisfied
    np.testing.assert_allclose(rep.errors, 2.0 * 0.5 ** np.arange(51), rtol=0, atol=1e-15)


def test_contraction_with_injected_curvature():
    kappa = 0.5 * 0.9 ** np.arange(200)
    trace = simulate_scalar_flow(1.0, kappa, beta=0.2, mu=1.0, target=1.0)
    assert (1.0 * trace.eta <= 0.5 + 1e-12).all()
    rep = contraction_report(trace)
    assert rep.contracting and rep.bound_satisfied and rep.first_violation is None


def test_divergent_regime_detected():
    trace = ScalarTrace(np.array([2.0, 0.0, 2.0]), np.array([2.5, 2.5]), np.zeros(2))
    rep = contraction_report(trace)
    assert rep.q >= 1 and not rep.contracting and not rep.bound_satisfied


def test_trace_csv_round_trip(tmp_path):
    trace = simulate_scalar_flow(2.0, 0.1 * np.ones(5), beta=0.1)
    write_trace_csv(trace, tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.d, trace.d)
    np.testing.assert_array_equal(back.eta, trace.eta)


def test_flatness_examples():
    assert flatness_entry_time(np.zeros(20), 0.05) == 0
    s = np.arange(100)
    assert flatness_entry_time(np.exp(-0.1 * s), 0.05) == math.ceil(10 * math.log(20)) == 30
    # a single dip below eps is not sustained entry
    series = np.ones(30)
    series[5] = 0.0
    assert flatness_entry_time(series, 0.05) is None


def test_smoothed_trailing_mean():
    np.testing.assert_allclose(smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])


def test_curve_export(tmp_path):
    path = tmp_path / "c.csv"
    export_curves(CurveLog(), path)
    assert path.read_text().strip() == "time"
    log = CurveLog()
    log.add(1, loss=0.5)
    log.add(1, kappa_var=0.1)
    log.add(2, loss=0.25)
    with pytest.raises(ValueError):
        log.add(0, loss=1.0)
    export_curves(log, path)
    back = read_curves(path)
    assert back.columns == ["loss", "kappa_var"]
    assert back.rows == {1: {"loss": 0.5, "kappa_var": 0.1}, 2: {"loss": 0.25}}
