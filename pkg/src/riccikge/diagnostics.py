"""Runnable checks of the convergence theory: spectral gap, beta bounds,
curvature energy, distance contraction and flatness entry time."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .curvature import NeighborTable
from .errors import TooFewEdges
from .flow import EdgeState, FlowConfig, distance_flow_step, edge_weight

log = logging.getLogger(__name__)

FLATNESS_WINDOW = 10


# --- spectral gap ---------------------------------------------------------------

@dataclass
class SpectralGap:
    value: float
    converged: bool
    iterations: int
    per_component: list = field(default_factory=list)
    connected: bool = True


def weighted_laplacian(graph, weights) -> sp.csr_matrix:
    """Combinatorial Laplacian ``D - W`` of the entity graph (parallel triples summed)."""
    table = NeighborTable(graph.array, np.asarray(weights, dtype=float), graph.n_entities)
    n = graph.n_entities
    adj = sp.csr_matrix((table.weight, (table.src, table.dst)), shape=(n, n))
    return (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()


def _component_gap(lap, tol, max_iters, block, seed):
    """Smallest non-zero eigenvalue of a connected Laplacian by shifted subspace iteration.

    Iterates ``M = c I - L`` (``c`` bounds the spectrum by Gershgorin) on a
    block orthogonal to the constant vector and takes the top Ritz value of
    ``M``; ``c`` minus that value is the gap.
    """
    n = lap.shape[0]
    if n < 2:
        return math.nan, True, 0
    if n <= block + 1:
        # the deflated space is tiny; the Ritz step is already exact
        block = n - 1
    c = 2.0 * lap.diagonal().max() + 1e-12
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, block))
    ones = np.full(n, 1.0 / math.sqrt(n))
    theta, it = math.nan, 0
    for it in range(1, max_iters + 1):
        x -= np.outer(ones, ones @ x)
        x, _ = np.linalg.qr(x)
        mx = c * x - lap @ x
        ritz, vecs = np.linalg.eigh(x.T @ mx)
        theta = ritz[-1]
        v = x @ vecs[:, -1]
        resid = np.linalg.norm(mx @ vecs[:, -1] - theta * v)
        if resid < tol * max(1.0, c):
            return c - theta, True, it
        x = mx
    return c - theta, False, it


def estimate_spectral_gap(graph, weights, tol=1e-6, max_iters=10000, block=6, seed=0) -> SpectralGap:
    """First non-zero eigenvalue of the weighted Laplacian.

    A disconnected graph logs a warning; ``value`` is then the gap of the
    largest component and ``per_component`` lists every component's gap.
    """
    lap = weighted_laplacian(graph, weights)
    n_comp, labels = connected_components(lap, directed=False)
    sizes = np.bincount(labels)
    results = []
    for comp in range(n_comp):
        idx = np.flatnonzero(labels == comp)
        results.append(_component_gap(lap[idx][:, idx], tol, max_iters, block, seed))
    if n_comp > 1:
        log.warning("graph has %d connected components; reporting the largest", n_comp)
    main = int(np.argmax(sizes))
    value, converged, iters = results[main]
    if not converged:
        log.warning("spectral gap estimate did not converge in %d iterations", iters)
    return SpectralGap(value, converged, iters, [r[0] for r in results], n_comp == 1)


# --- curvature statistics -----------------------------------------------------------

def curvature_energy(kappa, weights) -> float:
    """Weight-measured squared curvature ``sum kappa^2 w`` over defined curvatures."""
    kappa = np.asarray(kappa, dtype=float)
    ok = np.isfinite(kappa)
    return float(np.sum(kappa[ok] ** 2 * np.asarray(weights, dtype=float)[ok]))


def curvature_variance(kappa) -> float:
    kappa = np.asarray(kappa, dtype=float)
    kappa = kappa[np.isfinite(kappa)]
    if len(kappa) < 2:
        raise TooFewEdges("curvature variance needs at least two edges with defined curvature")
    return float(kappa.var())


# --- beta admissibility -----------------------------------------------------------

@dataclass
class BoundReport:
    lambda1: float
    k0: float
    d: float
    mu: float
    f_w: float
    beta_max_theorem: float
    beta_max_corollary: float
    beta_cap_main_text: float
    beta_configured: float
    admissible: bool
    approximate: bool = False

    def as_dict(self):
        return dict(self.__dict__)


def bound_report(lambda1, k0, d_max, beta, mu=1.0, f_w=1.0, approximate=False) -> BoundReport:
    """Evaluate both beta caps.

    ``beta_max_theorem = lambda1 / (f_w^2 sqrt(k0))`` and
    ``beta_max_corollary = min(beta_max_theorem, 2 exp(-D) / mu)``. The looser
    ``4 exp(-D) / mu`` variant is reported but not enforced.
    """
    theorem = math.inf if k0 <= 0 else lambda1 / (f_w ** 2 * math.sqrt(k0))
    corollary = min(theorem, 2.0 * math.exp(-d_max) / mu)
    admissible = beta == 0 or beta < corollary
    return BoundReport(lambda1, k0, d_max, mu, f_w, theorem, corollary,
                       4.0 * math.exp(-d_max) / mu, beta, admissible, approximate)


def beta_bounds(graph, weights, kappa, beta, d_max=12.0, mu=1.0, f_w=1.0) -> BoundReport:
    """Bound report from the current graph state (K0 taken as the current curvature energy)."""
    gap = estimate_spectral_gap(graph, weights)
    k0 = curvature_energy(kappa, weights)
    return bound_report(gap.value, k0, d_max, beta, mu, f_w, approximate=not gap.converged)


def beta_warning(report: BoundReport) -> bool:
    """Log a warning when beta is at or above the enforced cap; return whether it fired."""
    if report.beta_configured >= report.beta_max_corollary and report.beta_configured != 0:
        log.warning("beta=%g is at or above the admissibility cap %.3g (theorem cap %.3g); "
                    "training proceeds", report.beta_configured, report.beta_max_corollary,
                    report.beta_max_theorem)
        return True
    return False


# --- distance contraction -------------------------------------------------------------

@dataclass
class ScalarTrace:
    d: np.ndarray      # d^0 .. d^K
    eta: np.ndarray    # eta_g^0 .. eta_g^{K-1}
    kappa: np.ndarray  # kappa^0 .. kappa^{K-1}


def simulate_scalar_flow(d0, kappa_series, beta, mu=1.0, target=1.0, eta_max=math.inf, d_max=12.0) -> ScalarTrace:
    """Iterate the distance flow on one edge with loss ``mu/2 (d - target)^2``."""
    cfg = FlowConfig(beta=beta, eta_max=eta_max, loss="quadratic", target=target)
    d = [float(d0)]
    etas = []
    for k, kap in enumerate(kappa_series):
        w = edge_weight(d[-1])
        etas.append(min(beta / (2.0 * w), eta_max))
        edge = EdgeState(k, d[-1], w, float(kap), mu * (d[-1] - target))
        d.append(distance_flow_step(edge, cfg, d_max)[0])
    return ScalarTrace(np.array(d), np.array(etas), np.asarray(kappa_series, dtype=float))


@dataclass
class ContractionReport:
    q: float
    contracting: bool
    bound_satisfied: bool
    first_violation: int = None
    errors: np.ndarray = field(default=None, repr=False)
    bounds: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        return {"q": self.q, "contracting": self.contracting,
                "bound_satisfied": self.bound_satisfied, "first_violation": self.first_violation}


def contraction_bounds(d0_err, q, kappa):
    """``q^k |d^0 - d*| + 1/2 sum_{i<k} q^(k-1-i) |kappa^i|`` for k = 0..K."""
    out = np.empty(len(kappa) + 1)
    out[0] = d0_err
    geo, tail = d0_err, 0.0
    for k in range(1, len(kappa) + 1):
        geo *= q
        tail = q * tail + 0.5 * abs(kappa[k - 1])
        out[k] = geo + tail
    return out


def contraction_report(trace: ScalarTrace, mu=1.0, target=1.0, rtol=1e-12) -> ContractionReport:
    """Check the linear-convergence inequality at every step of a recorded trace.

    ``q = sup_k |1 - mu eta_g^k|``. With ``q >= 1`` the run is outside the
    contraction regime and ``bound_satisfied`` is False.
    """
    q = float(np.max(np.abs(1.0 - mu * np.asarray(trace.eta)))) if len(trace.eta) else 0.0
    errors = np.abs(np.asarray(trace.d) - target)
    bounds = contraction_bounds(errors[0], q, np.asarray(trace.kappa))
    bad = np.flatnonzero(errors > bounds * (1 + rtol) + 1e-15)
    contracting = q < 1.0
    first = int(bad[0]) if len(bad) else None
    return ContractionReport(q, contracting, contracting and first is None, first, errors, bounds)


def read_trace_csv(path) -> ScalarTrace:
    """Trace CSV with columns ``k, d, eta, kappa`` (last row may leave eta/kappa empty)."""
    d, eta, kappa = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d.append(float(row["d"]))
            if row.get("eta") not in (None, ""):
                eta.append(float(row["eta"]))
                kappa.append(float(row["kappa"]))
    return ScalarTrace(np.array(d), np.array(eta), np.array(kappa))


def write_trace_csv(trace: ScalarTrace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "d", "eta", "kappa"])
        for k, d in enumerate(trace.d):
            if k < len(trace.eta):
                writer.writerow([k, f"{d:.17g}", f"{trace.eta[k]:.17g}", f"{trace.kappa[k]:.17g}"])
            else:
                writer.writerow([k, f"{d:.17g}", "", ""])


# --- flatness -------------------------------------------------------------------

def flatness_entry_time(series, eps, window=FLATNESS_WINDOW):
    """First index from which ``window`` consecutive values are all ``<= eps``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    below = np.asarray(series, dtype=float) <= eps
    run = 0
    for i, ok in enumerate(below):
        run = run + 1 if ok else 0
        if run == window:
            return i - window + 1
    return None


def smoothed(series, window=FLATNESS_WINDOW):
    """Trailing moving average (shorter windows at the start)."""
    x = np.asarray(series, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


# --- curve logs ----------------------------------------------------------------------

class CurveLog:
    """Append-only table of named scalar series keyed by a strictly increasing time index."""

    def __init__(self):
        self.columns = []
        self.rows = {}

    def add(self, time, **values):
        if self.rows and time <= max(self.rows) and time not in self.rows:
            raise ValueError(f"time index {time} is not increasing")
        row = self.rows.setdefault(time, {})
        for name, val in values.items():
            if name in row:
                raise ValueError(f"series {name!r} already has a value at time {time}")
            if name not in self.columns:
                self.columns.append(name)
            row[name] = float(val)

    def series(self, name):
        times = [t for t in sorted(self.rows) if name in self.rows[t]]
        return np.array(times), np.array([self.rows[t][name] for t in times])

    def __len__(self):
        return len(self.rows)


def export_curves(curve_log: CurveLog, path):
    """CSV with a ``time`` column then one column per series, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + curve_log.columns)
        for t in sorted(curve_log.rows):
            row = curve_log.rows[t]
            writer.writerow([t] + [f"{row[c]:.17g}" if c in row else "" for c in curve_log.columns])
    return path


def read_curves(path) -> CurveLog:
    out = CurveLog()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        out.columns = header[1:]
        for rec in reader:
            vals = {c: float(v) for c, v in zip(header[1:], rec[1:]) if v != ""}
            out.rows[int(rec[0])] = vals
    return out
