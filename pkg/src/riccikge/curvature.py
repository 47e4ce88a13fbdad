"""Ollivier-Ricci curvature of triple endpoints under lazy-walk neighbourhood measures.

Neighbour masses are proportional to the current edge weights ``w = exp(-d)``
(parallel triples between the same pair add up); the ground cost between
support atoms is the Euclidean distance of their entity embeddings.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistance, IsolatedEntity, NonFiniteEmbedding, SupportTooLarge
from .transport import EXACT_SUPPORT_LIMIT, exact_plan, sinkhorn_plan

log = logging.getLogger(__name__)

# per-edge solver / skip codes stored alongside curvature arrays
SOLVER_EXACT, SOLVER_SINKHORN, SOLVER_SINKHORN_APPROX = 0, 1, 2
SKIP_NONE, SKIP_ISOLATED, SKIP_DEGENERATE_DISTANCE, SKIP_SELF_LOOP = 0, 1, 2, 3
SOLVER_LABELS = {SOLVER_EXACT: "exact", SOLVER_SINKHORN: "sinkhorn",
                 SOLVER_SINKHORN_APPROX: "sinkhorn-approx", -1: "skipped"}


@dataclass(frozen=True)
class CurvatureConfig:
    alpha: float = 0.5
    solver: str = "auto"  # "auto" | "exact" | "sinkhorn"
    exact_support_limit: int = EXACT_SUPPORT_LIMIT
    sinkhorn_epsilon: float = 1e-3
    sinkhorn_max_iters: int = 10000
    sinkhorn_tolerance: float = 1e-9
    distance_floor: float = 1e-6
    kappa_max: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.sinkhorn_epsilon > 0:
            raise ValueError("sinkhorn_epsilon must be > 0")
        if self.solver not in ("auto", "exact", "sinkhorn"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class NeighborhoodMeasure:
    center: int
    support: np.ndarray  # entity ids, unique
    mass: np.ndarray


class NeighborTable:
    """Weighted entity adjacency aggregated from the triple list.

    Self-loops are ignored; parallel triples between the same unordered pair
    contribute their summed weight.
    """

    def __init__(self, triples_array, weights, n_entities):
        h, t = triples_array[:, 0], triples_array[:, 2]
        keep = h != t
        src = np.concatenate([h[keep], t[keep]])
        dst = np.concatenate([t[keep], h[keep]])
        w = np.concatenate([weights[keep], weights[keep]])
        key = src * n_entities + dst
        order = np.argsort(key, kind="stable")
        key, w = key[order], w[order]
        uniq, start = np.unique(key, return_index=True)
        # summing in sorted-key order keeps the result independent of thread layout
        summed = np.add.reduceat(w, start) if len(w) else w
        self.src = uniq // n_entities
        self.dst = uniq % n_entities
        self.weight = summed
        self.offsets = np.searchsorted(self.src, np.arange(n_entities + 1))

    def neighbors(self, v):
        lo, hi = self.offsets[v], self.offsets[v + 1]
        return self.dst[lo:hi], self.weight[lo:hi]


def neighborhood_measure(graph, weights, v, alpha, table=None) -> NeighborhoodMeasure:
    """Lazy-walk measure at ``v``: mass ``alpha`` on ``v``, the rest split by edge weight.

    Parameters
    ----------
    graph : KnowledgeGraph
    weights : ndarray
        Current per-triple edge weights, indexed by triple id.
    """
    if table is None:
        table = NeighborTable(graph.array, np.asarray(weights, dtype=float), graph.n_entities)
    nbrs, w = table.neighbors(v)
    if len(nbrs) == 0:
        raise IsolatedEntity(v)
    mass = (1.0 - alpha) * w / w.sum()
    if alpha > 0:
        return NeighborhoodMeasure(v, np.concatenate([[v], nbrs]), np.concatenate([[alpha], mass]))
    return NeighborhoodMeasure(v, nbrs.copy(), mass)


def ground_cost_matrix(entity, mu_h: NeighborhoodMeasure, mu_t: NeighborhoodMeasure) -> np.ndarray:
    """Pairwise Euclidean distances between the embeddings of the two supports."""
    x, y = entity[mu_h.support], entity[mu_t.support]
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteEmbedding("non-finite embedding in curvature support")
    diff = x[:, None, :] - y[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    cost[mu_h.support[:, None] == mu_t.support[None, :]] = 0.0
    return cost


def transport_cost(mu_h, mu_t, cost, cfg: CurvatureConfig):
    """Return ``(W1, solver_code)`` choosing exact LP or Sinkhorn per the config."""
    small = max(len(mu_h.support), len(mu_t.support)) <= cfg.exact_support_limit
    if cfg.solver == "exact" or (cfg.solver == "auto" and small):
        if not small:
            raise SupportTooLarge("support exceeds exact limit")
        return exact_plan(mu_h.mass, mu_t.mass, cost, cfg.exact_support_limit).cost, SOLVER_EXACT
    res = sinkhorn_plan(mu_h.mass, mu_t.mass, cost, cfg.sinkhorn_epsilon,
                        cfg.sinkhorn_max_iters, cfg.sinkhorn_tolerance)
    return res.cost, (SOLVER_SINKHORN if res.converged else SOLVER_SINKHORN_APPROX)


def _curvature_from(mu_h, mu_t, entity, d_ht, cfg):
    cost = ground_cost_matrix(entity, mu_h, mu_t)
    w1, solver = transport_cost(mu_h, mu_t, cost, cfg)
    kappa = 1.0 - w1 / d_ht
    clamped = kappa < -cfg.kappa_max or kappa > 1.0
    return float(np.clip(kappa, -cfg.kappa_max, 1.0)), solver, clamped


def ollivier_ricci(graph, weights, entity, h, t, d_ht, cfg=CurvatureConfig(), table=None) -> float:
    """``kappa = 1 - W1(mu_h, mu_t) / d_ht`` clamped to ``[-kappa_max, 1]``.

    Raises
    ------
    DegenerateDistance
        If ``d_ht`` is not above ``cfg.distance_floor``.
    IsolatedEntity
        If either endpoint has no neighbours.
    """
    if not d_ht > cfg.distance_floor:
        raise DegenerateDistance(f"distance {d_ht!r} not above floor {cfg.distance_floor}")
    if table is None:
        table = NeighborTable(graph.array, np.asarray(weights, dtype=float), graph.n_entities)
    mu_h = neighborhood_measure(graph, weights, h, cfg.alpha, table)
    mu_t = neighborhood_measure(graph, weights, t, cfg.alpha, table)
    return _curvature_from(mu_h, mu_t, entity, d_ht, cfg)[0]


def worker_count(default=None) -> int:
    env = os.environ.get("RKGE_THREADS")
    if env:
        return max(1, int(env))
    return default if default is not None else 1


@dataclass
class CurvatureField:
    kappa: np.ndarray        # NaN where skipped
    solver: np.ndarray       # SOLVER_* or -1
    skip: np.ndarray         # SKIP_* codes
    clamped: np.ndarray      # bool


def curvature_field(graph, weights, distances, entity, cfg=CurvatureConfig(), threads=None) -> CurvatureField:
    """Curvature of every triple from one immutable snapshot.

    Work is split into contiguous chunks over triple ids; each result is
    written to its own slot, so the output does not depend on ``threads``.
    """
    n = len(graph.triples)
    weights = np.asarray(weights, dtype=float)
    table = NeighborTable(graph.array, weights, graph.n_entities)
    kappa = np.full(n, np.nan)
    solver = np.full(n, -1, dtype=np.int8)
    skip = np.zeros(n, dtype=np.int8)
    clamped = np.zeros(n, dtype=bool)
    measures = {}

    def measure(v):
        # dict writes from several threads race only on identical values
        mu = measures.get(v)
        if mu is None:
            mu = neighborhood_measure(graph, weights, v, cfg.alpha, table)
            measures[v] = mu
        return mu

    def run(lo, hi):
        for i in range(lo, hi):
            h, _, t = graph.array[i]
            if h == t:
                skip[i] = SKIP_SELF_LOOP
                continue
            d = distances[i]
            if not d > cfg.distance_floor:
                skip[i] = SKIP_DEGENERATE_DISTANCE
                continue
            try:
                mu_h, mu_t = measure(int(h)), measure(int(t))
            except IsolatedEntity:
                skip[i] = SKIP_ISOLATED
                continue
            kappa[i], solver[i], clamped[i] = _curvature_from(mu_h, mu_t, entity, d, cfg)

    threads = threads or worker_count()
    if threads <= 1 or n < 2:
        run(0, n)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda k: run(bounds[k], bounds[k + 1]), range(threads)))
    return CurvatureField(kappa, solver, skip, clamped)
