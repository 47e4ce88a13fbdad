"""Discrete gradient-coupled Ricci flow on triple distances.

One pass snapshots every triple's distance, weight and curvature, moves each
distance by ``-eta_g * g + kappa / 2`` and then realises that change with the
minimum-norm perturbation of the two endpoint embeddings. Per-triple
perturbations are summed per entity and applied together at the end, so the
outcome does not depend on the order in which triples are processed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .curvature import CurvatureConfig, curvature_field
from .errors import AllWeightsZero, DegenerateGradient, NonFiniteEdge, NonFiniteState
from .kg import sample_negatives
from .models import EdgeGradients, EmbeddingState, ModelKind, batch_terms

STEP_FRACTION = 0.5
LAMBDA_FLOOR = 1e-12


@dataclass
class FlowConfig:
    beta: float = 0.1
    eta_max: float = 1.0
    normalize: bool = False
    flow_interval: float = 5
    loss: str = "margin"          # "margin" or "quadratic"
    target: float = 1.0           # d* of the quadratic diagnostic loss
    lambda_floor: float = LAMBDA_FLOOR

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.eta_max > 0:
            raise ValueError("eta_max must be > 0")
        if self.loss not in ("margin", "quadratic"):
            raise ValueError(f"unknown flow loss {self.loss!r}")


@dataclass
class EdgeState:
    triple_id: int
    d: float
    w: float
    kappa: float
    g: float
    gradients: EdgeGradients = None


def edge_weight(d):
    return np.exp(-np.asarray(d, dtype=float)) if np.ndim(d) else float(np.exp(-d))


def _distance_flow(d, w, g, kappa, beta, eta_max, d_max):
    eta = beta / (2.0 * w)
    eta_clamped = eta > eta_max
    eta = np.minimum(eta, eta_max)
    proposal = d - eta * g + STEP_FRACTION * kappa
    d_clamped = (proposal < 0.0) | (proposal > d_max)
    d_next = np.clip(proposal, 0.0, d_max)
    return d_next, d_next - d, eta, eta_clamped, d_clamped


def distance_flow_step(edge: EdgeState, cfg: FlowConfig, d_max: float = 12.0):
    """Return ``(d_next, delta_d)`` for one edge.

    ``eta_g = min(beta / (2 w), eta_max)`` and
    ``d_next = clamp(d - eta_g * g + kappa / 2, 0, d_max)``.
    """
    vals = (edge.d, edge.w, edge.g, edge.kappa)
    if not all(np.isfinite(v) for v in vals):
        raise NonFiniteEdge(f"edge {edge.triple_id} has non-finite state {vals}")
    d_next, delta, *_ = _distance_flow(edge.d, edge.w, edge.g, edge.kappa,
                                       cfg.beta, cfg.eta_max, d_max)
    return float(d_next), float(delta)


def lambda_multiplier(delta_d, a, b, floor=LAMBDA_FLOOR) -> float:
    """``lambda = -2 delta_d / (|a|^2 + |b|^2)``."""
    denom = float(np.dot(a, a) + np.dot(b, b))
    if not denom > floor:
        raise DegenerateGradient(f"gradient norm {denom:.3g} below floor {floor}")
    return -2.0 * float(delta_d) / denom


def embedding_deltas(lam, a, b):
    """Minimum-norm ``(delta_h, delta_t)`` with ``<a, delta_h> + <b, delta_t> = delta_d``."""
    half = -0.5 * lam
    return half * np.asarray(a, dtype=float), half * np.asarray(b, dtype=float)


def normalize_weights(weights, enabled=False):
    """Rescale weights to mean one, ``|E| w / sum w``; identity when disabled."""
    w = np.asarray(weights, dtype=float)
    if not enabled:
        return w
    total = w.sum()
    if not total > 0:
        raise AllWeightsZero("cannot normalise weights summing to zero")
    return len(w) * w / total


def weights_to_distances(weights, d_max=12.0):
    """``d = -log w`` clamped to ``[0, d_max]`` (normalised weights may exceed one)."""
    with np.errstate(divide="ignore"):
        return np.clip(-np.log(np.asarray(weights, dtype=float)), 0.0, d_max)


@dataclass
class FlowReport:
    pass_index: int
    mean_abs_kappa: float
    max_abs_kappa: float
    kappa_variance: float
    mean_delta_d: float
    clamped_eta_count: int
    clamped_d_count: int
    skipped_edges: int
    clamped_kappa_count: int = 0
    kappa: np.ndarray = field(default=None, repr=False)
    weight: np.ndarray = field(default=None, repr=False)

    CSV_FIELDS = ("pass_index", "mean_abs_kappa", "max_abs_kappa", "kappa_variance",
                  "mean_delta_d", "clamped_eta_count", "clamped_d_count", "skipped_edges")

    def csv_row(self):
        return [getattr(self, k) for k in self.CSV_FIELDS]


def write_flow_reports(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FlowReport.CSV_FIELDS)
        for rep in reports:
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in rep.csv_row()])


def flow_gradients(cfg: FlowConfig, kind: ModelKind, state, graph, d, rng):
    """Scalar loss derivative in ``d`` for every triple."""
    if cfg.loss == "quadratic":
        return d - cfg.target
    # one fresh corruption per positive; the hinge decides whether the edge is pulled
    neg = sample_negatives(graph.array, 1, rng, graph.n_entities)
    tn = batch_terms(kind, state, neg.triples[:, 0], neg.triples[:, 1], neg.triples[:, 2], need_grad=False)
    return np.where(kind.margin + d - tn.d > 0, 1.0, 0.0)


def flow_pass(graph, state: EmbeddingState, kind: ModelKind, cfg: FlowConfig,
              curvature_cfg: CurvatureConfig = CurvatureConfig(), rng=None, threads=None,
              pass_index=0, g_override=None, kappa_override=None):
    """Run one synchronous flow pass and return ``(new_state, report)``.

    ``g_override`` / ``kappa_override`` replace the per-triple loss
    derivative or curvature (used by diagnostics that inject known series).
    Relation parameters are never modified.

    Raises
    ------
    NonFiniteState
        If applying the accumulated updates produces non-finite embeddings.
    """
    arr = graph.array
    n = len(arr)
    # (1) snapshot
    terms = batch_terms(kind, state, arr[:, 0], arr[:, 1], arr[:, 2])
    d = terms.d
    w = np.exp(-d)
    # (2) curvature
    if kappa_override is None:
        cf = curvature_field(graph, w, d, state.entity, curvature_cfg, threads)
        kappa, clamped_kappa = cf.kappa, int(cf.clamped.sum())
    else:
        kappa, clamped_kappa = np.asarray(kappa_override, dtype=float), 0
    # (3) per-edge distance flow, multiplier, deltas
    if g_override is not None:
        g = np.asarray(g_override, dtype=float)
    else:
        g = flow_gradients(cfg, kind, state, graph, d, rng if rng is not None else np.random.default_rng(0))
    usable = np.isfinite(kappa) & terms.valid
    k_use = np.where(usable, kappa, 0.0)
    d_next, delta, _, eta_clamped, d_clamped = _distance_flow(d, w, g, k_use, cfg.beta, cfg.eta_max, kind.d_max)
    if cfg.normalize:
        w_all = np.where(usable, np.exp(-d_next), w)
        delta = weights_to_distances(normalize_weights(w_all, True), kind.d_max) - d
    a, b = terms.grad_h, terms.grad_t
    denom = np.einsum("ij,ij->i", a, a) + np.einsum("ij,ij->i", b, b)
    usable &= denom > cfg.lambda_floor
    lam = np.zeros(n)
    lam[usable] = -2.0 * delta[usable] / denom[usable]
    if not np.isfinite(lam).all():
        raise NonFiniteEdge("non-finite multiplier")
    half = (-0.5 * lam)[:, None]
    delta_h, delta_t = half * a, half * b
    # (4) accumulate per entity; interleaving (h_i, t_i) makes each entity's
    # contributions arrive in ascending triple order, as in the incident index
    idx = np.stack([arr[:, 0], arr[:, 2]], axis=1)[usable].ravel()
    contrib = np.stack([delta_h, delta_t], axis=1)[usable].reshape(-1, state.dim)
    acc = np.zeros_like(state.entity)
    np.add.at(acc, idx, contrib)
    new_entity = state.entity + acc
    if not np.isfinite(new_entity).all():
        raise NonFiniteState("flow pass produced non-finite embeddings")
    new_state = EmbeddingState(new_entity, state.relation.copy(), state.step + 1)
    # (5) report
    kd = kappa[np.isfinite(kappa)]
    report = FlowReport(
        pass_index=pass_index,
        mean_abs_kappa=float(np.abs(kd).mean()) if len(kd) else 0.0,
        max_abs_kappa=float(np.abs(kd).max()) if len(kd) else 0.0,
        kappa_variance=float(kd.var()) if len(kd) else 0.0,
        mean_delta_d=float(delta[usable].mean()) if usable.any() else 0.0,
        clamped_eta_count=int((eta_clamped & usable).sum()),
        clamped_d_count=int((d_clamped & usable).sum()),
        skipped_edges=int(n - usable.sum()),
        clamped_kappa_count=clamped_kappa,
        kappa=kappa,
        weight=w,
    )
    return new_state, report
