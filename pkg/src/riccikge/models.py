"""Distance-based scoring models with analytic gradients.

Every model exposes a clamped distance ``d in [0, d_max]`` between the
relation-transformed head and the tail. The flow consumes the gradient
directions ``a = dd/dE(h)`` (through the relation map) and ``b = dd/dE(t)``.

RotatE stores an entity of dimension ``dim`` as ``dim // 2`` complex numbers:
real parts in the first half, imaginary parts in the second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGradient, DimensionMismatch, NonFiniteGradient, NonFiniteInput

MODEL_NAMES = ("transe", "distmult", "rotate")
DEGENERATE_DISTANCE = 1e-12


@dataclass(frozen=True)
class ModelKind:
    name: str = "transe"
    margin: float = 1.0
    d_max: float = 12.0
    offset: float = 0.0  # DistMult only: d = clamp(offset - score, 0, d_max)

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.name!r}; expected one of {MODEL_NAMES}")
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if not self.d_max > 0:
            raise ValueError("d_max must be > 0")

    def relation_dim(self, dim: int) -> int:
        return dim // 2 if self.name == "rotate" else dim


@dataclass
class EmbeddingState:
    entity: np.ndarray    # (n_entities, dim)
    relation: np.ndarray  # (n_relations, dim) or (n_relations, dim // 2) phases for RotatE
    step: int = 0

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.entity.copy(), self.relation.copy(), self.step)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity).all() and np.isfinite(self.relation).all())


@dataclass
class EdgeGradients:
    a: np.ndarray
    b: np.ndarray
    d: float


def wrap_phase(theta):
    """Map angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


def init_state(kind: ModelKind, n_entities: int, n_relations: int, dim: int, rng) -> EmbeddingState:
    if kind.name == "rotate" and dim % 2:
        raise DimensionMismatch("RotatE requires an even embedding dimension")
    bound = 6.0 / math.sqrt(dim)
    entity = rng.uniform(-bound, bound, size=(n_entities, dim))
    if kind.name == "rotate":
        # uniform on [-pi, pi) then wrapped so -pi maps to pi
        relation = wrap_phase(rng.uniform(-np.pi, np.pi, size=(n_relations, dim // 2)))
    else:
        relation = rng.uniform(-bound, bound, size=(n_relations, dim))
    return EmbeddingState(entity, relation, 0)


@dataclass
class BatchTerms:
    """Distances and gradients for a batch of triples.

    Gradients are those of the *clamped* distance: rows where the clamp is
    active or the norm is degenerate carry zeros and ``valid = False``.
    """

    d: np.ndarray
    raw: np.ndarray
    grad_h: np.ndarray
    grad_t: np.ndarray
    grad_r: np.ndarray
    valid: np.ndarray
    degenerate: np.ndarray = field(default=None)


def batch_terms(kind: ModelKind, state: EmbeddingState, h, r, t, need_grad=True) -> BatchTerms:
    E, R = state.entity, state.relation
    eh, et, rr = E[h], E[t], R[r]
    if kind.name == "transe":
        u = eh + rr - et
        raw = np.sqrt(np.einsum("ij,ij->i", u, u))
        degenerate = raw < DEGENERATE_DISTANCE
        if need_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                gh = u / raw[:, None]
            gt, gr = -gh, gh
    elif kind.name == "rotate":
        half = E.shape[1] // 2
        c, s = np.cos(rr), np.sin(rr)
        hre, him = eh[:, :half], eh[:, half:]
        rot_re = hre * c - him * s
        rot_im = hre * s + him * c
        ure, uim = rot_re - et[:, :half], rot_im - et[:, half:]
        raw = np.sqrt((ure * ure).sum(1) + (uim * uim).sum(1))
        degenerate = raw < DEGENERATE_DISTANCE
        if need_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / raw[:, None]
                # rotate the residual back by -theta: d(rot)/dh is the rotation itself
                gh = np.concatenate([(ure * c + uim * s) * inv, (-ure * s + uim * c) * inv], axis=1)
                gt = -np.concatenate([ure, uim], axis=1) * inv
                gr = (uim * rot_re - ure * rot_im) * inv
    else:
        score = np.einsum("ij,ij,ij->i", eh, rr, et)
        raw = kind.offset - score
        degenerate = np.zeros(len(raw), dtype=bool)
        if need_grad:
            gh, gt, gr = -rr * et, -eh * rr, -eh * et
    d = np.clip(raw, 0.0, kind.d_max)
    if not need_grad:
        return BatchTerms(d, raw, None, None, None, None, degenerate)
    if kind.name == "distmult":
        valid = (raw >= 0.0) & (raw <= kind.d_max)
    else:
        valid = (raw <= kind.d_max) & ~degenerate
    # clamped rows get zero gradient; non-finite rows stay NaN so callers notice
    fill = np.where(np.isfinite(raw), 0.0, np.nan)[:, None]
    mask = valid[:, None]
    gh = np.where(mask, gh, fill)
    gt = np.where(mask, gt, fill)
    gr = np.where(mask, gr, fill)
    return BatchTerms(d, raw, gh, gt, gr, valid, degenerate)


def _check_single(kind, state, triple):
    h, r, t = triple
    n_ent, n_rel = state.entity.shape[0], state.relation.shape[0]
    if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
        raise IndexError(f"triple {tuple(triple)} out of range")
    if state.relation.shape[1] != kind.relation_dim(state.dim):
        raise DimensionMismatch("relation parameter width does not match the model")
    rows = np.concatenate([state.entity[[h, t]].ravel(), state.relation[r]])
    if not np.isfinite(rows).all():
        raise NonFiniteInput(f"non-finite parameters for triple {tuple(triple)}")
    return np.array([h]), np.array([r]), np.array([t])


def distance(kind: ModelKind, state: EmbeddingState, triple) -> float:
    """Clamped distance of one triple (smaller means more plausible)."""
    h, r, t = _check_single(kind, state, triple)
    return float(batch_terms(kind, state, h, r, t, need_grad=False).d[0])


def raw_score(kind: ModelKind, state: EmbeddingState, triple) -> float:
    """DistMult's bilinear score <h, diag(r), t>; negated raw distance otherwise."""
    h, r, t = _check_single(kind, state, triple)
    raw = batch_terms(kind, state, h, r, t, need_grad=False).raw[0]
    return float(kind.offset - raw) if kind.name == "distmult" else float(-raw)


def edge_gradients(kind: ModelKind, state: EmbeddingState, triple) -> EdgeGradients:
    """Gradient directions ``a`` (head, through the relation map) and ``b`` (tail).

    Raises
    ------
    DegenerateGradient
        If the norm distance is below ``1e-12``; the caller skips the edge.
    """
    h, r, t = _check_single(kind, state, triple)
    terms = batch_terms(kind, state, h, r, t)
    if terms.degenerate[0]:
        raise DegenerateGradient(f"distance {terms.raw[0]:.3g} below {DEGENERATE_DISTANCE}")
    return EdgeGradients(terms.grad_h[0], terms.grad_t[0], float(terms.d[0]))


def margin_loss(d_pos, d_neg, margin):
    return np.maximum(0.0, margin + np.asarray(d_pos) - np.asarray(d_neg))


def loss_grad_wrt_distance(loss: str, d: float, *, role="positive", counterpart=None,
                           margin=1.0, target=None) -> float:
    """Scalar derivative of the per-edge loss with respect to its distance.

    ``loss="margin"`` needs the counterpart distance (the negative's for a
    positive role and vice versa); ``loss="quadratic"`` is ``0.5 * (d - target)**2``.
    """
    if loss == "quadratic":
        return float(d - target)
    if loss != "margin":
        raise ValueError(f"unknown loss {loss!r}")
    if role == "positive":
        return 1.0 if margin + d - counterpart > 0 else 0.0
    return -1.0 if margin + counterpart - d > 0 else 0.0


def margin_gradients(kind: ModelKind, state: EmbeddingState, positives: np.ndarray, negatives):
    """Mean hinge loss over (positive, negative) pairs and its parameter gradients.

    Returns
    -------
    loss : float
    grad_entity : ndarray, same shape as ``state.entity``
    grad_relation : ndarray, same shape as ``state.relation``
    """
    pos = positives[negatives.source]
    neg = negatives.triples
    tp = batch_terms(kind, state, pos[:, 0], pos[:, 1], pos[:, 2])
    tn = batch_terms(kind, state, neg[:, 0], neg[:, 1], neg[:, 2])
    hinge = kind.margin + tp.d - tn.d
    active = (hinge > 0).astype(float)[:, None]
    m = max(len(pos), 1)
    loss = float(np.maximum(hinge, 0.0).sum() / m)
    scale = active / m
    g_ent = np.zeros_like(state.entity)
    g_rel = np.zeros_like(state.relation)
    np.add.at(g_ent, pos[:, 0], scale * tp.grad_h)
    np.add.at(g_ent, pos[:, 2], scale * tp.grad_t)
    np.add.at(g_ent, neg[:, 0], -scale * tn.grad_h)
    np.add.at(g_ent, neg[:, 2], -scale * tn.grad_t)
    np.add.at(g_rel, pos[:, 1], scale * tp.grad_r)
    np.add.at(g_rel, neg[:, 1], -scale * tn.grad_r)
    return loss, g_ent, g_rel


def apply_relation_update(kind: ModelKind, relation: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("non-finite relation gradient")
    out = relation - lr * grad
    if kind.name == "rotate":
        out = wrap_phase(out)
    return out


def relation_gradient_step(kind: ModelKind, state: EmbeddingState, positives, negatives, lr_rel: float):
    """One SGD step on the relation parameters only; entities are not touched.

    On a non-finite gradient :class:`NonFiniteGradient` propagates and
    ``state`` is left as it was.
    """
    if not lr_rel > 0:
        raise ValueError("lr_rel must be > 0")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    _, _, g_rel = margin_gradients(kind, state, positives, negatives)
    state.relation = apply_relation_update(kind, state.relation, g_rel, lr_rel)
    return state.relation
