"""Training loop: margin-loss epochs interleaved with Ricci flow passes."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .curvature import CurvatureConfig
from .diagnostics import bound_report, beta_warning, curvature_energy, estimate_spectral_gap
from .errors import NonFiniteGradient, NonFiniteLoss, NonFiniteState
from .flow import FlowConfig, FlowReport, flow_pass, write_flow_reports
from .kg import sample_negatives
from .metrics import FilterIndex, evaluate
from .models import EmbeddingState, ModelKind, init_state, margin_gradients, wrap_phase

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "split", "loss", "mrr", "hits1", "hits3", "hits10",
                 "kappa_var", "kappa_max", "pass_index")


@dataclass
class TrainConfig:
    model: str = "transe"
    dim: int = 32
    beta: float = 0.1
    flow_interval: float = 5
    epochs_max: int = 100
    steps_max: int = 0              # 0 = no step budget
    batch_size: int = 512
    n_negatives: int = 1024
    lr_entities: float = 5e-5
    lr_rel: float = 5e-5
    optimizer: str = "sgd"          # "sgd" or "adam"
    margin: float = 6.0
    offset: float = 0.0
    seed: int = 0
    eval_every: int = 5
    patience: int = 10
    d_max: float = 12.0
    eta_max: float = 1.0
    kappa_max: float = 10.0
    alpha: float = 0.5
    solver: str = "auto"
    exact_support_limit: int = 12
    sinkhorn_epsilon: float = 1e-3
    sinkhorn_max_iters: int = 10000
    sinkhorn_tolerance: float = 1e-9
    flow_loss: str = "margin"
    flow_target: float = 1.0
    normalize: bool = False
    mu: float = 1.0
    f_w: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if not self.flow_interval >= 1:
            raise ValueError("flow_interval must be >= 1 (use inf to disable the flow)")
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.lr_entities < 0 or not self.lr_rel > 0:
            raise ValueError("learning rates must be positive (lr_entities may be 0 for flow-only)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model, self.margin, self.d_max, self.offset)

    @property
    def flow(self) -> FlowConfig:
        return FlowConfig(self.beta, self.eta_max, self.normalize, self.flow_interval,
                          self.flow_loss, self.flow_target)

    @property
    def curvature(self) -> CurvatureConfig:
        return CurvatureConfig(self.alpha, self.solver, self.exact_support_limit, self.sinkhorn_epsilon,
                               self.sinkhorn_max_iters, self.sinkhorn_tolerance, kappa_max=self.kappa_max)

    @property
    def flow_enabled(self) -> bool:
        return math.isfinite(self.flow_interval)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for key, val in values.items():
            default = known[key].default
            if isinstance(default, bool):
                coerced[key] = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
            elif key == "flow_interval":
                coerced[key] = float(val) if str(val).lower() in ("inf", "infinity") else int(float(val))
            elif isinstance(default, int):
                coerced[key] = int(val)
            elif isinstance(default, float):
                coerced[key] = float(val)
            else:
                coerced[key] = val
        return cls(**coerced)


class Optimizer:
    """Plain SGD or Adam over the entity and relation tables."""

    def __init__(self, name, lr_entities, lr_rel, betas=(0.9, 0.999), eps=1e-8):
        self.name, self.lrs = name, (lr_entities, lr_rel)
        self.betas, self.eps = betas, eps
        self.moments = None
        self.t = 0

    def step(self, kind, state, g_ent, g_rel):
        grads = (g_ent, g_rel)
        if self.name == "sgd":
            updates = [lr * g for lr, g in zip(self.lrs, grads)]
        else:
            if self.moments is None:
                self.moments = [[np.zeros_like(g), np.zeros_like(g)] for g in grads]
            self.t += 1
            b1, b2 = self.betas
            updates = []
            for lr, g, (m, v) in zip(self.lrs, grads, self.moments):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                updates.append(lr * m_hat / (np.sqrt(v_hat) + self.eps))
        state.entity = state.entity - updates[0]
        relation = state.relation - updates[1]
        state.relation = wrap_phase(relation) if kind.name == "rotate" else relation


@dataclass
class TrainState:
    embedding: EmbeddingState
    rng: np.random.Generator
    optimizer: Optimizer
    epoch: int = 0
    steps: int = 0
    best_mrr: float = -math.inf
    best_epoch: int = 0
    best_embedding: EmbeddingState = None
    bad_evals: int = 0
    flow_passes: int = 0
    curves: list = field(default_factory=list)
    flow_reports: list = field(default_factory=list)


def new_train_state(graph, cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    emb = init_state(cfg.kind, graph.n_entities, graph.n_relations, cfg.dim, rng)
    return TrainState(emb, rng, Optimizer(cfg.optimizer, cfg.lr_entities, cfg.lr_rel))


def baseline_epoch(ts: TrainState, graph, cfg: TrainConfig) -> float:
    """One shuffled pass of mini-batch margin-loss updates; returns the mean batch loss.

    A non-finite loss or gradient restores the pre-epoch parameters and
    raises :class:`NonFiniteLoss`.
    """
    kind = cfg.kind
    saved = ts.embedding.copy()
    order = ts.rng.permutation(len(graph.array))
    losses = []
    try:
        for lo in range(0, len(order), cfg.batch_size):
            if cfg.steps_max and ts.steps >= cfg.steps_max:
                break
            pos = graph.array[order[lo:lo + cfg.batch_size]]
            neg = sample_negatives(pos, cfg.n_negatives, ts.rng, graph.n_entities)
            loss, g_ent, g_rel = margin_gradients(kind, ts.embedding, pos, neg)
            if not (math.isfinite(loss) and np.isfinite(g_ent).all() and np.isfinite(g_rel).all()):
                raise NonFiniteLoss(f"non-finite loss/gradient in epoch {ts.epoch + 1}")
            ts.optimizer.step(kind, ts.embedding, g_ent, g_rel)
            ts.steps += 1
            losses.append(loss)
    except (NonFiniteLoss, NonFiniteGradient):
        ts.embedding = saved
        raise
    ts.epoch += 1
    ts.embedding.step += 1
    return float(np.mean(losses)) if losses else 0.0


def _row(**values):
    return {c: values.get(c, "") for c in CURVE_COLUMNS}


def write_curve_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class TrainResult:
    kind: ModelKind
    best: EmbeddingState
    last: EmbeddingState
    curves: list
    flow_reports: list
    best_mrr: float
    epochs: int


def train(graph, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Baseline epochs with a flow pass every ``flow_interval`` epochs and early stopping.

    When ``out_dir`` is given, ``best.ckpt``, ``last.ckpt``, ``curves.csv``
    and ``flow.csv`` are written there; the last good checkpoint is saved
    before any error propagates.
    """
    kind = cfg.kind
    ts = new_train_state(graph, cfg)
    filt = FilterIndex(graph.known) if graph.valid else None
    bounds_checked = False
    try:
        while ts.epoch < cfg.epochs_max:
            if cfg.steps_max and ts.steps >= cfg.steps_max:
                break
            loss = baseline_epoch(ts, graph, cfg)
            ts.curves.append(_row(epoch=ts.epoch, split="train", loss=loss))
            if cfg.flow_enabled and ts.epoch % int(cfg.flow_interval) == 0:
                report = _flow_step(ts, graph, cfg)
                if report is not None and not bounds_checked:
                    gap = estimate_spectral_gap(graph, report.weight)
                    beta_warning(bound_report(gap.value, curvature_energy(report.kappa, report.weight),
                                              cfg.d_max, cfg.beta, cfg.mu, cfg.f_w))
                    bounds_checked = True
            if filt is not None and cfg.eval_every and ts.epoch % cfg.eval_every == 0:
                rep = evaluate(ts.embedding, kind, graph, "valid", filter_index=filt)
                ts.curves.append(_row(epoch=ts.epoch, split="valid", mrr=rep.mrr,
                                      hits1=rep.hits[1], hits3=rep.hits[3], hits10=rep.hits[10]))
                if rep.mrr > ts.best_mrr:
                    ts.best_mrr, ts.best_epoch = rep.mrr, ts.epoch
                    ts.best_embedding = ts.embedding.copy()
                    ts.bad_evals = 0
                else:
                    ts.bad_evals += 1
                    if ts.bad_evals >= cfg.patience:
                        log.info("early stop at epoch %d (best %.4f at %d)", ts.epoch, ts.best_mrr, ts.best_epoch)
                        break
    finally:
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(kind, ts.embedding, os.path.join(out_dir, "last.ckpt"))
            save_checkpoint(kind, ts.best_embedding or ts.embedding, os.path.join(out_dir, "best.ckpt"))
            write_curve_log(ts.curves, os.path.join(out_dir, "curves.csv"))
            write_flow_reports(os.path.join(out_dir, "flow.csv"), ts.flow_reports)
    best = ts.best_embedding or ts.embedding
    return TrainResult(kind, best, ts.embedding, ts.curves, ts.flow_reports, ts.best_mrr, ts.epoch)


def _flow_step(ts: TrainState, graph, cfg: TrainConfig):
    try:
        new_emb, report = flow_pass(graph, ts.embedding, cfg.kind, cfg.flow, cfg.curvature,
                                    rng=ts.rng, threads=cfg.threads, pass_index=ts.flow_passes)
    except NonFiniteState:
        log.warning("flow pass %d produced non-finite state; previous state kept", ts.flow_passes)
        ts.flow_passes += 1
        return None
    ts.embedding = new_emb
    ts.flow_reports.append(report)
    ts.curves.append(_row(epoch=ts.epoch, split="flow", kappa_var=report.kappa_variance,
                          kappa_max=report.max_abs_kappa, pass_index=report.pass_index))
    ts.flow_passes += 1
    return report


def flow_only(graph, state: EmbeddingState, kind: ModelKind, flow_cfg: FlowConfig,
              curvature_cfg: CurvatureConfig, passes: int, seed=0, threads=None):
    """Run ``passes`` consecutive flow passes without baseline epochs.

    Returns the final state and the list of :class:`FlowReport`.
    """
    rng = np.random.default_rng(seed)
    reports: list[FlowReport] = []
    for p in range(passes):
        state, rep = flow_pass(graph, state, kind, flow_cfg, curvature_cfg, rng=rng,
                               threads=threads, pass_index=p)
        reports.append(rep)
    return state, reports
