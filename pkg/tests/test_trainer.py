import logging
import math

import numpy as np
import pytest

from conftest import random_graph
from riccikge.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from riccikge.errors import CorruptCheckpoint, NonFiniteLoss, VersionMismatch
from riccikge.kg import KnowledgeGraph
from riccikge.models import EmbeddingState, ModelKind, init_state
from riccikge.trainer import TrainConfig, baseline_epoch, flow_only, new_train_state, train
from riccikge.flow import FlowConfig
from riccikge.curvature import CurvatureConfig


def small_cfg(**kw):
    base = dict(dim=4, epochs_max=4, batch_size=8, n_negatives=2, lr_entities=0.05, lr_rel=0.05,
                margin=2.0, flow_interval=2, eval_every=2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("model", ["transe", "rotate", "distmult"])
def test_checkpoint_round_trip(tmp_path, model):
    kind = ModelKind(model, margin=3.0, offset=0.5)
    state = init_state(kind, 5, 2, 6, np.random.default_rng(0))
    state.step = 17
    save_checkpoint(kind, state, tmp_path / "m.ckpt")
    kind2, back = load_checkpoint(tmp_path / "m.ckpt")
    assert kind2 == kind and back.step == 17
    assert back.entity.tobytes() == state.entity.tobytes()
    assert back.relation.tobytes() == state.relation.tobytes()


def test_truncated_checkpoint(tmp_path):
    kind = ModelKind("transe")
    raw = checkpoint_bytes(kind, init_state(kind, 3, 1, 4, np.random.default_rng(0)))
    (tmp_path / "m.ckpt").write_bytes(raw[:-20])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_dim_guard(tmp_path):
    kind = ModelKind("transe")
    save_checkpoint(kind, init_state(kind, 3, 1, 32, np.random.default_rng(0)), tmp_path / "m.ckpt")
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "m.ckpt", expected_dim=64)
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "m.ckpt", expected_model="rotate")
    (tmp_path / "x.ckpt").write_bytes(b"RKGM99" + b"\0" * 80)
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "x.ckpt")


def test_zero_gradient_epoch_is_fixed_point():
    # positive (0, 0, 1) has d = 0; every corruption has d >= 1 > margin
    g = KnowledgeGraph.from_arrays(3, 1, [(0, 0, 1)])
    cfg = TrainConfig(dim=1, batch_size=4, n_negatives=8, margin=0.5, flow_interval=math.inf)
    ts = new_train_state(g, cfg)
    ts.embedding = EmbeddingState(np.array([[0.0], [1.0], [50.0]]), np.array([[1.0]]))
    before = ts.embedding.copy()
    assert baseline_epoch(ts, g, cfg) == 0.0
    np.testing.assert_array_equal(ts.embedding.entity, before.entity)
    np.testing.assert_array_equal(ts.embedding.relation, before.relation)
    assert ts.epoch == 1


def test_non_finite_loss_restores_state():
    g = random_graph(n_entities=6, n_triples=10, seed=0)
    cfg = small_cfg(flow_interval=math.inf)
    ts = new_train_state(g, cfg)
    ts.embedding.entity[0, 0] = np.nan
    before = ts.embedding.copy()
    with pytest.raises(NonFiniteLoss):
        with np.errstate(invalid="ignore"):
            baseline_epoch(ts, g, cfg)
    np.testing.assert_array_equal(ts.embedding.entity, before.entity)


def test_config_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(flow_interval=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    cfg = TrainConfig.from_dict({"flow_interval": "inf", "dim": "8", "normalize": "true"})
    assert math.isinf(cfg.flow_interval) and cfg.dim == 8 and cfg.normalize and not cfg.flow_enabled
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})


def test_train_writes_artifacts(tmp_path, caplog):
    g = random_graph(n_entities=12, n_triples=30, n_valid=4, seed=2)
    with caplog.at_level(logging.WARNING):
        result = train(g, small_cfg(), out_dir=tmp_path)
    for name in ("best.ckpt", "last.ckpt", "curves.csv", "flow.csv"):
        assert (tmp_path / name).exists()
    assert result.epochs == 4 and len(result.flow_reports) == 2
    assert "admissibility cap" in caplog.text  # beta = 0.1 exceeds the corollary cap
    splits = [row["split"] for row in result.curves]
    assert splits.count("flow") == 2 and splits.count("valid") == 2


def test_ablation_identity():
    g = random_graph(n_entities=12, n_triples=30, seed=4)
    cfg = small_cfg(flow_interval=math.inf, epochs_max=5)
    result = train(g, cfg)
    ts = new_train_state(g, cfg)
    losses = [baseline_epoch(ts, g, cfg) for _ in range(5)]
    assert [row["loss"] for row in result.curves] == losses
    assert result.last.entity.tobytes() == ts.embedding.entity.tobytes()


def test_adam_optimizer_runs():
    g = random_graph(n_entities=12, n_triples=30, seed=5)
    result = train(g, small_cfg(optimizer="adam", flow_interval=math.inf, epochs_max=3))
    assert result.last.is_finite()


def test_determinism_with_threads(tmp_path):
    g = random_graph(n_entities=14, n_triples=40, n_valid=4, seed=6)
    cfg = small_cfg(threads=8)
    train(g, cfg, out_dir=tmp_path / "a")
    train(g, cfg, out_dir=tmp_path / "b")
    for name in ("best.ckpt", "last.ckpt", "curves.csv", "flow.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    single = small_cfg(threads=1)
    train(g, single, out_dir=tmp_path / "c")
    assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "c" / "last.ckpt").read_bytes()


def test_flow_only_reports_each_pass():
    g = random_graph(n_entities=10, n_triples=20, seed=7)
    kind = ModelKind("transe")
    state = init_state(kind, 10, 2, 4, np.random.default_rng(0))
    final, reports = flow_only(g, state, kind, FlowConfig(loss="quadratic"), CurvatureConfig(), passes=3)
    assert [r.pass_index for r in reports] == [0, 1, 2] and final.step == 3
