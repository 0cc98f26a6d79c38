#!/usr/bin/env python3
"""
Pruebas del preentrenamiento, el ajuste fino, los checkpoints y las
repeticiones por semilla sobre grafos chicos.
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.errors import CheckpointError, SamplingError
from core.graph import generate_sbm
from core.node2vec import Node2VecConfig, node2vec
from training.checkpoint import Checkpoint
from training.config import FinetuneConfig, PretrainConfig, RunConfig
from training.model import PretrainNetwork, build_finetune_model, network_from_checkpoint
from training.pipeline import (assert_no_leakage, dot_baseline_auc, epochs_to_threshold, evaluate,
                               finetune, prepare_dataset, pretrain, summarize)
from utils.statistic import Statistic

DIM = 8
TINY_PRE = PretrainConfig(epochs=3, steps=5, gat_heads=2, gat_head_dim=4, transformer_layers=1,
                          transformer_heads=2, ffn_dim=8, enhance_dim=4, distant_per_node=2)
TINY_FT = FinetuneConfig(epochs=3, bottleneck=2)


def _dataset(seed=0, name="fuente"):
    graph = generate_sbm([15, 15], 0.5, 0.05, seed=seed, name=name)
    x_init = np.random.default_rng(seed).normal(size=(graph.num_nodes, DIM))
    return prepare_dataset(graph, x_init, seed=seed)


@pytest.fixture(scope="module")
def pretrained():
    dataset = _dataset(0)
    run_cfg = RunConfig(pretrain=TINY_PRE, finetune=TINY_FT)
    return dataset, pretrain(dataset, TINY_PRE, run_cfg), run_cfg


def test_sin_fuga_de_datos():
    dataset = _dataset(1)
    assert_no_leakage(dataset.train_graph, dataset.split)
    assert dataset.train_graph.num_edges == len(dataset.split.train_pos)
    with pytest.raises(AssertionError):
        assert_no_leakage(dataset.graph, dataset.split)


def test_una_epoca_un_registro():
    dataset = _dataset(2)
    result = pretrain(dataset, replace(TINY_PRE, epochs=1))
    assert len(result.stream.select(stage="pretrain", split="train")) == 1
    assert len(result.stream.select(stage="pretrain", split="val")) == 1
    assert result.epochs_run == 1 and result.best_epoch == 1


def test_registros_completos(pretrained):
    _, result, _ = pretrained
    for record in result.stream.records:
        assert record["stage"] == "pretrain"
        for key in ("auc", "f1", "ap", "loss_link", "loss_con", "loss_total", "trainable_params"):
            assert record[key] is not None
        assert 0.0 <= record["auc"] <= 1.0
    assert 1 <= result.best_epoch <= result.epochs_run <= TINY_PRE.epochs


def test_parada_temprana():
    dataset = _dataset(3)
    cfg = replace(TINY_PRE, epochs=30, patience=2, lr=1e-6)
    result = pretrain(dataset, cfg)
    assert result.epochs_run <= result.best_epoch + cfg.patience


def test_evaluacion_determinista(pretrained):
    dataset, result, _ = pretrained
    first = evaluate(result.network, dataset.split, "test")
    second = evaluate(result.network, dataset.split, "test")
    assert first == second


def test_checkpoint_reproduce_la_evaluacion(pretrained, tmp_path):
    dataset, result, _ = pretrained
    path = str(tmp_path / "best.gaat")
    result.checkpoint.save(path)
    loaded = Checkpoint.load(path, expected_fingerprint=result.checkpoint.fingerprint)
    network = network_from_checkpoint(loaded, dataset.train_graph, dataset.x_init)
    expected = result.network.predict(dataset.split.labeled("test")[0])
    assert np.array_equal(network.predict(dataset.split.labeled("test")[0]), expected)


def test_sin_contrastiva_anula_la_perdida():
    dataset = _dataset(4)
    result = pretrain(dataset, replace(TINY_PRE, non_con=True, epochs=2))
    assert all(r["loss_con"] == 0.0 for r in result.stream.records)


def test_sin_codificador_ni_difusion():
    dataset = _dataset(5)
    cfg = replace(TINY_PRE, non_ft=True, non_aug=True, epochs=2)
    result = pretrain(dataset, cfg)
    assert not any(name.startswith("encoder.") for name in result.network.params)
    assert np.array_equal(result.network.x.values, dataset.x_init)


def test_ajuste_fino_congela_el_backbone(pretrained):
    _, source_result, run_cfg = pretrained
    target = _dataset(7, name="destino")
    source = source_result.checkpoint
    result = finetune(target, source, TINY_FT, run_cfg)
    params = result.network.params
    trainable = {n for n in params if params.trainable[n]}
    assert trainable == {"gat.att", "adapter.w1", "adapter.w2", "adapter.w3",
                         "output.layernorm.scale", "output.layernorm.shift", "score.psi"}
    heads = np.concatenate([source.params[f"gat.head{k}.weight"] for k in range(TINY_PRE.gat_heads)], axis=1)
    assert np.array_equal(params["gat.weight"].values, heads)
    for name in ("enhance.weight", "enhance.att"):
        assert np.array_equal(params[name].values, source.params[name])


def test_ajuste_fino_sin_adaptador(pretrained):
    _, source_result, run_cfg = pretrained
    cfg = replace(TINY_FT, non_sa=True)
    result = finetune(_dataset(8, name="destino"), source_result.checkpoint, cfg, run_cfg)
    assert not any(name.startswith("adapter.") for name in result.network.params)


def test_ajuste_fino_tradicional(pretrained):
    _, source_result, run_cfg = pretrained
    cfg = replace(TINY_FT, trad=True)
    result = finetune(_dataset(9, name="destino"), source_result.checkpoint, cfg, run_cfg)
    params = result.network.params
    assert {n for n in params if params.trainable[n]} == {"enhance.weight", "enhance.att", "score.psi"}
    assert isinstance(result.network, PretrainNetwork)


def test_ajuste_fino_desde_cero():
    cfg = replace(TINY_FT, scratch=True)
    run_cfg = RunConfig(pretrain=TINY_PRE, finetune=cfg)
    result = finetune(_dataset(10), None, cfg, run_cfg)
    assert result.epochs_run >= 1
    with pytest.raises(ValueError):
        finetune(_dataset(10), None, TINY_FT, run_cfg)


def test_dimension_incompatible(pretrained):
    _, source_result, _ = pretrained
    with pytest.raises(CheckpointError):
        build_finetune_model(source_result.checkpoint.params, DIM + 1, TINY_FT)


def test_proporcion_de_entrenables_por_defecto():
    """
    Con la configuración por defecto el ajuste fino entrena a lo sumo el 25 %
    de los escalares del preentrenamiento
    """
    pre = PretrainNetwork.initialize(256, PretrainConfig())
    params, count = build_finetune_model(pre.state_dict(), 256, FinetuneConfig())
    assert count == 2 * 256 + 4160 + 2 * 256 + 8
    assert count / pre.count_trainable() <= 0.25


def test_resumen(pretrained):
    dataset, result, _ = pretrained
    summary = summarize(result, dataset, "pretrain", "GAATNet", seed=0)
    for key in ("test_auc", "test_f1", "test_ap", "baseline_dot_auc", "best_val_auc"):
        assert 0.0 <= summary[key] <= 1.0
    assert summary["trainable_params"] + summary["frozen_params"] == summary["total_params"]
    assert summary["neg_ratio"] == 1.0
    assert summary["dataset"] == summary["source"] == "fuente"


def test_linea_de_base_producto_punto():
    dataset = _dataset(11)
    x = np.zeros_like(dataset.x_init)
    assert dot_baseline_auc(x, dataset.split) == pytest.approx(0.5)


def test_epocas_hasta_umbral():
    records = [{"split": "train", "epoch": 1, "f1": 0.9}, {"split": "val", "epoch": 1, "f1": 0.5},
               {"split": "val", "epoch": 2, "f1": 0.7}, {"split": "val", "epoch": 3, "f1": 0.8}]
    assert epochs_to_threshold(records) == 2
    assert epochs_to_threshold(records, threshold=0.95) is None


def test_extremo_a_extremo_con_node2vec():
    """
    SBM con comunidades marcadas: el preentrenamiento con embeddings node2vec
    supera el azar en prueba
    """
    graph = generate_sbm([20, 20], 0.4, 0.02, seed=3)
    x_init = node2vec(graph, Node2VecConfig(dim=DIM, walk_length=10, walks_per_node=5, window=3, epochs=2,
                                            batch_size=256), seed=3).values
    dataset = prepare_dataset(graph, x_init, seed=3)
    cfg = replace(TINY_PRE, epochs=15)
    result = pretrain(dataset, cfg)
    assert evaluate(result.network, dataset.split, "test")["auc"] > 0.5


def test_repeticiones_por_semilla():
    def command(seed):
        if seed == 3:
            raise SamplingError("muy pocas no-aristas")
        return {"test_auc": 0.5 + seed / 10, "test_f1": 0.4}

    stats = Statistic(metrics=("test_auc", "test_f1"))
    report = stats.run_seeds(command, [0, 1, 2, 3], workers=2)
    assert [r["seed"] for r in report["rows"]] == [0, 1, 2]
    assert report["mean"]["test_auc"] == pytest.approx(0.6)
    assert report["std"]["test_auc"] == pytest.approx(0.1)
    assert report["std"]["test_f1"] == pytest.approx(0.0)
    assert report["failures"][0]["seed"] == 3
    assert report["failures"][0]["exit_code"] == 3
    assert stats.table(report)[-1]["seed"] == "mean"
    assert "falla semilla 3" in stats.format_report(report)


def test_barrido_pasa_asignaciones():
    seen = []

    def command(seed, overrides):
        seen.append((seed, tuple(overrides)))
        return {"test_auc": float(overrides[0].split("=")[1])}

    reports = Statistic(metrics=("test_auc",)).sweep(command, "finetune.bottleneck", [4, 8], [0, 1])
    assert [r["value"] for r in reports] == [4, 8]
    assert reports[1]["mean"]["test_auc"] == pytest.approx(8.0)
    assert (1, ("finetune.bottleneck=4",)) in seen


def test_victorias_pareadas():
    first = [{"seed": 0, "epochs_to_f1": 3}, {"seed": 1, "epochs_to_f1": 9}, {"seed": 2, "epochs_to_f1": 4}]
    second = [{"seed": 0, "epochs_to_f1": 5}, {"seed": 1, "epochs_to_f1": 6}, {"seed": 2, "epochs_to_f1": None}]
    assert Statistic.paired_wins(first, second, "epochs_to_f1") == 2


def test_semillas_en_hilos_entrenan_todas():
    """
    Con varios hilos, la evaluación de una semilla (sin cinta) no deja sin
    gradiente al entrenamiento de las otras
    """
    def command(seed):
        dataset = _dataset(20 + seed)
        result = pretrain(dataset, replace(TINY_PRE, epochs=4, patience=4, seed=seed))
        return {"test_auc": evaluate(result.network, dataset.split, "test")["auc"],
                "epochs": result.epochs_run}

    report = Statistic(metrics=("test_auc", "epochs")).run_seeds(command, [0, 1, 2, 3], workers=4)
    assert report["failures"] == []
    assert [r["seed"] for r in report["rows"]] == [0, 1, 2, 3]
    assert all(r["epochs"] == 4 for r in report["rows"])
