#!/usr/bin/env python3
"""
Comprobaciones de extremo a extremo sobre grafos de bloques: calidad frente a
la línea de base de producto punto, distribución nula de un modelo sin
entrenar y costo por época del ajuste fino frente al preentrenamiento.

Las comparaciones pareadas de varias semillas (transferencia y orden de las
ablaciones) tardan minutos; se ejecutan con GAAT_ACEPTACION=1.
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.graph import generate_sbm
from core.node2vec import Node2VecConfig, node2vec
from training.config import FinetuneConfig, PretrainConfig, RunConfig
from training.model import PretrainNetwork
from training.pipeline import dot_baseline_auc, epochs_to_threshold, evaluate, finetune, prepare_dataset, pretrain
from utils.statistic import Statistic

DIM = 8
SMALL_PRE = PretrainConfig(epochs=20, patience=20, gat_heads=2, gat_head_dim=4, transformer_layers=1,
                           transformer_heads=2, ffn_dim=8, enhance_dim=8, distant_per_node=2, steps=10)
PAIRED_SEEDS = range(5)

slow = pytest.mark.skipif(os.environ.get("GAAT_ACEPTACION") != "1",
                          reason="corrida de aceptación larga (GAAT_ACEPTACION=1)")


def _gaussian(graph, seed):
    return np.random.default_rng(seed).normal(size=(graph.num_nodes, DIM))


def test_sbm_de_dos_bloques_supera_al_producto_punto():
    """
    SBM n=200, p_in=0.2, p_out=0.01 con X_init sin estructura: la red aprende
    las comunidades del grafo de entrenamiento y el producto punto queda en el azar
    """
    graph = generate_sbm([100, 100], 0.2, 0.01, seed=0)
    dataset = prepare_dataset(graph, _gaussian(graph, 0), seed=0)
    result = pretrain(dataset, SMALL_PRE)
    baseline = dot_baseline_auc(dataset.x_init, dataset.split, "val")
    assert result.best_val > 0.65
    assert result.best_val > baseline + 0.1


def test_modelo_sin_entrenar_queda_en_el_azar():
    """
    Sobre un grafo sin comunidades, una red recién inicializada da AUC de prueba
    en [0.35, 0.65] para 20 semillas
    """
    for seed in range(20):
        graph = generate_sbm([300], 0.04, 0.0, seed=seed)
        dataset = prepare_dataset(graph, _gaussian(graph, seed), seed=seed)
        cfg = replace(SMALL_PRE, seed=seed)
        network = PretrainNetwork(PretrainNetwork.initialize(DIM, cfg), dataset.train_graph, dataset.x_init, cfg)
        value = evaluate(network, dataset.split, "test")["auc"]
        assert 0.35 <= value <= 0.65, f"semilla {seed}: AUC {value:.3f}"


def test_ajuste_fino_mas_barato_por_epoca():
    """
    Con la arquitectura por defecto, una época de ajuste fino cuesta a lo sumo
    el 70 % de una de preentrenamiento sobre el mismo grafo (promedio de 20)
    """
    graph = generate_sbm([30, 30], 0.3, 0.02, seed=4)
    dataset = prepare_dataset(graph, np.random.default_rng(4).normal(size=(graph.num_nodes, 32)), seed=4)
    pre_cfg = PretrainConfig(epochs=20, patience=20, steps=10)
    ft_cfg = FinetuneConfig(epochs=20, patience=20)
    run_cfg = RunConfig(pretrain=pre_cfg, finetune=ft_cfg)
    source = pretrain(dataset, pre_cfg, run_cfg)
    target = finetune(dataset, source.checkpoint, ft_cfg, run_cfg)
    assert source.epochs_run == target.epochs_run == 20
    assert target.seconds_per_epoch <= 0.7 * source.seconds_per_epoch


def _node2vec_dataset(sizes, seed):
    graph = generate_sbm(sizes, 0.3, 0.01, seed=seed)
    cfg = Node2VecConfig(dim=16, walk_length=10, walks_per_node=5, window=3, epochs=2, batch_size=512)
    return prepare_dataset(graph, node2vec(graph, cfg, seed=seed).values, seed=seed)


@slow
def test_preentrenado_llega_antes_que_desde_cero():
    source_data = _node2vec_dataset([40, 40], 10)
    target_data = _node2vec_dataset([30, 30], 11)
    pre_cfg = replace(SMALL_PRE, epochs=60)
    source = pretrain(source_data, pre_cfg).checkpoint
    pretrained, scratch = [], []
    for seed in PAIRED_SEEDS:
        ft_cfg = FinetuneConfig(epochs=60, patience=60, bottleneck=4, seed=seed)
        run_cfg = RunConfig(pretrain=pre_cfg, finetune=ft_cfg)
        for rows, cfg, ckpt in ((pretrained, ft_cfg, source), (scratch, replace(ft_cfg, scratch=True), None)):
            result = finetune(target_data, ckpt, cfg, replace(run_cfg, finetune=cfg))
            rows.append({"seed": seed, "epochs_to_f1": epochs_to_threshold(result.stream.select(stage="finetune"))})
    assert Statistic.paired_wins(pretrained, scratch, "epochs_to_f1") >= 4


@slow
def test_orden_de_las_ablaciones():
    dataset = _node2vec_dataset([40, 40], 12)
    variants = {"full": {}, "non_con": {"non_con": True}, "non_aug": {"non_aug": True},
                "dot": {"score_dot": True}}
    means = {}
    for name, flags in variants.items():
        aucs = []
        for seed in PAIRED_SEEDS:
            result = pretrain(dataset, replace(SMALL_PRE, epochs=60, seed=seed, **flags))
            aucs.append(evaluate(result.network, dataset.split, "test")["auc"])
        means[name] = float(np.mean(aucs))
    assert means["full"] >= means["non_con"] >= means["non_aug"]
    assert means["full"] >= means["dot"]
