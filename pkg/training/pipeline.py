"""
Bucle de entrenamiento en dos etapas: preentrenamiento sobre el grafo fuente y
ajuste fino con parámetros congelados sobre el grafo destino.
"""
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from core import tensor as T
from core.errors import NumericError
from core.graph import Graph
from core.metrics import auc, evaluate_scores
from core.objective import contrastive_loss, link_loss, total_loss
from core.params import adam_step
from core.splits import EdgeSplit, make_split
from training.checkpoint import Checkpoint
from training.config import FinetuneConfig, PretrainConfig, RunConfig, architecture_fingerprint
from training.model import (FinetuneNetwork, LinkModel, PretrainNetwork, build_finetune_model,
                            trad_network)
from utils.logs import logger
from utils.report import MetricsStream


@dataclass
class LinkDataset:
    """
    Grafo completo, vista de entrenamiento, partición con negativos y X_init.
    """
    graph: Graph
    train_graph: Graph
    split: EdgeSplit
    x_init: np.ndarray

    @property
    def name(self) -> str:
        return self.graph.name

    @property
    def dim(self) -> int:
        return int(self.x_init.shape[1])


@dataclass
class TrainResult:
    """Resultado de una etapa de entrenamiento (modelo restaurado al mejor estado)."""
    network: LinkModel
    checkpoint: Checkpoint
    stream: MetricsStream
    best_epoch: int
    best_val: float
    epochs_run: int
    seconds_per_epoch: float
    trainable_params: int


def assert_no_leakage(train_graph: Graph, split: EdgeSplit):
    """La vista de entrenamiento no puede contener positivos de validación ni de prueba."""
    for which in ("val", "test"):
        for i, j in split.positives(which).tolist():
            if train_graph.has_edge(i, j):
                raise AssertionError(f"Fuga de datos: la arista ({i}, {j}) de {which} está en el grafo de entrenamiento")


def prepare_dataset(graph: Graph, x_init: np.ndarray, ratios: Sequence[int] = (8, 1, 1), neg_ratio=1,
                    seed: int = 0, split: Optional[EdgeSplit] = None) -> LinkDataset:
    """
    Arma el conjunto de datos de una corrida (partición nueva o manifiesto dado).
    """
    x_init = np.asarray(x_init, dtype=np.float64)
    if x_init.ndim != 2 or x_init.shape[0] != graph.num_nodes:
        raise ValueError(f"X_init {x_init.shape} no corresponde a un grafo de {graph.num_nodes} nodos")
    if split is None:
        split, train_graph = make_split(graph, ratios, neg_ratio, seed)
    else:
        train_graph = Graph(graph.num_nodes, split.train_pos, id_map=graph.id_map, name=graph.name)
    assert_no_leakage(train_graph, split)
    return LinkDataset(graph=graph, train_graph=train_graph, split=split, x_init=x_init)


def _loss_terms(network: LinkModel, z, edges, labels, pos_edges, lam: float, tau: float, policy: str):
    scores = network.score(z, edges)
    l_link = link_loss(scores, labels)
    if lam > 0:
        l_con = contrastive_loss(z, pos_edges, edges, tau, policy)
        return scores, l_link, l_con, total_loss(l_link, l_con, lam)
    return scores, l_link, None, l_link


def evaluate(network: LinkModel, split: EdgeSplit, which: str = "val", stream: Optional[MetricsStream] = None,
             stage: str = "eval", epoch: Optional[int] = None, lam: float = 0.0, tau: float = 0.5,
             policy: str = "anchor", theta: float = 0.5) -> Dict:
    """
    Evalúa en modo inferencia (sin dropout) sobre positivos y negativos de una partición.

    Returns:
        Registro con auc, f1, ap y las pérdidas
    """
    edges, labels = split.labeled(which)
    if len(edges) == 0:
        raise ValueError(f"La partición '{which}' está vacía")
    with T.no_grad():
        z = network.forward(train=False)
        scores, l_link, l_con, total = _loss_terms(network, z, edges, labels, split.positives(which),
                                                   lam, tau, policy)
    record = dict(stage=stage, epoch=epoch, split=which, **evaluate_scores(scores.values[:, 0], labels, theta),
                  loss_link=l_link.item(), loss_con=0.0 if l_con is None else l_con.item(),
                  loss_total=total.item(), trainable_params=network.params.count_trainable())
    if stream is not None:
        record = stream.emit(**record)
    return record


def fit(network: LinkModel, split: EdgeSplit, cfg, stage: str, stream: MetricsStream,
        make_checkpoint, checkpoint_path: Optional[str] = None) -> TrainResult:
    """
    Bucle por épocas: pérdida total, paso reverso, Adam sobre los entrenables,
    AUC de validación y parada temprana tras `cfg.patience` épocas sin mejora
    estricta. El mejor estado se guarda (y se escribe si hay ruta) al mejorar.

    Args:
        network: Red a entrenar
        split: Partición con negativos
        cfg: PretrainConfig o FinetuneConfig
        stage: 'pretrain' o 'finetune'
        stream: Flujo de métricas
        make_checkpoint: Función (estado, mejor AUC, época) -> Checkpoint
        checkpoint_path: Ruta del mejor checkpoint
    """
    params = network.params
    trainable = params.count_trainable()
    lam = cfg.effective_lambda
    edges, labels = split.labeled("train")
    pos_edges = split.positives("train")

    best_val, best_epoch, since_best = -np.inf, 0, 0
    best_state = params.state_dict()
    checkpoint = make_checkpoint(best_state, float("nan"), 0)
    times: List[float] = []
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        z = network.forward(train=True, epoch=epoch)
        scores, l_link, l_con, total = _loss_terms(network, z, edges, labels, pos_edges, lam,
                                                   cfg.tau, cfg.candidate_policy)
        loss_value = total.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"[{stage}] pérdida no finita en la época {epoch}")
        T.backward(total)
        adam_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        elapsed = time.perf_counter() - start
        times.append(elapsed)

        stream.emit(stage=stage, epoch=epoch, split="train", **evaluate_scores(scores.values[:, 0], labels),
                    loss_link=l_link.item(), loss_con=0.0 if l_con is None else l_con.item(),
                    loss_total=loss_value, seconds_per_epoch=elapsed, trainable_params=trainable)
        val = evaluate(network, split, "val", stream, stage, epoch, lam, cfg.tau, cfg.candidate_policy)
        logger.log(f"[{stage}] época {epoch}: pérdida {loss_value:.4f}, AUC val {val['auc']:.4f} ({elapsed:.2f} s)")

        if val["auc"] > best_val:
            best_val, best_epoch, since_best = val["auc"], epoch, 0
            best_state = params.state_dict()
            checkpoint = make_checkpoint(best_state, best_val, best_epoch)
            if checkpoint_path is not None:
                checkpoint.save(checkpoint_path)
        else:
            since_best += 1
            if since_best >= cfg.patience:
                logger.log(f"[{stage}] parada temprana en la época {epoch} (mejor: {best_epoch})")
                break

    params.load_state(best_state)
    return TrainResult(network=network, checkpoint=checkpoint, stream=stream, best_epoch=best_epoch,
                       best_val=float(best_val), epochs_run=epoch,
                       seconds_per_epoch=float(np.mean(times)) if times else 0.0, trainable_params=trainable)


def _checkpoint_factory(network: LinkModel, kind: str, source: str, fingerprint: str, run_cfg: RunConfig):
    params = network.params
    trainable = tuple(n for n in params if params.trainable[n])
    config = run_cfg.to_dict()

    def make(state, best_val, best_epoch):
        return Checkpoint(params=state, fingerprint=fingerprint, source=source, best_val=best_val,
                          best_epoch=best_epoch, kind=kind, config=config, trainable=trainable)
    return make


def dataset_fingerprint(cfg: PretrainConfig, run_cfg: RunConfig, dataset: LinkDataset) -> str:
    """Huella de arquitectura con el ancho real de X_init (puede venir de un archivo)."""
    return architecture_fingerprint(cfg, replace(run_cfg.node2vec, dim=dataset.dim))


def pretrain(dataset: LinkDataset, cfg: PretrainConfig, run_cfg: Optional[RunConfig] = None,
             stream: Optional[MetricsStream] = None, checkpoint_path: Optional[str] = None) -> TrainResult:
    """
    Preentrenamiento sobre el grafo fuente: difusión de X_init, GAT de 4 cabezas,
    codificador con sesgo lejano, salida reforzada y pérdida BCE + InfoNCE.

    Args:
        dataset: Grafo fuente con partición y X_init
        cfg: Configuración del preentrenamiento
        run_cfg: Configuración completa (se guarda en el checkpoint)
        stream: Flujo de métricas (por defecto en memoria)
        checkpoint_path: Ruta donde escribir el mejor checkpoint

    Returns:
        TrainResult con la red en su mejor estado
    """
    run_cfg = run_cfg or RunConfig(pretrain=cfg)
    stream = stream or MetricsStream()
    params = PretrainNetwork.initialize(dataset.dim, cfg)
    network = PretrainNetwork(params, dataset.train_graph, dataset.x_init, cfg)
    logger.log(f"Preentrenamiento en {dataset.name}: {params.count_trainable()} parámetros entrenables")
    fingerprint = dataset_fingerprint(cfg, run_cfg, dataset)
    factory = _checkpoint_factory(network, "pretrain", dataset.name, fingerprint, run_cfg)
    return fit(network, dataset.split, cfg, "pretrain", stream, factory, checkpoint_path)


def source_parameters(source: Optional[Checkpoint], cfg: FinetuneConfig, pretrain_cfg: PretrainConfig,
                      dim: int):
    """
    Parámetros de origen del ajuste fino y su cantidad de escalares entrenables.
    Con `scratch` son los de una red de preentrenamiento recién inicializada.
    """
    if cfg.scratch:
        params = PretrainNetwork.initialize(dim, pretrain_cfg, seed=cfg.seed)
        return params.state_dict(), params.count_trainable(), "scratch"
    if source is None:
        raise ValueError("El ajuste fino requiere un checkpoint salvo con scratch")
    trainable = set(source.trainable) or set(source.params)
    count = int(sum(source.params[n].size for n in trainable if n in source.params))
    return source.params, count, source.source


def finetune(dataset: LinkDataset, source: Optional[Checkpoint], cfg: FinetuneConfig,
             run_cfg: Optional[RunConfig] = None, stream: Optional[MetricsStream] = None,
             checkpoint_path: Optional[str] = None) -> TrainResult:
    """
    Ajuste fino sobre el grafo destino: X_init sin difusión, backbone congelado y
    Adam solo sobre LayerNorm, adaptador, vector de atención del GAT y ψ.

    Args:
        dataset: Grafo destino con partición y X_init
        source: Checkpoint de preentrenamiento (None con `scratch`)
        cfg: Configuración del ajuste fino
        run_cfg: Configuración completa
        stream: Flujo de métricas
        checkpoint_path: Ruta del mejor modelo

    Returns:
        TrainResult
    """
    run_cfg = run_cfg or RunConfig(finetune=cfg)
    stream = stream or MetricsStream()
    state, _, source_name = source_parameters(source, cfg, run_cfg.pretrain, dataset.dim)
    params, count = build_finetune_model(state, dataset.dim, cfg)
    if cfg.trad:
        network = trad_network(params, dataset.train_graph, dataset.x_init, run_cfg.pretrain, cfg)
    else:
        network = FinetuneNetwork(params, dataset.train_graph, dataset.x_init, cfg)
    logger.log(f"Ajuste fino en {dataset.name} desde {source_name}: {count} parámetros entrenables")
    fingerprint = source.fingerprint if source is not None else dataset_fingerprint(run_cfg.pretrain, run_cfg, dataset)
    factory = _checkpoint_factory(network, "finetune", dataset.name, fingerprint, run_cfg)
    return fit(network, dataset.split, cfg, "finetune", stream, factory, checkpoint_path)


def dot_baseline_auc(x_init: np.ndarray, split: EdgeSplit, which: str = "test") -> float:
    """AUC de puntuar cada par con el producto punto de X_init."""
    edges, labels = split.labeled(which)
    x = np.asarray(x_init, dtype=np.float64)
    scores = np.einsum("ij,ij->i", x[edges[:, 0]], x[edges[:, 1]])
    return auc(scores, labels)


def epochs_to_threshold(records: List[Dict], metric: str = "f1", threshold: float = 0.7,
                        split: str = "val") -> Optional[int]:
    """Primera época cuya métrica en `split` alcanza el umbral (None si nunca)."""
    for record in records:
        if record["split"] == split and record.get(metric) is not None and record[metric] >= threshold:
            return int(record["epoch"])
    return None


def summarize(result: TrainResult, dataset: LinkDataset, stage: str, variant: str, seed: int,
              source_name: str = "", source_trainable: Optional[int] = None,
              f1_threshold: float = 0.7) -> Dict:
    """
    Resumen de una corrida: métricas de prueba del mejor modelo, línea de base
    de producto punto y conteos de parámetros.
    """
    test = evaluate(result.network, dataset.split, "test", stage=stage)
    counts = result.network.params.count_parameters()
    summary = {
        "stage": stage,
        "dataset": dataset.name,
        "source": source_name or dataset.name,
        "variant": variant,
        "neg_ratio": float(dataset.split.neg_ratio),
        "seed": int(seed),
        "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val,
        "epochs_run": result.epochs_run,
        "test_auc": test["auc"],
        "test_f1": test["f1"],
        "test_ap": test["ap"],
        "baseline_dot_auc": dot_baseline_auc(dataset.x_init, dataset.split, "test"),
        "trainable_params": counts["trainable"],
        "frozen_params": counts["frozen"],
        "total_params": counts["total"],
        "seconds_per_epoch": result.seconds_per_epoch,
    }
    if source_trainable:
        summary["source_trainable_params"] = int(source_trainable)
        summary["trainable_ratio"] = counts["trainable"] / source_trainable
    summary["f1_threshold"] = f1_threshold
    summary["epochs_to_f1"] = epochs_to_threshold(result.stream.select(stage=stage), "f1", f1_threshold)
    return summary
