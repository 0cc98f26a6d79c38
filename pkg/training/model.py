"""
Ensamblado de las redes de preentrenamiento y de ajuste fino sobre el registro
de parámetros.
"""
from dataclasses import replace
from typing import Dict, Optional, Tuple

import numpy as np

from core import tensor as T
from core.diffusion import diffuse, normalized_adjacency
from core.distant import build_distant_table
from core.errors import CheckpointError
from core.graph import Graph
from core.layers import (AdapterParams, DistantBiasParams, GatLayerParams, TransformerParams,
                         adapter_forward, attention_enhance, distant_bias, gat_forward,
                         init_adapter, init_distant_bias, init_gat, init_transformer,
                         transformer_encoder)
from core.objective import edge_scores
from core.params import ModelParams, set_trainable
from core.rng import substream
from core.tensor import Tensor
from training.checkpoint import Checkpoint
from training.config import FinetuneConfig, PretrainConfig
from utils.logs import logger

PSI_INIT = 0.1


class LinkModel:
    """
    Base común: grafo de paso de mensajes, entrada constante X y puntuación.

    Attributes:
        params: Registro de parámetros
        graph: Vista de entrenamiento (sin aristas de validación ni prueba)
        x: Entrada n×d₀ (constante)
        scorer: 'euclid' o 'dot'
        dropout: Tasa de dropout
        seed: Semilla de los sub-flujos de dropout
    """
    kind = "base"

    def __init__(self, params: ModelParams, graph: Graph, x: np.ndarray, scorer: str,
                 dropout: float, seed: int):
        if x.shape[0] != graph.num_nodes:
            raise ValueError(f"X tiene {x.shape[0]} filas pero el grafo tiene {graph.num_nodes} nodos")
        self.params = params
        self.graph = graph
        self.x = Tensor(x)
        self.scorer = scorer
        self.dropout = dropout
        self.seed = seed

    def dropout_rng(self, train: bool, epoch: int) -> Optional[np.random.Generator]:
        return substream(self.seed, "dropout", epoch) if train else None

    def forward(self, train: bool = False, epoch: int = 0) -> Tensor:
        raise NotImplementedError

    def score(self, z: Tensor, edges: np.ndarray) -> Tensor:
        psi = self.params["score.psi"] if self.scorer == "euclid" else None
        return edge_scores(z, edges, psi, self.scorer)

    def predict(self, edges: np.ndarray) -> np.ndarray:
        """Puntajes en modo evaluación (sin dropout ni cinta)."""
        with T.no_grad():
            z = self.forward(train=False)
            return self.score(z, edges).values[:, 0].copy()


class PretrainNetwork(LinkModel):
    """
    X -> difusión -> GAT multi-cabeza -> codificador con sesgo lejano ->
    salida con atención reforzada (d″).
    """
    kind = "pretrain"

    def __init__(self, params: ModelParams, graph: Graph, x_init: np.ndarray, cfg: PretrainConfig,
                 seed: Optional[int] = None, diffuse_input: bool = True):
        seed = cfg.seed if seed is None else seed
        alpha = 0.0 if (cfg.non_aug or not diffuse_input) else cfg.alpha
        x = diffuse(x_init, normalized_adjacency(graph), alpha, cfg.steps) if alpha > 0 else np.asarray(x_init)
        super().__init__(params, graph, x, cfg.scorer, cfg.dropout, seed)
        self.cfg = cfg
        self.gat = GatLayerParams.from_registry(params, "gat")
        self.enhance = GatLayerParams.from_registry(params, "enhance")
        self.encoder: Optional[TransformerParams] = None
        self.distant: Optional[DistantBiasParams] = None
        self.averaging = None
        if "encoder.0.attn.query" in params:
            self.encoder = TransformerParams.from_registry(params, cfg.transformer_heads)
            self.distant = DistantBiasParams.from_registry(params)
            table = build_distant_table(graph, cfg.hops, cfg.distant_per_node, seed)
            self.averaging = table.averaging_matrix()

    @staticmethod
    def initialize(d0: int, cfg: PretrainConfig, seed: Optional[int] = None) -> ModelParams:
        """
        Registro nuevo: pesos Xavier, vectores de atención y sesgos en cero,
        LayerNorm en (1, 0) y ψ = 0.1.
        """
        rng = substream(cfg.seed if seed is None else seed, "init")
        params = ModelParams()
        init_gat(params, "gat", d0, cfg.gat_head_dim, cfg.gat_heads, rng)
        if not cfg.non_ft:
            init_distant_bias(params, cfg.model_dim, rng)
            init_transformer(params, cfg.model_dim, cfg.ffn_dim, cfg.transformer_layers,
                             cfg.transformer_heads, rng)
        init_gat(params, "enhance", cfg.model_dim, cfg.enhance_dim, 1, rng)
        params.add("score.psi", np.full((1, cfg.enhance_dim), PSI_INIT), trainable=not cfg.score_dot)
        return params

    def forward(self, train: bool = False, epoch: int = 0) -> Tensor:
        rng = self.dropout_rng(train, epoch)
        z = gat_forward(self.x, self.graph, self.gat, self.dropout, train, rng)
        if self.encoder is not None:
            bias = distant_bias(z, self.averaging, self.distant)
            z = transformer_encoder(z, bias, self.encoder, self.dropout, train, rng)
        return attention_enhance(z, self.graph, self.enhance)


class FinetuneNetwork(LinkModel):
    """
    X_init (sin difusión) -> GAT de una cabeza -> auto-adaptador -> LayerNorm
    -> salida con atención reforzada.
    """
    kind = "finetune"

    def __init__(self, params: ModelParams, graph: Graph, x_init: np.ndarray, cfg: FinetuneConfig,
                 seed: Optional[int] = None):
        super().__init__(params, graph, np.asarray(x_init), cfg.scorer, cfg.dropout,
                         cfg.seed if seed is None else seed)
        self.cfg = cfg
        self.gat = GatLayerParams.from_registry(params, "gat")
        self.enhance = GatLayerParams.from_registry(params, "enhance")
        self.adapter: Optional[AdapterParams] = None
        if "adapter.w1" in params:
            self.adapter = AdapterParams.from_registry(params)
        self.norm_scale = params["output.layernorm.scale"]
        self.norm_shift = params["output.layernorm.shift"]

    def forward(self, train: bool = False, epoch: int = 0) -> Tensor:
        rng = self.dropout_rng(train, epoch)
        z = gat_forward(self.x, self.graph, self.gat, self.dropout, train, rng)
        if self.adapter is not None:
            z = adapter_forward(z, self.adapter)
        z = T.layer_norm(z, self.norm_scale, self.norm_shift)
        return attention_enhance(z, self.graph, self.enhance)


def _last_layernorm(source: Dict[str, np.ndarray], width: int) -> Tuple[np.ndarray, np.ndarray]:
    idx = 0
    while f"encoder.{idx + 1}.layernorm.ffn.scale" in source:
        idx += 1
    key = f"encoder.{idx}.layernorm.ffn"
    if f"{key}.scale" not in source:
        return np.ones((1, width)), np.zeros((1, width))
    return source[f"{key}.scale"], source[f"{key}.shift"]


def build_finetune_model(source: Dict[str, np.ndarray], target_dim: int, cfg: FinetuneConfig,
                         seed: Optional[int] = None) -> Tuple[ModelParams, int]:
    """
    Registro del ajuste fino a partir de los parámetros preentrenados.

    - gat.weight: concatenación por columnas de las cabezas preentrenadas (congelada)
    - gat.att: vector de atención nuevo (entrenable)
    - adapter.w1/w2/w3: nuevos (entrenables), salvo con non_sa
    - output.layernorm.scale/shift: última LayerNorm preentrenada (entrenable)
    - enhance.*: cargados y congelados; score.psi: cargado y entrenable

    Con `trad` se conserva la red preentrenada completa y solo se entrenan
    la salida con atención reforzada y ψ.

    Args:
        source: Parámetros del checkpoint de preentrenamiento
        target_dim: Ancho d₀ de los embeddings del grafo destino
        cfg: Configuración del ajuste fino
        seed: Semilla de inicialización (por defecto cfg.seed)

    Returns:
        Tupla (registro, escalares entrenables)
    """
    seed = cfg.seed if seed is None else seed
    heads = []
    k = 0
    while f"gat.head{k}.weight" in source:
        heads.append(source[f"gat.head{k}.weight"])
        k += 1
    if not heads and "gat.weight" in source:
        heads.append(source["gat.weight"])
    if not heads:
        raise CheckpointError("El checkpoint no contiene cabezas GAT preentrenadas")
    if heads[0].shape[0] != target_dim:
        raise CheckpointError(f"d₀ del checkpoint ({heads[0].shape[0]}) distinto del destino ({target_dim})")
    for key in ("enhance.weight", "enhance.att", "score.psi"):
        if key not in source:
            raise CheckpointError(f"El checkpoint no contiene '{key}'")

    params = ModelParams()
    if cfg.trad:
        for name, values in source.items():
            params.add(name, values, decay=not _is_undecayed(name))
        count = set_trainable(params, lambda n: n.startswith("enhance.") or
                              (n == "score.psi" and not cfg.score_dot))
        return params, count

    rng = substream(seed, "init")
    weight = np.concatenate(heads, axis=1)
    width = weight.shape[1]
    params.add("gat.weight", weight, trainable=False)
    params.add("gat.att", np.zeros((2 * width, 1)))
    if not cfg.non_sa:
        init_adapter(params, width, cfg.bottleneck, rng)
    scale, shift = _last_layernorm(source, width)
    params.add("output.layernorm.scale", scale, decay=False)
    params.add("output.layernorm.shift", shift, decay=False)
    params.add("enhance.weight", source["enhance.weight"], trainable=False)
    params.add("enhance.att", source["enhance.att"], trainable=False)
    params.add("score.psi", source["score.psi"], trainable=not cfg.score_dot)
    count = params.count_trainable()
    logger.debug(f"Ajuste fino: {count} escalares entrenables de {params.count_parameters()['total']}")
    return params, count


def _is_undecayed(name: str) -> bool:
    return ".layernorm." in name or name.endswith(".bias") or ".b_a" in name or ".b_b" in name


def registry_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    """Registro con los valores y banderas guardados en un checkpoint."""
    params = ModelParams()
    trainable = set(ckpt.trainable)
    for name, values in ckpt.params.items():
        params.add(name, values, trainable=name in trainable, decay=not _is_undecayed(name))
    return params


def network_from_checkpoint(ckpt: Checkpoint, graph: Graph, x_init: np.ndarray) -> LinkModel:
    """
    Reconstruye la red guardada (preentrenamiento, ajuste fino o 'trad')
    sobre el grafo y los embeddings dados.
    """
    params = registry_from_checkpoint(ckpt)
    sections = ckpt.config
    if "output.layernorm.scale" in params:
        cfg = FinetuneConfig(**sections.get("finetune", {}))
        return FinetuneNetwork(params, graph, x_init, cfg)
    pre_cfg = PretrainConfig(**sections.get("pretrain", {}))
    if ckpt.kind == "finetune":
        return trad_network(params, graph, x_init, pre_cfg, FinetuneConfig(**sections.get("finetune", {})))
    return PretrainNetwork(params, graph, x_init, pre_cfg)


def trad_network(params: ModelParams, graph: Graph, x_init: np.ndarray, pre_cfg: PretrainConfig,
                 ft_cfg: FinetuneConfig) -> PretrainNetwork:
    """Red preentrenada completa sobre el grafo destino, sin difusión (variante 'trad')."""
    cfg = replace(pre_cfg, score_dot=ft_cfg.score_dot, dropout=ft_cfg.dropout)
    return PretrainNetwork(params, graph, x_init, cfg, seed=ft_cfg.seed, diffuse_input=False)
