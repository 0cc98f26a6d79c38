"""
Bloques de la red: GAT multi-cabeza, sesgo de vecinos lejanos, codificador
transformer con atención sesgada, auto-adaptador y cabeza de salida
con atención reforzada.

Cada bloque es una función pura de (entradas, parámetros) más un generador
explícito para el dropout.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core import tensor as T
from core.graph import Graph
from core.params import ModelParams, xavier_uniform
from core.tensor import Tensor

AGGREGATIONS = ("concat", "mean")


@dataclass
class GatLayerParams:
    """
    Parámetros de una capa GAT.

    Attributes:
        weights: Por cabeza, matriz W^(k) de d×d′
        attention: Por cabeza, vector a^(k) de forma (2d′, 1)
        aggregation: 'concat' o 'mean'
    """
    weights: List[Tensor]
    attention: List[Tensor]
    aggregation: str = "concat"

    def __post_init__(self):
        if len(self.weights) != len(self.attention) or not self.weights:
            raise ValueError("La capa GAT necesita la misma cantidad (>0) de pesos y vectores de atención")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"Agregación desconocida: {self.aggregation}")
        d_in, d_out = self.weights[0].shape
        for w, a in zip(self.weights, self.attention):
            if w.shape != (d_in, d_out) or a.shape != (2 * d_out, 1):
                raise ValueError(f"Cabezas con formas inconsistentes: W {w.shape}, a {a.shape}")

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def head_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.head_dim * self.heads if self.aggregation == "concat" else self.head_dim

    @classmethod
    def from_registry(cls, params: ModelParams, prefix: str, aggregation: str = "concat") -> "GatLayerParams":
        """Arma la capa desde '{prefix}.weight/att' o '{prefix}.head{k}.weight/att'."""
        if f"{prefix}.weight" in params:
            return cls([params[f"{prefix}.weight"]], [params[f"{prefix}.att"]], aggregation)
        weights, attention = [], []
        k = 0
        while f"{prefix}.head{k}.weight" in params:
            weights.append(params[f"{prefix}.head{k}.weight"])
            attention.append(params[f"{prefix}.head{k}.att"])
            k += 1
        if not weights:
            raise KeyError(f"No hay parámetros GAT con prefijo '{prefix}'")
        return cls(weights, attention, aggregation)


@dataclass
class AttentionParams:
    query: Tensor
    key: Tensor
    value: Tensor
    output: Tensor


@dataclass
class EncoderLayerParams:
    """Una capa del codificador: atención, FFN y dos LayerNorm."""
    attention: AttentionParams
    ffn_w_a: Tensor
    ffn_b_a: Tensor
    ffn_w_b: Tensor
    ffn_b_b: Tensor
    ln_attn_scale: Tensor
    ln_attn_shift: Tensor
    ln_ffn_scale: Tensor
    ln_ffn_shift: Tensor


@dataclass
class TransformerParams:
    """
    Attributes:
        layers: Capas del codificador
        heads: Cabezas de atención H (d_m divisible por H)
    """
    layers: List[EncoderLayerParams]
    heads: int = 4

    def __post_init__(self):
        d_model = self.model_dim
        if self.heads < 1 or d_model % self.heads:
            raise ValueError(f"d_m={d_model} no es divisible por H={self.heads}")

    @property
    def model_dim(self) -> int:
        return self.layers[0].attention.query.shape[0]

    @classmethod
    def from_registry(cls, params: ModelParams, heads: int, prefix: str = "encoder") -> "TransformerParams":
        layers = []
        idx = 0
        while f"{prefix}.{idx}.attn.query" in params:
            p = f"{prefix}.{idx}"
            layers.append(EncoderLayerParams(
                attention=AttentionParams(params[f"{p}.attn.query"], params[f"{p}.attn.key"],
                                          params[f"{p}.attn.value"], params[f"{p}.attn.output"]),
                ffn_w_a=params[f"{p}.ffn.w_a"], ffn_b_a=params[f"{p}.ffn.b_a"],
                ffn_w_b=params[f"{p}.ffn.w_b"], ffn_b_b=params[f"{p}.ffn.b_b"],
                ln_attn_scale=params[f"{p}.layernorm.attn.scale"],
                ln_attn_shift=params[f"{p}.layernorm.attn.shift"],
                ln_ffn_scale=params[f"{p}.layernorm.ffn.scale"],
                ln_ffn_shift=params[f"{p}.layernorm.ffn.shift"],
            ))
            idx += 1
        if not layers:
            raise KeyError(f"No hay capas de codificador con prefijo '{prefix}'")
        return cls(layers, heads)


@dataclass
class DistantBiasParams:
    """Mapa lineal d_m -> 1 para el sesgo de vecinos lejanos."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def from_registry(cls, params: ModelParams, prefix: str = "distant") -> "DistantBiasParams":
        return cls(params[f"{prefix}.weight"], params[f"{prefix}.bias"])


@dataclass
class AdapterParams:
    """
    Auto-adaptador residual con cuello de botella q < d′ (sin sesgos).
    """
    w1: Tensor
    w2: Tensor
    w3: Tensor

    def __post_init__(self):
        d, q = self.w1.shape
        if self.w2.shape != (q, q) or self.w3.shape != (q, d):
            raise ValueError(f"Formas del adaptador inconsistentes: {self.w1.shape}, {self.w2.shape}, {self.w3.shape}")
        if q >= d:
            raise ValueError(f"El cuello de botella q={q} debe ser menor que d′={d}")

    @property
    def bottleneck(self) -> int:
        return self.w1.shape[1]

    def count(self) -> int:
        return self.w1.values.size + self.w2.values.size + self.w3.values.size

    @classmethod
    def from_registry(cls, params: ModelParams, prefix: str = "adapter") -> "AdapterParams":
        return cls(params[f"{prefix}.w1"], params[f"{prefix}.w2"], params[f"{prefix}.w3"])


# ---------------------------------------------------------------------------
# Inicialización en el registro
# ---------------------------------------------------------------------------

def init_gat(params: ModelParams, prefix: str, d_in: int, d_out: int, heads: int,
             rng: np.random.Generator, trainable: bool = True) -> GatLayerParams:
    """Registra una capa GAT: pesos Xavier, vectores de atención en cero."""
    if heads == 1:
        params.add(f"{prefix}.weight", xavier_uniform(rng, d_in, d_out), trainable)
        params.add(f"{prefix}.att", np.zeros((2 * d_out, 1)), trainable)
    else:
        for k in range(heads):
            params.add(f"{prefix}.head{k}.weight", xavier_uniform(rng, d_in, d_out), trainable)
            params.add(f"{prefix}.head{k}.att", np.zeros((2 * d_out, 1)), trainable)
    return GatLayerParams.from_registry(params, prefix)


def init_transformer(params: ModelParams, d_model: int, d_ff: int, layers: int, heads: int,
                     rng: np.random.Generator, prefix: str = "encoder") -> TransformerParams:
    for idx in range(layers):
        p = f"{prefix}.{idx}"
        for name in ("query", "key", "value", "output"):
            params.add(f"{p}.attn.{name}", xavier_uniform(rng, d_model, d_model))
        params.add(f"{p}.ffn.w_a", xavier_uniform(rng, d_model, d_ff))
        params.add(f"{p}.ffn.b_a", np.zeros((1, d_ff)), decay=False)
        params.add(f"{p}.ffn.w_b", xavier_uniform(rng, d_ff, d_model))
        params.add(f"{p}.ffn.b_b", np.zeros((1, d_model)), decay=False)
        for block in ("attn", "ffn"):
            params.add(f"{p}.layernorm.{block}.scale", np.ones((1, d_model)), decay=False)
            params.add(f"{p}.layernorm.{block}.shift", np.zeros((1, d_model)), decay=False)
    return TransformerParams.from_registry(params, heads, prefix)


def init_distant_bias(params: ModelParams, d_model: int, rng: np.random.Generator,
                      prefix: str = "distant") -> DistantBiasParams:
    params.add(f"{prefix}.weight", xavier_uniform(rng, d_model, 1))
    params.add(f"{prefix}.bias", np.zeros((1, 1)), decay=False)
    return DistantBiasParams.from_registry(params, prefix)


def init_adapter(params: ModelParams, d_model: int, bottleneck: int, rng: np.random.Generator,
                 prefix: str = "adapter") -> AdapterParams:
    if not (1 <= bottleneck < d_model):
        raise ValueError(f"El cuello de botella q={bottleneck} debe cumplir 1 <= q < {d_model}")
    params.add(f"{prefix}.w1", xavier_uniform(rng, d_model, bottleneck))
    params.add(f"{prefix}.w2", xavier_uniform(rng, bottleneck, bottleneck))
    params.add(f"{prefix}.w3", xavier_uniform(rng, bottleneck, d_model))
    return AdapterParams.from_registry(params, prefix)


# ---------------------------------------------------------------------------
# Pasos hacia adelante
# ---------------------------------------------------------------------------

def _gat_head(x: Tensor, rows: np.ndarray, cols: np.ndarray, n: int, weight: Tensor, att: Tensor):
    h = x @ weight
    d = h.shape[1]
    score_recv = h @ T.slice_rows(att, 0, d)
    score_send = h @ T.slice_rows(att, d, 2 * d)
    e = T.leaky_relu(T.gather_rows(score_recv, rows) + T.gather_rows(score_send, cols))
    alpha = T.segment_softmax(e, rows, n)
    messages = T.gather_rows(h, cols) * alpha
    return T.elu(T.segment_sum(messages, rows, n)), alpha


def gat_forward(x: Tensor, graph: Graph, params: GatLayerParams, dropout: float = 0.0,
                train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Capa GAT: por cabeza, e_ij = LeakyReLU(aᵀ[Wx_i ‖ Wx_j]) sobre j ∈ N(i) ∪ {i},
    softmax por nodo receptor y salida ELU(Σ_j α_ij W x_j). Las cabezas se
    concatenan (o promedian) y el dropout va después de la activación.

    Args:
        x: Embeddings n×d
        graph: Grafo de paso de mensajes (vista de entrenamiento)
        params: Parámetros de la capa
        dropout: Tasa de dropout
        train: Modo entrenamiento
        rng: Generador del dropout

    Returns:
        Tensor n×(K·d′) (o n×d′ con 'mean')
    """
    if x.shape != (graph.num_nodes, params.weights[0].shape[0]):
        raise ValueError(f"Entrada GAT {x.shape} incompatible con n={graph.num_nodes}, d={params.weights[0].shape[0]}")
    rows, cols = graph.message_index
    outputs = [_gat_head(x, rows, cols, graph.num_nodes, w, a)[0]
               for w, a in zip(params.weights, params.attention)]
    if len(outputs) == 1:
        out = outputs[0]
    elif params.aggregation == "concat":
        out = T.concat_cols(outputs)
    else:
        total = outputs[0]
        for o in outputs[1:]:
            total = total + o
        out = total * (1.0 / len(outputs))
    return T.dropout(out, dropout, train, rng)


def gat_attention_weights(x: Tensor, graph: Graph, params: GatLayerParams) -> List[np.ndarray]:
    """
    Coeficientes α por cabeza, alineados con `graph.message_index`.

    Returns:
        Lista de arreglos de largo 2m + n
    """
    rows, cols = graph.message_index
    with T.no_grad():
        return [_gat_head(x, rows, cols, graph.num_nodes, w, a)[1].values[:, 0].copy()
                for w, a in zip(params.weights, params.attention)]


def attention_enhance(z: Tensor, graph: Graph, params: GatLayerParams) -> Tensor:
    """
    Salida con atención reforzada: GAT de una cabeza que reduce a d″ columnas.
    No lleva dropout (son los embeddings que se puntúan).
    """
    if params.heads != 1:
        raise ValueError(f"La cabeza de salida es de una sola cabeza (se recibieron {params.heads})")
    return gat_forward(z, graph, params)


def distant_bias(z: Tensor, averaging, params: DistantBiasParams) -> Tensor:
    """
    Sesgo por nodo: media de las filas de Z de sus vecinos lejanos muestreados
    (vector cero si no tiene) seguida de un mapa lineal a un escalar.

    Args:
        z: Embeddings n×d_m
        averaging: Matriz de promedios n×n (ver DistantSampleTable.averaging_matrix)
            o la propia tabla
        params: Parámetros lineales

    Returns:
        Tensor n×1
    """
    if hasattr(averaging, "averaging_matrix"):
        averaging = averaging.averaging_matrix()
    z_dist = T.sparse_matmul(averaging, z)
    return z_dist @ params.weight + params.bias


def biased_attention(z: Tensor, bias: Optional[Tensor], params: AttentionParams, heads: int) -> Tensor:
    """
    Autoatención multi-cabeza con sesgo del lado de la clave:
    S = QKᵀ/√d_k + B con B_ij = b_j. Las cabezas se concatenan y se proyectan.

    Args:
        z: Embeddings n×d_m
        bias: Sesgo n×1 o None (atención sin sesgo)
        params: W_Q, W_K, W_V y proyección de salida
        heads: Cantidad de cabezas H

    Returns:
        Tensor n×d_m
    """
    d_model = z.shape[1]
    if d_model % heads:
        raise ValueError(f"d_m={d_model} no es divisible por H={heads}")
    width = d_model // heads
    q, k, v = z @ params.query, z @ params.key, z @ params.value
    outputs = []
    for h in range(heads):
        lo, hi = h * width, (h + 1) * width
        outputs.append(T.attention(T.slice_cols(q, lo, hi), T.slice_cols(k, lo, hi),
                                   T.slice_cols(v, lo, hi), bias))
    merged = outputs[0] if heads == 1 else T.concat_cols(outputs)
    return merged @ params.output


def transformer_encoder(z: Tensor, bias: Optional[Tensor], params: TransformerParams, dropout: float = 0.0,
                        train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Codificador post-LN: por capa
    Z <- LayerNorm(Z + Dropout(atención sesgada(Z, b)));
    Z <- LayerNorm(Z + Dropout(W_b·gelu(W_a·Z + b_a) + b_b)).
    El mismo sesgo b se aplica en todas las capas.
    """
    for layer in params.layers:
        attended = biased_attention(z, bias, layer.attention, params.heads)
        z = T.layer_norm(z + T.dropout(attended, dropout, train, rng), layer.ln_attn_scale, layer.ln_attn_shift)
        hidden = T.gelu(z @ layer.ffn_w_a + layer.ffn_b_a)
        ffn = hidden @ layer.ffn_w_b + layer.ffn_b_b
        z = T.layer_norm(z + T.dropout(ffn, dropout, train, rng), layer.ln_ffn_scale, layer.ln_ffn_shift)
    return z


def adapter_forward(z: Tensor, params: AdapterParams) -> Tensor:
    """Z′ = Z + GELU(GELU(Z·W₁)·W₂)·W₃."""
    if z.shape[1] != params.w1.shape[0]:
        raise ValueError(f"Entrada del adaptador {z.shape} incompatible con W₁ {params.w1.shape}")
    return z + T.gelu(T.gelu(z @ params.w1) @ params.w2) @ params.w3
