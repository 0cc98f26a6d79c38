"""
Embeddings iniciales a partir de la topología: caminatas aleatorias de
segundo orden y skip-gram con muestreo negativo.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from core.errors import ConfigError, DegenerateGraphError
from core.graph import Graph
from core.rng import substream
from core.tensor import scatter_rows
from utils.logs import logger

UNIGRAM_POWER = 0.75
MIN_LR_FRACTION = 1e-4


@dataclass
class Node2VecConfig:
    """Caminatas sesgadas y skip-gram con muestreo negativo."""
    dim: int = 256
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 80
    walks_per_node: int = 10
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    batch_size: int = 4096

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim < 2:
            raise ConfigError(f"node2vec.dim debe ser >= 2: {self.dim}")
        if self.p <= 0 or self.q <= 0:
            raise ConfigError(f"p y q deben ser positivos: p={self.p}, q={self.q}")
        if self.walk_length < 2 or self.walks_per_node < 1:
            raise ConfigError(f"Caminatas inválidas: L={self.walk_length}, r={self.walks_per_node}")
        if self.window < 1 or self.negatives < 0 or self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("Parámetros de skip-gram inválidos")


@dataclass(frozen=True)
class WalkCorpus:
    """
    Corpus de caminatas.

    Attributes:
        walks: Arreglo (cantidad, L) de ids; todas las caminatas tienen largo L
        walk_length: L
        walks_per_node: r
        p: Parámetro de retorno
        q: Parámetro de entrada/salida
        num_nodes: n del grafo de origen
    """
    walks: np.ndarray
    walk_length: int
    walks_per_node: int
    p: float
    q: float
    num_nodes: int

    def __len__(self):
        return int(self.walks.shape[0])

    def node_counts(self) -> np.ndarray:
        return np.bincount(self.walks.ravel(), minlength=self.num_nodes)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Matriz n×d₀ de embeddings (X_init)."""
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"Los embeddings deben ser 2-D; forma {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Embeddings con valores no finitos")

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def num_nodes(self) -> int:
        return int(self.values.shape[0])


class _TransitionTable:
    """Probabilidades acumuladas de segundo orden, calculadas a demanda por (t, v)."""

    def __init__(self, graph: Graph, p: float, q: float):
        self.neighbors = [np.asarray(nb, dtype=np.int64) for nb in graph.adjacency]
        self.p = p
        self.q = q
        self.cache: Dict[Tuple[int, int], np.ndarray] = {}

    def weights(self, prev: int, cur: int) -> np.ndarray:
        """Pesos no normalizados de los vecinos de `cur` viniendo desde `prev`."""
        nb = self.neighbors[cur]
        close = np.isin(nb, self.neighbors[prev], assume_unique=True)
        w = np.where(close, 1.0, 1.0 / self.q)
        w[nb == prev] = 1.0 / self.p
        return w

    def cumulative(self, prev: int, cur: int) -> np.ndarray:
        key = (prev, cur)
        table = self.cache.get(key)
        if table is None:
            w = self.weights(prev, cur)
            table = np.cumsum(w) / w.sum()
            self.cache[key] = table
        return table


def generate_walks(graph: Graph, p: float = 1.0, q: float = 1.0, walk_length: int = 80,
                   walks_per_node: int = 10, seed: int = 0) -> WalkCorpus:
    """
    Caminatas de segundo orden: desde `prev` en `cur`, el vecino x pesa 1/p si
    x = prev, 1 si x es vecino de prev y 1/q en otro caso. Cada nodo de inicio
    usa su propio sub-flujo; los nodos aislados se omiten.

    Args:
        graph: Grafo
        p: Parámetro de retorno (> 0)
        q: Parámetro de entrada/salida (> 0)
        walk_length: L >= 2
        walks_per_node: r
        seed: Semilla

    Returns:
        WalkCorpus con r·(nodos no aislados) caminatas, por rondas
    """
    if p <= 0 or q <= 0:
        raise ValueError(f"p y q deben ser positivos (p={p}, q={q})")
    if walk_length < 2:
        raise ValueError(f"El largo de caminata debe ser >= 2 (L={walk_length})")
    starts = [v for v in range(graph.num_nodes) if graph.degrees[v] > 0]
    streams = {v: substream(seed, "walks", v) for v in starts}
    table = _TransitionTable(graph, p, q)
    uniform = p == 1.0 and q == 1.0

    walks = np.zeros((walks_per_node * len(starts), walk_length), dtype=np.int64)
    row = 0
    for _ in range(walks_per_node):
        for start in starts:
            rng = streams[start]
            walk = walks[row]
            walk[0] = start
            nb = table.neighbors[start]
            walk[1] = nb[rng.integers(len(nb))]
            for step in range(2, walk_length):
                prev, cur = walk[step - 2], walk[step - 1]
                nb = table.neighbors[cur]
                if uniform:
                    walk[step] = nb[rng.integers(len(nb))]
                else:
                    idx = int(np.searchsorted(table.cumulative(prev, cur), rng.random(), side="right"))
                    walk[step] = nb[min(idx, len(nb) - 1)]
            row += 1
    logger.debug(f"Caminatas: {len(walks)} de largo {walk_length} (p={p}, q={q})")
    return WalkCorpus(walks=walks, walk_length=walk_length, walks_per_node=walks_per_node,
                      p=float(p), q=float(q), num_nodes=graph.num_nodes)


class UnigramTable:
    """
    Distribución de ruido proporcional a grado^0.75, construida una vez por corpus.
    """

    def __init__(self, degrees: np.ndarray, power: float = UNIGRAM_POWER):
        weights = np.asarray(degrees, dtype=np.float64) ** power
        total = weights.sum()
        if total <= 0:
            raise DegenerateGraphError("La tabla de ruido requiere al menos un nodo con grado > 0")
        self.probabilities = weights / total
        self.cumulative = np.cumsum(self.probabilities)
        self.cumulative[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.searchsorted(self.cumulative, rng.random(size), side="right").astype(np.int64)


def _context_pairs(walks: np.ndarray, window: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Pares (centro, contexto) con ventana reducida aleatoria por posición."""
    reduced = rng.integers(1, window + 1, size=walks.shape)
    centers, contexts = [], []
    for offset in range(1, min(window, walks.shape[1] - 1) + 1):
        forward = reduced[:, :-offset] >= offset
        centers.append(walks[:, :-offset][forward])
        contexts.append(walks[:, offset:][forward])
        backward = reduced[:, offset:] >= offset
        centers.append(walks[:, offset:][backward])
        contexts.append(walks[:, :-offset][backward])
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)
    order = rng.permutation(len(centers))
    return centers[order], contexts[order]


def train_skipgram(corpus: WalkCorpus, dim: int = 256, window: int = 10, negatives: int = 5,
                   epochs: int = 5, lr: float = 0.025, seed: int = 0, batch_size: int = 4096,
                   degrees: Optional[np.ndarray] = None,
                   on_epoch: Optional[Callable[[int, np.ndarray], None]] = None) -> EmbeddingMatrix:
    """
    Skip-gram con muestreo negativo por SGD en lotes. Maximiza σ(u·v) para los
    pares dentro de la ventana y σ(-u·v_neg) para `negatives` nodos de ruido.

    Args:
        corpus: Caminatas
        dim: d₀ >= 2
        window: Ventana máxima
        negatives: Negativos por par
        epochs: Épocas (0 devuelve la inicialización)
        lr: Tasa inicial (decae linealmente)
        seed: Semilla
        batch_size: Pares por actualización
        degrees: Grados para la tabla de ruido (por defecto, frecuencia en el corpus)
        on_epoch: Función llamada con (época, vectores centrales) al cerrar cada época

    Returns:
        EmbeddingMatrix con los vectores centrales
    """
    if dim < 2:
        raise ValueError(f"d₀ debe ser >= 2 (se recibió {dim})")
    if len(corpus) == 0:
        raise DegenerateGraphError("El corpus de caminatas está vacío")
    rng = substream(seed, "node2vec")
    n = corpus.num_nodes
    centers_emb = (rng.random((n, dim)) - 0.5) / dim
    context_emb = np.zeros((n, dim))
    if epochs == 0:
        return EmbeddingMatrix(centers_emb)

    noise = UnigramTable(corpus.node_counts() if degrees is None else degrees)
    total_pairs = None
    processed = 0
    for epoch in range(epochs):
        centers, contexts = _context_pairs(corpus.walks, window, rng)
        if total_pairs is None:
            total_pairs = max(len(centers) * epochs, 1)
        for start in range(0, len(centers), batch_size):
            c = centers[start:start + batch_size]
            x = contexts[start:start + batch_size]
            progress = processed / total_pairs
            rate = lr * max(1.0 - progress, MIN_LR_FRACTION)
            processed += len(c)

            noise_ids = noise.draw(rng, (len(c), negatives))
            targets = np.concatenate([x[:, None], noise_ids], axis=1)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            u = centers_emb[c]
            v = context_emb[targets]
            logits = np.einsum("bd,bkd->bk", u, v)
            step = (labels - expit(logits)) * rate
            # Un negativo igual al contexto no aporta
            step[:, 1:][noise_ids == x[:, None]] = 0.0

            grad_u = np.einsum("bk,bkd->bd", step, v)
            grad_v = step[:, :, None] * u[:, None, :]
            context_emb += scatter_rows(grad_v.reshape(-1, dim), targets.ravel(), n)
            centers_emb += scatter_rows(grad_u, c, n)
        logger.debug(f"Skip-gram: época {epoch + 1}/{epochs} ({len(centers)} pares)")
        if on_epoch is not None:
            on_epoch(epoch + 1, centers_emb.copy())
    return EmbeddingMatrix(centers_emb)


def node2vec(graph: Graph, cfg: Optional[Node2VecConfig] = None, seed: int = 0) -> EmbeddingMatrix:
    """
    X_init = node2vec(G): caminatas + skip-gram con la configuración dada.
    Un grafo sin aristas devuelve la inicialización aleatoria con una advertencia.

    Args:
        graph: Grafo
        cfg: Configuración (por defecto d₀ = 256, p = q = 1, L = 80, r = 10)
        seed: Semilla

    Returns:
        EmbeddingMatrix n×d₀
    """
    cfg = cfg or Node2VecConfig()
    if graph.num_nodes == 0:
        raise DegenerateGraphError("No se pueden calcular embeddings de un grafo vacío")
    if graph.num_edges == 0:
        logger.warning(f"{graph.name}: grafo sin aristas; se devuelve la inicialización aleatoria")
        rng = substream(seed, "node2vec")
        return EmbeddingMatrix((rng.random((graph.num_nodes, cfg.dim)) - 0.5) / cfg.dim)
    corpus = generate_walks(graph, cfg.p, cfg.q, cfg.walk_length, cfg.walks_per_node, seed)
    return train_skipgram(corpus, cfg.dim, cfg.window, cfg.negatives, cfg.epochs, cfg.lr, seed,
                          batch_size=cfg.batch_size, degrees=graph.degrees)
