"""
Partición de aristas en entrenamiento/validación/prueba y muestreo de negativos.
"""
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from core.errors import GraphInputError, SamplingError
from core.graph import Graph, canonical_edges
from core.rng import substream
from utils.logs import logger

SPLIT_NAMES = ("train", "val", "test")
# Por debajo de este número de pares se enumeran todas las no-aristas
ENUMERATION_LIMIT = 2_000_000


def _empty_edges() -> np.ndarray:
    return np.zeros((0, 2), dtype=np.int64)


@dataclass(frozen=True)
class EdgeSplit:
    """
    Conjuntos positivos disjuntos y negativos muestreados por partición.

    Attributes:
        train_pos, val_pos, test_pos: Aristas positivas (k, 2)
        train_neg, val_neg, test_neg: No-aristas muestreadas (k, 2)
        neg_ratio: Negativos por positivo
        seed: Semilla usada
    """
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray = field(default_factory=_empty_edges)
    val_neg: np.ndarray = field(default_factory=_empty_edges)
    test_neg: np.ndarray = field(default_factory=_empty_edges)
    neg_ratio: Fraction = Fraction(0)
    seed: int = 0

    def positives(self, which: str) -> np.ndarray:
        _check_split_name(which)
        return getattr(self, f"{which}_pos")

    def negatives(self, which: str) -> np.ndarray:
        _check_split_name(which)
        return getattr(self, f"{which}_neg")

    def labeled(self, which: str) -> Tuple[np.ndarray, np.ndarray]:
        """
        Aristas positivas y negativas de una partición con sus etiquetas.

        Returns:
            Tupla (edges (k, 2), labels (k,)) con los positivos primero
        """
        pos, neg = self.positives(which), self.negatives(which)
        edges = np.concatenate([pos, neg], axis=0) if len(neg) else pos
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        return edges, labels

    def sizes(self) -> Dict[str, int]:
        return {f"{w}_{kind}": int(len(getattr(self, f"{w}_{kind}")))
                for w in SPLIT_NAMES for kind in ("pos", "neg")}


def _check_split_name(which: str):
    if which not in SPLIT_NAMES:
        raise ValueError(f"Partición desconocida: {which} (use train, val o test)")


def split_sizes(m: int, ratios: Sequence[int] = (8, 1, 1)) -> Tuple[int, int, int]:
    """
    Tamaños de la partición: train = floor(m·a/s), val = floor((m - train)·b/(b + c)),
    test = resto.

    Args:
        m: Cantidad de aristas
        ratios: Proporciones (a, b, c)

    Returns:
        Tupla (train, val, test)
    """
    a, b, c = (int(r) for r in ratios)
    if min(a, b, c) < 1:
        raise ValueError(f"Proporciones inválidas: {ratios}")
    n_train = (m * a) // (a + b + c)
    n_val = ((m - n_train) * b) // (b + c)
    return n_train, n_val, m - n_train - n_val


def split_edges(graph: Graph, ratios: Sequence[int] = (8, 1, 1), seed: int = 0) -> Tuple[EdgeSplit, Graph]:
    """
    Particiona las aristas del grafo. Las aristas de validación y prueba se
    eliminan del grafo de paso de mensajes usado en el entrenamiento.

    Args:
        graph: Grafo completo
        ratios: Proporciones (train, val, test)
        seed: Semilla de la partición

    Returns:
        Tupla (EdgeSplit solo con positivos, grafo de entrenamiento)
    """
    m = graph.num_edges
    if m < 10:
        raise SamplingError(f"El grafo tiene {m} aristas; se necesitan al menos 10 para la partición")
    n_train, n_val, n_test = split_sizes(m, ratios)
    if min(n_train, n_val, n_test) < 1:
        raise SamplingError(f"No se pueden poblar los tres conjuntos con m={m} y proporciones {ratios}")

    rng = substream(seed, "split")
    perm = rng.permutation(m)
    edges = graph.edges
    train = edges[np.sort(perm[:n_train])]
    val = edges[np.sort(perm[n_train:n_train + n_val])]
    test = edges[np.sort(perm[n_train + n_val:])]

    split = EdgeSplit(train_pos=train, val_pos=val, test_pos=test, seed=int(seed))
    train_graph = Graph(graph.num_nodes, train, id_map=graph.id_map, name=graph.name)
    logger.debug(f"Partición {n_train}/{n_val}/{n_test} de {m} aristas (semilla {seed})")
    return split, train_graph


def _pair_codes(edges: np.ndarray, n: int) -> np.ndarray:
    edges = canonical_edges(edges)
    return edges[:, 0] * n + edges[:, 1]


def _decode(codes: np.ndarray, n: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    return np.stack([codes // n, codes % n], axis=1) if len(codes) else _empty_edges()


def sample_negatives(graph: Graph, count: int, exclude=None, seed: int = 0,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Muestrea no-aristas no ordenadas, uniformes y sin reemplazo.

    Args:
        graph: Grafo cuyo conjunto de aristas E queda excluido
        count: Cantidad de negativos
        exclude: Pares adicionales a excluir
        seed: Semilla (se ignora si se pasa `rng`)
        rng: Generador explícito opcional

    Returns:
        Arreglo (count, 2) con i < j
    """
    n = graph.num_nodes
    if count < 0:
        raise ValueError(f"Cantidad de negativos inválida: {count}")
    forbidden = set(_pair_codes(graph.edges, n).tolist()) if graph.num_edges else set()
    if exclude is not None and len(exclude):
        ex = canonical_edges(exclude)
        ex = ex[ex[:, 0] != ex[:, 1]]
        forbidden.update(_pair_codes(ex, n).tolist())
    total_pairs = n * (n - 1) // 2
    available = total_pairs - len(forbidden)
    if count > available:
        raise SamplingError(f"Se pidieron {count} negativos pero solo hay {available} no-aristas disponibles")
    if count == 0:
        return _empty_edges()
    if rng is None:
        rng = substream(seed, "negatives")

    if total_pairs <= ENUMERATION_LIMIT:
        rows, cols = np.triu_indices(n, k=1)
        codes = rows.astype(np.int64) * n + cols
        if forbidden:
            codes = codes[~np.isin(codes, np.fromiter(forbidden, dtype=np.int64))]
        chosen = rng.choice(len(codes), size=count, replace=False)
        return _decode(codes[chosen], n)

    # Rechazo: pares aleatorios, se descartan aristas, excluidos y repetidos
    picked = []
    taken = set()
    while len(picked) < count:
        batch = max(2 * (count - len(picked)), 64)
        i = rng.integers(0, n, size=batch)
        j = rng.integers(0, n, size=batch)
        for a, b in zip(i.tolist(), j.tolist()):
            if a == b:
                continue
            code = min(a, b) * n + max(a, b)
            if code in forbidden or code in taken:
                continue
            taken.add(code)
            picked.append(code)
            if len(picked) == count:
                break
    return _decode(np.asarray(picked, dtype=np.int64), n)


def attach_negatives(split: EdgeSplit, graph: Graph, neg_ratio=1, seed: Optional[int] = None) -> EdgeSplit:
    """
    Agrega negativos estáticos a cada partición (neg_ratio por positivo). Se excluye
    el conjunto completo E y los negativos ya asignados a otras particiones.

    Args:
        split: Partición con positivos
        graph: Grafo completo (no la vista de entrenamiento)
        neg_ratio: Negativos por positivo (1, 10, 20, ...)
        seed: Semilla; por defecto la de la partición

    Returns:
        Nuevo EdgeSplit con los negativos
    """
    ratio = Fraction(neg_ratio).limit_denominator(1000)
    if ratio <= 0:
        raise ValueError(f"La razón de negativos debe ser positiva: {neg_ratio}")
    seed = split.seed if seed is None else seed
    rng = substream(seed, "negatives")
    drawn = _empty_edges()
    result = {}
    for which in SPLIT_NAMES:
        count = int(ratio * len(split.positives(which)))
        neg = sample_negatives(graph, count, exclude=drawn, rng=rng)
        result[f"{which}_neg"] = neg
        drawn = np.concatenate([drawn, neg], axis=0)
    return replace(split, neg_ratio=ratio, seed=int(seed), **result)


def make_split(graph: Graph, ratios: Sequence[int] = (8, 1, 1), neg_ratio=1,
               seed: int = 0) -> Tuple[EdgeSplit, Graph]:
    """Partición completa: positivos, vista de entrenamiento y negativos."""
    split, train_graph = split_edges(graph, ratios, seed)
    return attach_negatives(split, graph, neg_ratio, seed), train_graph


def write_manifest(split: EdgeSplit, path: str, num_nodes: int):
    """
    Escribe el manifiesto columnar `src dst split label`.

    Args:
        split: Partición con negativos
        path: Ruta de salida
        num_nodes: Cantidad de nodos del grafo (se guarda como comentario)
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# num_nodes={num_nodes} neg_ratio={split.neg_ratio} seed={split.seed}\n")
        f.write("src dst split label\n")
        for which in SPLIT_NAMES:
            for label, edges in ((1, split.positives(which)), (0, split.negatives(which))):
                for i, j in edges.tolist():
                    f.write(f"{i} {j} {which} {label}\n")


def read_manifest(path: str) -> Tuple[EdgeSplit, int]:
    """
    Lee un manifiesto escrito por `write_manifest`.

    Returns:
        Tupla (EdgeSplit, num_nodes)
    """
    if not os.path.exists(path):
        raise GraphInputError(f"No existe el manifiesto {path}")
    meta = {}
    buckets = {(w, lab): [] for w in SPLIT_NAMES for lab in (0, 1)}
    header_seen = False
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, value = token.split("=", 1)
                        meta[key] = value
                continue
            if not header_seen:
                if line.split() != ["src", "dst", "split", "label"]:
                    raise GraphInputError(f"{path}: encabezado inválido {line!r}")
                header_seen = True
                continue
            parts = line.split()
            try:
                i, j, which, label = int(parts[0]), int(parts[1]), parts[2], int(parts[3])
            except (ValueError, IndexError) as e:
                raise GraphInputError(f"{path}:{line_number}: fila inválida {line!r}") from e
            if (which, label) not in buckets:
                raise GraphInputError(f"{path}:{line_number}: partición o etiqueta inválida {line!r}")
            buckets[(which, label)].append((i, j))

    def _arr(rows):
        return canonical_edges(rows) if rows else _empty_edges()

    split = EdgeSplit(
        train_pos=_arr(buckets[("train", 1)]), val_pos=_arr(buckets[("val", 1)]),
        test_pos=_arr(buckets[("test", 1)]), train_neg=_arr(buckets[("train", 0)]),
        val_neg=_arr(buckets[("val", 0)]), test_neg=_arr(buckets[("test", 0)]),
        neg_ratio=Fraction(meta.get("neg_ratio", "0")), seed=int(meta.get("seed", 0)),
    )
    num_nodes = int(meta["num_nodes"]) if "num_nodes" in meta else int(
        max(int(a.max()) for a in (split.train_pos, split.val_pos, split.test_pos) if len(a)) + 1)
    return split, num_nodes
