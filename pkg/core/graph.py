"""
Representación del grafo no dirigido simple y su lectura desde listas de aristas.
"""
from collections import deque
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np

from core.errors import DegenerateGraphError, GraphInputError
from utils.logs import logger


def canonical_edges(pairs) -> np.ndarray:
    """
    Lleva una colección de pares a un arreglo (k, 2) con i < j en cada fila.

    Args:
        pairs: Iterable de pares (i, j) o arreglo (k, 2)

    Returns:
        Arreglo int64 de forma (k, 2), mismo orden que la entrada
    """
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    return np.sort(arr, axis=1)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Graph:
    """
    Grafo no dirigido simple e inmutable.

    Attributes:
        num_nodes: Cantidad de nodos n (ids contiguos 0..n-1)
        edges: Arreglo (m, 2) de aristas con i < j, ordenado lexicográficamente
        adjacency: Tupla de tuplas ordenadas con los vecinos de cada nodo
        degrees: Arreglo de grados
        id_map: Mapeo id original -> id interno (si el grafo viene de un archivo)
    """

    def __init__(self, num_nodes: int, edges, id_map: Optional[Dict[int, int]] = None,
                 name: str = "grafo"):
        """
        Construye el grafo validando los invariantes.

        Args:
            num_nodes: Cantidad de nodos
            edges: Pares (i, j) sin lazos ni duplicados
            id_map: Mapeo opcional de ids originales a internos
            name: Identificador legible (se guarda en los checkpoints)
        """
        if num_nodes < 0:
            raise ValueError(f"Cantidad de nodos inválida: {num_nodes}")
        arr = canonical_edges(edges)
        if len(arr):
            if arr.min() < 0 or arr.max() >= num_nodes:
                raise ValueError(f"Hay ids de nodo fuera de 0..{num_nodes - 1}")
            if np.any(arr[:, 0] == arr[:, 1]):
                raise ValueError("El grafo no admite lazos")
            order = np.lexsort((arr[:, 1], arr[:, 0]))
            arr = arr[order]
            if np.any(np.all(arr[1:] == arr[:-1], axis=1)):
                raise ValueError("El grafo no admite aristas duplicadas")

        neighbors: List[List[int]] = [[] for _ in range(num_nodes)]
        for i, j in arr.tolist():
            neighbors[i].append(j)
            neighbors[j].append(i)

        self.num_nodes = int(num_nodes)
        self.edges = _readonly(arr)
        self.adjacency: Tuple[Tuple[int, ...], ...] = tuple(tuple(sorted(nb)) for nb in neighbors)
        self.degrees = _readonly(np.array([len(nb) for nb in neighbors], dtype=np.int64))
        self.id_map = dict(id_map) if id_map is not None else None
        self.name = name

    @property
    def num_edges(self) -> int:
        return int(len(self.edges))

    @cached_property
    def edge_set(self) -> frozenset:
        """Conjunto de pares (i, j) con i < j."""
        return frozenset(map(tuple, self.edges.tolist()))

    def has_edge(self, i: int, j: int) -> bool:
        if i == j:
            return False
        return (min(i, j), max(i, j)) in self.edge_set

    @cached_property
    def message_index(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Índices (filas, columnas) para el paso de mensajes: cada nodo i recibe de
        j ∈ N(i) ∪ {i}. Las filas quedan agrupadas por nodo receptor.

        Returns:
            Tupla (rows, cols) de arreglos int64 de largo 2m + n
        """
        rows, cols = [], []
        for i, nb in enumerate(self.adjacency):
            rows.append(i)
            cols.append(i)
            rows.extend([i] * len(nb))
            cols.extend(nb)
        return (_readonly(np.asarray(rows, dtype=np.int64)),
                _readonly(np.asarray(cols, dtype=np.int64)))

    def without_edges(self, removed) -> "Graph":
        """
        Devuelve una copia del grafo sin las aristas indicadas (misma cantidad de nodos).

        Args:
            removed: Pares a quitar

        Returns:
            Nuevo grafo
        """
        drop = set(map(tuple, canonical_edges(removed).tolist()))
        kept = [e for e in self.edges.tolist() if tuple(e) not in drop]
        return Graph(self.num_nodes, kept, id_map=self.id_map, name=self.name)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.num_nodes))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def __repr__(self):
        return f"Graph(name={self.name!r}, n={self.num_nodes}, m={self.num_edges})"


def load_edge_list(path: str, name: Optional[str] = None) -> Graph:
    """
    Lee una lista de aristas (dos enteros por línea, comentarios con '#').
    Los ids se reindexan de forma contigua en orden de primera aparición;
    lazos y líneas duplicadas se descartan con una advertencia contada.

    Args:
        path: Ruta del archivo UTF-8
        name: Nombre del grafo (por defecto el nombre del archivo)

    Returns:
        Graph con `id_map` original -> interno
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except (OSError, UnicodeDecodeError) as e:
        raise GraphInputError(f"No se pudo leer el archivo de aristas {path}: {e}") from e

    id_map: Dict[int, int] = {}
    seen: Set[Tuple[int, int]] = set()
    edges: List[Tuple[int, int]] = []
    self_loops = 0
    duplicates = 0

    for line_number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise GraphInputError(f"{path}:{line_number}: se esperaban dos ids de nodo, se encontró {raw.strip()!r}")
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError as e:
            raise GraphInputError(f"{path}:{line_number}: token no entero en {raw.strip()!r}") from e

        for node in (u, v):
            if node not in id_map:
                id_map[node] = len(id_map)
        if u == v:
            self_loops += 1
            continue
        a, b = id_map[u], id_map[v]
        key = (min(a, b), max(a, b))
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        edges.append(key)

    if not id_map:
        raise GraphInputError(f"El archivo {path} no contiene aristas")
    if self_loops:
        logger.warning(f"{path}: se descartaron {self_loops} lazos")
    if duplicates:
        logger.warning(f"{path}: se descartaron {duplicates} aristas duplicadas")

    if name is None:
        name = path.replace("\\", "/").rsplit("/", 1)[-1].rsplit(".", 1)[0]
    graph = Graph(len(id_map), edges, id_map=id_map, name=name)
    logger.debug(f"Grafo leído de {path}: n={graph.num_nodes}, m={graph.num_edges}")
    return graph


def save_edge_list(graph: Graph, path: str, original_ids: bool = False):
    """
    Escribe el grafo como lista de aristas.

    Args:
        graph: Grafo a guardar
        path: Ruta de salida
        original_ids: Si es True usa los ids originales del archivo de entrada
    """
    inverse = None
    if original_ids and graph.id_map is not None:
        inverse = {internal: original for original, internal in graph.id_map.items()}
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# n={graph.num_nodes} m={graph.num_edges}\n")
        for i, j in graph.edges.tolist():
            if inverse is not None:
                i, j = inverse[i], inverse[j]
            f.write(f"{i} {j}\n")


def exact_khop(graph: Graph, node: int, k: int) -> Set[int]:
    """
    Nodos a distancia de camino mínimo exactamente k (frontera del BFS).

    Args:
        graph: Grafo
        node: Nodo ancla
        k: Distancia (k >= 1)

    Returns:
        Conjunto de ids (puede ser vacío)
    """
    if k < 1:
        raise ValueError(f"k debe ser >= 1 (se recibió {k})")
    return bfs_frontiers(graph, node, k).get(k, set())


def bfs_frontiers(graph: Graph, node: int, max_depth: int) -> Dict[int, Set[int]]:
    """
    BFS acotado que devuelve las fronteras por distancia.

    Returns:
        Diccionario distancia -> conjunto de nodos (solo distancias 1..max_depth)
    """
    visited = {node}
    frontier = {node}
    layers: Dict[int, Set[int]] = {}
    for depth in range(1, max_depth + 1):
        nxt = set()
        for u in frontier:
            for w in graph.adjacency[u]:
                if w not in visited:
                    visited.add(w)
                    nxt.add(w)
        if not nxt:
            break
        layers[depth] = nxt
        frontier = nxt
    return layers


def shortest_path_lengths(graph: Graph, node: int) -> Dict[int, int]:
    """Distancias BFS desde `node` a todos los nodos alcanzables."""
    dist = {node: 0}
    queue = deque([node])
    while queue:
        u = queue.popleft()
        for w in graph.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def density(graph: Graph) -> float:
    """
    Densidad escalada: 2m·10³ / (n(n-1)).

    Args:
        graph: Grafo con n >= 2

    Returns:
        float: Densidad del grafo (por mil)
    """
    n = graph.num_nodes
    if n < 2:
        raise DegenerateGraphError(f"La densidad requiere n >= 2 (n={n})")
    return 2.0 * graph.num_edges * 1000.0 / (n * (n - 1))


def graph_statistics(graph: Graph) -> Dict[str, float]:
    """
    Resumen del conjunto de datos: nodos, aristas, densidad, grado medio, aislados.
    """
    return {
        "name": graph.name,
        "n": graph.num_nodes,
        "m": graph.num_edges,
        "density": density(graph) if graph.num_nodes >= 2 else 0.0,
        "mean_degree": float(graph.degrees.mean()) if graph.num_nodes else 0.0,
        "isolated": int(np.sum(graph.degrees == 0)),
    }


def from_networkx(nx_graph: nx.Graph, name: str = "grafo") -> Graph:
    """Convierte un grafo de networkx reindexando los nodos de forma contigua."""
    id_map = {node: idx for idx, node in enumerate(nx_graph.nodes())}
    edges = [(id_map[u], id_map[v]) for u, v in nx_graph.edges() if u != v]
    return Graph(len(id_map), edges, id_map=id_map, name=name)


def generate_sbm(sizes: Iterable[int], p_in: float, p_out: float, seed: int,
                 name: str = "sbm") -> Graph:
    """
    Grafo de bloques estocástico (comunidades) para pruebas a escala de escritorio.

    Args:
        sizes: Tamaño de cada bloque
        p_in: Probabilidad de arista dentro de un bloque
        p_out: Probabilidad de arista entre bloques
        seed: Semilla del generador

    Returns:
        Graph con los nodos ordenados por bloque
    """
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError(f"Tamaños de bloque inválidos: {sizes}")
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0):
        raise ValueError(f"Probabilidades fuera de [0, 1]: p_in={p_in}, p_out={p_out}")
    probs = [[p_in if a == b else p_out for b in range(len(sizes))] for a in range(len(sizes))]
    nx_graph = nx.stochastic_block_model(sizes, probs, seed=int(seed) % (2 ** 32))
    return from_networkx(nx_graph, name=name)
