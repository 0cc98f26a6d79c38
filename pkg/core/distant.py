"""
Muestreo de vecinos lejanos (a distancia exacta g) para el sesgo de atención.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from core.graph import Graph, bfs_frontiers
from core.rng import substream


@dataclass(frozen=True)
class DistantSampleTable:
    """
    Tabla de vecinos lejanos muestreados por nodo.

    Attributes:
        hops: Distancias g consideradas
        samples: Por nodo, tupla de ids muestreados a distancia exacta g ∈ hops
        per_node_count: Máximo de muestras por nodo (m_d)
    """
    hops: Tuple[int, ...]
    samples: Tuple[Tuple[int, ...], ...]
    per_node_count: int

    @property
    def num_nodes(self) -> int:
        return len(self.samples)

    def averaging_matrix(self) -> sp.csr_matrix:
        """
        Matriz dispersa M (n×n) con M[i, j] = 1/|S_i| para j ∈ S_i; filas vacías
        para nodos sin vecinos lejanos, de modo que M·Z es la media (o cero).
        """
        n = self.num_nodes
        rows, cols, vals = [], [], []
        for i, picked in enumerate(self.samples):
            if not picked:
                continue
            w = 1.0 / len(picked)
            rows.extend([i] * len(picked))
            cols.extend(picked)
            vals.extend([w] * len(picked))
        return sp.csr_matrix((np.asarray(vals, dtype=np.float64),
                              (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
                             shape=(n, n))


def build_distant_table(graph: Graph, hops: Sequence[int] = (2, 3), per_node: int = 4,
                        seed: int = 0) -> DistantSampleTable:
    """
    Para cada nodo toma hasta `per_node` ids uniformes de la unión de las fronteras
    exactas de distancia g ∈ hops. La tabla se fija por corrida.

    Args:
        graph: Grafo de paso de mensajes
        hops: Distancias g (cada una >= 2)
        per_node: Muestras por nodo (m_d)
        seed: Semilla

    Returns:
        DistantSampleTable
    """
    if per_node < 1:
        raise ValueError(f"per_node debe ser >= 1 (se recibió {per_node})")
    hops = tuple(sorted(set(int(h) for h in hops)))
    if not hops or hops[0] < 1:
        raise ValueError(f"Distancias inválidas: {hops}")
    rng = substream(seed, "distant")
    max_hop = hops[-1]
    samples = []
    for node in range(graph.num_nodes):
        layers = bfs_frontiers(graph, node, max_hop)
        pool = sorted(set().union(*(layers.get(h, set()) for h in hops)))
        if len(pool) > per_node:
            picked = rng.choice(len(pool), size=per_node, replace=False)
            pool = [pool[k] for k in sorted(picked.tolist())]
        samples.append(tuple(pool))
    return DistantSampleTable(hops=hops, samples=tuple(samples), per_node_count=int(per_node))
