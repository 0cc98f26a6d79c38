"""
Aumento por difusión: X(t+1) = (1-α)·X_init + α·S·X(t), con S = D^{-1/2} A D^{-1/2}.
"""
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from core.graph import Graph
from utils.logs import logger

# A partir de este tamaño la matriz normalizada se arma dispersa
DENSE_NODE_LIMIT = 5000


def normalized_adjacency(graph: Graph, sparse: Optional[bool] = None) -> Union[np.ndarray, sp.csr_matrix]:
    """
    Matriz de adyacencia normalizada simétricamente. Los nodos de grado 0 tienen
    D^{-1/2} = 0, por lo que su fila y columna quedan en cero.

    Args:
        graph: Grafo
        sparse: Forzar formato disperso (True) o denso (False); None decide por tamaño

    Returns:
        Matriz n×n (ndarray o csr_matrix)
    """
    n = graph.num_nodes
    if sparse is None:
        sparse = n > DENSE_NODE_LIMIT
    deg = graph.degrees.astype(np.float64)
    inv_sqrt = np.zeros(n)
    nonzero = deg > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(deg[nonzero])

    rows = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    cols = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    if sparse:
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    dense = np.zeros((n, n))
    dense[rows, cols] = vals
    return dense


def diffuse(x_init: np.ndarray, norm_adj, alpha: float = 0.15, steps: int = 50) -> np.ndarray:
    """
    Itera la difusión `steps` veces partiendo de X(0) = X_init.

    Args:
        x_init: Matriz n×d de embeddings iniciales
        norm_adj: Matriz normalizada n×n (densa o dispersa)
        alpha: Coeficiente de difusión en [0, 1) (0 reproduce X_init)
        steps: Cantidad de pasos T >= 0

    Returns:
        Matriz n×d difundida
    """
    x_init = np.asarray(x_init, dtype=np.float64)
    if x_init.ndim != 2 or norm_adj.shape != (x_init.shape[0], x_init.shape[0]):
        raise ValueError(f"Formas incompatibles: X {x_init.shape}, S {norm_adj.shape}")
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha debe estar en [0, 1) (se recibió {alpha})")
    if steps < 0:
        raise ValueError(f"La cantidad de pasos debe ser >= 0 (se recibió {steps})")

    x = x_init.copy()
    if alpha == 0.0:
        return x
    restart = (1.0 - alpha) * x_init
    for _ in range(steps):
        x = restart + alpha * (norm_adj @ x)
    logger.debug(f"Difusión: {steps} pasos con alpha={alpha}")
    return np.asarray(x)
