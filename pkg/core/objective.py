"""
Puntuación de enlaces, pérdida de predicción de enlaces (BCE), pérdida
contrastiva InfoNCE y pérdida total.
"""
from typing import Optional

import numpy as np

from core import tensor as T
from core.tensor import Tensor

BCE_EPS = 1e-12
SCORERS = ("euclid", "dot")
CANDIDATE_POLICIES = ("anchor", "global")


def _column(values) -> Tensor:
    t = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float64).reshape(-1, 1))
    if t.shape[1] != 1:
        raise ValueError(f"Se esperaba una columna de puntajes; forma {t.shape}")
    return t


def link_score(z_i: Tensor, z_j: Tensor, psi: Tensor) -> Tensor:
    """
    s = exp(-ReLU(ψ · (z_i - z_j)²)) fila a fila, con el cuadrado elemento a elemento.

    Args:
        z_i, z_j: Embeddings (k, d″)
        psi: Pesos (1, d″)

    Returns:
        Tensor (k, 1) con valores en (0, 1]
    """
    if z_i.shape != z_j.shape or psi.shape != (1, z_i.shape[1]):
        raise ValueError(f"Formas incompatibles: z_i {z_i.shape}, z_j {z_j.shape}, ψ {psi.shape}")
    diff = z_i - z_j
    inner = T.row_sum(diff * diff * psi)
    return T.exp(-T.relu(inner))


def dot_score(z_i: Tensor, z_j: Tensor) -> Tensor:
    """Variante de producto punto: sigmoid(z_i · z_j)."""
    if z_i.shape != z_j.shape:
        raise ValueError(f"Formas incompatibles: z_i {z_i.shape}, z_j {z_j.shape}")
    return T.sigmoid(T.row_sum(z_i * z_j))


def edge_scores(z: Tensor, edges: np.ndarray, psi: Optional[Tensor] = None, scorer: str = "euclid") -> Tensor:
    """
    Puntajes de una lista de pares (k, 2) a partir de los embeddings finales.

    Returns:
        Tensor (k, 1)
    """
    if scorer not in SCORERS:
        raise ValueError(f"Puntuador desconocido: {scorer}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    z_i = T.gather_rows(z, edges[:, 0])
    z_j = T.gather_rows(z, edges[:, 1])
    if scorer == "dot":
        return dot_score(z_i, z_j)
    if psi is None:
        raise ValueError("La puntuación euclídea requiere ψ")
    return link_score(z_i, z_j, psi)


def link_loss(scores, labels) -> Tensor:
    """
    Entropía cruzada binaria media sobre positivos y negativos juntos.
    Los puntajes se recortan a [ε, 1-ε] con ε = 1e-12.

    Args:
        scores: Tensor (k, 1) o secuencia de puntajes
        labels: Etiquetas 0/1 de largo k

    Returns:
        Tensor escalar
    """
    s = _column(scores)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if len(y) != s.shape[0]:
        raise ValueError(f"Cantidad de puntajes ({s.shape[0]}) y etiquetas ({len(y)}) distinta")
    if len(y) == 0:
        raise ValueError("link_loss sobre una lista vacía")
    s = T.clamp(s, BCE_EPS, 1.0 - BCE_EPS)
    positive = T.log(s) * Tensor(y)
    negative = T.log(T.add_scalar(-s, 1.0)) * Tensor(1.0 - y)
    return -T.mean_all(positive + negative)


def cosine_logits(z: Tensor, edges: np.ndarray, tau: float) -> Tensor:
    """cos(z_u, z_v)/τ por par; una fila nula tiene coseno 0."""
    unit = T.row_normalize(z)
    return T.row_sum(T.gather_rows(unit, edges[:, 0]) * T.gather_rows(unit, edges[:, 1])) * (1.0 / tau)


def contrastive_loss(z: Tensor, pos_edges: np.ndarray, candidate_edges: np.ndarray, tau: float = 0.5,
                     policy: str = "anchor") -> Tensor:
    """
    InfoNCE sobre similitud coseno. Para cada positivo (i, j) con ancla i:
    -log[exp(cos(z_i, z_j)/τ) / Σ_k exp(cos(z_i, z_k)/τ)], donde k recorre los
    candidatos incidentes en i ('anchor') o todos los candidatos ('global').

    Args:
        z: Embeddings finales n×d″
        pos_edges: Positivos (p, 2); la primera columna es el ancla
        candidate_edges: Candidatos (positivos y negativos) (c, 2)
        tau: Temperatura > 0
        policy: 'anchor' o 'global'

    Returns:
        Tensor escalar (media sobre los positivos)
    """
    if tau <= 0:
        raise ValueError(f"La temperatura debe ser positiva (τ={tau})")
    if policy not in CANDIDATE_POLICIES:
        raise ValueError(f"Política de candidatos desconocida: {policy}")
    pos_edges = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    candidate_edges = np.asarray(candidate_edges, dtype=np.int64).reshape(-1, 2)
    if len(pos_edges) == 0:
        raise ValueError("contrastive_loss requiere al menos un positivo")

    # Desplazamiento constante 1/τ (cota del logit) para estabilidad
    shift = -1.0 / tau
    pos_logits = T.add_scalar(cosine_logits(z, pos_edges, tau), shift)
    weights = T.exp(T.add_scalar(cosine_logits(z, candidate_edges, tau), shift))

    if policy == "global":
        denominator = T.sum_all(weights)
        log_den = T.log(denominator)
        return T.mean_all(log_den - pos_logits)

    n = z.shape[0]
    c = len(candidate_edges)
    both_ends = np.concatenate([np.arange(c), np.arange(c)])
    endpoints = np.concatenate([candidate_edges[:, 0], candidate_edges[:, 1]])
    per_node = T.segment_sum(T.gather_rows(weights, both_ends), endpoints, n)
    anchor_den = T.gather_rows(per_node, pos_edges[:, 0])
    if np.any(anchor_den.values <= 0):
        raise ValueError("Hay anclas sin candidatos; los candidatos deben incluir a los positivos")
    return T.mean_all(T.log(anchor_den) - pos_logits)


def total_loss(l_link: Tensor, l_con: Tensor, lam: float) -> Tensor:
    """L = L_link + λ·L_con."""
    if lam < 0:
        raise ValueError(f"λ debe ser >= 0 (se recibió {lam})")
    return l_link + l_con * float(lam)
