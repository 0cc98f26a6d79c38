"""
Métricas de evaluación: AUC, F1 con umbral y precisión promedio (AP).
"""
import numpy as np
from sklearn.metrics import f1_score, roc_auc_score


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(s) != len(y):
        raise ValueError(f"Cantidad de puntajes ({len(s)}) y etiquetas ({len(y)}) distinta")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("Las etiquetas deben ser 0 o 1")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """
    Probabilidad de que un positivo supere a un negativo (empates cuentan ½).

    Args:
        scores: Puntajes
        labels: Etiquetas 0/1 (deben estar ambas clases)

    Returns:
        float en [0, 1]
    """
    s, y = _as_arrays(scores, labels)
    if y.min(initial=1) == y.max(initial=0):
        raise ValueError("El AUC requiere positivos y negativos")
    return float(roc_auc_score(y, s))


def f1(scores, labels, theta: float = 0.5) -> float:
    """
    F1 con predicción = puntaje > θ; vale 0 si no hay precisión ni exhaustividad.
    """
    s, y = _as_arrays(scores, labels)
    if len(s) == 0:
        return 0.0
    predicted = (s > theta).astype(np.int64)
    return float(f1_score(y, predicted, zero_division=0))


def average_precision(scores, labels) -> float:
    """
    AP = Σ_k (R_k - R_{k-1})·P_k sobre el ranking descendente. Los empates se
    resuelven por orden de entrada (orden estable).
    """
    s, y = _as_arrays(scores, labels)
    positives = int(y.sum())
    if positives == 0:
        raise ValueError("La precisión promedio requiere al menos un positivo")
    order = np.argsort(-s, kind="stable")
    ranked = y[order]
    hits = np.cumsum(ranked)
    precision = hits / np.arange(1, len(ranked) + 1)
    return float(precision[ranked == 1].sum() / positives)


def evaluate_scores(scores, labels, theta: float = 0.5) -> dict:
    """AUC, F1 y AP de una lista de puntajes etiquetados."""
    return {"auc": auc(scores, labels), "f1": f1(scores, labels, theta),
            "ap": average_precision(scores, labels)}
