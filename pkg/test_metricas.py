#!/usr/bin/env python3
"""
Pruebas de AUC, F1 y precisión promedio.
"""
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.metrics import auc, average_precision, evaluate_scores, f1

SCORES = [0.9, 0.8, 0.4, 0.3]
LABELS = [1, 0, 1, 0]


def _pairwise_auc(scores, labels):
    """Conteo directo de pares positivo-negativo (empates valen ½)."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_auc_ejemplos():
    assert auc(SCORES, LABELS) == pytest.approx(0.75)
    assert auc([0.9, 0.8, 0.1], [1, 1, 0]) == pytest.approx(1.0)
    assert auc([0.5] * 4, LABELS) == pytest.approx(0.5)


def test_auc_una_sola_clase():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000), n=st.integers(min_value=2, max_value=40))
def test_auc_coincide_con_conteo_de_pares(seed, n):
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=int)
    labels[: max(1, n // 3)] = 1
    rng.shuffle(labels)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    scores = np.round(rng.uniform(size=n), 1)
    assert auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels))


def test_auc_invariante_a_transformaciones_crecientes():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=30)
    labels = (rng.uniform(size=30) < 0.4).astype(int)
    labels[0], labels[1] = 0, 1
    base = auc(scores, labels)
    assert auc(np.exp(scores), labels) == pytest.approx(base)
    assert auc(3.0 * scores + 7.0, labels) == pytest.approx(base)


def test_f1_ejemplos():
    """
    TP=1, FP=1, FN=1 -> 0.5
    """
    assert f1(SCORES, LABELS) == pytest.approx(0.5)
    assert f1([0.9, 0.1, 0.8], [1, 0, 1]) == pytest.approx(1.0)
    assert f1([0.1, 0.2], [1, 0]) == 0.0


def test_f1_umbral():
    assert f1(SCORES, LABELS, theta=0.35) == pytest.approx(2 * (2 / 3) * 1.0 / (2 / 3 + 1.0))
    # la predicción es estrictamente mayor que θ
    assert f1([0.5, 0.1], [1, 0], theta=0.5) == 0.0


def test_ap_ejemplos():
    assert average_precision([0.9, 0.5, 0.1], [1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == pytest.approx(1.0)
    for n in (2, 5, 10):
        scores = np.linspace(1.0, 0.0, n)
        labels = np.zeros(n, dtype=int)
        labels[-1] = 1
        assert average_precision(scores, labels) == pytest.approx(1 / n)


def test_ap_empates_en_orden_de_entrada():
    assert average_precision([0.5, 0.5], [1, 0]) == pytest.approx(1.0)
    assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)


def test_ap_sin_positivos():
    with pytest.raises(ValueError):
        average_precision([0.3, 0.2], [0, 0])


def test_etiquetas_invalidas_y_largos():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 2])
    with pytest.raises(ValueError):
        f1([0.1, 0.2, 0.3], [1, 0])


def test_evaluacion_completa():
    result = evaluate_scores(SCORES, LABELS)
    assert result == {"auc": pytest.approx(0.75), "f1": pytest.approx(0.5),
                      "ap": pytest.approx((1 + 2 / 3) / 2)}
