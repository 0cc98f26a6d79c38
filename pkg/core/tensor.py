"""
Tensores densos 2-D en doble precisión con diferenciación en modo reverso.

Cada primitiva registra en el nodo resultante sus padres y una función que
calcula el producto vector-Jacobiano. `backward` recorre la cinta en orden
topológico inverso y acumula los gradientes en las hojas.
"""
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from core.errors import NumericError

GELU_COEF = np.sqrt(2.0 / np.pi)
GELU_CUBIC = 0.044715
LEAKY_SLOPE = 0.2
LAYERNORM_EPS = 1e-5
GRAD_CHECK_FLOOR = 1e-8

_tape_state = threading.local()


def grad_enabled() -> bool:
    """Si el hilo actual registra operaciones en la cinta (activado por defecto)."""
    return getattr(_tape_state, "enabled", True)


@contextmanager
def no_grad():
    """
    Desactiva el registro en la cinta del hilo actual (evaluación, diferencias
    finitas). Los demás hilos siguen registrando.
    """
    previous = grad_enabled()
    _tape_state.enabled = False
    try:
        yield
    finally:
        _tape_state.enabled = previous


class Tensor:
    """
    Arreglo 2-D de reales que participa en la cinta de gradientes.

    Attributes:
        values: Valores (filas, columnas) en float64
        requires_grad: Si el tensor participa en el gradiente
        grad: Acumulador del gradiente (misma forma) o None
        name: Nombre opcional (parámetros del modelo)
    """

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Sequence["Tensor"] = (), _backward: Optional[Callable] = None,
                 _op: str = "hoja", copy: bool = True):
        arr = np.array(values, dtype=np.float64, copy=True) if copy else values
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise ValueError(f"Los tensores son 2-D; se recibió la forma {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() requiere un escalar; forma {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(values: np.ndarray, op: str):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"Resultado no finito en la operación '{op}' (forma {values.shape})")


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(values, op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, _parents=parents, _backward=backward_fn,
                      _op=op, copy=False)
    return Tensor(values, _op=op, copy=False)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"Formas incompatibles en '{op}': {a.shape} y {b.shape}") from None


def scatter_rows(values: np.ndarray, index: np.ndarray, num_rows: int) -> np.ndarray:
    """
    Suma las filas de `values` en las posiciones `index` mediante una matriz de
    incidencia dispersa. El orden de acumulación es fijo, lo que mantiene el
    resultado reproducible bit a bit.
    """
    incidence = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                              shape=(num_rows, len(index)))
    return np.asarray(incidence @ values)


# ---------------------------------------------------------------------------
# Primitivas lineales y aritméticas
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"Formas incompatibles en 'matmul': {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.values + b.values, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.values - b.values, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    av, bv = a.values, b.values

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(av * bv, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "div")
    av, bv = a.values, b.values

    def backward(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)

    return _make(av / bv, (a, b), backward, "div")


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g):
        return (g * factor,)

    return _make(a.values * factor, (a,), backward, "scale")


def add_scalar(a: Tensor, value: float) -> Tensor:
    def backward(g):
        return (g,)

    return _make(a.values + value, (a,), backward, "add_scalar")


def concat_cols(tensors: List[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("concat_cols requiere al menos un tensor")
    rows = tensors[0].shape[0]
    if any(t.shape[0] != rows for t in tensors):
        raise ValueError(f"Cantidad de filas distinta en 'concat_cols': {[t.shape for t in tensors]}")
    widths = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return _make(np.concatenate([t.values for t in tensors], axis=1), tuple(tensors), backward, "concat_cols")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[1]):
        raise ValueError(f"Rango de columnas inválido [{start}, {stop}) para forma {x.shape}")

    def backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return _make(x.values[:, start:stop], (x,), backward, "slice_cols")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[0]):
        raise ValueError(f"Rango de filas inválido [{start}, {stop}) para forma {x.shape}")

    def backward(g):
        full = np.zeros(x.shape)
        full[start:stop] = g
        return (full,)

    return _make(x.values[start:stop], (x,), backward, "slice_rows")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full(x.shape, g[0, 0]),)

    return _make(np.array([[x.values.sum()]]), (x,), backward, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    count = x.values.size
    if count == 0:
        raise ValueError("mean_all sobre un tensor vacío")

    def backward(g):
        return (np.full(x.shape, g[0, 0] / count),)

    return _make(np.array([[x.values.mean()]]), (x,), backward, "mean_all")


def row_sum(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.values.sum(axis=1, keepdims=True), (x,), backward, "row_sum")


# ---------------------------------------------------------------------------
# Activaciones
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    xv = x.values

    def backward(g):
        return (g * (xv > 0),)

    return _make(np.maximum(xv, 0.0), (x,), backward, "relu")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    xv = x.values

    def backward(g):
        return (g * np.where(xv > 0, 1.0, slope),)

    return _make(np.where(xv > 0, xv, slope * xv), (x,), backward, "leaky_relu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xv = x.values
    negative = alpha * np.expm1(np.minimum(xv, 0.0))
    out = np.where(xv > 0, xv, negative)

    def backward(g):
        return (g * np.where(xv > 0, 1.0, negative + alpha),)

    return _make(out, (x,), backward, "elu")


def gelu(x: Tensor) -> Tensor:
    """GELU con la aproximación tanh: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³)))."""
    xv = x.values
    t = np.tanh(GELU_COEF * (xv + GELU_CUBIC * xv ** 3))
    out = 0.5 * xv * (1.0 + t)

    def backward(g):
        du = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * xv ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du),)

    return _make(out, (x,), backward, "gelu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)

    def backward(g):
        return (g * out,)

    return _make(out, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    xv = x.values
    if np.any(xv <= 0):
        raise NumericError("log de un valor no positivo")

    def backward(g):
        return (g / xv,)

    return _make(np.log(xv), (x,), backward, "log")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.values)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward, "sigmoid")


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    xv = x.values

    def backward(g):
        return (g * ((xv >= low) & (xv <= high)),)

    return _make(np.clip(xv, low, high), (x,), backward, "clamp")


# ---------------------------------------------------------------------------
# Normalizaciones
# ---------------------------------------------------------------------------

def row_softmax_masked(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax por fila; las posiciones enmascaradas (mask=False) valen exactamente 0
    y no reciben gradiente. Una fila sin posiciones válidas queda en cero.
    """
    xv = x.values
    valid = np.ones(xv.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != xv.shape:
        raise ValueError(f"La máscara {valid.shape} no coincide con {xv.shape}")
    masked = np.where(valid, xv, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(valid, np.exp(np.where(valid, xv, 0.0) - row_max), 0.0)
    total = e.sum(axis=1, keepdims=True)
    out = e / np.where(total > 0, total, 1.0)

    def backward(g):
        return (out * (g - (out * g).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), backward, "row_softmax_masked")


def layer_norm(x: Tensor, scale_: Tensor, shift: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """
    Normalización por fila. Filas de varianza nula se normalizan a cero antes
    de aplicar escala y desplazamiento.
    """
    xv = x.values
    d = xv.shape[1]
    if scale_.shape != (1, d) or shift.shape != (1, d):
        raise ValueError(f"LayerNorm espera parámetros (1, {d}); se recibió {scale_.shape} y {shift.shape}")
    centered = xv - xv.mean(axis=1, keepdims=True)
    constant = np.ptp(xv, axis=1) == 0
    centered[constant] = 0.0
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv
    sv = scale_.values

    def backward(g):
        g_hat = g * sv
        g_x = inv / d * (d * g_hat - g_hat.sum(axis=1, keepdims=True)
                         - xhat * (g_hat * xhat).sum(axis=1, keepdims=True))
        return g_x, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _make(xhat * sv + shift.values, (x, scale_, shift), backward, "layer_norm")


def row_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide cada fila por max(‖fila‖, eps); una fila nula queda nula."""
    xv = x.values
    norms = np.sqrt((xv ** 2).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    out = xv / denom
    active = norms > eps

    def backward(g):
        radial = (out * g).sum(axis=1, keepdims=True)
        return (np.where(active, (g - out * radial) / denom, g / denom),)

    return _make(out, (x,), backward, "row_normalize")


def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None,
            mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Dropout invertido: en entrenamiento multiplica por máscara/(1-rate).
    En evaluación (o con rate 0) es la identidad.

    Args:
        x: Entrada
        rate: Probabilidad de apagar cada entrada
        train: Modo entrenamiento
        rng: Generador para sortear la máscara
        mask: Máscara fija opcional (booleana) en lugar de sortearla
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"Tasa de dropout inválida: {rate}")
    if not train or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("dropout en entrenamiento requiere un generador")
        mask = rng.random(x.shape) >= rate
    factor = np.asarray(mask, dtype=np.float64) / (1.0 - rate)

    def backward(g):
        return (g * factor,)

    return _make(x.values * factor, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# Primitivas de grafo
# ---------------------------------------------------------------------------

def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    rows = x.shape[0]

    def backward(g):
        return (scatter_rows(g, index, rows),)

    return _make(x.values[index], (x,), backward, "gather_rows")


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != x.shape[0]:
        raise ValueError(f"segment_sum: {len(segments)} segmentos para {x.shape[0]} filas")

    def backward(g):
        return (g[segments],)

    return _make(scatter_rows(x.values, segments, num_segments), (x,), backward, "segment_sum")


def segment_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax de las filas de x agrupadas por segmento (por columna)."""
    segments = np.asarray(segments, dtype=np.int64)
    xv = x.values
    seg_max = np.full((num_segments, xv.shape[1]), -np.inf)
    np.maximum.at(seg_max, segments, xv)
    e = np.exp(xv - seg_max[segments])
    totals = scatter_rows(e, segments, num_segments)
    out = e / totals[segments]

    def backward(g):
        weighted = scatter_rows(out * g, segments, num_segments)
        return (out * (g - weighted[segments]),)

    return _make(out, (x,), backward, "segment_softmax")


def sparse_matmul(matrix, x: Tensor) -> Tensor:
    """Producto M·X con M constante (densa o dispersa)."""
    if matrix.shape[1] != x.shape[0]:
        raise ValueError(f"Formas incompatibles en 'sparse_matmul': {matrix.shape} @ {x.shape}")
    transposed = matrix.T

    def backward(g):
        return (np.asarray(transposed @ g),)

    return _make(np.asarray(matrix @ x.values), (x,), backward, "sparse_matmul")


def attention(q: Tensor, k: Tensor, v: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Atención de producto punto escalado con sesgo aditivo del lado de la clave:
    S = QKᵀ/√d_k + 1·bᵀ, salida softmax(S)·V. La matriz de probabilidades se
    recalcula en el paso reverso en lugar de guardarse.

    Args:
        q, k, v: Tensores (n, d_k), (n, d_k), (n, d_v)
        bias: Sesgo por clave (n, 1) o None
    """
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"Formas incompatibles en 'attention': Q {q.shape}, K {k.shape}, V {v.shape}")
    if bias is not None and bias.shape != (k.shape[0], 1):
        raise ValueError(f"El sesgo debe tener forma ({k.shape[0]}, 1); se recibió {bias.shape}")
    inv_sqrt = 1.0 / np.sqrt(q.shape[1])
    qv, kv, vv = q.values, k.values, v.values
    bv = None if bias is None else bias.values

    def probabilities():
        scores = (qv @ kv.T) * inv_sqrt
        if bv is not None:
            scores = scores + bv.T
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)

    out = probabilities() @ vv

    def backward(g):
        p = probabilities()
        g_v = p.T @ g
        g_p = g @ vv.T
        g_s = p * (g_p - (p * g_p).sum(axis=1, keepdims=True))
        g_q = (g_s @ kv) * inv_sqrt
        g_k = (g_s.T @ qv) * inv_sqrt
        grads = [g_q, g_k, g_v]
        if bias is not None:
            grads.append(g_s.sum(axis=0).reshape(-1, 1))
        return tuple(grads)

    parents = (q, k, v) if bias is None else (q, k, v, bias)
    return _make(out, parents, backward, "attention")


# ---------------------------------------------------------------------------
# Paso reverso y verificación de gradientes
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited, finished = set(), set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            finished.add(id(node))
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if not parent.requires_grad:
                continue
            assert not (id(parent) in visited and id(parent) not in finished), "cinta cíclica"
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Propaga el gradiente de un escalar a todas las hojas con requires_grad.
    La acumulación es aditiva sobre `grad` de cada hoja.

    Args:
        loss: Tensor (1, 1)
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward requiere un escalar; forma {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError(f"La pérdida no está en la cinta (operación '{loss._op}'): "
                           "nada la conecta con un parámetro entrenable o se calculó bajo no_grad")
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, g_parent in zip(node._parents, node._backward(g)):
            if g_parent is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = g_parent if key not in grads else grads[key] + g_parent


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5) -> float:
    """
    Compara el gradiente de la cinta con diferencias centrales coordenada a coordenada.

    Args:
        f: Función escalar de tensores
        inputs: Valores de las entradas (se copian)
        eps: Paso de las diferencias finitas

    Returns:
        Máximo error relativo |a-b| / max(|a|, |b|, 1e-8)
    """
    arrays = [np.array(a, dtype=np.float64, ndmin=2) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    if out.requires_grad:
        backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]

    def evaluate(values):
        with no_grad():
            return f(*[Tensor(v) for v in values]).item()

    worst = 0.0
    for idx, base in enumerate(arrays):
        for coord in np.ndindex(base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[idx][coord] += eps
            minus[idx][coord] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
            a = analytic[idx][coord]
            err = abs(a - numeric) / max(abs(a), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, err)
    return worst
