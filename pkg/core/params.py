"""
Registro de parámetros con nombre, banderas de congelamiento y optimizador Adam.
"""
import hashlib
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, Optional, Tuple, Union

import numpy as np

from core.tensor import Tensor

Selector = Union[Callable[[str], bool], Iterable[str]]


@dataclass
class AdamState:
    """Momentos de Adam de un parámetro."""
    first: np.ndarray
    second: np.ndarray
    step: int = 0


class ModelParams:
    """
    Registro nombre -> Tensor con bandera entrenable/congelado por entrada.

    Attributes:
        entries: Parámetros por nombre (orden de inserción)
        trainable: Bandera por nombre
        decay: Si la regularización L2 aplica al parámetro
        optimizer_state: Estado de Adam por nombre
    """

    def __init__(self):
        self.entries: Dict[str, Tensor] = {}
        self.trainable: Dict[str, bool] = {}
        self.decay: Dict[str, bool] = {}
        self.optimizer_state: Dict[str, AdamState] = {}

    def add(self, name: str, values, trainable: bool = True, decay: bool = True) -> Tensor:
        """
        Registra un parámetro nuevo.

        Args:
            name: Nombre único (por ejemplo 'encoder.0.attn.query')
            values: Valores iniciales (se copian)
            trainable: Bandera inicial
            decay: Aplicar weight decay (False para LayerNorm y sesgos)

        Returns:
            El Tensor hoja registrado
        """
        if name in self.entries:
            raise ValueError(f"Parámetro duplicado: {name}")
        tensor = Tensor(values, requires_grad=trainable, name=name)
        self.entries[name] = tensor
        self.trainable[name] = bool(trainable)
        self.decay[name] = bool(decay)
        self.optimizer_state[name] = AdamState(np.zeros(tensor.shape), np.zeros(tensor.shape))
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"Parámetro desconocido: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self, prefix: str = "") -> Tuple[str, ...]:
        return tuple(n for n in self.entries if n.startswith(prefix))

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copia de los valores de todos los parámetros."""
        return {name: t.values.copy() for name, t in self.entries.items()}

    def load_state(self, state: Dict[str, np.ndarray], names: Optional[Iterable[str]] = None):
        """
        Copia valores guardados sobre parámetros existentes (misma forma).

        Args:
            state: Valores por nombre
            names: Subconjunto a cargar; por defecto todos los del registro
        """
        for name in (self.entries if names is None else names):
            if name not in state:
                raise KeyError(f"Falta el parámetro '{name}' en el estado guardado")
            values = np.asarray(state[name], dtype=np.float64)
            target = self[name]
            if values.shape != target.shape:
                raise ValueError(f"Forma incompatible para '{name}': {values.shape} vs {target.shape}")
            target.values = values.copy()

    def zero_grad(self):
        for t in self.entries.values():
            t.grad = None

    def count_parameters(self) -> Dict[str, int]:
        """Escalares entrenables, congelados y totales."""
        trainable = sum(t.values.size for n, t in self.entries.items() if self.trainable[n])
        total = sum(t.values.size for t in self.entries.values())
        return {"trainable": int(trainable), "frozen": int(total - trainable), "total": int(total)}

    def count_trainable(self) -> int:
        return self.count_parameters()["trainable"]

    def digest(self, names: Optional[Iterable[str]] = None) -> str:
        """Huella blake2b de los valores (para verificar que los congelados no cambian)."""
        h = hashlib.blake2b(digest_size=16)
        for name in (self.entries if names is None else names):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self[name].values).tobytes())
        return h.hexdigest()

    def frozen_names(self) -> Tuple[str, ...]:
        return tuple(n for n, flag in self.trainable.items() if not flag)

    def __repr__(self):
        counts = self.count_parameters()
        return f"ModelParams({len(self)} tensores, {counts['trainable']} entrenables / {counts['total']})"


def set_trainable(params: ModelParams, selector: Selector, value: Optional[bool] = None) -> int:
    """
    Cambia las banderas de entrenamiento.

    Con `value=None` la bandera de cada parámetro pasa a ser exactamente
    `selector(name)` (o la pertenencia a la lista explícita). Con `value`
    True/False solo se tocan los parámetros seleccionados.

    Args:
        params: Registro
        selector: Predicado sobre nombres o lista explícita de nombres
        value: Valor a asignar a los seleccionados (None: asignar el predicado)

    Returns:
        Cantidad de escalares entrenables tras el cambio
    """
    if callable(selector):
        predicate = selector
    else:
        explicit = set(selector)
        unknown = sorted(explicit - set(params.entries))
        if unknown:
            raise ValueError(f"Nombres de parámetros desconocidos: {unknown}")
        predicate = explicit.__contains__

    for name, tensor in params.entries.items():
        selected = bool(predicate(name))
        if value is None:
            flag = selected
        elif selected:
            flag = bool(value)
        else:
            continue
        params.trainable[name] = flag
        tensor.requires_grad = flag
        if not flag:
            tensor.grad = None
    return params.count_trainable()


def adam_step(params: ModelParams, lr: float = 0.01, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, weight_decay: float = 5e-4):
    """
    Un paso de Adam con corrección de sesgo. El weight decay se suma al
    gradiente crudo (acoplamiento L2 clásico). Los congelados no se tocan;
    al final se limpian todos los gradientes.

    Args:
        params: Registro con gradientes calculados
        lr: Tasa de aprendizaje
        betas: Coeficientes de los momentos
        eps: Término de estabilidad
        weight_decay: Coeficiente L2
    """
    beta1, beta2 = betas
    for name, tensor in params.entries.items():
        if not params.trainable[name]:
            continue
        if tensor.grad is None:
            raise ValueError(f"El parámetro entrenable '{name}' no tiene gradiente")
        grad = tensor.grad
        if weight_decay and params.decay[name]:
            grad = grad + weight_decay * tensor.values
        state = params.optimizer_state[name]
        state.step += 1
        state.first = beta1 * state.first + (1.0 - beta1) * grad
        state.second = beta2 * state.second + (1.0 - beta2) * grad * grad
        m_hat = state.first / (1.0 - beta1 ** state.step)
        v_hat = state.second / (1.0 - beta2 ** state.step)
        tensor.values = tensor.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Matriz fan_in×fan_out con U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
