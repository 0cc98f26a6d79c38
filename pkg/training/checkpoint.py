"""
Checkpoints del preentrenamiento y del ajuste fino sobre el contenedor GAAT.
"""
import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from core.errors import CheckpointError
from utils.container import ParamContainer
from utils.logs import logger

META_PREFIX = "meta."


@dataclass
class Checkpoint:
    """
    Parámetros con nombre más la metadata necesaria para transferirlos.

    Attributes:
        params: Valores por nombre
        fingerprint: Huella de la arquitectura
        source: Identidad del grafo sobre el que se entrenó
        best_val: Mejor AUC de validación
        best_epoch: Época del mejor AUC
        kind: 'pretrain' o 'finetune'
        config: Configuración resuelta (diccionario por sección)
        trainable: Nombres entrenables al momento de guardar
    """
    params: Dict[str, np.ndarray]
    fingerprint: str
    source: str
    best_val: float = float("nan")
    best_epoch: int = 0
    kind: str = "pretrain"
    config: Dict = field(default_factory=dict)
    trainable: tuple = ()

    def to_container(self) -> ParamContainer:
        container = ParamContainer()
        for name, values in self.params.items():
            if name.startswith(META_PREFIX):
                raise CheckpointError(f"Nombre de parámetro reservado: {name}")
            container.add(name, values)
        container.add_text("meta.fingerprint", self.fingerprint)
        container.add_text("meta.source", self.source)
        container.add_text("meta.kind", self.kind)
        container.add_text("meta.config", json.dumps(self.config, sort_keys=True))
        container.add_text("meta.trainable", json.dumps(list(self.trainable)))
        container.add("meta.best_val", np.array([[self.best_val]]))
        container.add("meta.best_epoch", np.array([[float(self.best_epoch)]]))
        return container

    def save(self, path: str):
        self.to_container().save(path)
        logger.debug(f"Checkpoint guardado en {path} ({len(self.params)} tensores)")

    @classmethod
    def from_container(cls, container: ParamContainer) -> "Checkpoint":
        for key in ("meta.fingerprint", "meta.source", "meta.kind", "meta.config"):
            if key not in container:
                raise CheckpointError(f"El contenedor no es un checkpoint (falta '{key}')")
        params = {name: arr for name, arr in container.items() if not name.startswith(META_PREFIX)}
        trainable = tuple(json.loads(container.text("meta.trainable"))) if "meta.trainable" in container else ()
        return cls(
            params=params,
            fingerprint=container.text("meta.fingerprint"),
            source=container.text("meta.source"),
            best_val=float(container["meta.best_val"].ravel()[0]),
            best_epoch=int(container["meta.best_epoch"].ravel()[0]),
            kind=container.text("meta.kind"),
            config=json.loads(container.text("meta.config")),
            trainable=trainable,
        )

    @classmethod
    def load(cls, path: str, expected_fingerprint: Optional[str] = None,
             allow_mismatch: bool = False) -> "Checkpoint":
        """
        Lee un checkpoint y verifica la huella de arquitectura.

        Args:
            path: Ruta del archivo
            expected_fingerprint: Huella esperada (None: sin verificación)
            allow_mismatch: Solo advertir si la huella no coincide
        """
        ckpt = cls.from_container(ParamContainer.load(path))
        if expected_fingerprint is not None:
            ckpt.check_fingerprint(expected_fingerprint, allow_mismatch, path)
        return ckpt

    def check_fingerprint(self, expected: str, allow_mismatch: bool = False, origin: str = "checkpoint"):
        """Error (o advertencia con `allow_mismatch`) si la huella no coincide."""
        if self.fingerprint == expected:
            return
        message = f"Huella de arquitectura incompatible en {origin}: {self.fingerprint} (esperada {expected})"
        if not allow_mismatch:
            raise CheckpointError(message)
        logger.warning(message)
