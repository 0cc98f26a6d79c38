"""
Sub-flujos aleatorios con nombre derivados de una única semilla de 64 bits.
"""
import zlib

import numpy as np

STREAMS = ("split", "negatives", "node2vec", "walks", "init", "dropout", "distant")


def stream_key(name: str) -> int:
    """Clave entera estable para un nombre de sub-flujo."""
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Crea un generador independiente para el componente `name`.

    Args:
        seed: Semilla global de la corrida (64 bits)
        name: Nombre del sub-flujo ('split', 'negatives', 'init', ...)
        extra: Enteros adicionales (por ejemplo el id de nodo o la época)

    Returns:
        Generador de numpy determinista para (seed, name, extra)
    """
    if name not in STREAMS:
        raise ValueError(f"Sub-flujo aleatorio desconocido: {name}")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name)] + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(entropy))
