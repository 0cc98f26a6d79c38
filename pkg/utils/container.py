"""
Contenedor binario de tensores con nombre (checkpoints y caché de embeddings).

Formato (little-endian):
    b"GAAT" | versión u16 | cantidad u32 |
    por entrada: largo del nombre u16, nombre UTF-8, tipo u8, rango u8,
                 dimensiones u64 x rango, datos en orden de filas |
    suma de verificación blake2b de 8 bytes sobre todo lo anterior
"""
import hashlib
import struct
from collections import OrderedDict
from typing import Dict, Iterator

import numpy as np

from core.errors import CheckpointError

MAGIC = b"GAAT"
VERSION = 1
CHECKSUM_SIZE = 8
EMBEDDING_KEY = "x_init"

# Etiqueta de tipo -> dtype en disco
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("u1")}
DTYPE_TAGS = {np.dtype("<f8"): 1, np.dtype("u1"): 2}


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=CHECKSUM_SIZE).digest()


class ParamContainer:
    """
    Colección ordenada nombre -> arreglo (float64 o bytes).
    """

    def __init__(self, entries: Dict[str, np.ndarray] = None):
        self.entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, values in (entries or {}).items():
            self.add(name, values)

    def add(self, name: str, values):
        """
        Agrega una entrada. Los enteros sin signo de 8 bits se guardan como bytes;
        todo lo demás como float64.
        """
        if name in self.entries:
            raise CheckpointError(f"Nombre duplicado en el contenedor: {name}")
        arr = np.asarray(values)
        if arr.dtype != np.uint8:
            arr = arr.astype("<f8")
        self.entries[name] = arr

    def add_text(self, name: str, text: str):
        self.add(name, np.frombuffer(text.encode("utf-8"), dtype=np.uint8))

    def text(self, name: str) -> str:
        return self[name].tobytes().decode("utf-8")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise CheckpointError(f"El contenedor no tiene la entrada '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HI", VERSION, len(self.entries))]
        for name, arr in self.entries.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"Nombre demasiado largo: {name[:40]}...")
            dtype = DTYPES[1] if arr.dtype != np.uint8 else DTYPES[2]
            if arr.ndim > 255:
                raise CheckpointError(f"Rango no soportado para '{name}': {arr.ndim}")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<BB", DTYPE_TAGS[dtype], arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))
        body = b"".join(parts)
        return body + _checksum(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamContainer":
        if len(data) < len(MAGIC) + 6 + CHECKSUM_SIZE or data[:4] != MAGIC:
            raise CheckpointError("El archivo no es un contenedor GAAT")
        body, digest = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]
        if _checksum(body) != digest:
            raise CheckpointError("Suma de verificación inválida: el contenedor está corrupto")
        version, count = struct.unpack_from("<HI", body, 4)
        if version != VERSION:
            raise CheckpointError(f"Versión de contenedor no soportada: {version}")
        offset = 10
        container = cls()
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", body, offset)
                offset += 2
                name = body[offset:offset + name_len].decode("utf-8")
                offset += name_len
                tag, rank = struct.unpack_from("<BB", body, offset)
                offset += 2
                if tag not in DTYPES:
                    raise CheckpointError(f"Tipo de dato desconocido ({tag}) en '{name}'")
                shape = struct.unpack_from(f"<{rank}Q", body, offset)
                offset += 8 * rank
                dtype = DTYPES[tag]
                size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                if offset + size > len(body):
                    raise CheckpointError(f"Datos truncados en '{name}'")
                values = np.frombuffer(body, dtype=dtype, count=size // dtype.itemsize, offset=offset)
                offset += size
                container.add(name, values.reshape(shape).copy())
        except (struct.error, UnicodeDecodeError) as e:
            raise CheckpointError(f"Contenedor mal formado: {e}") from e
        if offset != len(body):
            raise CheckpointError("Bytes sobrantes al final del contenedor")
        return container

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "ParamContainer":
        try:
            with open(path, "rb") as f:
                data = f.read()
        except OSError as e:
            raise CheckpointError(f"No se pudo leer el contenedor {path}: {e}") from e
        return cls.from_bytes(data)


def save_embeddings(path: str, values: np.ndarray):
    """Guarda X_init con la clave 'x_init'."""
    ParamContainer({EMBEDDING_KEY: values}).save(path)


def load_embeddings(path: str) -> np.ndarray:
    container = ParamContainer.load(path)
    values = container[EMBEDDING_KEY]
    if values.ndim != 2:
        raise CheckpointError(f"'{EMBEDDING_KEY}' debe ser una matriz; forma {values.shape}")
    return values
