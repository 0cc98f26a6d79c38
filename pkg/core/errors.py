"""
Excepciones del proyecto. Cada clase corresponde a un código de salida del CLI.
"""


class GraphInputError(ValueError):
    """Archivo ilegible o con tokens mal formados."""
    exit_code = 2


class CheckpointError(ValueError):
    """Contenedor binario corrupto, nombres duplicados o huella incompatible."""
    exit_code = 2


class SamplingError(ValueError):
    """Muestreo infactible (pocas no-aristas, grafo muy chico para el split)."""
    exit_code = 3


class DegenerateGraphError(ValueError):
    """Grafo vacío o sin aristas donde se necesitan aristas."""
    exit_code = 4


class NumericError(ArithmeticError):
    """Valores no finitos en un tensor o en la pérdida."""
    exit_code = 5


class ConfigError(ValueError):
    """Archivo de configuración con secciones, claves o valores inválidos."""
    exit_code = 2
