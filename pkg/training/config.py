"""
Configuración tipada de las corridas y su lectura/escritura en formato INI.

Secciones: [data], [node2vec], [pretrain], [finetune]. Toda clave tiene un
valor por defecto; las secciones o claves desconocidas se rechazan.
"""
import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Tuple

from core.errors import ConfigError
from core.node2vec import Node2VecConfig
from core.objective import CANDIDATE_POLICIES, SCORERS

PRETRAIN_ABLATIONS = ("non_aug", "non_ft", "non_con", "score_dot")
FINETUNE_ABLATIONS = ("non_sa", "non_con", "score_dot", "trad")

VARIANT_LABELS = {
    "non_aug": "NonAug",
    "non_ft": "NonFT",
    "non_sa": "NonSA",
    "non_con": "NonCon",
    "score_dot": "GAATNet_dot",
    "trad": "Trad",
    "scratch": "Scratch",
}


def _parse_int_tuple(text) -> Tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(":", ",").split(",") if v.strip())


@dataclass
class DataConfig:
    """
    Entradas y salidas de una corrida.

    Attributes:
        edges: Lista de aristas del grafo de la corrida
        source: Nombre o ruta del grafo fuente (informativo en el ajuste fino)
        embeddings: Contenedor con 'x_init' ya calculado ('' para calcularlo)
        split: Manifiesto de partición ('' para particionar en la corrida)
        ratios: Proporciones train:val:test
        neg_ratio: Negativos por positivo
        seeds: Semillas para repeticiones
        out: Directorio de salida
    """
    edges: str = ""
    source: str = ""
    embeddings: str = ""
    split: str = ""
    ratios: Tuple[int, ...] = (8, 1, 1)
    neg_ratio: float = 1.0
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs"

    def __post_init__(self):
        self.ratios = _parse_int_tuple(self.ratios)
        self.seeds = _parse_int_tuple(self.seeds)
        self.validate()

    def validate(self):
        if len(self.ratios) != 3 or min(self.ratios) < 1:
            raise ConfigError(f"ratios debe tener tres enteros positivos: {self.ratios}")
        if self.neg_ratio <= 0:
            raise ConfigError(f"neg_ratio debe ser positivo: {self.neg_ratio}")
        if not self.seeds:
            raise ConfigError("Se necesita al menos una semilla")


@dataclass
class PretrainConfig:
    """
    Preentrenamiento sobre el grafo fuente.

    Las claves de arquitectura (cabezas, anchos, capas) forman la huella que
    se guarda en el checkpoint.
    """
    epochs: int = 200
    alpha: float = 0.15
    steps: int = 50
    gat_heads: int = 4
    gat_head_dim: int = 64
    transformer_layers: int = 2
    transformer_heads: int = 4
    ffn_dim: int = 64
    hops: Tuple[int, ...] = (2, 3)
    distant_per_node: int = 4
    enhance_dim: int = 8
    lr: float = 0.01
    dropout: float = 0.3
    weight_decay: float = 5e-4
    lam: float = 0.5
    tau: float = 0.5
    candidate_policy: str = "anchor"
    patience: int = 20
    seed: int = 0
    non_aug: bool = False
    non_ft: bool = False
    non_con: bool = False
    score_dot: bool = False

    def __post_init__(self):
        self.hops = _parse_int_tuple(self.hops)
        self.validate()

    def validate(self):
        _check_common(self, "pretrain")
        if not (0.0 <= self.alpha < 1.0) or self.steps < 0:
            raise ConfigError(f"Difusión inválida: alpha={self.alpha}, steps={self.steps}")
        for name in ("gat_heads", "gat_head_dim", "transformer_layers", "transformer_heads",
                     "ffn_dim", "distant_per_node", "enhance_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"pretrain.{name} debe ser >= 1")
        if (self.gat_heads * self.gat_head_dim) % self.transformer_heads:
            raise ConfigError("El ancho del GAT debe ser divisible por transformer_heads")
        if not self.hops or min(self.hops) < 2:
            raise ConfigError(f"hops debe contener distancias >= 2: {self.hops}")

    @property
    def model_dim(self) -> int:
        return self.gat_heads * self.gat_head_dim

    @property
    def scorer(self) -> str:
        return "dot" if self.score_dot else "euclid"

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.non_con else self.lam

    def ablations(self) -> Tuple[str, ...]:
        return tuple(flag for flag in PRETRAIN_ABLATIONS if getattr(self, flag))


@dataclass
class FinetuneConfig:
    """Ajuste fino eficiente en parámetros sobre el grafo destino."""
    epochs: int = 200
    bottleneck: int = 8
    lr: float = 0.01
    dropout: float = 0.3
    weight_decay: float = 5e-4
    lam: float = 0.5
    tau: float = 0.5
    candidate_policy: str = "anchor"
    patience: int = 20
    seed: int = 0
    f1_threshold: float = 0.7
    non_sa: bool = False
    non_con: bool = False
    score_dot: bool = False
    trad: bool = False
    scratch: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        _check_common(self, "finetune")
        if self.bottleneck < 1:
            raise ConfigError(f"finetune.bottleneck debe ser >= 1: {self.bottleneck}")
        if self.trad and self.non_sa:
            raise ConfigError("trad y non_sa son excluyentes (trad no usa adaptador)")

    @property
    def scorer(self) -> str:
        return "dot" if self.score_dot else "euclid"

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.non_con else self.lam

    def ablations(self) -> Tuple[str, ...]:
        flags = tuple(flag for flag in FINETUNE_ABLATIONS if getattr(self, flag))
        return flags + (("scratch",) if self.scratch else ())


def _check_common(cfg, section: str):
    if cfg.epochs < 1:
        raise ConfigError(f"{section}.epochs debe ser >= 1: {cfg.epochs}")
    if cfg.lr <= 0 or cfg.weight_decay < 0:
        raise ConfigError(f"{section}: lr y weight_decay inválidos")
    if cfg.lam < 0 or cfg.tau <= 0:
        raise ConfigError(f"{section}: λ debe ser >= 0 y τ > 0 (λ={cfg.lam}, τ={cfg.tau})")
    if cfg.candidate_policy not in CANDIDATE_POLICIES:
        raise ConfigError(f"{section}.candidate_policy desconocida: {cfg.candidate_policy}")
    if cfg.patience < 1:
        raise ConfigError(f"{section}.patience debe ser >= 1")
    if hasattr(cfg, "dropout") and not (0.0 <= cfg.dropout < 1.0):
        raise ConfigError(f"{section}.dropout fuera de [0, 1): {cfg.dropout}")
    assert cfg.scorer in SCORERS


def variant_name(*flag_groups) -> str:
    """Nombre legible de la variante a partir de las banderas de ablación."""
    flags = []
    for group in flag_groups:
        flags.extend(f for f in group if f not in flags)
    if not flags:
        return "GAATNet"
    return "+".join(VARIANT_LABELS[f] for f in flags)


def architecture_fingerprint(pretrain: PretrainConfig, node2vec: Node2VecConfig) -> str:
    """Huella de los campos que determinan las formas de los parámetros."""
    arch = {
        "dim": node2vec.dim,
        "gat_heads": pretrain.gat_heads,
        "gat_head_dim": pretrain.gat_head_dim,
        "transformer_layers": 0 if pretrain.non_ft else pretrain.transformer_layers,
        "transformer_heads": pretrain.transformer_heads,
        "ffn_dim": pretrain.ffn_dim,
        "enhance_dim": pretrain.enhance_dim,
    }
    payload = json.dumps(arch, sort_keys=True).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


@dataclass
class RunConfig:
    """Configuración completa de una corrida (se archiva en cada directorio de salida)."""
    data: DataConfig = field(default_factory=DataConfig)
    node2vec: Node2VecConfig = field(default_factory=Node2VecConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    SECTIONS = ("data", "node2vec", "pretrain", "finetune")

    def fingerprint(self) -> str:
        return architecture_fingerprint(self.pretrain, self.node2vec)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, pretrain=replace(self.pretrain, seed=seed),
                       finetune=replace(self.finetune, seed=seed))

    def to_dict(self) -> Dict[str, Dict]:
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    def override(self, assignments) -> "RunConfig":
        """
        Aplica asignaciones 'seccion.clave=valor' (opción --set del CLI).
        """
        raw = {name: {} for name in self.SECTIONS}
        for item in assignments:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"Asignación inválida (se espera seccion.clave=valor): {item!r}")
            key, value = item.split("=", 1)
            section, name = key.split(".", 1)
            if section not in raw:
                raise ConfigError(f"Sección desconocida: {section}")
            raw[section][name.strip()] = value.strip()
        return _merge(self, raw)


def _convert(section: str, key: str, current, text: str):
    # El tipo lo da el valor vigente del campo
    try:
        if isinstance(current, bool):
            lowered = text.strip().lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return _parse_int_tuple(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: valor inválido {text!r}") from None


def _merge(base: RunConfig, raw: Dict[str, Dict[str, str]]) -> RunConfig:
    sections = {}
    for name in RunConfig.SECTIONS:
        current = getattr(base, name)
        known = {f.name for f in fields(current)}
        updates = {}
        for key, text in raw.get(name, {}).items():
            if key not in known:
                raise ConfigError(f"Clave desconocida en [{name}]: {key}")
            updates[key] = _convert(name, key, getattr(current, key), text)
        sections[name] = replace(current, **updates) if updates else current
    return RunConfig(**sections)


def load_config(path: str) -> RunConfig:
    """
    Lee un archivo INI; lo no especificado toma el valor por defecto.

    Args:
        path: Ruta del archivo

    Returns:
        RunConfig validado
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"No se pudo leer la configuración {path}: {e}") from e
    unknown = [s for s in parser.sections() if s not in RunConfig.SECTIONS]
    if unknown:
        raise ConfigError(f"Secciones desconocidas en {path}: {unknown}")
    raw = {name: dict(parser.items(name)) if parser.has_section(name) else {} for name in RunConfig.SECTIONS}
    return _merge(RunConfig(), raw)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def save_config(cfg: RunConfig, path: str):
    """Escribe la configuración resuelta (todas las claves) en formato INI."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in cfg.to_dict().items():
        parser[name] = {key: _format_value(value) for key, value in values.items()}
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
