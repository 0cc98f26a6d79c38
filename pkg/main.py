"""
Punto de entrada de línea de comandos: partición, embeddings, preentrenamiento,
ajuste fino, evaluación y reportes.

Códigos de salida: 0 ok, 1 uso, 2 entrada/configuración/checkpoint,
3 muestreo, 4 grafo degenerado, 5 falla numérica.
"""
import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from core.graph import Graph, generate_sbm, graph_statistics, load_edge_list, save_edge_list
from core.node2vec import node2vec
from core.splits import make_split, read_manifest, write_manifest
from training.checkpoint import Checkpoint
from training.config import (FINETUNE_ABLATIONS, PRETRAIN_ABLATIONS, PretrainConfig, RunConfig,
                             load_config, save_config, variant_name)
from training.model import network_from_checkpoint
from training.pipeline import (LinkDataset, dataset_fingerprint, evaluate, finetune, prepare_dataset,
                               pretrain, source_parameters, summarize)
from utils.container import load_embeddings, save_embeddings
from utils.logs import logger
from utils.report import (METRICS_FILE, SUMMARY_FILE, MetricsStream, aggregate, find_summaries,
                          render_csv, render_table, write_summary)
from utils.statistic import Statistic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
CONFIG_FILE = "config.ini"
CHECKPOINT_FILE = "best.gaat"
EMBEDDING_FILE = "x_init.gaat"
MANIFEST_FILE = "split.tsv"
TRAIN_EDGES_FILE = "train.edges"


class UsageError(Exception):
    """Argumentos inválidos o incompletos."""
    exit_code = EXIT_USAGE


class ArgumentParser(argparse.ArgumentParser):
    """argparse termina con el código 1 ante errores de uso."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_ratio(text: str):
    parts = text.replace(",", ":").split(":")
    try:
        ratios = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Proporción inválida: {text}") from None
    if len(ratios) != 3 or min(ratios) < 1:
        raise argparse.ArgumentTypeError(f"Se esperan tres enteros positivos: {text}")
    return ratios


def _parse_ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Lista de enteros inválida: {text}") from None


def resolve_config(args, stage: Optional[str] = None) -> RunConfig:
    """
    Configuración efectiva: archivo (o valores por defecto), luego --set y --ablate.
    """
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.override(getattr(args, "set", None) or [])
    ablations = getattr(args, "ablate", None) or []
    if ablations:
        allowed = PRETRAIN_ABLATIONS if stage == "pretrain" else FINETUNE_ABLATIONS
        unknown = [a for a in ablations if a not in allowed]
        if unknown:
            raise UsageError(f"Ablaciones no válidas para {stage}: {unknown} (válidas: {list(allowed)})")
        section = cfg.pretrain if stage == "pretrain" else cfg.finetune
        section = replace(section, **{a: True for a in ablations})
        cfg = replace(cfg, **{stage: section})
    if getattr(args, "edges", None):
        cfg = replace(cfg, data=replace(cfg.data, edges=args.edges))
    if getattr(args, "embeddings", None) and stage is not None:
        cfg = replace(cfg, data=replace(cfg.data, embeddings=args.embeddings))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _require_edges(cfg: RunConfig) -> Graph:
    if not cfg.data.edges:
        raise UsageError("Falta la lista de aristas (--edges o [data] edges)")
    return load_edge_list(cfg.data.edges)


def _embeddings_for(graph: Graph, cfg: RunConfig, seed: int, run_dir: str) -> np.ndarray:
    """Carga X_init del contenedor configurado o lo calcula y lo deja en el directorio de la corrida."""
    path = os.path.join(run_dir, EMBEDDING_FILE)
    if cfg.data.embeddings:
        x_init = load_embeddings(cfg.data.embeddings)
        logger.log(f"Embeddings leídos de {cfg.data.embeddings}: {x_init.shape}")
    else:
        logger.log(f"Calculando node2vec para {graph.name} (d₀ = {cfg.node2vec.dim})")
        x_init = node2vec(graph, cfg.node2vec, seed).values
    save_embeddings(path, x_init)
    return x_init


def _dataset_for(cfg: RunConfig, seed: int, run_dir: str) -> LinkDataset:
    graph = _require_edges(cfg)
    x_init = _embeddings_for(graph, cfg, seed, run_dir)
    split = read_manifest(cfg.data.split)[0] if cfg.data.split else None
    dataset = prepare_dataset(graph, x_init, cfg.data.ratios, cfg.data.neg_ratio, seed, split=split)
    write_manifest(dataset.split, os.path.join(run_dir, MANIFEST_FILE), graph.num_nodes)
    return dataset


def _start_run(cfg: RunConfig, run_dir: str) -> MetricsStream:
    os.makedirs(run_dir, exist_ok=True)
    save_config(cfg, os.path.join(run_dir, CONFIG_FILE))
    return MetricsStream(os.path.join(run_dir, METRICS_FILE))


def run_pretrain(cfg: RunConfig, run_dir: str) -> Dict:
    """Preentrenamiento completo en un directorio de corrida; devuelve el resumen."""
    seed = cfg.pretrain.seed
    stream = _start_run(cfg, run_dir)
    dataset = _dataset_for(cfg, seed, run_dir)
    result = pretrain(dataset, cfg.pretrain, cfg, stream, os.path.join(run_dir, CHECKPOINT_FILE))
    summary = summarize(result, dataset, "pretrain", variant_name(cfg.pretrain.ablations()), seed)
    write_summary(summary, run_dir)
    return summary


def run_finetune(cfg: RunConfig, run_dir: str, ckpt_path: Optional[str] = None,
                 allow_mismatch: bool = False) -> Dict:
    """
    Ajuste fino desde un checkpoint (o desde un backbone aleatorio con scratch).
    La sección [pretrain] efectiva es la guardada en el checkpoint.
    """
    seed = cfg.finetune.seed
    source = None
    if cfg.finetune.scratch:
        if ckpt_path:
            logger.warning("Con scratch se ignora el checkpoint indicado")
    else:
        if not ckpt_path:
            raise UsageError("finetune requiere --ckpt (o --scratch)")
        source = Checkpoint.load(ckpt_path)
        cfg = replace(cfg, pretrain=PretrainConfig(**source.config.get("pretrain", {})))

    stream = _start_run(cfg, run_dir)
    dataset = _dataset_for(cfg, seed, run_dir)
    if source is not None:
        source.check_fingerprint(dataset_fingerprint(cfg.pretrain, cfg, dataset), allow_mismatch, ckpt_path)
    result = finetune(dataset, source, cfg.finetune, cfg, stream, os.path.join(run_dir, CHECKPOINT_FILE))
    _, source_count, source_name = source_parameters(source, cfg.finetune, cfg.pretrain, dataset.dim)
    variant = variant_name(cfg.pretrain.ablations(), cfg.finetune.ablations())
    summary = summarize(result, dataset, "finetune", variant, seed, source_name=cfg.data.source or source_name,
                        source_trainable=source_count, f1_threshold=cfg.finetune.f1_threshold)
    write_summary(summary, run_dir)
    return summary


def cmd_split(args) -> int:
    graph = load_edge_list(args.edges)
    split, train_graph = make_split(graph, args.ratio, args.neg_ratio, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(split, os.path.join(args.out, MANIFEST_FILE), graph.num_nodes)
    save_edge_list(train_graph, os.path.join(args.out, TRAIN_EDGES_FILE))
    logger.log(f"Partición {split.sizes()} escrita en {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = resolve_config(args)
    n2v = replace(cfg.node2vec, dim=args.dim) if args.dim else cfg.node2vec
    graph = _require_edges(cfg)
    embedding = node2vec(graph, n2v, args.seed or 0)
    save_embeddings(args.out, embedding.values)
    logger.log(f"X_init {embedding.values.shape} guardado en {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args, "pretrain")
    summary = run_pretrain(cfg, args.out or cfg.data.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_finetune(args) -> int:
    if not args.ckpt and not args.scratch:
        raise UsageError("finetune requiere --ckpt (o --scratch)")
    cfg = resolve_config(args, "finetune")
    if args.scratch:
        cfg = replace(cfg, finetune=replace(cfg.finetune, scratch=True))
    summary = run_finetune(cfg, args.out or cfg.data.out, args.ckpt, args.allow_mismatch)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """Reevalúa un modelo guardado sobre una partición de un manifiesto."""
    run_dir = os.path.dirname(os.path.abspath(args.model))
    ckpt = Checkpoint.load(args.model)
    split_path = args.split or os.path.join(run_dir, MANIFEST_FILE)
    split, num_nodes = read_manifest(split_path)
    x_init = load_embeddings(args.embeddings or os.path.join(run_dir, EMBEDDING_FILE))
    train_graph = Graph(num_nodes, split.train_pos, name=ckpt.source)
    network = network_from_checkpoint(ckpt, train_graph, x_init)
    record = evaluate(network, split, args.which, stage=ckpt.kind)
    print(json.dumps(record, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = find_summaries(args.runs)
    if not summaries:
        logger.warning(f"No se encontraron {SUMMARY_FILE} bajo {args.runs}")
        return EXIT_INPUT
    keys = ("source", "dataset", "variant", "neg_ratio") if args.by_source else ("dataset", "variant", "neg_ratio")
    rows = aggregate(summaries, keys)
    print(render_csv(rows, keys) if args.format == "csv" else render_table(rows, keys))
    return EXIT_OK


def cmd_sbm(args) -> int:
    graph = generate_sbm(args.sizes, args.p_in, args.p_out, args.seed,
                         name=os.path.splitext(os.path.basename(args.out))[0])
    save_edge_list(graph, args.out)
    logger.log(f"SBM {args.sizes}: {graph.num_nodes} nodos, {graph.num_edges} aristas -> {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    stats = graph_statistics(load_edge_list(args.edges))
    for key, value in stats.items():
        print(f"{key}: {value:.4f}" if isinstance(value, float) else f"{key}: {value}")
    return EXIT_OK


def cmd_seeds(args) -> int:
    """Repite pretrain o finetune con varias semillas (y opcionalmente un barrido)."""
    stage = args.stage
    base = resolve_config(args, stage)
    if stage == "finetune" and args.scratch:
        base = replace(base, finetune=replace(base.finetune, scratch=True))
    if stage == "finetune" and not (args.ckpt or base.finetune.scratch):
        raise UsageError("seeds finetune requiere --ckpt (o --scratch)")
    seeds = args.seeds or list(base.data.seeds)
    out = args.out or base.data.out

    def command(seed: int, overrides: Optional[List[str]] = None) -> Dict:
        cfg = base.override(overrides or []).with_seed(seed)
        tag = "_".join(o.replace("=", "-") for o in overrides or [])
        run_dir = os.path.join(out, tag, f"seed_{seed}") if tag else os.path.join(out, f"seed_{seed}")
        if stage == "pretrain":
            return run_pretrain(cfg, run_dir)
        return run_finetune(cfg, run_dir, args.ckpt, args.allow_mismatch)

    statistic = Statistic()
    if args.sweep:
        key, _, values = args.sweep.partition("=")
        if not values:
            raise UsageError("--sweep espera seccion.clave=v1,v2,...")
        reports = statistic.sweep(command, key, values.split(","), seeds, args.workers)
    else:
        reports = [statistic.run_seeds(command, seeds, args.workers)]
    for report in reports:
        if "key" in report:
            print(f"\n{report['key']} = {report['value']}")
        print(statistic.format_report(report))
    failed = [f for r in reports for f in r["failures"]]
    return max((f["exit_code"] for f in failed), default=EXIT_OK)


def _add_run_options(parser, stage: str):
    parser.add_argument("--config", help="Archivo INI con las secciones [data] [node2vec] [pretrain] [finetune]")
    parser.add_argument("--set", action="append", metavar="SECCION.CLAVE=VALOR", help="Sobrescribe una clave")
    parser.add_argument("--ablate", action="append",
                        choices=sorted(set(PRETRAIN_ABLATIONS) | set(FINETUNE_ABLATIONS)),
                        help="Activa una variante de ablación")
    parser.add_argument("--edges", help="Lista de aristas del grafo")
    parser.add_argument("--embeddings", help="Contenedor con X_init precalculado")
    parser.add_argument("--out", help="Directorio de la corrida")
    if stage == "finetune":
        parser.add_argument("--ckpt", help="Checkpoint de preentrenamiento")
        parser.add_argument("--scratch", action="store_true", help="Backbone aleatorio congelado (control)")
        parser.add_argument("--allow-mismatch", action="store_true", help="Solo advertir si la huella difiere")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gaatnet", description="Predicción de enlaces con preentrenamiento y ajuste fino")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Desactiva los logs")
    verbosity.add_argument("--debug", action="store_true", help="Activa los logs de debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="Partición train/val/test con negativos")
    p.add_argument("--edges", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=_parse_ratio, default=(8, 1, 1))
    p.add_argument("--neg-ratio", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("embed", help="Embeddings node2vec (X_init)")
    p.add_argument("--edges", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("pretrain", help="Preentrenamiento sobre el grafo fuente")
    _add_run_options(p, "pretrain")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="Ajuste fino sobre el grafo destino")
    _add_run_options(p, "finetune")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("evaluate", help="Evalúa un modelo guardado")
    p.add_argument("--model", required=True)
    p.add_argument("--split", help="Manifiesto (por defecto el del directorio del modelo)")
    p.add_argument("--embeddings", help="X_init (por defecto el del directorio del modelo)")
    p.add_argument("--which", choices=("train", "val", "test"), default="test")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="Tabla media ± desviación de las corridas")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--by-source", action="store_true", help="Agrupa también por grafo fuente")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("sbm", help="Genera un grafo de bloques estocástico")
    p.add_argument("--sizes", type=_parse_ints, default=[100, 100])
    p.add_argument("--p-in", type=float, default=0.2)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sbm)

    p = sub.add_parser("stats", help="Estadísticas de un grafo")
    p.add_argument("--edges", required=True)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("seeds", help="Repite una etapa con varias semillas")
    p.add_argument("stage", choices=("pretrain", "finetune"))
    _add_run_options(p, "finetune")
    p.add_argument("--seeds", type=_parse_ints)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sweep", metavar="SECCION.CLAVE=V1,V2", help="Barrido de un parámetro")
    p.set_defaults(handler=cmd_seeds)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Ejecuta el subcomando pedido y traduce las excepciones a códigos de salida.
    """
    args = build_parser().parse_args(argv)
    logger.enable()
    if args.quiet:
        logger.disable()
    if args.debug:
        logger.enable_debug()
    try:
        return args.handler(args)
    except KeyError as e:
        print(f"error: nombre desconocido en el registro o el checkpoint: {e.args[0] if e.args else e}",
              file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, ValueError, ArithmeticError, OSError) as e:
        code = getattr(e, "exit_code", 5 if isinstance(e, ArithmeticError) else EXIT_INPUT)
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
