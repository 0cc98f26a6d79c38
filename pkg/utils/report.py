"""
Flujo de métricas (JSON por línea) y tablas de resumen de corridas.
"""
import csv
import io
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

RECORD_FIELDS = ("stage", "epoch", "split", "auc", "f1", "ap", "loss_link", "loss_con",
                 "loss_total", "seconds_per_epoch", "trainable_params")
SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.jsonl"
REPORT_METRICS = ("test_auc", "test_f1", "test_ap", "best_val_auc", "baseline_dot_auc",
                  "trainable_params", "trainable_ratio", "seconds_per_epoch")


def _clean(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


class MetricsStream:
    """
    Registros de evaluación en memoria y, opcionalmente, en un archivo JSON Lines.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[Dict] = []
        if path is not None:
            open(path, "w", encoding="utf-8").close()

    def emit(self, **fields) -> Dict:
        """
        Agrega un registro con todos los campos de RECORD_FIELDS (los ausentes en None).
        """
        unknown = set(fields) - set(RECORD_FIELDS)
        if unknown:
            raise ValueError(f"Campos desconocidos en el registro de métricas: {sorted(unknown)}")
        record = {name: _clean(fields.get(name)) for name in RECORD_FIELDS}
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        return record

    def select(self, stage: Optional[str] = None, split: Optional[str] = None) -> List[Dict]:
        return [r for r in self.records
                if (stage is None or r["stage"] == stage) and (split is None or r["split"] == split)]


def read_metrics(path: str) -> List[Dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_summary(summary: Dict, run_dir: str) -> str:
    path = os.path.join(run_dir, SUMMARY_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({k: _clean(v) for k, v in summary.items()}, f, indent=2, sort_keys=True)
    return path


def find_summaries(roots: Iterable[str]) -> List[Dict]:
    """Lee todos los summary.json bajo los directorios dados (recursivo)."""
    summaries = []
    for root in roots:
        if os.path.isfile(root) and os.path.basename(root) == SUMMARY_FILE:
            paths = [root]
        else:
            paths = [os.path.join(d, SUMMARY_FILE) for d, _, files in sorted(os.walk(root))
                     if SUMMARY_FILE in files]
        for path in sorted(paths):
            with open(path, "r", encoding="utf-8") as f:
                summary = json.load(f)
            summary.setdefault("run_dir", os.path.dirname(path))
            summaries.append(summary)
    return summaries


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Media y desviación estándar muestral (0 con un único valor)."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if len(arr) == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def aggregate(summaries: List[Dict], keys: Sequence[str] = ("dataset", "variant", "neg_ratio"),
              metrics: Sequence[str] = REPORT_METRICS) -> List[Dict]:
    """
    Agrupa resúmenes por `keys` y calcula media y desviación de cada métrica.

    Returns:
        Una fila por grupo con '<métrica>_mean', '<métrica>_std' y 'runs'
    """
    groups: Dict[Tuple, List[Dict]] = {}
    for s in summaries:
        groups.setdefault(tuple(s.get(k) for k in keys), []).append(s)
    rows = []
    for key in sorted(groups, key=lambda t: tuple(str(v) for v in t)):
        members = groups[key]
        row = dict(zip(keys, key))
        row["runs"] = len(members)
        for metric in metrics:
            values = [m.get(metric) for m in members if m.get(metric) is not None]
            if not values:
                continue
            row[f"{metric}_mean"], row[f"{metric}_std"] = mean_std(values)
        rows.append(row)
    return rows


def render_table(rows: List[Dict], keys: Sequence[str], metrics: Sequence[str] = REPORT_METRICS) -> str:
    """Tabla de texto con columnas 'media ± desviación'."""
    shown = [m for m in metrics if any(f"{m}_mean" in r for r in rows)]
    header = list(keys) + ["runs"] + shown
    lines = [header]
    for r in rows:
        cells = [str(r.get(k)) for k in keys] + [str(r["runs"])]
        for m in shown:
            if f"{m}_mean" in r:
                cells.append(f"{r[f'{m}_mean']:.4f} ± {r[f'{m}_std']:.4f}")
            else:
                cells.append("-")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    out = []
    for idx, line in enumerate(lines):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
        if idx == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


def render_csv(rows: List[Dict], keys: Sequence[str], metrics: Sequence[str] = REPORT_METRICS) -> str:
    columns = list(keys) + ["runs"]
    for m in metrics:
        if any(f"{m}_mean" in r for r in rows):
            columns += [f"{m}_mean", f"{m}_std"]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buffer.getvalue()
