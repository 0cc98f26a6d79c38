from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Sequence

import numpy as np

from utils.logs import logger
from utils.report import REPORT_METRICS, mean_std


class Statistic:
    """
    Clase para repetir corridas con varias semillas y resumir sus métricas.

    Cada comando es una función que recibe una semilla (y opcionalmente una
    lista de asignaciones 'seccion.clave=valor') y devuelve el resumen de la
    corrida. Las fallas de una semilla no detienen al resto: quedan anotadas
    en el reporte.
    """

    def __init__(self, metrics: Sequence[str] = REPORT_METRICS):
        """
        Inicializa la clase de estadísticas

        Args:
            metrics: Métricas a agregar (las ausentes en los resúmenes se omiten)
        """
        self.metrics = tuple(metrics)
        self.reports: List[Dict[str, Any]] = []

    def _run_one(self, command: Callable, seed: int, overrides: Sequence[str]):
        try:
            summary = command(seed, list(overrides)) if overrides else command(seed)
            return dict(summary, seed=seed), None
        except Exception as e:  # noqa: BLE001
            logger.warning(f"Semilla {seed}: {type(e).__name__}: {e}")
            return None, {"seed": seed, "error": f"{type(e).__name__}: {e}",
                          "exit_code": getattr(e, "exit_code", 2 if isinstance(e, KeyError) else 1)}

    def run_seeds(self, command: Callable, seeds: Sequence[int], workers: int = 1,
                  overrides: Sequence[str] = ()) -> Dict[str, Any]:
        """
        Ejecuta un comando una vez por semilla y agrega las métricas.

        Args:
            command: Función semilla -> resumen
            seeds: Semillas a ejecutar
            workers: Hilos en paralelo (1 = secuencial)
            overrides: Asignaciones adicionales pasadas al comando

        Returns:
            Diccionario con 'rows' (un resumen por semilla exitosa), 'mean',
            'std' (muestral) y 'failures'
        """
        seeds = [int(s) for s in seeds]
        if not seeds:
            raise ValueError("Se necesita al menos una semilla")
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(lambda s: self._run_one(command, s, overrides), seeds))
        else:
            outcomes = [self._run_one(command, s, overrides) for s in seeds]

        rows = [row for row, _ in outcomes if row is not None]
        failures = [fail for _, fail in outcomes if fail is not None]
        report = {"rows": rows, "mean": {}, "std": {}, "failures": failures,
                  "overrides": list(overrides)}
        for metric in self.metrics:
            values = [r[metric] for r in rows if r.get(metric) is not None]
            if values:
                report["mean"][metric], report["std"][metric] = mean_std(values)
        logger.log(f"{len(rows)} de {len(seeds)} semillas completadas")
        self.reports.append(report)
        return report

    def sweep(self, command: Callable, key: str, values: Sequence, seeds: Sequence[int],
              workers: int = 1) -> List[Dict[str, Any]]:
        """
        Barrido de un parámetro: repite run_seeds para cada valor de `key`.

        Args:
            command: Función (semilla, asignaciones) -> resumen
            key: Clave 'seccion.clave' a variar
            values: Valores a probar
            seeds: Semillas por valor
            workers: Hilos en paralelo

        Returns:
            Un reporte por valor, con la clave 'value' agregada
        """
        results = []
        for value in values:
            logger.log(f"Barrido {key} = {value}")
            report = self.run_seeds(command, seeds, workers, overrides=[f"{key}={value}"])
            report["key"] = key
            report["value"] = value
            results.append(report)
        return results

    def table(self, report: Dict[str, Any]) -> List[Dict[str, Any]]:
        """
        Filas por semilla más una fila agregada con la media.

        Returns:
            Lista de filas (la última con seed='mean')
        """
        rows = [{"seed": r["seed"], **{m: r.get(m) for m in self.metrics}} for r in report["rows"]]
        rows.append({"seed": "mean", **{m: report["mean"].get(m) for m in self.metrics}})
        return rows

    def format_report(self, report: Dict[str, Any]) -> str:
        """Texto con una fila por semilla, la media ± desviación y las fallas."""
        shown = [m for m in self.metrics if m in report["mean"]]
        lines = ["seed  " + "  ".join(f"{m:>18}" for m in shown)]
        for row in report["rows"]:
            lines.append(f"{row['seed']:<4}  " + "  ".join(
                f"{row[m]:>18.4f}" if row.get(m) is not None else f"{'-':>18}" for m in shown))
        lines.append("mean  " + "  ".join(
            f"{report['mean'][m]:>9.4f} ± {report['std'][m]:<6.4f}" for m in shown))
        for fail in report["failures"]:
            lines.append(f"falla semilla {fail['seed']}: {fail['error']}")
        return "\n".join(lines)

    @staticmethod
    def paired_wins(first: List[Dict], second: List[Dict], metric: str) -> int:
        """
        Cuenta las semillas en que `first` alcanza un valor estrictamente menor
        que `second` (None cuenta como nunca).
        """
        by_seed = {r["seed"]: r.get(metric) for r in second}
        wins = 0
        for r in first:
            a, b = r.get(metric), by_seed.get(r["seed"], np.nan)
            if a is None:
                continue
            if b is None or (np.isfinite(b) and a < b):
                wins += 1
        return wins
