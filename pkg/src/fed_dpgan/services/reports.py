"""Per-round metrics CSV, JSON summaries and cross-run comparison."""

import csv
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

from pydantic import ValidationError

from fed_dpgan.errors import ComparisonError, DataError
from fed_dpgan.schemas import ComparisonTable, ExperimentReport

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("round", "stage", "mode", "accuracy", "mean_loss", "n_clients")


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def metrics_rows(report: ExperimentReport) -> list[dict[str, str]]:
    """GAN rounds first, then classifier rounds, one row each."""
    return [
        {
            "round": str(record.round),
            "stage": record.stage,
            "mode": report.mode,
            "accuracy": _cell(record.eval_accuracy),
            "mean_loss": _cell(record.mean_client_loss),
            "n_clients": str(len(record.selected) - len(record.dropped)),
        }
        for record in [*report.gan_rounds, *report.rounds]
    ]


def write_metrics(report: ExperimentReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(metrics_rows(report))


def write_summary(report: ExperimentReport, path: Union[str, Path]) -> None:
    Path(path).write_text(report.model_dump_json(indent=2), encoding="utf-8")


def load_report(path: Union[str, Path]) -> ExperimentReport:
    """Read a ``summary.json``; a run directory is accepted too."""
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    try:
        return ExperimentReport.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such report") from e
    except ValidationError as e:
        raise DataError(f"{path}: not a valid report ({e.error_count()} errors)") from e


def _unique_labels(reports: Sequence[ExperimentReport]) -> list[str]:
    labels: list[str] = []
    for i, report in enumerate(reports):
        label = report.label
        if label in labels:
            label = f"{label}#{i}"
        labels.append(label)
    return labels


def compare_runs(reports: Sequence[ExperimentReport]) -> ComparisonTable:
    """Align classifier accuracy by round and diff final accuracy against the first run."""
    if len(reports) < 2:
        raise ComparisonError(f"need at least two reports to compare, got {len(reports)}")

    labels = _unique_labels(reports)
    curves = [
        {r.round: r.eval_accuracy for r in report.rounds if r.eval_accuracy is not None}
        for report in reports
    ]
    shared = set(curves[0]).intersection(*curves[1:])
    if not shared and any(curves):
        raise ComparisonError("the reports share no evaluated round")

    rows = []
    for t in sorted(set().union(*curves)):
        row: dict[str, Optional[float]] = {"round": float(t)}
        for label, curve in zip(labels, curves):
            row[label] = curve.get(t)
        rows.append(row)

    base = reports[0].final_accuracy
    final = {label: report.final_accuracy for label, report in zip(labels, reports)}
    deltas = {label: acc - base for label, acc in final.items()}
    for label, delta in deltas.items():
        logger.info(f"{label}: final accuracy {final[label]:.4f} ({delta:+.4f})")
    return ComparisonTable(labels=labels, rows=rows, final_accuracy=final, deltas=deltas)


def write_comparison(table: ComparisonTable, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["round", *table.labels])
        for row in table.rows:
            writer.writerow(
                [int(row["round"]), *(_cell(row[label]) for label in table.labels)]
            )
        writer.writerow(["final", *(_cell(table.final_accuracy[label]) for label in table.labels)])
