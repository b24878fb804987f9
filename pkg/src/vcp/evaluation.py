"""MAE against the mean-distance baseline, and report output."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vcp.pairs import MAX_DISTANCE, MIN_DISTANCE
from vcp.siamese import PairSet, SiameseModel, TrainHistory, predict_batch, predict_raw

REPORT_SCHEMA = {
    "type": "object",
    "required": ["model_mae", "baseline_mae", "improvement_pct", "n_test", "history"],
    "properties": {
        "model_mae": {"type": "number", "minimum": 0},
        "model_mae_raw": {"type": "number", "minimum": 0},
        "baseline_mae": {"type": "number", "minimum": 0},
        "baseline_value": {"type": "number"},
        "improvement_pct": {"type": "number", "maximum": 100},
        "n_test": {"type": "integer", "minimum": 1},
        "history": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["epoch", "train_mae", "val_mae"],
                "properties": {
                    "epoch": {"type": "integer", "minimum": 1},
                    "train_mae": {"type": "number"},
                    "val_mae": {"type": "number"},
                },
            },
        },
    },
}


@dataclass
class EvalReport:
    model_mae: float
    baseline_mae: float
    improvement_pct: float
    n_test: int
    model_mae_raw: float
    baseline_value: float


def mean_baseline(train_distances: Sequence[float]) -> float:
    values = np.asarray(train_distances, dtype=np.float64)
    if values.size == 0:
        raise ValueError("baseline needs at least one training target")
    return float(values.mean())


def mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


def improvement(model_mae: float, baseline_mae: float) -> float:
    if baseline_mae == 0.0:
        if model_mae == 0.0:
            return 0.0
        raise ValueError("baseline MAE is zero; relative improvement is undefined")
    return 100.0 * (baseline_mae - model_mae) / baseline_mae


def evaluate(model: SiameseModel, test_set: PairSet, baseline: float) -> EvalReport:
    """Model MAE over clamped integer predictions vs. a constant predictor."""
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    target = test_set.distance
    model_mae = mae(predict_batch(model, test_set), target)
    raw_mae = mae(predict_raw(model, test_set), target)
    const = min(max(baseline, MIN_DISTANCE), MAX_DISTANCE)
    baseline_mae = float(np.abs(target - const).mean())
    return EvalReport(
        model_mae=model_mae,
        baseline_mae=baseline_mae,
        improvement_pct=improvement(model_mae, baseline_mae),
        n_test=len(test_set),
        model_mae_raw=raw_mae,
        baseline_value=const,
    )


def report_dict(report: EvalReport, history: TrainHistory | None) -> dict:
    return {
        "model_mae": report.model_mae,
        "model_mae_raw": report.model_mae_raw,
        "baseline_mae": report.baseline_mae,
        "baseline_value": report.baseline_value,
        "improvement_pct": report.improvement_pct,
        "n_test": report.n_test,
        "history": history.rows() if history is not None else [],
    }


def format_report(report: EvalReport, history: TrainHistory | None) -> str:
    lines = [
        f"test pairs        {report.n_test}",
        f"model MAE         {report.model_mae:.4f}",
        f"model MAE (raw)   {report.model_mae_raw:.4f}",
        f"baseline MAE      {report.baseline_mae:.4f}  (constant {report.baseline_value:.4f})",
        f"improvement       {report.improvement_pct:.2f}%",
    ]
    if history is not None and history.train_mae:
        lines += ["", "epoch  train_mae   val_mae"]
        for row in history.rows():
            lines.append(f"{row['epoch']:5d}  {row['train_mae']:9.4f}  {row['val_mae']:9.4f}")
        lines.append(f"best epoch {history.best_epoch}, stopped at {history.stopped_epoch}")
    return "\n".join(lines) + "\n"


def emit_report(
    report: EvalReport,
    history: TrainHistory | None,
    json_path: str | Path,
    text_path: str | Path | None = None,
) -> str:
    """Write the JSON report (and optionally the text table); returns the text."""
    payload = json.dumps(report_dict(report, history), indent=2, sort_keys=True)
    Path(json_path).write_text(payload + "\n", encoding="utf-8")
    text = format_report(report, history)
    if text_path is not None:
        Path(text_path).write_text(text, encoding="utf-8")
    return text


def history_from_rows(rows: list[dict], best_epoch: int, stopped_epoch: int) -> TrainHistory:
    return TrainHistory(
        train_mae=[float(r["train_mae"]) for r in rows],
        val_mae=[float(r["val_mae"]) for r in rows],
        stopped_epoch=stopped_epoch,
        best_epoch=best_epoch,
    )
