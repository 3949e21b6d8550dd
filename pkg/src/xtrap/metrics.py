"""Accuracy evaluation, per-epoch metric reports, and curve emission."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetBundle
from .errors import EvalError, IoError
from .nn.gnn import GNNConfig, GraphBatch, classify
from .nn.params import ParamStore

CURVE_COLUMNS = ("epoch", "train_loss", "id_val_acc", "id_test_acc",
                 "ood_val_acc", "ood_test_acc")


def evaluate(params: ParamStore, cfg: GNNConfig, bundle: DatasetBundle,
             split: str, prefix: str = "", chunk: int = 256) -> float:
    """Argmax-prediction accuracy of a classifier on one split."""
    samples = bundle.split(split)
    if not samples:
        raise EvalError(f"split {split!r} is empty")
    if bundle.task == "graph":
        correct = 0
        for start in range(0, len(samples), chunk):
            part = samples[start : start + chunk]
            batch = GraphBatch([s.graph for s in part])
            logits = classify(params, cfg, batch, prefix=prefix).data
            preds = np.argmax(logits, axis=1)
            truth = np.array([s.hard_label for s in part])
            correct += int(np.sum(preds == truth))
        return correct / len(samples)
    batch = GraphBatch([bundle.shared_graph])
    logits = classify(params, cfg, batch, prefix=prefix).data
    ids = np.array([s.node_id for s in samples])
    preds = np.argmax(logits[ids], axis=1)
    truth = np.array([s.hard_label for s in samples])
    return float(np.mean(preds == truth))


@dataclass
class MetricReport:
    """Per-epoch metric rows plus the checkpoint-selection summary.

    The reported OOD accuracy is taken at the epoch maximizing OOD
    validation accuracy; ID accuracy at the epoch maximizing ID
    validation accuracy."""

    rows: list = field(default_factory=list)

    def add_row(self, epoch, train_loss, id_val, id_test, ood_val, ood_test):
        self.rows.append({
            "epoch": int(epoch),
            "train_loss": float(train_loss),
            "id_val_acc": float(id_val),
            "id_test_acc": float(id_test),
            "ood_val_acc": float(ood_val),
            "ood_test_acc": float(ood_test),
        })

    def _argmax(self, key):
        vals = [r[key] for r in self.rows]
        return int(np.argmax(vals))  # first maximum

    @property
    def selected_epoch(self) -> int:
        return self.rows[self._argmax("ood_val_acc")]["epoch"]

    @property
    def ood_ood(self) -> float:
        return self.rows[self._argmax("ood_val_acc")]["ood_test_acc"]

    @property
    def id_id(self) -> float:
        return self.rows[self._argmax("id_val_acc")]["id_test_acc"]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "selected_epoch": self.selected_epoch,
            "id_id": self.id_id,
            "ood_ood": self.ood_ood,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "MetricReport":
        data = json.loads(Path(path).read_text())
        return cls(rows=data["rows"])


def emit_curves(report: MetricReport, path) -> Path:
    """Write the per-epoch CSV with the fixed column header."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CURVE_COLUMNS)
            for r in report.rows:
                writer.writerow([r[c] for c in CURVE_COLUMNS])
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def read_curves(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append({
                "epoch": int(rec["epoch"]),
                "train_loss": float(rec["train_loss"]),
                "id_val_acc": float(rec["id_val_acc"]),
                "id_test_acc": float(rec["id_test_acc"]),
                "ood_val_acc": float(rec["ood_val_acc"]),
                "ood_test_acc": float(rec["ood_test_acc"]),
            })
    return rows
