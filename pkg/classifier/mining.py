"""Validation evaluation and hard-sample mining."""

from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np
import pandas as pd

from classifier.model import ConvClassifier
from shared.errors import ConfigError

SelectionRule = Literal["misclassified", "confidence_below"]


@dataclass(frozen=True)
class EvalReport:
    """Accuracy plus one row per sample: index, label, predicted, confidence.

    ``confidence`` is the softmax probability of the true label.
    """

    accuracy: float
    per_sample: pd.DataFrame

    @property
    def misclassified(self) -> pd.DataFrame:
        return self.per_sample[self.per_sample["predicted"] != self.per_sample["label"]]


def evaluate(
    classifier: ConvClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    indices: Optional[np.ndarray] = None,
) -> EvalReport:
    """Argmax predictions; ``indices`` are the dataset ids reported per row."""
    labels = np.asarray(labels, dtype=np.int64)
    indices = np.arange(len(labels)) if indices is None else np.asarray(indices, dtype=np.int64)
    probs = classifier.predict_proba(images) if len(images) else np.zeros((0, classifier.num_classes))
    predicted = probs.argmax(axis=1).astype(np.int64)
    confidence = probs[np.arange(len(labels)), labels] if len(labels) else np.zeros(0)
    frame = pd.DataFrame(
        {"index": indices, "label": labels, "predicted": predicted, "confidence": confidence}
    )
    accuracy = float((predicted == labels).sum() / len(labels)) if len(labels) else float("nan")
    return EvalReport(accuracy=accuracy, per_sample=frame)


def find_hard_samples(report: EvalReport, rule: SelectionRule = "misclassified", threshold: Optional[float] = None) -> List[int]:
    """Dataset indices of hard samples, in report order."""
    rows = report.per_sample
    if rule == "misclassified":
        hard = rows[rows["predicted"] != rows["label"]]
    elif rule == "confidence_below":
        if threshold is None or not (0.0 < threshold <= 1.0):
            raise ConfigError("experiment.threshold", f"must be in (0, 1], got {threshold}")
        hard = rows[rows["confidence"] < threshold]
    else:
        raise ConfigError("experiment.selection", f"unknown rule {rule!r}")
    return [int(i) for i in hard["index"]]
