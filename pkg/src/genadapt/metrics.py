"""Per-batch loss measures."""
import numpy as np

from .errors import DimensionError

REGRESSION = "regression"
CLASSIFICATION = "classification"


def score_batch(predictions, targets, task):
    """MAE for regression, error rate (1 - accuracy) for classification."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape[0] != targets.shape[0]:
        raise DimensionError(
            f"{predictions.shape[0]} predictions for {targets.shape[0]} targets"
        )
    if predictions.shape[0] == 0:
        raise DimensionError("cannot score an empty batch")
    if task == REGRESSION:
        return float(np.mean(np.abs(predictions.astype(float) - targets.astype(float))))
    if task == CLASSIFICATION:
        return float(np.mean(predictions != targets))
    raise ValueError(f"unknown task {task!r}")
