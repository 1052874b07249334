"""JSON report assembly and the published reference numbers shown alongside results."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .trainer import metrics_from_confusion

# Published test-set confusion matrix (rows true, cols predicted: negative, neutral, positive).
PUBLISHED_CONFUSION = ((54, 0, 7), (2, 74, 3), (2, 3, 73))
PUBLISHED_HEADLINE = {"accuracy": 0.9082, "macro_f1": 0.9222}
# Published comparison table; reported values only, never recomputed here.
PUBLISHED_BASELINES = {
    "cnn_transformer": {"test_accuracy": 0.9082, "electrodes": 5},
    "svm": {"test_accuracy": 0.8665, "electrodes": 12},
    "dnn": {"test_accuracy": 0.8608, "electrodes": 62},
    "lr": {"test_accuracy": 0.8270, "electrodes": 62},
}


def reference_section() -> dict:
    implied = metrics_from_confusion(np.array(PUBLISHED_CONFUSION))
    note = (
        "Published headline metrics (accuracy {a:.4f}, macro-F1 {f:.4f}) are inconsistent with the "
        "published confusion matrix, which implies accuracy {ia:.4f} and macro-F1 {if_:.4f}. "
        "Both are shown as reported; neither is assumed correct."
    ).format(a=PUBLISHED_HEADLINE["accuracy"], f=PUBLISHED_HEADLINE["macro_f1"],
             ia=implied.accuracy, if_=implied.macro_f1)
    return {
        "kind": "published reference values (not produced by this run)",
        "baselines": PUBLISHED_BASELINES,
        "headline": PUBLISHED_HEADLINE,
        "confusion": [list(r) for r in PUBLISHED_CONFUSION],
        "confusion_implied": {"accuracy": implied.accuracy, "macro_f1": implied.macro_f1},
        "inconsistency": note,
    }


def write_json(doc: dict, path) -> str:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return str(path)
