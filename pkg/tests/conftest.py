"""Shared fixtures and dataset-building helpers."""

import numpy as np

from ramp_transfer.core import TimeKey
from ramp_transfer.correction import Dataset, FeatureRow


def make_dataset(X, y, sections=None, input_names=None, target="After_y"):
    """Wrap raw arrays in a Dataset with a synthetic column roster."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if input_names is None:
        input_names = tuple(f"x{j}" for j in range(X.shape[1]))
    if sections is None:
        sections = ["A"] * len(y)
    rows = []
    for i in range(len(y)):
        key = TimeKey(dow=3, hod=6 + (i // 4) % 3, moh=i % 4 + 1)
        rows.append(FeatureRow(
            section=sections[i], key=key,
            inputs={name: float(X[i, j])
                    for j, name in enumerate(input_names)},
            targets={target: float(y[i])}))
    return Dataset(rows, input_columns=tuple(input_names),
                   target_columns=(target,))
