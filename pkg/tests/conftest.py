import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lupicp.dataio import write_feature_file, write_labels


def two_blobs(n, seed, dim=2, separation=2.0):
    """Balanced two-Gaussian sample: returns (X, y)."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack(
        [
            rng.standard_normal((half, dim)) - separation / 2,
            rng.standard_normal((n - half, dim)) + separation / 2,
        ]
    )
    y = np.concatenate([-np.ones(half, dtype=int), np.ones(n - half, dtype=int)])
    order = rng.permutation(n)
    return X[order], y[order]


def triplet_blobs(n, seed, dim=2, star_dim=4, separation=2.0, star_separation=3.5):
    """Blob triplets where X* carries a cleaner copy of the signal."""
    rng = np.random.default_rng(seed)
    half = n // 2
    y = np.concatenate([-np.ones(half, dtype=int), np.ones(n - half, dtype=int)])
    X = rng.standard_normal((n, dim)) + y[:, None] * separation / 2
    Xstar = rng.standard_normal((n, star_dim)) * 0.8 + y[:, None] * star_separation / 2
    order = rng.permutation(n)
    return X[order], Xstar[order], y[order]


@pytest.fixture
def triplet_files(tmp_path):
    """Small triplet dataset written to disk; returns the three paths."""
    X, Xstar, y = triplet_blobs(60, seed=11)
    paths = {
        "x": tmp_path / "x.csv",
        "xstar": tmp_path / "xstar.csv",
        "labels": tmp_path / "labels.txt",
    }
    write_feature_file(paths["x"], X, "dense-csv")
    write_feature_file(paths["xstar"], Xstar, "dense-csv")
    write_labels(paths["labels"], y)
    return paths


def write_experiment_config(tmp_path, paths, **overrides):
    """Minimal fast config JSON for experiment/CLI tests."""
    import json

    cfg = {
        "dataset": {
            "kind": "triplet-files",
            "x": {"path": str(paths["x"]), "format": "dense-csv"},
            "xstar": {"path": str(paths["xstar"]), "format": "dense-csv"},
            "labels": str(paths["labels"]),
        },
        "seed": 5,
        "repetitions": 2,
        "cv_folds": 2,
        "grids": {
            "svm_x": {"C": [1.0], "gamma": [0.5]},
            "svm_xstar": {"C": [1.0], "gamma": [0.2]},
            "svmplus": {"C": [1.0], "gamma_plus": [0.1]},
        },
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path
