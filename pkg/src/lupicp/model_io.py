"""Flat structured-text serialization for trained models and
calibration tables.

The record is line oriented: scalar fields first, then a ``support``
block of one row per support vector (leading coefficient, then the
feature values, dense or as index:value pairs).  SVM+ models append the
correcting block: its kernel, gamma_plus, bias_star, and one row per
training example carrying the delta coefficient and the privileged
features.  Floats are written with repr() and so round-trip exactly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .conformal import CalibrationTable
from .kernels import KernelSpec
from .svm import DecisionModel
from .svmplus import SvmPlusModel

__all__ = [
    "save_model",
    "load_model",
    "save_calibration",
    "load_calibration",
]

MODEL_HEADER = "lupicp-model v1"
CALIBRATION_HEADER = "lupicp-calibration v1"


class ModelFormatError(Exception):
    pass


def _write_rows(fh, coefficients, vectors):
    dense = not sp.issparse(vectors)
    for i, coef in enumerate(coefficients):
        if dense:
            values = " ".join(repr(float(v)) for v in np.asarray(vectors[i]).ravel())
        else:
            start, stop = vectors.indptr[i], vectors.indptr[i + 1]
            values = " ".join(
                f"{int(j)}:{repr(float(v))}"
                for j, v in zip(vectors.indices[start:stop], vectors.data[start:stop])
            )
        fh.write(f"{repr(float(coef))} {values}\n".rstrip(" \n") + "\n")


def _read_rows(lines, count, dim, layout, what):
    coefficients = np.empty(count)
    if layout == "dense":
        vectors = np.empty((count, dim))
    else:
        data, indices, indptr = [], [], [0]
    for i in range(count):
        try:
            fields = next(lines).split()
        except StopIteration:
            raise ModelFormatError(f"truncated {what} block") from None
        coefficients[i] = float(fields[0])
        if layout == "dense":
            if len(fields) - 1 != dim:
                raise ModelFormatError(
                    f"{what} row {i}: expected {dim} values, got {len(fields) - 1}"
                )
            vectors[i] = [float(v) for v in fields[1:]]
        else:
            for token in fields[1:]:
                j, _, v = token.partition(":")
                indices.append(int(j))
                data.append(float(v))
            indptr.append(len(data))
    if layout != "dense":
        vectors = sp.csr_matrix(
            (np.asarray(data), np.asarray(indices, dtype=np.int64),
             np.asarray(indptr)),
            shape=(count, dim),
        )
    return coefficients, vectors


def _block_header(vectors):
    layout = "sparse" if sp.issparse(vectors) else "dense"
    return vectors.shape[0], vectors.shape[1], layout


def save_model(path, model) -> None:
    """Serialize a :class:`DecisionModel` or :class:`SvmPlusModel`."""
    if isinstance(model, SvmPlusModel):
        kind, decision = "svmplus", model.decision
    elif isinstance(model, DecisionModel):
        kind, decision = "svm", model
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{MODEL_HEADER}\n")
        fh.write(f"type {kind}\n")
        fh.write(f"kernel {decision.kernel.family} {repr(decision.kernel.gamma)}\n")
        fh.write(f"bias {repr(decision.bias)}\n")
        n, d, layout = _block_header(decision.support_vectors)
        fh.write(f"support {n} {d} {layout}\n")
        _write_rows(fh, decision.weights, decision.support_vectors)
        if kind == "svmplus":
            ck = model.correcting_kernel
            fh.write(f"correcting_kernel {ck.family} {repr(ck.gamma)}\n")
            fh.write(f"gamma_plus {repr(float(model.gamma_plus))}\n")
            fh.write(f"bias_star {repr(float(model.bias_star))}\n")
            n, d, layout = _block_header(model.correcting_vectors)
            fh.write(f"correcting {n} {d} {layout}\n")
            _write_rows(fh, model.deltas, model.correcting_vectors)


def _expect(lines, keyword):
    try:
        line = next(lines)
    except StopIteration:
        raise ModelFormatError(f"missing {keyword!r} line") from None
    fields = line.split()
    if not fields or fields[0] != keyword:
        raise ModelFormatError(f"expected {keyword!r} line, got {line!r}")
    return fields[1:]


def load_model(path):
    """Inverse of :func:`save_model`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = iter(line.rstrip("\n") for line in fh)
        header = next(lines, "")
        if header != MODEL_HEADER:
            raise ModelFormatError(f"bad header {header!r}")
        kind = _expect(lines, "type")[0]
        family, gamma = _expect(lines, "kernel")
        bias = float(_expect(lines, "bias")[0])
        n, d, layout = _expect(lines, "support")
        weights, support = _read_rows(lines, int(n), int(d), layout, "support")
        decision = DecisionModel(
            support_vectors=support,
            weights=weights,
            bias=bias,
            kernel=KernelSpec(gamma=float(gamma), family=family),
        )
        if kind == "svm":
            return decision
        if kind != "svmplus":
            raise ModelFormatError(f"unknown model type {kind!r}")
        family, gamma = _expect(lines, "correcting_kernel")
        gamma_plus = float(_expect(lines, "gamma_plus")[0])
        bias_star = float(_expect(lines, "bias_star")[0])
        n, d, layout = _expect(lines, "correcting")
        deltas, vectors = _read_rows(lines, int(n), int(d), layout, "correcting")
        return SvmPlusModel(
            decision=decision,
            deltas=deltas,
            bias_star=bias_star,
            correcting_kernel=KernelSpec(gamma=float(gamma), family=family),
            correcting_vectors=vectors,
            gamma_plus=gamma_plus,
        )


def save_calibration(path, table: CalibrationTable) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{CALIBRATION_HEADER}\n")
        for label in (-1, 1):
            scores = table.scores_by_class[label]
            fh.write(f"class {label:+d} {scores.shape[0]}\n")
            for s in scores:
                fh.write(f"{repr(float(s))}\n")


def load_calibration(path) -> CalibrationTable:
    with open(path, "r", encoding="ascii") as fh:
        lines = iter(line.rstrip("\n") for line in fh)
        header = next(lines, "")
        if header != CALIBRATION_HEADER:
            raise ModelFormatError(f"bad header {header!r}")
        scores = {}
        for expected in (-1, 1):
            label_str, count = _expect(lines, "class")
            label = int(label_str)
            if label != expected:
                raise ModelFormatError(f"expected class {expected}, got {label}")
            scores[label] = np.array(
                [float(next(lines)) for _ in range(int(count))]
            )
        return CalibrationTable(scores_by_class=scores)
