"""Reading and writing error-matrix CSV files.

Layout: a header row, then one row per validation observation. Every column
is a model's loss except an optional leading ``fold`` column holding 1-based
CV fold labels. Column order defines the model index.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ErrorMatrix, ErrorMatrixError, FoldPartition


class CSVFormatError(ValueError):
    """Malformed input file; the message names the offending location."""


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_rows(path: Path) -> list[tuple[int, list[str]]]:
    """Non-blank CSV records with their 1-based line numbers."""
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        out = []
        for row in reader:
            if any(cell.strip() for cell in row):
                out.append((reader.line_num, row))
    return out


def _parse_fold_label(text: str, where: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise CSVFormatError(f"{where}: fold label {text!r} is not an integer") from None
    if not v.is_integer():
        raise CSVFormatError(f"{where}: fold label {text!r} is not an integer")
    return int(v)


def read_error_matrix(path) -> ErrorMatrix:
    path = Path(path)
    numbered = _read_rows(path)
    if not numbered:
        raise CSVFormatError(f"{path}: file is empty")
    lines, rows = zip(*numbered)
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise CSVFormatError(f"{path}: missing header row (first row is numeric)")
    has_fold = header[0].lower() == "fold"
    names = header[1:] if has_fold else header
    if not names:
        raise CSVFormatError(f"{path}: no model columns")
    width = len(header)
    losses = np.empty((len(rows) - 1, len(names)))
    folds = np.empty(len(rows) - 1, dtype=np.int64) if has_fold else None
    for r, row in enumerate(rows[1:]):
        line = lines[r + 1]
        if len(row) != width:
            raise CSVFormatError(f"{path}: line {line} has {len(row)} fields, header has {width}")
        cells = row
        if has_fold:
            folds[r] = _parse_fold_label(row[0].strip(), f"{path}: line {line}, column 'fold'")
            cells = row[1:]
        for c, text in enumerate(cells):
            try:
                v = float(text)
            except ValueError:
                raise CSVFormatError(
                    f"{path}: line {line}, column {names[c]!r}: cannot parse {text.strip()!r} as a number"
                ) from None
            if not math.isfinite(v):
                raise CSVFormatError(
                    f"{path}: line {line}, column {names[c]!r}: non-finite value {text.strip()!r}"
                )
            losses[r, c] = v
    fold_of_row = None
    if folds is not None:
        fold_of_row = _zero_based_folds(folds, f"{path}: column 'fold'")
    try:
        return ErrorMatrix(losses, fold_of_row, tuple(names))
    except ErrorMatrixError as exc:
        raise CSVFormatError(f"{path}: {exc}") from None


def _zero_based_folds(labels: np.ndarray, where: str) -> np.ndarray:
    K = int(labels.max())
    if labels.min() < 1 or set(np.unique(labels).tolist()) != set(range(1, K + 1)):
        raise CSVFormatError(f"{where}: fold labels must cover 1..K with no gaps")
    return labels - 1


def read_fold_file(path, n: Optional[int] = None) -> FoldPartition:
    """Row-to-fold assignment, one 1-based label per line.

    A header line and a leading row-number column are both optional:
    ``row,fold`` pairs and bare labels are accepted.
    """
    path = Path(path)
    numbered = _read_rows(path)
    if numbered and not all(_is_number(c) for c in numbered[0][1]):
        numbered = numbered[1:]
    labels = np.array(
        [_parse_fold_label(r[-1].strip(), f"{path}: line {line}") for line, r in numbered],
        dtype=np.int64,
    )
    if labels.size == 0:
        raise CSVFormatError(f"{path}: no fold labels")
    if n is not None and labels.size != n:
        raise CSVFormatError(f"{path}: {labels.size} fold labels for {n} rows")
    assignment = _zero_based_folds(labels, str(path))
    try:
        return FoldPartition(assignment, int(assignment.max()) + 1)
    except ErrorMatrixError as exc:
        raise CSVFormatError(f"{path}: {exc}") from None


def write_error_matrix(em: ErrorMatrix, path) -> None:
    names = list(em.names) if em.names else [f"model_{j + 1}" for j in range(em.m)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if em.is_cv:
            w.writerow(["fold", *names])
            for k, row in zip(em.fold_of_row, em.losses):
                w.writerow([int(k) + 1, *(repr(float(v)) for v in row)])
        else:
            w.writerow(names)
            for row in em.losses:
                w.writerow([repr(float(v)) for v in row])
