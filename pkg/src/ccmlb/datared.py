"""Training-data utilities: histogram downsampling and the loss metric.

Measured task durations are heavily skewed toward short tasks, so naive
training over-represents them. `dynamic_data_reduce` trims the duration
histogram by repeatedly deleting random rows from whichever bin is
currently largest until the target row count is reached. The companion
metric `under_penalized_rmse` scores duration predictions asymmetrically:
over-predictions count fully, under-predictions are scaled by alpha.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SampleTable:
    """Rows of (feature vector, target duration seconds)."""

    features: np.ndarray  # n x f
    targets: np.ndarray  # n
    columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.targets.shape[0]:
            raise DomainError("feature and target row counts differ")
        if np.any(self.targets < 0):
            raise DomainError("target durations must be >= 0")

    @property
    def n_rows(self) -> int:
        return int(self.targets.shape[0])

    def take(self, row_indices: np.ndarray) -> "SampleTable":
        return SampleTable(self.features[row_indices], self.targets[row_indices],
                           self.columns)


def load_table(path: str | Path) -> SampleTable:
    """CSV with a header row; the last column is the duration in seconds."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 1:
            raise DomainError(f"{path}: empty table")
        rows = [[float(x) for x in row] for row in reader if row]
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DomainError(f"{path}: ragged rows")
    return SampleTable(features=data[:, :-1], targets=data[:, -1],
                       columns=tuple(header))


def save_table(table: SampleTable, path: str | Path) -> None:
    columns = table.columns or tuple(
        [f"f{i}" for i in range(table.features.shape[1])] + ["duration_s"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for feats, target in zip(table.features, table.targets):
            writer.writerow([repr(float(x)) for x in feats] + [repr(float(target))])


def duration_bins(targets: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bin index per row over [min, max]; last bin right-closed."""
    lo = float(targets.min())
    hi = float(targets.max())
    if hi == lo:
        return np.zeros(len(targets), dtype=int)
    idx = np.floor((targets - lo) / (hi - lo) * n_bins).astype(int)
    return np.clip(idx, 0, n_bins - 1)


@dataclass(frozen=True)
class RemovalStep:
    bin_index: int
    removed: int
    bin_size_before: int


def dynamic_data_reduce(table: SampleTable, n_bins: int, theta: float,
                        n_target: int, seed: int) -> tuple[SampleTable, list[RemovalStep]]:
    """Trim the largest duration bin until exactly `n_target` rows remain.

    Each pass removes min(ceil(theta * largest_bin_size), remaining
    deficit) uniformly random rows from the currently largest bin (ties to
    the lowest bin index). Row order of the survivors is preserved.
    Returns the reduced table plus the removal log.
    """
    if not 0 < theta < 1:
        raise DomainError("theta must lie strictly between 0 and 1")
    if n_bins < 1:
        raise DomainError("n_bins must be >= 1")
    if n_target < 0 or n_target > table.n_rows:
        raise DomainError(
            f"n_target {n_target} outside [0, {table.n_rows}]"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    bin_of_row = duration_bins(table.targets, n_bins) if table.n_rows else \
        np.zeros(0, dtype=int)
    members: list[list[int]] = [[] for _ in range(n_bins)]
    for row, b in enumerate(bin_of_row):
        members[b].append(row)

    deficit = table.n_rows - n_target
    log: list[RemovalStep] = []
    while deficit > 0:
        sizes = [len(m) for m in members]
        b = int(np.argmax(sizes))
        n_max = sizes[b]
        n = min(math.ceil(theta * n_max), deficit)
        chosen = rng.choice(n_max, size=n, replace=False)
        keep_mask = np.ones(n_max, dtype=bool)
        keep_mask[chosen] = False
        members[b] = [r for r, keep in zip(members[b], keep_mask) if keep]
        log.append(RemovalStep(bin_index=b, removed=n, bin_size_before=n_max))
        deficit -= n
    survivors = np.array(sorted(r for m in members for r in m), dtype=int)
    return table.take(survivors), log


def under_penalized_rmse(predictions, truths, alpha: float) -> float:
    """RMSE that scales under-prediction errors by `alpha`.

    Over-predicting a duration misleads the balancer more than
    under-predicting it, so errors where prediction >= truth count fully
    while the rest are multiplied by alpha (alpha=1 recovers plain RMSE).
    """
    p = np.asarray(predictions, dtype=float)
    g = np.asarray(truths, dtype=float)
    if p.shape != g.shape or p.ndim != 1:
        raise DomainError("predictions and truths must be equal-length vectors")
    if p.size == 0:
        raise DomainError("need at least one sample")
    if alpha < 0:
        raise DomainError("alpha must be >= 0")
    diff = p - g
    sq = diff ** 2
    errors = np.where(diff >= 0, sq, alpha * sq)
    return float(np.sqrt(errors.sum() / p.size))
