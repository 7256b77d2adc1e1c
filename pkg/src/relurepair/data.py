"""Sample datasets: paired (input, target) rows with a repair-domain flag."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ShapeError


@dataclass(frozen=True)
class Dataset:
    """N samples: ``inputs`` (N, d), ``targets`` (N, m), ``in_repair_domain`` (N,)."""

    inputs: np.ndarray
    targets: np.ndarray
    in_repair_domain: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        T = np.asarray(self.targets, dtype=np.float64)
        flags = np.asarray(self.in_repair_domain, dtype=bool)
        if X.ndim != 2 or T.ndim != 2:
            raise ShapeError("inputs and targets must be 2-dimensional")
        if X.shape[0] != T.shape[0] or flags.shape != (X.shape[0],):
            raise ShapeError(
                f"inconsistent sample counts: {X.shape[0]} inputs, "
                f"{T.shape[0]} targets, {flags.shape[0] if flags.ndim == 1 else '?'} flags"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T))):
            raise ValueError("dataset contains non-finite values")
        for name, arr in (("inputs", X), ("targets", T), ("in_repair_domain", flags)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.in_repair_domain[idx])


def make_dataset(inputs, targets, in_repair_domain=None) -> Dataset:
    """Dataset from arrays; the flag defaults to all-False."""
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if in_repair_domain is None:
        in_repair_domain = np.zeros(X.shape[0], dtype=bool)
    return Dataset(X, T, np.asarray(in_repair_domain, dtype=bool))


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.input_dim != b.input_dim or a.target_dim != b.target_dim:
        raise ShapeError("datasets have different input/target dimensions")
    return Dataset(
        np.vstack([a.inputs, b.inputs]),
        np.vstack([a.targets, b.targets]),
        np.concatenate([a.in_repair_domain, b.in_repair_domain]),
    )


def save_dataset(data: Dataset, path) -> None:
    """CSV with header ``x0_0,...,t_0,...,in_repair_domain``."""
    d, m = data.input_dim, data.target_dim
    header = (
        [f"x0_{j}" for j in range(d)]
        + [f"t_{j}" for j in range(m)]
        + ["in_repair_domain"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.inputs[i]]
            row += [repr(float(v)) for v in data.targets[i]]
            row.append("1" if data.in_repair_domain[i] else "0")
            fh.write(",".join(row) + "\n")


def load_dataset(path) -> Dataset:
    """Load a dataset written by :func:`save_dataset`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    d = sum(1 for name in header if name.startswith("x0_"))
    m = sum(1 for name in header if name.startswith("t_"))
    if d == 0 or m == 0 or header[-1] != "in_repair_domain":
        raise ValueError(f"{path}: not a dataset CSV (header {header!r})")
    if any(len(row) != d + m + 1 for row in rows):
        raise ValueError(f"{path}: row length does not match header")
    X = np.array([[float(v) for v in row[:d]] for row in rows])
    T = np.array([[float(v) for v in row[d : d + m]] for row in rows])
    flags = np.array([row[-1] not in ("0", "false", "False") for row in rows])
    return Dataset(X, T, flags)
