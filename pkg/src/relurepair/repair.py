"""End-to-end repair orchestration: sample, encode, solve, decode, evaluate.

The driver follows the experiment protocol: datasets mix equal numbers of
original-domain and repair-domain samples, the predicate is enforced on the
repair-domain ones, and reports split prediction error by whether each
sample's target itself satisfies the predicate.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .bnb import BnbConfig, RepairHint, solve_miqp
from .data import Dataset, concat, make_dataset
from .encoder import RepairSpec, decode, deviation, encode
from .network import IntervalBox, Network, ShapeError, forward_batch
from .predicate import Predicate, check

__all__ = [
    "Dataset", "RepairReport", "EvalReport", "FalsifierHit",
    "InfeasibleRepairError", "SolverLimitError", "sample_box",
    "assemble_repair_set", "repair", "evaluate", "falsify",
]


class InfeasibleRepairError(RuntimeError):
    """The repair MIQP has no feasible point for the chosen layer."""


class SolverLimitError(RuntimeError):
    """Node or time limits ran out before any feasible repair was found."""


@dataclass
class EvalReport:
    """Prediction-error and predicate statistics of one network on one dataset."""

    mse: float
    mse_inside: float | None
    mse_outside: float | None
    n_inside: int
    n_outside: int
    violation_count: int
    satisfaction_rate: float | None
    n_repair_samples: int
    baseline_mse: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RepairReport:
    layer: int
    delta: float
    objective: float
    status: str
    gap: float
    node_count: int
    evaluation: EvalReport | None = None
    baseline: EvalReport | None = None
    network_path: str | None = None
    report_path: str | None = None
    predictions_path: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass
class FalsifierHit:
    x0: np.ndarray
    y: np.ndarray
    residual: float


def sample_box(box: IntervalBox, n: int, seed: int, labeler) -> Dataset:
    """Uniform i.i.d. samples from ``box`` labeled by ``labeler``; unflagged."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    X = rng.uniform(box.lower, box.upper, size=(n, box.dim))
    T = np.array([np.asarray(labeler(x), dtype=np.float64) for x in X])
    if T.ndim == 1:
        T = T[:, None]
    return make_dataset(X, T)


def assemble_repair_set(original: Dataset, repair: Dataset,
                        original_in_repair_domain: bool = False) -> Dataset:
    """Equal-count concatenation; the repair half is flagged in-domain.

    When the repair domain coincides with the original one, pass
    ``original_in_repair_domain=True`` so the predicate is enforced on every
    sample.  The original half is truncated to the repair half's size.
    """
    if len(repair) == 0:
        raise ValueError("repair sample set is empty")
    if original.input_dim != repair.input_dim or original.target_dim != repair.target_dim:
        raise ShapeError("original and repair sets have different dimensions")
    if len(original) < len(repair):
        raise ValueError(
            f"need at least {len(repair)} original samples, got {len(original)}"
        )
    orig = original.take(np.arange(len(repair)))
    orig_flagged = Dataset(
        orig.inputs, orig.targets,
        np.full(len(orig), original_in_repair_domain, dtype=bool),
    )
    rep_flagged = Dataset(repair.inputs, repair.targets, np.ones(len(repair), dtype=bool))
    return concat(orig_flagged, rep_flagged)


def evaluate(net: Network, data: Dataset, predicate: Predicate | None = None,
             baseline: Network | None = None) -> EvalReport:
    """MSE of predictions vs targets, split by target-side predicate membership.

    ``mse_inside``/``mse_outside`` average the squared error over samples whose
    *targets* satisfy / violate the predicate; violation statistics count
    *predictions* that violate it on repair-domain samples.
    """
    Y = forward_batch(net, data.inputs)
    err = np.sum((Y - data.targets) ** 2, axis=1)
    mse = float(np.mean(err))
    mse_inside = mse_outside = None
    n_inside = n_outside = 0
    violation_count = 0
    satisfaction_rate = None
    n_repair = int(np.count_nonzero(data.in_repair_domain))
    if predicate is not None:
        inside = np.array(
            [check(predicate, data.inputs[i], data.targets[i]).satisfied
             for i in range(len(data))]
        )
        n_inside = int(np.count_nonzero(inside))
        n_outside = len(data) - n_inside
        if n_inside:
            mse_inside = float(np.mean(err[inside]))
        if n_outside:
            mse_outside = float(np.mean(err[~inside]))
        repair_idx = np.flatnonzero(data.in_repair_domain)
        for i in repair_idx:
            if not check(predicate, data.inputs[i], Y[i]).satisfied:
                violation_count += 1
        if len(repair_idx):
            satisfaction_rate = 1.0 - violation_count / len(repair_idx)
    baseline_mse = None
    if baseline is not None:
        Yb = forward_batch(baseline, data.inputs)
        baseline_mse = float(np.mean(np.sum((Yb - data.targets) ** 2, axis=1)))
    return EvalReport(mse, mse_inside, mse_outside, n_inside, n_outside,
                      violation_count, satisfaction_rate, n_repair, baseline_mse)


def repair(net: Network, spec: RepairSpec,
           bnb_cfg: BnbConfig | None = None) -> tuple:
    """Encode, solve and decode one layer repair; returns (network, report).

    Raises :class:`InfeasibleRepairError` when the MIQP is infeasible; hidden
    layers admit strictly more repairs than the output layer, so retrying with
    a different (earlier) layer is the usual remedy.
    """
    spec.validate_against(net)
    bnb_cfg = bnb_cfg or BnbConfig()
    prob, vmap = encode(net, spec)
    solution = solve_miqp(prob, bnb_cfg, hint=RepairHint(net, spec, vmap))
    if solution.status == "infeasible":
        raise InfeasibleRepairError(
            f"repairing layer {spec.layer_index} is infeasible for this "
            f"predicate; try an earlier (hidden) layer or a larger delta_max"
        )
    if solution.status == "time-limit":
        raise SolverLimitError(
            "no feasible repair found within the solver limits; raise the "
            "limits or try a different layer"
        )
    repaired = decode(net, vmap, solution)
    report = RepairReport(
        layer=spec.layer_index,
        delta=deviation(net, repaired, spec.layer_index),
        objective=solution.objective,
        status=solution.status,
        gap=float(solution.gap),
        node_count=solution.node_count,
        evaluation=evaluate(repaired, spec.samples, spec.predicate),
        baseline=evaluate(net, spec.samples, spec.predicate),
    )
    return repaired, report


def falsify(net: Network, predicate: Predicate, box: IntervalBox,
            n_samples: int, seed: int) -> list:
    """Sampling falsifier: inputs in ``box`` whose outputs violate the predicate.

    Returns hits sorted by violation magnitude, largest first.  An empty list
    is evidence, not proof.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    X = rng.uniform(box.lower, box.upper, size=(n_samples, box.dim))
    Y = forward_batch(net, X)
    hits = []
    for i in range(n_samples):
        result = check(predicate, X[i], Y[i])
        if not result.satisfied:
            worst = max(r for _, r in result.violations)
            hits.append(FalsifierHit(X[i], Y[i], float(worst)))
    hits.sort(key=lambda h: -h.residual)
    return hits


def save_predictions_csv(path, net: Network, data: Dataset,
                         predicate: Predicate | None = None) -> None:
    """Per-sample predictions next to targets, for plotting."""
    Y = forward_batch(net, data.inputs)
    d, m = data.input_dim, data.target_dim
    cols = (
        [f"x0_{j}" for j in range(d)]
        + [f"t_{j}" for j in range(m)]
        + [f"y_{j}" for j in range(m)]
        + ["in_repair_domain", "prediction_satisfies"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(data)):
            ok = ""
            if predicate is not None:
                ok = "1" if check(predicate, data.inputs[i], Y[i]).satisfied else "0"
            row = [repr(float(v)) for v in data.inputs[i]]
            row += [repr(float(v)) for v in data.targets[i]]
            row += [repr(float(v)) for v in Y[i]]
            row.append("1" if data.in_repair_domain[i] else "0")
            row.append(ok)
            fh.write(",".join(row) + "\n")
