"""Packaged desk-scale experiments: train an original network, repair it
against a predicate, and write all artifacts under ``out/<name>/``.

Each runner returns a summary dict and writes:

* ``nets/``     original and repaired networks (JSON)
* ``reports/``  repair report and experiment summary (JSON)
* ``csv/``      per-sample predictions and, where relevant, trajectories
"""
from __future__ import annotations

import json
import logging
import math
import os

import numpy as np

from . import controlsim as cs
from .bnb import BnbConfig
from .data import make_dataset, save_dataset
from .encoder import RepairSpec
from .network import IntervalBox, forward_batch, random_network, save_network
from .predicate import (build_cbf, build_classification_margin, build_clf,
                        build_halfspace, build_l1_ball, check, conjoin,
                        save_predicate)
from .repair import (assemble_repair_set, falsify, repair, sample_box,
                     save_predictions_csv)
from .trainer import TrainConfig, dataset_loss, train

log = logging.getLogger(__name__)

ROTATION_BALL_CENTER = (2.5, 2.5)
ROTATION_BALL_RADIUS = 5.0 * math.sqrt(2.0) / 4.0


def _dirs(out_dir):
    paths = {}
    for sub in ("nets", "reports", "csv"):
        paths[sub] = os.path.join(out_dir, sub)
        os.makedirs(paths[sub], exist_ok=True)
    return paths


def _write_summary(paths, summary):
    with open(os.path.join(paths["reports"], "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
        fh.write("\n")


def _finish(paths, net, repaired, pred, report, samples, summary):
    save_network(net, os.path.join(paths["nets"], "original.json"))
    save_network(repaired, os.path.join(paths["nets"], "repaired.json"))
    save_predicate(pred, os.path.join(paths["reports"], "predicate.json"))
    report.network_path = os.path.join(paths["nets"], "repaired.json")
    report.predictions_path = os.path.join(paths["csv"], "predictions.csv")
    report.report_path = os.path.join(paths["reports"], "report.json")
    save_predictions_csv(report.predictions_path, repaired, samples, pred)
    save_dataset(samples, os.path.join(paths["csv"], "repair_samples.csv"))
    report.save(report.report_path)
    _write_summary(paths, summary)


def _train_best(dims, data, seed, epochs, lr, batch_size=32, tries=5):
    """Best-of-k restarts; narrow ReLU layers die for unlucky inits."""
    best = None
    best_loss = math.inf
    for k in range(tries):
        cfg = TrainConfig(epochs=epochs, batch_size=batch_size,
                          learning_rate=lr, seed=seed + 10 * k + 1)
        net = train(random_network(dims, seed=seed + 10 * k), data, cfg)
        loss = dataset_loss(net, data)
        if loss < best_loss:
            best, best_loss = net, loss
    log.info("trained %s: best of %d restarts, loss %.3g",
             "-".join(map(str, dims)), tries, best_loss)
    return best


def rotation_labeler(x):
    """In-place 45-degree counterclockwise rotation."""
    c = math.sqrt(2.0) / 2.0
    return np.array([c * (x[0] - x[1]), c * (x[0] + x[1])])


def run_rotation(out_dir, seed=0, layer=1, n_train=400, n_repair=50,
                 epochs=2000, node_limit=40, time_limit_s=600.0,
                 delta_max=3.0, workers=1) -> dict:
    """Bound a learned planar rotation into a taxicab ball."""
    paths = _dirs(out_dir)
    box = IntervalBox(np.array([1.0, 1.0]), np.array([4.0, 4.0]))
    train_data = sample_box(box, n_train, seed + 1, rotation_labeler)
    net = _train_best([2, 3, 3, 2], train_data, seed + 2, epochs, lr=0.005)
    pred = build_l1_ball(ROTATION_BALL_CENTER, ROTATION_BALL_RADIUS)

    pre_hits = falsify(net, pred, box, 2000, seed + 4)
    half = n_repair // 2
    samples = assemble_repair_set(
        sample_box(box, n_repair - half, seed + 5, rotation_labeler),
        sample_box(box, half, seed + 6, rotation_labeler),
        original_in_repair_domain=True,  # the repair domain is the whole box
    )
    spec = RepairSpec(layer, samples, pred, delta_max=delta_max)
    repaired, report = repair(
        net, spec,
        BnbConfig(node_limit=node_limit, time_limit_s=time_limit_s,
                  workers=workers, log_interval=10),
    )
    summary = {
        "experiment": "rotation",
        "train_mse": dataset_loss(net, train_data),
        "pre_repair_falsifier_hits": len(pre_hits),
        "layer": layer,
        "delta": report.delta,
        "status": report.status,
        "node_count": report.node_count,
        "satisfaction_rate": report.evaluation.satisfaction_rate,
        "mse_inside": report.evaluation.mse_inside,
        "mse_outside": report.evaluation.mse_outside,
        "baseline_satisfaction_rate": report.baseline.satisfaction_rate,
    }
    _finish(paths, net, repaired, pred, report, samples, summary)
    return summary


ARM_LINK_LENGTHS = (0.5, 0.5)


def arm_labeler(features):
    """Planar 2-link forward kinematics from (sin, cos) joint features."""
    s1, c1, s2, c2 = features
    l1, l2 = ARM_LINK_LENGTHS
    # angle-sum identities avoid recovering the raw angles
    c12 = c1 * c2 - s1 * s2
    s12 = s1 * c2 + c1 * s2
    return np.array([l1 * c1 + l2 * c12, l1 * s1 + l2 * s12])


def _arm_dataset(n, seed):
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(-math.pi, math.pi, size=(n, 2))
    X = np.column_stack([
        np.sin(thetas[:, 0]), np.cos(thetas[:, 0]),
        np.sin(thetas[:, 1]), np.cos(thetas[:, 1]),
    ])
    T = np.array([arm_labeler(x) for x in X])
    return make_dataset(X, T)


def run_kinematics(out_dir, seed=0, layer=3, n_train=600, n_repair=100,
                   epochs=3000, node_limit=40, time_limit_s=900.0,
                   delta_max=2.0, workers=1) -> dict:
    """Keep a learned arm's end effector out of a workspace halfplane."""
    paths = _dirs(out_dir)
    train_data = _arm_dataset(n_train, seed + 1)
    net = _train_best([4, 8, 8, 2], train_data, seed + 2, epochs, lr=0.005, tries=3)
    pred = build_halfspace([1.0, 0.0], "<=", 0.5)

    half = n_repair // 2
    samples = assemble_repair_set(
        _arm_dataset(n_repair - half, seed + 5),
        _arm_dataset(half, seed + 6),
        original_in_repair_domain=True,
    )
    spec = RepairSpec(layer, samples, pred, delta_max=delta_max)
    repaired, report = repair(
        net, spec,
        BnbConfig(node_limit=node_limit, time_limit_s=time_limit_s,
                  workers=workers, log_interval=10),
    )
    # Falsifier box over the trig-feature hull; points off the manifold still
    # witness halfspace violations of the network itself.
    feat_box = IntervalBox(-np.ones(4), np.ones(4))
    pre_hits = falsify(net, pred, feat_box, 2000, seed + 4)
    summary = {
        "experiment": "kinematics",
        "train_mse": dataset_loss(net, train_data),
        "pre_repair_falsifier_hits": len(pre_hits),
        "layer": layer,
        "delta": report.delta,
        "status": report.status,
        "node_count": report.node_count,
        "satisfaction_rate": report.evaluation.satisfaction_rate,
        "mse_inside": report.evaluation.mse_inside,
        "mse_outside": report.evaluation.mse_outside,
    }
    _finish(paths, net, repaired, pred, report, samples, summary)
    return summary


CLASS_NAMES = ("COC", "WR", "WL", "SR", "SL")
PREFERRED_CLASSES = (0, 2)   # COC, WL
REJECTED_CLASSES = (1, 3, 4)

_PROTOTYPES = np.array([
    [-0.35, 0.0, 0.0, 0.0, 0.0],   # COC
    [0.0, 1.2, 0.0, 0.0, 0.0],     # WR
    [0.35, 0.0, 0.0, 0.0, 0.0],    # WL
    [0.0, 0.0, 1.2, 0.0, 0.0],     # SR
    [0.0, 0.0, 0.0, 1.2, 0.0],     # SL
])

# High-frequency ripple on the rejected-class scores: a small network cannot
# resolve it from a few thousand samples, so the learned advisory boundary
# carries genuine local errors (the situation repair is for).  The amplitude
# stays below the worst-case score margin inside the property box, so the
# true advisory there is still always a preferred one.
_WOBBLE_AMPLITUDE = 0.15
_WOBBLE_DIRECTIONS = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],      # COC: none
    [2.1, -3.3, 1.7, -2.9, 2.5],    # WR
    [0.0, 0.0, 0.0, 0.0, 0.0],      # WL: none
    [-2.7, 1.9, -3.1, 2.3, -1.5],   # SR
    [1.3, 2.7, -2.1, -1.7, 3.1],    # SL
])
_WOBBLE_PHASES = np.array([0.0, 0.7, 0.0, 2.1, 4.0])


def advisory_scores(x) -> np.ndarray:
    """Ground-truth advisory scores (lower wins)."""
    x = np.asarray(x, dtype=np.float64)
    d = np.sum((_PROTOTYPES - x) ** 2, axis=1)
    return d + _WOBBLE_AMPLITUDE * np.sin(_WOBBLE_DIRECTIONS @ x + _WOBBLE_PHASES)


def advisory_label(x) -> int:
    """Ground-truth advisory: minimum score."""
    return int(np.argmin(advisory_scores(x)))


def predicted_label(y) -> int:
    return int(np.argmin(y))


def _accuracy(net, X) -> float:
    Y = forward_batch(net, X)
    good = sum(predicted_label(Y[i]) == advisory_label(X[i]) for i in range(len(X)))
    return good / len(X)


def run_classifier(out_dir, seed=0, n_train=4000, epochs=400,
                   n_falsify=4000, max_hits=20, local_radius=0.05,
                   n_holdout=4000, delta_max=2.0, workers=1,
                   prop_halfwidth=0.45, margin=1e-4) -> dict:
    """Correct local misclassifications of a desk-scale advisory classifier.

    The property region is the subcube where the true advisory is always one
    of the preferred classes; the sampling falsifier stands in for a formal
    verifier, and repair-domain samples are drawn from small boxes around its
    hits.
    """
    paths = _dirs(out_dir)
    rng = np.random.default_rng(seed)
    domain = IntervalBox(-np.ones(5), np.ones(5))
    # Property box hugs the region where the true advisory is a preferred
    # class; the learned boundary smears across its corners.
    prop_box = IntervalBox(-prop_halfwidth * np.ones(5),
                           prop_halfwidth * np.ones(5))

    train_data = sample_box(domain, n_train, seed + 1, advisory_scores)
    net = _train_best([5, 8, 8, 5], train_data, seed + 2, epochs, lr=0.01, tries=3)
    pred = build_classification_margin(PREFERRED_CLASSES, REJECTED_CLASSES,
                                       margin=margin, n_outputs=5)

    hits = falsify(net, pred, prop_box, n_falsify, seed + 4)
    hit_points = np.array([h.x0 for h in hits[:max_hits]])
    summary = {
        "experiment": "classifier",
        "train_mse": dataset_loss(net, train_data),
        "falsifier_hits": len(hits),
    }
    if len(hits) == 0:
        summary["status"] = "nothing-to-repair"
        _write_summary(paths, summary)
        save_network(net, os.path.join(paths["nets"], "original.json"))
        return summary

    # Repair domain: boxes of the given radius around the falsifier hits.
    repair_X = [hit_points]
    for p in hit_points:
        lo = np.clip(p - local_radius, prop_box.lower, prop_box.upper)
        hi = np.clip(p + local_radius, prop_box.lower, prop_box.upper)
        repair_X.append(rng.uniform(lo, hi, size=(2, 5)))
    repair_X = np.vstack(repair_X)
    repair_T = np.array([advisory_scores(x) for x in repair_X])
    repair_set = make_dataset(repair_X, repair_T)
    original_set = sample_box(domain, len(repair_set), seed + 5, advisory_scores)
    samples = assemble_repair_set(original_set, repair_set)

    spec = RepairSpec(len(net.layers), samples, pred, delta_max=delta_max)
    repaired, report = repair(net, spec, BnbConfig(workers=workers))

    Y_hits = forward_batch(repaired, hit_points)
    remaining = sum(
        0 if check(pred, hit_points[i], Y_hits[i]).satisfied else 1
        for i in range(len(hit_points))
    )
    holdout = sample_box(domain, n_holdout, seed + 6, advisory_scores)
    acc_before = _accuracy(net, holdout.inputs)
    acc_after = _accuracy(repaired, holdout.inputs)
    summary.update({
        "layer": len(net.layers),
        "delta": report.delta,
        "status": report.status,
        "node_count": report.node_count,
        "remaining_violations_on_hits": remaining,
        "holdout_accuracy_before": acc_before,
        "holdout_accuracy_after": acc_after,
        "accuracy_drop": acc_before - acc_after,
    })
    _finish(paths, net, repaired, pred, report, samples, summary)
    return summary


def run_controller(out_dir, seed=0, n_traj=100, stride=15, epochs=800,
                   n_repair=500, n_rollouts=100, delta_max=5.0,
                   workers=1, scenario: cs.Scenario | None = None) -> dict:
    """Make an imitation-learned unicycle controller respect a barrier
    constraint while keeping its goal-reaching behavior."""
    paths = _dirs(out_dir)
    sc = scenario or cs.Scenario()
    data = cs.collect_imitation_data(sc, n_traj, seed + 1, stride=stride)
    net = _train_best([3, 10, 10, 2], data, seed + 2, epochs, lr=0.01,
                      batch_size=64, tries=3)
    pred = conjoin(
        build_cbf(sc.obstacle_center, sc.obstacle_radius, sc.gamma),
        build_clf(sc.goal_center, sc.goal_radius, "clf", 100.0),
    )

    rng = np.random.default_rng(seed + 4)
    safe_idx = np.flatnonzero(data.in_repair_domain)
    half = n_repair // 2
    rep_idx = rng.choice(safe_idx, size=min(half, len(safe_idx)), replace=False)
    orig_idx = rng.choice(len(data), size=len(rep_idx), replace=False)
    samples = assemble_repair_set(data.take(orig_idx), data.take(rep_idx))

    spec = RepairSpec(len(net.layers), samples, pred, delta_max=delta_max)
    repaired, report = repair(net, spec, BnbConfig(workers=workers))

    def roll_stats(policy, seed_r):
        rng_r = np.random.default_rng(seed_r)
        reached = 0
        min_h = math.inf
        trajs = []
        for _ in range(n_rollouts):
            tr = cs.rollout(policy, sc, cs.sample_init(sc, rng_r))
            reached += tr.reached_goal
            min_h = min(min_h, tr.min_h)
            trajs.append(tr)
        return reached / n_rollouts, min_h, trajs

    rate_before, minh_before, _ = roll_stats(net, seed + 5)
    rate_after, minh_after, trajs = roll_stats(repaired, seed + 5)
    for i, tr in enumerate(trajs[:5]):
        tr.save_csv(os.path.join(paths["csv"], f"trajectory_{i}.csv"))
    with open(os.path.join(paths["reports"], "scenario.json"), "w") as fh:
        json.dump(sc.to_dict(), fh, indent=2)
        fh.write("\n")

    summary = {
        "experiment": "controller",
        "imitation_mse": dataset_loss(net, data),
        "n_imitation_samples": len(data),
        "layer": len(net.layers),
        "delta": report.delta,
        "status": report.status,
        "goal_rate_before": rate_before,
        "goal_rate_after": rate_after,
        "min_h_before": minh_before,
        "min_h_after": minh_after,
    }
    _finish(paths, net, repaired, pred, report, samples, summary)
    return summary


RUNNERS = {
    "rotation": run_rotation,
    "kinematics": run_kinematics,
    "classifier": run_classifier,
    "controller": run_controller,
}
