"""Output predicates: conjunctions of affine constraints on the network output.

A predicate maps a sample input ``x0`` to a finite list of affine constraints
on the output vector ``y``.  Constraints may carry a slack group: a shared
non-negative variable that relaxes every constraint in the group and is
penalized in the repair objective.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .network import ShapeError

CHECK_TOL = 1e-9

LE, GE, EQ = "<=", ">=", "=="
_SENSES = (LE, GE, EQ)


class PredicateConfigError(ValueError):
    """Malformed predicate definition or slack-group setup."""


@dataclass(frozen=True)
class AffineConstraint:
    """``coeffs . y  (sense)  rhs``, optionally relaxed by a slack group.

    A strict inequality is realized as the non-strict one tightened by
    ``strict_margin``.
    """

    coeffs: np.ndarray
    sense: str
    rhs: float
    slack_group: str | None = None
    strict_margin: float = 0.0
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise PredicateConfigError("constraint coefficients must be a finite vector")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if self.sense not in _SENSES:
            raise PredicateConfigError(f"unknown sense {self.sense!r}")
        if self.strict_margin < 0:
            raise PredicateConfigError("strict_margin must be non-negative")
        if self.slack_group is not None and self.sense == EQ:
            raise PredicateConfigError("equality constraints cannot carry slack")

    def effective_rhs(self) -> float:
        """Right-hand side after folding in the strict margin."""
        if self.sense == LE:
            return self.rhs - self.strict_margin
        if self.sense == GE:
            return self.rhs + self.strict_margin
        return self.rhs

    def residual(self, y, slack: float = 0.0) -> float:
        """Positive amount by which ``y`` violates the constraint."""
        v = float(self.coeffs @ np.asarray(y, dtype=np.float64))
        rhs = self.effective_rhs()
        if self.sense == LE:
            return v - (rhs + slack)
        if self.sense == GE:
            return (rhs - slack) - v
        return abs(v - rhs)


@dataclass(frozen=True)
class Predicate:
    """Conjunction of sample-parameterized affine constraints on the output."""

    generator: object  # Callable[[np.ndarray], list[AffineConstraint]]
    slack_penalties: dict = field(default_factory=dict)
    output_dim: int | None = None
    config: dict | None = None

    def generate(self, x0) -> list:
        cons = self.generator(np.asarray(x0, dtype=np.float64))
        for c in cons:
            if c.slack_group is not None and c.slack_group not in self.slack_penalties:
                raise PredicateConfigError(
                    f"slack group {c.slack_group!r} has no penalty weight"
                )
            if self.output_dim is not None and c.coeffs.shape[0] != self.output_dim:
                raise ShapeError(
                    f"constraint over {c.coeffs.shape[0]} outputs, predicate "
                    f"declares {self.output_dim}"
                )
        return cons


@dataclass(frozen=True)
class CheckResult:
    satisfied: bool
    violations: tuple  # of (AffineConstraint, residual) pairs

    def __bool__(self):
        return self.satisfied


def check(pred: Predicate, x0, y, slacks: dict | None = None) -> CheckResult:
    """Evaluate every constraint of ``pred`` at (x0, y) with tolerance 1e-9."""
    slacks = slacks or {}
    for group, value in slacks.items():
        if group not in pred.slack_penalties:
            raise PredicateConfigError(f"unknown slack group {group!r}")
        if value < 0:
            raise PredicateConfigError(f"negative slack for group {group!r}")
    bad = []
    for con in pred.generate(x0):
        slack = slacks.get(con.slack_group, 0.0) if con.slack_group else 0.0
        r = con.residual(y, slack)
        if r > CHECK_TOL:
            bad.append((con, r))
    return CheckResult(not bad, tuple(bad))


def build_explicit(constraints, slack_penalties=None) -> Predicate:
    """Predicate from a fixed constraint list (independent of the input)."""
    constraints = tuple(constraints)
    dim = constraints[0].coeffs.shape[0] if constraints else None

    def gen(_x0):
        return list(constraints)

    return Predicate(
        gen,
        dict(slack_penalties or {}),
        dim,
        {
            "kind": "explicit",
            "constraints": [_constraint_to_dict(c) for c in constraints],
            "slack_penalties": dict(slack_penalties or {}),
        },
    )


def trivial_predicate(output_dim=None) -> Predicate:
    """Always-satisfied predicate (no constraints)."""
    base = build_explicit([])
    return Predicate(base.generator, {}, output_dim, base.config)


def build_l1_ball(center, radius: float) -> Predicate:
    """``||y - center||_1 <= radius`` as 2^dim sign-pattern constraints."""
    center = np.asarray(center, dtype=np.float64)
    if radius <= 0:
        raise PredicateConfigError("radius must be positive")
    cons = []
    for signs in itertools.product((1.0, -1.0), repeat=center.shape[0]):
        s = np.array(signs)
        cons.append(
            AffineConstraint(s, LE, radius + float(s @ center), name=f"l1[{signs}]")
        )
    pred = build_explicit(cons)
    return Predicate(
        pred.generator, {}, center.shape[0],
        {"kind": "l1_ball", "center": center.tolist(), "radius": float(radius)},
    )


def build_halfspace(coeffs, sense: str, rhs: float) -> Predicate:
    """Single affine constraint ``coeffs . y (sense) rhs``."""
    con = AffineConstraint(coeffs, sense, float(rhs), name="halfspace")
    pred = build_explicit([con])
    return Predicate(
        pred.generator, {}, con.coeffs.shape[0],
        {"kind": "halfspace", "coeffs": con.coeffs.tolist(), "sense": sense,
         "rhs": float(rhs)},
    )


def build_classification_margin(preferred, rejected, margin: float = 1e-4,
                                n_outputs: int | None = None) -> Predicate:
    """Every preferred output strictly below every rejected output.

    Selection is by minimum value, so "class p preferred over r" is the
    constraint ``y_p - y_r <= -margin`` for each preferred/rejected pair.
    """
    preferred = tuple(preferred)
    rejected = tuple(rejected)
    if not preferred or not rejected:
        raise PredicateConfigError("preferred and rejected sets must be non-empty")
    if set(preferred) & set(rejected):
        raise PredicateConfigError("preferred and rejected sets overlap")
    dim = n_outputs if n_outputs is not None else max(max(preferred), max(rejected)) + 1
    cons = []
    for p in preferred:
        for r in rejected:
            c = np.zeros(dim)
            c[p], c[r] = 1.0, -1.0
            cons.append(
                AffineConstraint(c, LE, 0.0, strict_margin=margin, name=f"y{p}<y{r}")
            )
    pred = build_explicit(cons)
    return Predicate(
        pred.generator, {}, dim,
        {"kind": "classification", "preferred": list(preferred),
         "rejected": list(rejected), "margin": float(margin), "n_outputs": dim},
    )


def _lie_row(center, x0):
    # Gradient of the squared-distance measure pushed through the unicycle
    # input matrix g(x) = [[cos t, 0], [sin t, 0], [0, 1]].
    x, y, theta = x0
    return np.array(
        [2.0 * (x - center[0]) * math.cos(theta) + 2.0 * (y - center[1]) * math.sin(theta),
         0.0]
    )


def barrier_value(center, radius, x0) -> float:
    """Squared distance to ``center`` minus ``radius**2`` at planar state ``x0``."""
    x, y = float(x0[0]), float(x0[1])
    return (x - center[0]) ** 2 + (y - center[1]) ** 2 - radius**2


def build_cbf(center, radius: float, gamma: float = 1.0) -> Predicate:
    """Barrier constraint for the unicycle: keep the obstacle distance measure
    non-decreasing faster than ``-gamma * h``.

    Generates, per state, one constraint ``L_g h(x0) . y + gamma * h(x0) >= 0``
    on the controls ``y = (v, omega)``.
    """
    if gamma < 0:
        raise PredicateConfigError("gamma must be non-negative")
    if radius <= 0:
        raise PredicateConfigError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)

    def gen(x0):
        if x0.shape != (3,):
            raise ShapeError(f"CBF predicate expects a (x, y, theta) state, got {x0.shape}")
        h = barrier_value(center, radius, x0)
        return [AffineConstraint(_lie_row(center, x0), GE, -gamma * h, name="cbf")]

    return Predicate(
        gen, {}, 2,
        {"kind": "cbf", "center": center.tolist(), "radius": float(radius),
         "gamma": float(gamma)},
    )


def build_clf(center, radius: float, slack_group: str = "clf",
              penalty: float = 100.0) -> Predicate:
    """Lyapunov descent constraint ``L_g V(x0) . y <= beta`` with slack beta."""
    if penalty <= 0:
        raise PredicateConfigError("slack penalty must be positive")
    if radius <= 0:
        raise PredicateConfigError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)

    def gen(x0):
        if x0.shape != (3,):
            raise ShapeError(f"CLF predicate expects a (x, y, theta) state, got {x0.shape}")
        return [AffineConstraint(_lie_row(center, x0), LE, 0.0,
                                 slack_group=slack_group, name="clf")]

    return Predicate(
        gen, {slack_group: float(penalty)}, 2,
        {"kind": "clf", "center": center.tolist(), "radius": float(radius),
         "slack_group": slack_group, "penalty": float(penalty)},
    )


def conjoin(p1: Predicate, p2: Predicate) -> Predicate:
    """Conjunction: union of both constraint lists, merged slack penalties."""
    if (p1.output_dim is not None and p2.output_dim is not None
            and p1.output_dim != p2.output_dim):
        raise ShapeError(
            f"predicates constrain different output dims: {p1.output_dim} vs {p2.output_dim}"
        )
    dup = set(p1.slack_penalties) & set(p2.slack_penalties)
    if dup:
        raise PredicateConfigError(f"duplicate slack groups: {sorted(dup)}")
    penalties = {**p1.slack_penalties, **p2.slack_penalties}

    def gen(x0):
        return list(p1.generator(x0)) + list(p2.generator(x0))

    config = None
    if p1.config is not None and p2.config is not None:
        config = {"kind": "conjunction", "parts": [p1.config, p2.config]}
    return Predicate(gen, penalties, p1.output_dim or p2.output_dim, config)


def _constraint_to_dict(c: AffineConstraint) -> dict:
    d = {"coeffs": c.coeffs.tolist(), "sense": c.sense, "rhs": c.rhs}
    if c.slack_group is not None:
        d["slack_group"] = c.slack_group
    if c.strict_margin:
        d["strict_margin"] = c.strict_margin
    if c.name:
        d["name"] = c.name
    return d


def _constraint_from_dict(d: dict) -> AffineConstraint:
    return AffineConstraint(
        d["coeffs"], d["sense"], d["rhs"],
        slack_group=d.get("slack_group"),
        strict_margin=d.get("strict_margin", 0.0),
        name=d.get("name", ""),
    )


def predicate_from_config(cfg: dict) -> Predicate:
    """Build a predicate from its declarative JSON form."""
    kind = cfg.get("kind")
    if kind == "l1_ball":
        return build_l1_ball(cfg["center"], cfg["radius"])
    if kind == "halfspace":
        return build_halfspace(cfg["coeffs"], cfg["sense"], cfg["rhs"])
    if kind == "classification":
        return build_classification_margin(
            cfg["preferred"], cfg["rejected"], cfg.get("margin", 1e-4),
            cfg.get("n_outputs"),
        )
    if kind == "cbf":
        return build_cbf(cfg["center"], cfg["radius"], cfg.get("gamma", 1.0))
    if kind == "clf":
        return build_clf(cfg["center"], cfg["radius"], cfg.get("slack_group", "clf"),
                         cfg.get("penalty", 100.0))
    if kind == "conjunction":
        parts = [predicate_from_config(p) for p in cfg["parts"]]
        if not parts:
            raise PredicateConfigError("empty conjunction")
        pred = parts[0]
        for p in parts[1:]:
            pred = conjoin(pred, p)
        return pred
    if kind == "explicit":
        return build_explicit(
            [_constraint_from_dict(d) for d in cfg.get("constraints", [])],
            cfg.get("slack_penalties", {}),
        )
    raise PredicateConfigError(f"unknown predicate kind {kind!r}")


def save_predicate(pred: Predicate, path) -> None:
    if pred.config is None:
        raise PredicateConfigError("predicate has no declarative form to save")
    with open(path, "w") as fh:
        json.dump(pred.config, fh, indent=2)
        fh.write("\n")


def load_predicate(path) -> Predicate:
    with open(path) as fh:
        return predicate_from_config(json.load(fh))
