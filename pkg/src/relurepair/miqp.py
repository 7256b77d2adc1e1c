"""Solver-agnostic MIQP model: convex quadratic objective, sparse linear rows,
continuous/binary variables, and CPLEX-style LP text export.

Objective convention: ``0.5 * z' P z + q' z + constant`` with P symmetric PSD.
Constraint rows are normalized to the two-sided form ``lower <= A z <= upper``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class Variable:
    index: int
    kind: str = CONTINUOUS
    lower: float = -np.inf
    upper: float = np.inf
    name: str = ""

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == BINARY and (self.lower, self.upper) != (0.0, 1.0):
            raise ValueError("binary variables must have bounds [0, 1]")
        if self.lower > self.upper:
            raise ValueError(f"variable {self.index}: lower > upper")


@dataclass(frozen=True)
class MiqpSolution:
    status: str  # optimal | feasible | infeasible | time-limit
    assignment: np.ndarray | None
    objective: float
    gap: float
    node_count: int


class RowBuilder:
    """Accumulates sparse constraint rows in coordinate form."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self._rows, self._cols, self._vals = [], [], []
        self.lower, self.upper, self.kinds = [], [], []

    def add(self, indices, coeffs, lower=-np.inf, upper=np.inf, kind="row"):
        if lower > upper:
            raise ValueError("row has lower > upper")
        r = len(self.lower)
        for i, v in zip(indices, coeffs):
            if v != 0.0:
                self._rows.append(r)
                self._cols.append(int(i))
                self._vals.append(float(v))
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.kinds.append(kind)
        return r

    def add_sense(self, indices, coeffs, sense, rhs, kind="row"):
        """Row in (coeffs . z) sense rhs form; normalized to two-sided."""
        if sense == "<=":
            return self.add(indices, coeffs, -np.inf, rhs, kind)
        if sense == ">=":
            return self.add(indices, coeffs, rhs, np.inf, kind)
        if sense == "==":
            return self.add(indices, coeffs, rhs, rhs, kind)
        raise ValueError(f"unknown sense {sense!r}")

    def matrix(self):
        m = len(self.lower)
        A = sp.coo_matrix(
            (self._vals, (self._rows, self._cols)), shape=(m, self.n_vars)
        ).tocsr()
        return A, np.array(self.lower), np.array(self.upper), tuple(self.kinds)


def _validate_psd(P: sp.spmatrix):
    diff = (P - P.T).tocoo()
    if diff.nnz and np.max(np.abs(diff.data)) > 1e-12:
        raise ValueError("objective matrix P is not symmetric")
    off_diag = P.tocoo()
    mask = off_diag.row != off_diag.col
    if not np.any(mask & (off_diag.data != 0.0)):
        if np.any(P.diagonal() < -1e-10):
            raise ValueError("objective matrix P has a negative diagonal")
        return
    # Shifted Cholesky certifies PSD up to the shift; eigendecomposition
    # would be overkill at this scale.
    dense = P.toarray() + 1e-10 * np.eye(P.shape[0])
    try:
        np.linalg.cholesky(dense)
    except np.linalg.LinAlgError as exc:
        raise ValueError("objective matrix P is not positive semidefinite") from exc


class MiqpProblem:
    """Immutable MIQP instance; safe for concurrent reads once constructed."""

    def __init__(self, variables, P, q, constant, A, row_lower, row_upper,
                 row_kinds=None, indicator_links=(), name="miqp", validate=True):
        self.variables = tuple(variables)
        n = len(self.variables)
        for i, v in enumerate(self.variables):
            if v.index != i:
                raise ValueError(f"variable at position {i} has index {v.index}")
        self.P = sp.csc_matrix(P, shape=(n, n))
        self.q = np.array(q, dtype=np.float64).reshape(n)
        self.constant = float(constant)
        self.A = sp.csr_matrix(A, shape=(A.shape[0], n) if A.shape[0] else (0, n))
        self.row_lower = np.array(row_lower, dtype=np.float64)
        self.row_upper = np.array(row_upper, dtype=np.float64)
        self.row_kinds = tuple(row_kinds) if row_kinds is not None else ("row",) * self.A.shape[0]
        # Indicator links (phi, x, s): phi = 1 forces s = 0, phi = 0 forces x = 0.
        self.indicator_links = tuple(indicator_links)
        self.name = name
        if validate:
            if self.row_lower.shape != (self.A.shape[0],) or self.row_upper.shape != (self.A.shape[0],):
                raise ValueError("row bounds do not match the constraint matrix")
            if np.any(self.row_lower > self.row_upper):
                raise ValueError("constraint row with lower > upper")
            if not np.all(np.isfinite(self.P.data)) or not np.all(np.isfinite(self.q)):
                raise ValueError("objective has non-finite coefficients")
            if self.A.nnz and not np.all(np.isfinite(self.A.data)):
                raise ValueError("constraint matrix has non-finite coefficients")
            _validate_psd(self.P)
        self.q.flags.writeable = False
        self.row_lower.flags.writeable = False
        self.row_upper.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def binary_indices(self) -> np.ndarray:
        return np.array([v.index for v in self.variables if v.kind == BINARY], dtype=int)

    def var_lower(self) -> np.ndarray:
        return np.array([v.lower for v in self.variables])

    def var_upper(self) -> np.ndarray:
        return np.array([v.upper for v in self.variables])

    def objective_value(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(0.5 * z @ (self.P @ z) + self.q @ z + self.constant)

    def max_violation(self, z) -> float:
        """Largest positive residual over constraint rows and variable bounds."""
        z = np.asarray(z, dtype=np.float64)
        worst = 0.0
        if self.n_rows:
            v = self.A @ z
            worst = max(
                worst,
                float(np.max(np.maximum(self.row_lower - v, 0.0), initial=0.0)),
                float(np.max(np.maximum(v - self.row_upper, 0.0), initial=0.0)),
            )
        worst = max(
            worst,
            float(np.max(np.maximum(self.var_lower() - z, 0.0), initial=0.0)),
            float(np.max(np.maximum(z - self.var_upper(), 0.0), initial=0.0)),
        )
        return worst


def evaluate(prob: MiqpProblem, z) -> tuple:
    """Exact recomputation of (objective, max constraint violation) at ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (prob.n,):
        raise ValueError(f"assignment has shape {z.shape}, problem has {prob.n} variables")
    return prob.objective_value(z), prob.max_violation(z)


_NAME_RE = re.compile(r"[^A-Za-z0-9_.!#$%&()\[\],;]")


def _lp_name(var: Variable) -> str:
    base = var.name or f"v{var.index}"
    clean = _NAME_RE.sub("_", base)
    if not clean:
        clean = f"v{var.index}"
    if clean[0].isdigit() or clean[0] == ".":
        clean = "v_" + clean
    return clean


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _linear_terms(names, idx, vals):
    parts = []
    for i, c in zip(idx, vals):
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(c))} {names[i]}")
    return parts


def export_lp(prob: MiqpProblem, path) -> None:
    """Write the problem as a CPLEX-style LP file.

    Deterministic: identical problems produce byte-identical files.  The
    objective constant, when nonzero, is attached to a fixed auxiliary
    variable since the LP format has no constant term.
    """
    names = [_lp_name(v) for v in prob.variables]
    if len(set(names)) != len(names):  # fall back to indexed names on collision
        names = [f"v{v.index}" for v in prob.variables]
    lines = [f"\\ {prob.name}", "Minimize"]

    obj = []
    q_idx = np.flatnonzero(prob.q)
    obj.extend(_linear_terms(names, q_idx, prob.q[q_idx]))
    if prob.constant != 0.0:
        obj.append(f"+ {_fmt(prob.constant)} objconst" if prob.constant > 0
                   else f"- {_fmt(-prob.constant)} objconst")
    Pc = prob.P.tocoo()
    quad = {}
    for i, j, v in zip(Pc.row, Pc.col, Pc.data):
        if v == 0.0:
            continue
        key = (min(i, j), max(i, j))
        quad[key] = quad.get(key, 0.0) + v
    quad_parts = []
    for (i, j) in sorted(quad):
        c = quad[(i, j)]
        if c == 0.0:
            continue
        sign = "-" if c < 0 else "+"
        if i == j:
            quad_parts.append(f"{sign} {_fmt(abs(c))} {names[i]} ^ 2")
        else:
            quad_parts.append(f"{sign} {_fmt(abs(c))} {names[i]} * {names[j]}")
    expr = " ".join(obj).lstrip("+ ") or "0"
    if quad_parts:
        expr += " + [ " + " ".join(quad_parts).lstrip("+ ") + " ] / 2"
    lines.append(f" obj: {expr}")

    lines.append("Subject To")
    A = prob.A.tocsr()
    for r in range(prob.n_rows):
        sl = slice(A.indptr[r], A.indptr[r + 1])
        idx, vals = A.indices[sl], A.data[sl]
        terms = " ".join(_linear_terms(names, idx, vals)).lstrip("+ ") or "0 " + names[0]
        lo, up = prob.row_lower[r], prob.row_upper[r]
        if lo == up:
            lines.append(f" c{r}: {terms} = {_fmt(lo)}")
        else:
            if np.isfinite(up):
                lines.append(f" c{r}_u: {terms} <= {_fmt(up)}")
            if np.isfinite(lo):
                lines.append(f" c{r}_l: {terms} >= {_fmt(lo)}")

    lines.append("Bounds")
    for v in prob.variables:
        name = names[v.index]
        lo, up = v.lower, v.upper
        if lo == up:
            lines.append(f" {name} = {_fmt(lo)}")
        elif not np.isfinite(lo) and not np.isfinite(up):
            lines.append(f" {name} free")
        else:
            left = f"{_fmt(lo)} <= " if np.isfinite(lo) else "-inf <= "
            right = f" <= {_fmt(up)}" if np.isfinite(up) else ""
            lines.append(f" {left}{name}{right}")
    if prob.constant != 0.0:
        lines.append(" objconst = 1")

    binaries = [names[i] for i in prob.binary_indices]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
