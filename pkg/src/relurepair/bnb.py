"""Branch-and-bound over the binary ReLU indicators.

Node relaxations are QPs with the unfixed binaries relaxed to [0, 1]; fixing
an indicator applies the exact branch semantics of the ReLU disjunction
(``phi = 1`` forces the negative part to 0, ``phi = 0`` forces the positive
part to 0) by collapsing the corresponding variable-bound rows.  The search is
best-first with most-fractional branching, warm starts from the parent node,
and a forward-trace primal heuristic when the problem came from a network
repair encoding.

Incumbents are always produced by re-solving the QP with every binary fixed,
so returned binary values are exact.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .miqp import MiqpProblem, MiqpSolution
from .qpsolver import (DUAL_INFEASIBLE, MAX_ITERATIONS, PRIMAL_INFEASIBLE,
                       SOLVED, QpConfig, QpSolver)

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class BnbConfig:
    gap_abs: float = 1e-6
    gap_rel: float = 1e-4
    integrality_tol: float = 1e-5
    time_limit_s: float | None = None
    node_limit: int | None = None
    branching: str = "most-fractional"
    search: str = "best-first"
    heuristic_interval: int = 10
    log_interval: int = 0
    workers: int = 1
    # Node relaxations get a smaller iteration budget than standalone solves:
    # an unconverged relaxation only weakens the bound (the parent's is kept),
    # while incumbents are always re-solved at high accuracy.
    qp: QpConfig = field(default_factory=lambda: QpConfig(max_iter=20_000))

    def __post_init__(self):
        if self.gap_abs <= 0 or self.gap_rel <= 0 or self.integrality_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.branching != "most-fractional" or self.search != "best-first":
            raise ValueError("unsupported branching or search strategy")


@dataclass(frozen=True)
class RepairHint:
    """Ties an encoded problem back to its network for the primal heuristic."""

    net: object        # Network
    spec: object       # RepairSpec
    vmap: object       # VariableMap


@dataclass
class _Node:
    fixes: dict
    bound: float
    warm: tuple | None
    depth: int


class _Tree:
    """Shared lowering of an MIQP to the QP arrays used by every node."""

    def __init__(self, prob: MiqpProblem, cfg: BnbConfig):
        self.prob = prob
        self.cfg = cfg
        n = prob.n
        self.A = sp.vstack([prob.A, sp.eye(n, format="csr")], format="csc") \
            if prob.n_rows else sp.eye(n, format="csc")
        self.lower = np.concatenate([prob.row_lower, prob.var_lower()])
        self.upper = np.concatenate([prob.row_upper, prob.var_upper()])
        self.bound_row = prob.n_rows + np.arange(n)  # bound row of variable i
        self.binaries = prob.binary_indices
        self.links = {phi: (x, s) for phi, x, s in prob.indicator_links}
        # QpSolver workspaces cache factorizations and are single-threaded;
        # concurrent node solves get one instance per worker thread.
        self._local = threading.local()

    def solver(self) -> QpSolver:
        s = getattr(self._local, "solver", None)
        if s is None:
            s = QpSolver(self.prob.P, self.A, self.cfg.qp)
            self._local.solver = s
        return s

    def tight_solver(self) -> QpSolver:
        """Backup solver at 1e-9 tolerances for incumbent cleanup."""
        s = getattr(self._local, "tight", None)
        if s is None:
            from dataclasses import replace
            tight_cfg = replace(self.cfg.qp, eps_abs=1e-9, eps_rel=1e-9,
                                max_iter=max(self.cfg.qp.max_iter, 400_000))
            s = QpSolver(self.prob.P, self.A, tight_cfg)
            self._local.tight = s
        return s

    def node_bounds(self, fixes: dict):
        lo = self.lower.copy()
        up = self.upper.copy()
        for b, v in fixes.items():
            r = self.bound_row[b]
            lo[r] = up[r] = float(v)
            link = self.links.get(b)
            if link is not None:
                x, s = link
                dead = s if v == 1 else x
                rd = self.bound_row[dead]
                lo[rd] = up[rd] = 0.0
        return lo, up

    def solve_node(self, fixes: dict, warm):
        lo, up = self.node_bounds(fixes)
        return self.solver().solve(self.prob.q, lo, up, warm=warm)

    def feasible_point(self, fixes: dict, warm, presolved=None):
        """High-accuracy solve with the given binaries fixed.

        Returns (assignment, objective incl. constant) of a point feasible
        within FEASIBILITY_TOL, or None.  ``presolved`` may supply an
        already-computed relaxation result for these fixes."""
        res = presolved if presolved is not None else self.solve_node(fixes, warm)
        if res.status == MAX_ITERATIONS or (
                res.status == SOLVED
                and self.prob.max_violation(_snap(self, res.z, fixes)) > FEASIBILITY_TOL):
            lo, up = self.node_bounds(fixes)
            res = self.tight_solver().solve(self.prob.q, lo, up,
                                            warm=(res.z, res.y))
        if res.status != SOLVED:
            return None
        z = _snap(self, res.z, fixes)
        if self.prob.max_violation(z) > FEASIBILITY_TOL:
            return None
        return z, self.prob.objective_value(z)


def _most_fractional(z, binaries, fixes):
    # Ties broken by lowest variable id (ascending scan, strict improvement).
    best, best_score = -1, 0.0
    for b in binaries:
        if int(b) in fixes:
            continue
        score = 0.5 - abs(float(z[b]) - 0.5)
        if score > best_score + 1e-12:
            best, best_score = int(b), score
    return best


def _integral(z, binaries, tol):
    if binaries.size == 0:
        return True
    vals = z[binaries]
    return bool(np.all(np.minimum(np.abs(vals), np.abs(vals - 1.0)) <= tol))


def _snap(tree: _Tree, z, fixes):
    z = z.copy()
    for b, v in fixes.items():
        z[b] = float(v)
    return z


def primal_heuristic(prob: MiqpProblem, vmap, net, spec, z_relaxed,
                     cfg: BnbConfig | None = None, tree: _Tree | None = None):
    """Forward-trace rounding of a relaxed solution.

    Reads the candidate repaired layer from ``z_relaxed``, traces every sample
    through it to get a consistent on/off pattern, and solves the QP with all
    indicators fixed to that pattern.  Returns ``(assignment, objective)`` of a
    feasible point (objective includes the problem constant), or ``None``.
    """
    from .network import replace_layer, trace  # local import avoids a cycle at module load

    cfg = cfg or BnbConfig()
    if tree is None:
        tree = _Tree(prob, cfg)
    binaries = tree.binaries
    if _integral(z_relaxed, binaries, cfg.integrality_tol):
        fixes = {int(b): int(round(z_relaxed[b])) for b in binaries}
        z = _snap(tree, z_relaxed, fixes)
        if prob.max_violation(z) <= FEASIBILITY_TOL:
            return z, prob.objective_value(z)
    W = z_relaxed[vmap.w_ids]
    b = z_relaxed[vmap.b_ids]
    candidate = replace_layer(net, vmap.layer_index, W, b)
    fixes = {}
    for n in range(vmap.n_samples):
        tr = trace(candidate, spec.samples.inputs[n])
        for i, ids in vmap.phi_ids.items():
            pattern = tr.pattern[i - 1]
            for j in range(ids.shape[0]):
                fixes[int(ids[j, n])] = int(pattern[j])
    return tree.feasible_point(fixes, warm=None)


def solve_miqp(prob: MiqpProblem, cfg: BnbConfig | None = None,
               hint: RepairHint | None = None) -> MiqpSolution:
    """Best-first branch-and-bound; exact on convex MIQPs with binary variables."""
    cfg = cfg or BnbConfig()
    tree = _Tree(prob, cfg)
    binaries = tree.binaries
    t0 = time.monotonic()

    incumbent_obj = np.inf
    incumbent_z = None
    node_count = 0
    final_gap = None
    order = itertools.count()
    heap = []
    heapq.heappush(heap, (-np.inf, next(order), _Node({}, -np.inf, None, 0)))
    hit_limit = False

    def cutoff():
        return incumbent_obj - cfg.gap_abs

    def try_incumbent(z, obj):
        nonlocal incumbent_obj, incumbent_z
        if obj < incumbent_obj:  # monotone update only
            incumbent_obj = obj
            incumbent_z = z

    def fixed_qp_incumbent(z_relaxed, warm):
        """Re-solve with all binaries fixed to the rounded pattern.

        Returns the feasible objective, or None when the pattern fails."""
        fixes = {int(b): int(round(z_relaxed[b])) for b in binaries}
        got = tree.feasible_point(fixes, warm)
        if got is not None:
            try_incumbent(*got)
            return got[1]
        return None

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while heap:
            if cfg.time_limit_s is not None and time.monotonic() - t0 > cfg.time_limit_s:
                hit_limit = True
                break
            if cfg.node_limit is not None and node_count >= cfg.node_limit:
                hit_limit = True
                break
            batch = []
            while heap and len(batch) < max(1, cfg.workers):
                bound, _, node = heapq.heappop(heap)
                if bound >= cutoff():
                    continue
                batch.append(node)
            if not batch:
                break
            if pool is not None and len(batch) > 1:
                results = list(pool.map(
                    lambda nd: tree.solve_node(nd.fixes, nd.warm), batch
                ))
            else:
                results = [tree.solve_node(nd.fixes, nd.warm) for nd in batch]

            for node, res in zip(batch, results):
                node_count += 1
                if res.status == PRIMAL_INFEASIBLE:
                    continue
                if res.status == DUAL_INFEASIBLE:
                    if node.depth == 0:
                        raise ValueError("MIQP relaxation is unbounded")
                    continue
                relax_obj = res.objective + prob.constant
                bound = max(node.bound, relax_obj) if res.status == SOLVED else node.bound
                if bound >= cutoff():
                    continue

                if res.status == SOLVED and _integral(res.z, binaries, cfg.integrality_tol):
                    free = [b for b in binaries if int(b) not in node.fixes]
                    if not free:
                        got = tree.feasible_point(node.fixes, node.warm, presolved=res)
                        if got is not None:
                            try_incumbent(*got)
                        continue
                    got = fixed_qp_incumbent(res.z, (res.z, res.y))
                    # Prune only when the rounded pattern attains the subtree
                    # bound; otherwise near-integral values hid a real choice.
                    if got is not None and got <= bound + cfg.gap_abs:
                        continue

                if hint is not None and (node_count == 1 or
                                         node_count % cfg.heuristic_interval == 0):
                    # An unconverged relaxation iterate is still a usable
                    # candidate for forward-trace rounding.
                    if res.status in (SOLVED, MAX_ITERATIONS):
                        got = primal_heuristic(prob, hint.vmap, hint.net, hint.spec,
                                               res.z, cfg, tree)
                        if got is not None:
                            try_incumbent(*got)
                            if bound >= cutoff():
                                continue

                if res.status != SOLVED:
                    # Relaxation did not converge: keep the parent bound and
                    # split anyway; children may be easier.  A fully fixed
                    # node has nothing to split, so give it one tight retry.
                    if all(int(b) in node.fixes for b in binaries):
                        got = tree.feasible_point(node.fixes, node.warm,
                                                  presolved=res)
                        if got is not None:
                            try_incumbent(*got)
                        continue
                branch_z = res.z if res.z is not None else np.zeros(prob.n)
                var = _most_fractional(branch_z, binaries, node.fixes)
                if var < 0:
                    var = next((int(b) for b in binaries if int(b) not in node.fixes), -1)
                if var < 0:
                    continue
                warm = (res.z, res.y) if res.status == SOLVED else node.warm
                for v in (0, 1):
                    child = dict(node.fixes)
                    child[var] = v
                    heapq.heappush(
                        heap,
                        (bound, next(order), _Node(child, bound, warm, node.depth + 1)),
                    )

            if cfg.log_interval and node_count % cfg.log_interval == 0:
                open_bound = heap[0][0] if heap else incumbent_obj
                gap_now = incumbent_obj - min(open_bound, incumbent_obj)
                log.info("node=%d bound=%.8g incumbent=%.8g gap=%.3g",
                         node_count, open_bound, incumbent_obj, gap_now)

            if incumbent_z is not None and heap:
                best_open = heap[0][0]
                if incumbent_obj - best_open <= max(cfg.gap_abs,
                                                    cfg.gap_rel * abs(incumbent_obj)):
                    final_gap = max(0.0, incumbent_obj - best_open)
                    heap.clear()
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    if incumbent_z is not None:
        if final_gap is None:
            final_gap = max(0.0, incumbent_obj - heap[0][0]) if heap else 0.0
        status = "feasible" if (hit_limit and heap) else "optimal"
        obj = prob.objective_value(incumbent_z)
        return MiqpSolution(status, incumbent_z, obj, final_gap, node_count)
    if hit_limit:
        return MiqpSolution("time-limit", None, np.inf, np.inf, node_count)
    return MiqpSolution("infeasible", None, np.inf, np.inf, node_count)


def brute_force_miqp(prob: MiqpProblem, cfg: BnbConfig | None = None) -> MiqpSolution:
    """Exhaustive enumeration over all binary patterns; testing oracle.

    Solves one QP per pattern with the exact branch rows applied, so its
    semantics match :func:`solve_miqp` leaf nodes by construction.
    """
    cfg = cfg or BnbConfig()
    tree = _Tree(prob, cfg)
    binaries = [int(b) for b in tree.binaries]
    if len(binaries) > 20:
        raise ValueError(f"refusing to enumerate 2^{len(binaries)} patterns")
    best_obj = np.inf
    best_z = None
    solves = 0
    for pattern in itertools.product((0, 1), repeat=len(binaries)):
        fixes = dict(zip(binaries, pattern))
        solves += 1
        got = tree.feasible_point(fixes, warm=None)
        if got is None:
            continue
        z, obj = got
        if obj < best_obj:
            best_obj, best_z = obj, z
    if best_z is None:
        return MiqpSolution("infeasible", None, np.inf, np.inf, solves)
    return MiqpSolution("optimal", best_z, best_obj, 0.0, solves)
