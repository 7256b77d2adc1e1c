"""Builds the layer-repair MIQP from (network, target layer, samples, predicate).

For target layer ``l`` the decision variables are that layer's weights and
bias, the shared max-deviation ``delta``, per-sample ReLU splittings
``x - s = z`` with binary on/off indicators for every downstream hidden
layer, the per-sample outputs, and one non-negative slack per predicate slack
group.  Activations upstream of layer ``l`` are constants obtained from the
frozen prefix, so every constraint row stays linear.  Repairing the output
layer produces no binaries at all and the problem is a plain QP.

Big-M magnitudes come from per-sample interval propagation with the target
layer's weights widened by ``delta_max``, which is why a finite deviation cap
is required.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .miqp import BINARY, CONTINUOUS, MiqpProblem, MiqpSolution, RowBuilder, Variable
from .network import IntervalBox, LayerBox, Network, ShapeError, propagate_bounds, replace_layer
from .predicate import EQ, GE, LE, Predicate

log = logging.getLogger(__name__)


class EncodingError(RuntimeError):
    """The repair instance cannot be encoded (e.g. unbounded Big-M)."""


@dataclass(frozen=True)
class RepairSpec:
    """What to repair: layer, samples, predicate and deviation budget."""

    layer_index: int
    samples: Dataset
    predicate: Predicate
    delta_max: float = 10.0
    delta_weight: float = 1.0
    bigm_cap: float = 1e4

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("repair needs at least one sample")
        if not (np.isfinite(self.delta_max) and self.delta_max > 0):
            raise ValueError("delta_max must be finite and positive")
        if self.delta_weight <= 0:
            raise ValueError("delta_weight must be positive")
        if self.bigm_cap <= 0:
            raise ValueError("bigm_cap must be positive")

    def validate_against(self, net: Network):
        if not (1 <= self.layer_index <= len(net.layers)):
            raise ValueError(
                f"layer_index {self.layer_index} out of range 1..{len(net.layers)}"
            )
        if self.samples.input_dim != net.input_dim:
            raise ShapeError("sample inputs do not match the network input dimension")
        if self.samples.target_dim != net.output_dim:
            raise ShapeError("sample targets do not match the network output dimension")


@dataclass
class VariableMap:
    """Bijective lookup from semantic roles to MIQP variable ids."""

    layer_index: int
    n_samples: int
    w_ids: np.ndarray                      # (out, in) of layer l
    b_ids: np.ndarray                      # (out,)
    x_ids: dict = field(default_factory=dict)   # layer i -> (width, N) ids
    s_ids: dict = field(default_factory=dict)
    phi_ids: dict = field(default_factory=dict)
    y_ids: np.ndarray = None               # (N, m)
    delta_id: int = -1
    slack_ids: dict = field(default_factory=dict)  # group -> id
    prefix: np.ndarray = None              # (N, |x^{l-1}|) frozen prefix values
    n_vars: int = 0

    def roles(self) -> dict:
        """id -> role tuple; asserts the mapping is bijective."""
        out = {}

        def put(i, role):
            i = int(i)
            if i in out:
                raise AssertionError(f"variable {i} mapped twice: {out[i]} and {role}")
            out[i] = role

        for (j, k), i in np.ndenumerate(self.w_ids):
            put(i, ("W", j, k))
        for j, i in enumerate(self.b_ids):
            put(i, ("b", j))
        for layer, ids in self.x_ids.items():
            for (j, n), i in np.ndenumerate(ids):
                put(i, ("x", layer, j, n))
        for layer, ids in self.s_ids.items():
            for (j, n), i in np.ndenumerate(ids):
                put(i, ("s", layer, j, n))
        for layer, ids in self.phi_ids.items():
            for (j, n), i in np.ndenumerate(ids):
                put(i, ("phi", layer, j, n))
        for (n, m), i in np.ndenumerate(self.y_ids):
            put(i, ("y", n, m))
        put(self.delta_id, ("delta",))
        for group, i in self.slack_ids.items():
            put(i, ("slack", group))
        return out


def _prefix_activations(net: Network, X: np.ndarray, layer_index: int) -> np.ndarray:
    """Frozen forward pass through layers 1..layer_index-1 (with ReLU)."""
    A = X.T
    for layer in net.layers[: layer_index - 1]:
        A = np.maximum(0.0, layer.weights @ A + layer.bias[:, None])
    return A.T


def _bigm_bounds(net: Network, spec: RepairSpec, prefix: np.ndarray):
    """Per-node per-sample Big-M magnitudes plus output variable bounds.

    Returns ``({i: (U_plus, U_minus)}, (y_lower, y_upper))``: Big-M arrays of
    shape (width_i, N) for hidden layers i = l..L, and sound per-sample bounds
    on the outputs, all derived from interval propagation of each sample's
    frozen prefix through the suffix with the target layer's weights widened
    by ``delta_max``.
    """
    l, L = spec.layer_index, net.n_hidden
    suffix = Network(net.layers[l - 1:])
    target = net.layers[l - 1]
    wb = LayerBox(
        1,
        target.weights - spec.delta_max, target.weights + spec.delta_max,
        target.bias - spec.delta_max, target.bias + spec.delta_max,
    )
    widths = [layer.out_dim for layer in net.layers]
    N = prefix.shape[0]
    upper = {i: np.empty((widths[i - 1], N)) for i in range(l, L + 1)}
    lower = {i: np.empty((widths[i - 1], N)) for i in range(l, L + 1)}
    y_lower = np.empty((N, net.output_dim))
    y_upper = np.empty((N, net.output_dim))
    for n in range(N):
        boxes = propagate_bounds(suffix, IntervalBox(prefix[n], prefix[n]), wb)
        for i in range(l, L + 1):
            box = boxes[i - l]
            lower[i][:, n] = box.lower
            upper[i][:, n] = box.upper
        y_lower[n] = boxes[-1].lower
        y_upper[n] = boxes[-1].upper
    bounds = {}
    truncated = 0
    for i in range(l, L + 1):
        if not (np.all(np.isfinite(lower[i])) and np.all(np.isfinite(upper[i]))):
            j, n = np.argwhere(~np.isfinite(upper[i]) | ~np.isfinite(lower[i]))[0]
            raise EncodingError(
                f"infinite pre-activation bound at layer {i}, node {j}, sample {n}; "
                f"set a finite bigm_cap"
            )
        u_plus = np.maximum(0.0, upper[i])
        u_minus = np.maximum(0.0, -lower[i])
        truncated += int(np.count_nonzero(u_plus > spec.bigm_cap))
        truncated += int(np.count_nonzero(u_minus > spec.bigm_cap))
        bounds[i] = (np.minimum(u_plus, spec.bigm_cap), np.minimum(u_minus, spec.bigm_cap))
    if truncated:
        log.warning(
            "bigm_cap=%g truncated %d propagated bounds; the encoding may cut "
            "feasible repairs", spec.bigm_cap, truncated,
        )
    return bounds, (y_lower, y_upper)


def encode(net: Network, spec: RepairSpec):
    """Build the repair MIQP; returns (problem, variable map)."""
    spec.validate_against(net)
    l, L = spec.layer_index, net.n_hidden
    X, T = spec.samples.inputs, spec.samples.targets
    flags = spec.samples.in_repair_domain
    N = len(spec.samples)
    m_out = net.output_dim
    target = net.layers[l - 1]
    out_w, in_w = target.weights.shape

    prefix = _prefix_activations(net, X, l)
    bigm, (y_lower, y_upper) = _bigm_bounds(net, spec, prefix)

    # Collect slack groups actually referenced by repair-domain samples.
    sample_cons = {}
    groups = []
    for n in np.flatnonzero(flags):
        cons = spec.predicate.generate(X[n])
        for c in cons:
            if c.coeffs.shape[0] != m_out:
                raise ShapeError(
                    f"predicate constraint over {c.coeffs.shape[0]} outputs, "
                    f"network has {m_out}"
                )
            if c.slack_group is not None and c.slack_group not in groups:
                groups.append(c.slack_group)
        sample_cons[int(n)] = cons

    variables = []

    def new_var(name, kind=CONTINUOUS, lower=-np.inf, upper=np.inf):
        v = Variable(len(variables), kind, lower, upper, name)
        variables.append(v)
        return v.index

    w_ids = np.empty((out_w, in_w), dtype=int)
    for j in range(out_w):
        for k in range(in_w):
            w_ids[j, k] = new_var(
                f"W[{j},{k}]",
                lower=target.weights[j, k] - spec.delta_max,
                upper=target.weights[j, k] + spec.delta_max,
            )
    b_ids = np.array(
        [
            new_var(f"b[{j}]", lower=target.bias[j] - spec.delta_max,
                    upper=target.bias[j] + spec.delta_max)
            for j in range(out_w)
        ]
    )
    delta_id = new_var("delta", lower=0.0, upper=spec.delta_max)
    y_ids = np.empty((N, m_out), dtype=int)
    for n in range(N):
        for mm in range(m_out):
            y_ids[n, mm] = new_var(f"y[{n},{mm}]", lower=y_lower[n, mm],
                                   upper=y_upper[n, mm])

    x_ids, s_ids, phi_ids = {}, {}, {}
    for i in range(l, L + 1):
        width = net.layers[i - 1].out_dim
        u_plus, u_minus = bigm[i]
        xi = np.empty((width, N), dtype=int)
        si = np.empty((width, N), dtype=int)
        pi = np.empty((width, N), dtype=int)
        for n in range(N):
            for j in range(width):
                xi[j, n] = new_var(f"x[{i},{j},{n}]", lower=0.0, upper=u_plus[j, n])
                si[j, n] = new_var(f"s[{i},{j},{n}]", lower=0.0, upper=u_minus[j, n])
                pi[j, n] = new_var(f"phi[{i},{j},{n}]", BINARY, 0.0, 1.0)
        x_ids[i], s_ids[i], phi_ids[i] = xi, si, pi

    slack_ids = {g: new_var(f"beta[{g}]", lower=0.0) for g in groups}

    rows = RowBuilder(len(variables))

    # Hidden forward pass x - s = W x_prev + b, layer by layer.
    for i in range(l, L + 1):
        width = net.layers[i - 1].out_dim
        for n in range(N):
            for j in range(width):
                if i == l:
                    # W row is the decision variable, input is a constant.
                    idx = [x_ids[i][j, n], s_ids[i][j, n], b_ids[j]]
                    coeff = [1.0, -1.0, -1.0]
                    for k in range(in_w):
                        if prefix[n, k] != 0.0:
                            idx.append(w_ids[j, k])
                            coeff.append(-prefix[n, k])
                    rows.add(idx, coeff, 0.0, 0.0, kind="net_eq")
                else:
                    W = net.layers[i - 1].weights
                    idx = [x_ids[i][j, n], s_ids[i][j, n]]
                    coeff = [1.0, -1.0]
                    for k in range(W.shape[1]):
                        if W[j, k] != 0.0:
                            idx.append(x_ids[i - 1][k, n])
                            coeff.append(-W[j, k])
                    bias = net.layers[i - 1].bias[j]
                    rows.add(idx, coeff, bias, bias, kind="net_eq")

    # Big-M relaxation of the ReLU disjunction.
    for i in range(l, L + 1):
        u_plus, u_minus = bigm[i]
        width = net.layers[i - 1].out_dim
        for n in range(N):
            for j in range(width):
                rows.add(
                    [x_ids[i][j, n], phi_ids[i][j, n]], [1.0, -u_plus[j, n]],
                    -np.inf, 0.0, kind="bigm_x",
                )
                rows.add(
                    [s_ids[i][j, n], phi_ids[i][j, n]], [1.0, u_minus[j, n]],
                    -np.inf, u_minus[j, n], kind="bigm_s",
                )

    # Output rows y = W_last x_last + b_last.
    last = net.layers[-1]
    for n in range(N):
        for mm in range(m_out):
            if l == L + 1:
                idx = [y_ids[n, mm], b_ids[mm]]
                coeff = [1.0, -1.0]
                for k in range(in_w):
                    if prefix[n, k] != 0.0:
                        idx.append(w_ids[mm, k])
                        coeff.append(-prefix[n, k])
                rows.add(idx, coeff, 0.0, 0.0, kind="output_eq")
            else:
                idx = [y_ids[n, mm]]
                coeff = [1.0]
                for k in range(last.in_dim):
                    if last.weights[mm, k] != 0.0:
                        idx.append(x_ids[L][k, n])
                        coeff.append(-last.weights[mm, k])
                rows.add(idx, coeff, last.bias[mm], last.bias[mm], kind="output_eq")

    # Predicate rows for repair-domain samples only.
    for n, cons in sample_cons.items():
        for c in cons:
            idx = list(y_ids[n][np.flatnonzero(c.coeffs)])
            coeff = list(c.coeffs[np.flatnonzero(c.coeffs)])
            rhs = c.effective_rhs()
            if c.slack_group is not None:
                if c.sense == LE:
                    idx.append(slack_ids[c.slack_group])
                    coeff.append(-1.0)
                elif c.sense == GE:
                    idx.append(slack_ids[c.slack_group])
                    coeff.append(1.0)
            if c.sense == LE:
                rows.add(idx, coeff, -np.inf, rhs, kind="predicate")
            elif c.sense == GE:
                rows.add(idx, coeff, rhs, np.inf, kind="predicate")
            elif c.sense == EQ:
                rows.add(idx, coeff, rhs, rhs, kind="predicate")

    # Deviation rows |w - w_prev| <= delta, |b - b_prev| <= delta.
    for j in range(out_w):
        for k in range(in_w):
            w0 = target.weights[j, k]
            rows.add([w_ids[j, k], delta_id], [1.0, -1.0], -np.inf, w0, kind="delta")
            rows.add([w_ids[j, k], delta_id], [-1.0, -1.0], -np.inf, -w0, kind="delta")
    for j in range(out_w):
        b0 = target.bias[j]
        rows.add([b_ids[j], delta_id], [1.0, -1.0], -np.inf, b0, kind="delta")
        rows.add([b_ids[j], delta_id], [-1.0, -1.0], -np.inf, -b0, kind="delta")

    # Objective: sum_n ||y_n - t_n||^2 + delta_weight * delta + slack penalties.
    n_vars = len(variables)
    q = np.zeros(n_vars)
    diag = np.zeros(n_vars)
    for n in range(N):
        for mm in range(m_out):
            diag[y_ids[n, mm]] = 2.0
            q[y_ids[n, mm]] = -2.0 * T[n, mm]
    q[delta_id] = spec.delta_weight
    for g, i in slack_ids.items():
        q[i] = spec.predicate.slack_penalties[g]
    constant = float(np.sum(T * T))
    P = sp.diags(diag, format="csc")

    A, row_lower, row_upper, kinds = rows.matrix()
    links = []
    for i in range(l, L + 1):
        width = net.layers[i - 1].out_dim
        for n in range(N):
            for j in range(width):
                links.append((int(phi_ids[i][j, n]), int(x_ids[i][j, n]),
                              int(s_ids[i][j, n])))

    prob = MiqpProblem(
        variables, P, q, constant, A, row_lower, row_upper,
        row_kinds=kinds, indicator_links=links,
        name=f"repair_layer{l}_N{N}",
    )
    vmap = VariableMap(
        layer_index=l, n_samples=N, w_ids=w_ids, b_ids=b_ids,
        x_ids=x_ids, s_ids=s_ids, phi_ids=phi_ids, y_ids=y_ids,
        delta_id=delta_id, slack_ids=slack_ids, prefix=prefix,
        n_vars=len(variables),
    )
    return prob, vmap


def decode(net: Network, vmap: VariableMap, solution: MiqpSolution) -> Network:
    """Network with the repaired layer substituted from a feasible solution."""
    if solution.status not in ("optimal", "feasible"):
        raise ValueError(f"cannot decode a solution with status {solution.status!r}")
    z = solution.assignment
    W = z[vmap.w_ids]
    b = z[vmap.b_ids]
    return replace_layer(net, vmap.layer_index, W, b)


def deviation(net: Network, repaired: Network, layer_index: int) -> float:
    """Max entrywise |change| of the given layer between two networks."""
    a = net.layers[layer_index - 1]
    r = repaired.layers[layer_index - 1]
    return max(
        float(np.max(np.abs(a.weights - r.weights), initial=0.0)),
        float(np.max(np.abs(a.bias - r.bias), initial=0.0)),
    )


def trace_assignment(net: Network, vmap: VariableMap, spec: RepairSpec, W, b):
    """Feasible-by-construction assignment for candidate layer weights.

    Runs the candidate layer forward on every sample, splitting pre-activations
    into (x, s) with the on/off pattern from the trace.  Satisfies the network,
    Big-M and deviation rows whenever the candidate deviates at most
    ``delta_max`` and no propagated bound was capped; predicate rows are made
    feasible through slack values when their groups allow it.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    l, N = vmap.layer_index, vmap.n_samples
    L = net.n_hidden
    z = np.zeros(vmap.n_vars)
    z[vmap.w_ids] = W
    z[vmap.b_ids] = b
    target = net.layers[l - 1]
    dev = max(
        float(np.max(np.abs(W - target.weights), initial=0.0)),
        float(np.max(np.abs(b - target.bias), initial=0.0)),
    )
    z[vmap.delta_id] = dev
    A = (W @ vmap.prefix.T) + b[:, None]
    for i in range(l, L + 1):
        if i > l:
            layer = net.layers[i - 1]
            A = layer.weights @ A_post + layer.bias[:, None]
        z[vmap.x_ids[i]] = np.maximum(0.0, A)
        z[vmap.s_ids[i]] = np.maximum(0.0, -A)
        z[vmap.phi_ids[i]] = (A >= 0.0).astype(float)
        A_post = np.maximum(0.0, A)
    last = net.layers[-1]
    if l == L + 1:
        Y = A.T
    else:
        Y = (last.weights @ A_post + last.bias[:, None]).T
    z[vmap.y_ids] = Y
    # Minimal slack values that absorb predicate violations.
    slack_needed = {g: 0.0 for g in vmap.slack_ids}
    flags = spec.samples.in_repair_domain
    for n in np.flatnonzero(flags):
        for c in spec.predicate.generate(spec.samples.inputs[n]):
            if c.slack_group is not None:
                r = c.residual(Y[n], 0.0)
                if r > 0:
                    slack_needed[c.slack_group] = max(slack_needed[c.slack_group], r)
    for g, i in vmap.slack_ids.items():
        z[i] = slack_needed[g]
    return z
