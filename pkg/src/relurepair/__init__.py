"""relurepair: layer-wise repair of feed-forward ReLU networks.

Repairs the weights of one chosen layer so that affine predicates hold on the
network output over a repair input domain, while minimizing the original
sum-of-squares loss plus the maximum weight deviation.  The repair problem is
a mixed-integer quadratic program solved by a built-in branch-and-bound over
ReLU on/off indicators with an operator-splitting QP for node relaxations.
"""

from .bnb import BnbConfig, RepairHint, brute_force_miqp, primal_heuristic, solve_miqp
from .data import Dataset, load_dataset, make_dataset, save_dataset
from .encoder import RepairSpec, VariableMap, decode, deviation, encode
from .miqp import MiqpProblem, MiqpSolution, Variable, evaluate as evaluate_miqp, export_lp
from .network import (ActivationTrace, IntervalBox, Layer, LayerBox, Network,
                      forward, forward_batch, load_network, propagate_bounds,
                      random_network, save_network, trace)
from .predicate import (AffineConstraint, Predicate, build_cbf,
                        build_classification_margin, build_clf, build_explicit,
                        build_halfspace, build_l1_ball, check, conjoin,
                        load_predicate, save_predicate, trivial_predicate)
from .qpsolver import QpConfig, QpProblem, QpResult, kkt_residuals, solve_qp
from .repair import (EvalReport, FalsifierHit, InfeasibleRepairError,
                     RepairReport, SolverLimitError, assemble_repair_set,
                     evaluate, falsify, repair, sample_box)
from .trainer import DivergenceError, TrainConfig, dataset_loss, gradient_check, train

__version__ = "0.1.0"
