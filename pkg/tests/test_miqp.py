import numpy as np
import pytest
import scipy.sparse as sp

from relurepair.miqp import (BINARY, CONTINUOUS, MiqpProblem, RowBuilder,
                             Variable, evaluate, export_lp)


def _problem_min_square(binary_extra=False):
    """min z^2 s.t. z >= 1 (0.5 z P z with P = 2)."""
    variables = [Variable(0, CONTINUOUS, -np.inf, np.inf, "x")]
    if binary_extra:
        variables.append(Variable(1, BINARY, 0.0, 1.0, "phi"))
    n = len(variables)
    rows = RowBuilder(n)
    rows.add_sense([0], [1.0], ">=", 1.0)
    A, lo, up, kinds = rows.matrix()
    P = sp.diags([2.0] + [0.0] * (n - 1), format="csc")
    return MiqpProblem(variables, P, np.zeros(n), 0.0, A, lo, up, row_kinds=kinds)


class TestEvaluate:
    def test_empty_problem(self):
        prob = MiqpProblem([], sp.csc_matrix((0, 0)), np.zeros(0), 2.5,
                           sp.csr_matrix((0, 0)), np.zeros(0), np.zeros(0))
        assert evaluate(prob, np.zeros(0)) == (2.5, 0.0)

    def test_at_feasible_optimum(self):
        prob = _problem_min_square()
        obj, viol = evaluate(prob, np.array([1.0]))
        assert obj == pytest.approx(1.0, abs=0)
        assert viol == 0.0

    def test_residual_of_violated_row(self):
        prob = _problem_min_square()
        obj, viol = evaluate(prob, np.array([0.0]))
        assert obj == 0.0
        assert viol == pytest.approx(1.0, abs=0)

    def test_variable_bound_violation_counts(self):
        variables = [Variable(0, CONTINUOUS, 0.0, 1.0, "x")]
        prob = MiqpProblem(variables, sp.csc_matrix((1, 1)), np.zeros(1), 0.0,
                           sp.csr_matrix((0, 1)), np.zeros(0), np.zeros(0))
        assert evaluate(prob, np.array([1.5]))[1] == pytest.approx(0.5)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            evaluate(_problem_min_square(), np.zeros(2))


class TestValidation:
    def test_negative_definite_rejected(self):
        with pytest.raises(ValueError, match="semidefinite|diagonal"):
            MiqpProblem([Variable(0)], sp.csc_matrix(np.array([[-1.0]])),
                        np.zeros(1), 0.0, sp.csr_matrix((0, 1)),
                        np.zeros(0), np.zeros(0))

    def test_indefinite_dense_block_rejected(self):
        P = sp.csc_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError, match="semidefinite"):
            MiqpProblem([Variable(0), Variable(1)], P, np.zeros(2), 0.0,
                        sp.csr_matrix((0, 2)), np.zeros(0), np.zeros(0))

    def test_asymmetric_rejected(self):
        P = sp.csc_matrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError, match="symmetric"):
            MiqpProblem([Variable(0), Variable(1)], P, np.zeros(2), 0.0,
                        sp.csr_matrix((0, 2)), np.zeros(0), np.zeros(0))

    def test_psd_dense_block_accepted(self):
        P = sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        MiqpProblem([Variable(0), Variable(1)], P, np.zeros(2), 0.0,
                    sp.csr_matrix((0, 2)), np.zeros(0), np.zeros(0))

    def test_binary_bounds_enforced(self):
        with pytest.raises(ValueError):
            Variable(0, BINARY, 0.0, 2.0)

    def test_bad_variable_order(self):
        with pytest.raises(ValueError):
            MiqpProblem([Variable(1)], sp.csc_matrix((1, 1)), np.zeros(1), 0.0,
                        sp.csr_matrix((0, 1)), np.zeros(0), np.zeros(0))

    def test_row_out_of_range(self):
        rows = RowBuilder(1)
        rows.add([5], [1.0], 0.0, 1.0)
        with pytest.raises(ValueError):
            rows.matrix()


class TestExportLp:
    def test_quadratic_block_doubles_coefficients(self, tmp_path):
        path = tmp_path / "m.lp"
        export_lp(_problem_min_square(), path)
        text = path.read_text()
        assert "[ 2 x ^ 2 ] / 2" in text
        assert "Minimize" in text and "Subject To" in text and "End" in text
        assert "c0_l: 1 x >= 1" in text

    def test_binaries_section(self, tmp_path):
        path = tmp_path / "m.lp"
        export_lp(_problem_min_square(binary_extra=True), path)
        text = path.read_text()
        assert "Binaries" in text
        assert "phi" in text.split("Binaries")[1]

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.lp", tmp_path / "b.lp"
        export_lp(_problem_min_square(binary_extra=True), a)
        export_lp(_problem_min_square(binary_extra=True), b)
        assert a.read_bytes() == b.read_bytes()

    def test_constant_becomes_fixed_variable(self, tmp_path):
        variables = [Variable(0, CONTINUOUS, 0.0, 1.0, "x")]
        prob = MiqpProblem(variables, sp.csc_matrix((1, 1)), np.array([1.0]), 7.0,
                           sp.csr_matrix((0, 1)), np.zeros(0), np.zeros(0))
        path = tmp_path / "c.lp"
        export_lp(prob, path)
        text = path.read_text()
        assert "objconst" in text
        assert "objconst = 1" in text

    def test_17_digit_floats(self, tmp_path):
        v = 0.1234567890123456789
        variables = [Variable(0, CONTINUOUS, -np.inf, np.inf, "x")]
        rows = RowBuilder(1)
        rows.add_sense([0], [v], "<=", 1.0)
        A, lo, up, kinds = rows.matrix()
        prob = MiqpProblem(variables, sp.csc_matrix((1, 1)), np.zeros(1), 0.0,
                           A, lo, up)
        path = tmp_path / "f.lp"
        export_lp(prob, path)
        assert repr(v)[:17] in path.read_text()
