"""Tests for the LP builder and both solver back ends."""

import io

import numpy as np
import pytest

from ems_guard.core.exceptions import DimensionMismatchError, EmsGuardError
from ems_guard.tools.lp import LinearProgram, get_backend_manager, solve

BACKENDS = ["highs", "simplex"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_maximize_single_bound(backend):
    lp = LinearProgram("max_x", "maximize")
    x = lp.add_variables("x", 1, 0.0, np.inf, 1.0)
    lp.add_constraint("cap", {int(x[0]): 1.0}, "<=", 3.0)
    solution = solve(lp, backend=backend)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(3.0)
    assert solution.binding_labels() == ["cap"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_minimize_covering_row(backend):
    lp = LinearProgram("cover")
    lp.add_variables("xy", 2, 0.0, np.inf, [1.0, 1.0])
    lp.add_constraint_block("sum", np.ones((1, 2)), ">=", 2.0)
    solution = solve(lp, backend=backend)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(2.0)
    assert solution.x.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_free_and_negative_bounds(backend):
    lp = LinearProgram("free")
    v = lp.add_variables("v", 2, [-np.inf, -5.0], [np.inf, -1.0], [1.0, -1.0])
    lp.add_constraint_block("link", np.array([[1.0, -1.0]]), "==", 4.0, columns=v)
    solution = solve(lp, backend=backend)
    assert solution.is_optimal
    # v0 = 4 + v1, objective 4 + v1 - v1 = 4 for every feasible v1
    assert solution.objective == pytest.approx(4.0)
    assert solution.x[0] - solution.x[1] == pytest.approx(4.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible(backend):
    lp = LinearProgram("infeasible")
    x = lp.add_variables("x", 1, 0.0, 1.0, 1.0)
    lp.add_constraint("floor", {int(x[0]): 1.0}, ">=", 2.0)
    solution = solve(lp, backend=backend)
    assert solution.status == "infeasible"
    assert solution.row_labels == ["floor"]


def test_unbounded_simplex():
    lp = LinearProgram("unbounded", "maximize")
    xy = lp.add_variables("xy", 2, 0.0, np.inf, [1.0, 0.0])
    lp.add_constraint_block("gap", np.array([[1.0, -1.0]]), "<=", 1.0, columns=xy)
    assert solve(lp, backend="simplex").status == "unbounded"


def test_unbounded_highs_is_not_optimal():
    lp = LinearProgram("unbounded", "maximize")
    xy = lp.add_variables("xy", 2, 0.0, np.inf, [1.0, 0.0])
    lp.add_constraint_block("gap", np.array([[1.0, -1.0]]), "<=", 1.0, columns=xy)
    assert not solve(lp, backend="highs").is_optimal


@pytest.mark.parametrize("seed", range(8))
def test_backends_agree_on_random_boxed_programs(seed):
    rng = np.random.default_rng(seed)
    n, m = 10, 6
    A = rng.uniform(-1.0, 2.0, (m, n))
    b = rng.uniform(5.0, 20.0, m)
    c = rng.normal(0.0, 1.0, n)

    def build() -> LinearProgram:
        lp = LinearProgram(f"random{seed}")
        lp.add_variables("x", n, 0.0, 10.0, c)
        lp.add_constraint_block("rows", A, "<=", b)
        lp.add_constraint_block("total", np.ones((1, n)), ">=", 1.0)
        return lp

    highs = solve(build(), backend="highs")
    simplex = solve(build(), backend="simplex")
    assert highs.is_optimal and simplex.is_optimal
    assert highs.objective == pytest.approx(simplex.objective, abs=1e-6)


def test_reported_objective_uses_original_sense():
    lp = LinearProgram("max", "maximize")
    lp.add_variables("x", 2, 0.0, [2.0, 3.0], [2.0, 1.0])
    solution = solve(lp, backend="highs")
    assert solution.objective == pytest.approx(7.0)
    assert solution.basis.at_upper == [0, 1]


def test_duplicate_variable_block():
    lp = LinearProgram()
    lp.add_variables("x", 2)
    with pytest.raises(ValueError, match="already declared"):
        lp.add_variables("x", 1)


def test_inverted_bounds():
    with pytest.raises(ValueError, match="exceeds upper bound"):
        LinearProgram().add_variables("x", 1, 2.0, 1.0)


def test_block_width_mismatch():
    lp = LinearProgram()
    lp.add_variables("x", 3)
    with pytest.raises(DimensionMismatchError):
        lp.add_constraint_block("rows", np.ones((1, 2)), "<=", 1.0)


def test_unknown_backend():
    with pytest.raises(EmsGuardError, match="not available"):
        get_backend_manager().get_backend("cplex")


def test_mps_export():
    lp = LinearProgram("export", "maximize")
    lp.add_variables("x", 3, [0.0, -np.inf, 1.0], [4.0, np.inf, 1.0], [1.0, 2.0, 0.0])
    lp.add_constraint_block("rows", np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]), "<=", [5.0, 0.0])
    stream = io.StringIO()
    lp.to_mps(stream)
    text = stream.getvalue()

    assert text.startswith("NAME          export\n")
    assert "* objective negated" in text
    for section in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"):
        assert f"\n{section}\n" in text or text.endswith(f"{section}\n")
    assert " L  R0000000" in text
    assert " UP BND       C0000000" in text
    assert " FR BND       C0000001" in text
    assert " FX BND       C0000002" in text
    # only the non-zero right-hand side is written
    assert "R0000001" not in text.split("RHS\n")[1].split("BOUNDS")[0]


def _covering_pair(seed: int):
    """A random covering LP and its packing dual."""
    rng = np.random.default_rng(seed)
    m, n = 5, 8
    A = rng.uniform(0.1, 2.0, (m, n))
    b = rng.uniform(1.0, 10.0, m)
    c = rng.uniform(1.0, 5.0, n)

    primal = LinearProgram(f"primal{seed}")
    primal.add_variables("x", n, 0.0, np.inf, c)
    primal.add_constraint_block("cover", A, ">=", b)

    dual = LinearProgram(f"dual{seed}", "maximize")
    dual.add_variables("y", m, 0.0, np.inf, b)
    dual.add_constraint_block("price", A.T, "<=", c)
    return A, b, c, primal, dual


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(5))
def test_weak_and_strong_duality(backend, seed):
    A, b, c, primal, dual = _covering_pair(seed)
    p = solve(primal, backend=backend)
    d = solve(dual, backend=backend)
    assert p.is_optimal and d.is_optimal
    assert d.objective <= p.objective + 1e-7
    assert d.objective == pytest.approx(p.objective, abs=1e-6)

    # any dual-feasible price vector bounds the primal from below
    r = np.random.default_rng(100 + seed).uniform(0.0, 1.0, len(b))
    y = r * np.min(c / (A.T @ r))
    assert np.all(A.T @ y <= c + 1e-12)
    assert b @ y <= p.objective + 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_reported_objective_matches_cost_vector(backend):
    _, _, _, primal, _ = _covering_pair(11)
    solution = solve(primal, backend=backend)
    assert solution.objective == pytest.approx(primal.objective_value(solution.x), abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_repeated_solves_are_identical(backend):
    _, _, _, first, _ = _covering_pair(3)
    _, _, _, second, _ = _covering_pair(3)
    a = solve(first, backend=backend)
    b = solve(second, backend=backend)
    assert np.array_equal(a.x, b.x)
    assert a.objective == b.objective
    assert a.basis == b.basis


def test_backend_statuses():
    manager = get_backend_manager()
    statuses = manager.get_all_statuses()
    assert set(statuses) == {"highs", "simplex"}
    assert all(s.status == "ready" and s.capabilities for s in statuses.values())
    assert sorted(manager.get_ready_backends()) == ["highs", "simplex"]


def test_unknown_backend_lists_ready_ones():
    with pytest.raises(EmsGuardError, match=r"ready: highs, simplex"):
        get_backend_manager().get_backend("cplex")
