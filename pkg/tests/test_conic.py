"""Conic solver against closed-form oracles and feasibility invariants."""

import numpy as np
import pytest
import scipy.sparse

from gpmkit import (
    ConeSpec,
    ConicProblem,
    SolverParams,
    assemble,
    presolve_eliminate_equalities,
    solve_conic,
    to_conic,
)
from gpmkit.conic import ConicError, _reduce_zero_diagonals, solve

from conftest import camel_problem


def sym_entry(n, i, j):
    """Row acting as the symmetrized unit functional on entry (i, j)."""
    E = np.zeros((n, n))
    E[i, j] += 0.5
    E[j, i] += 0.5
    return E.reshape(-1)


def test_trace_one_diagonal_objective():
    # min <diag(c), X> with tr X = 1 picks out the smallest c entry
    rng = np.random.default_rng(0)
    for _ in range(5):
        k = int(rng.integers(2, 5))
        d = rng.normal(size=k)
        c = np.diag(d).reshape(-1)
        A = np.eye(k).reshape(1, -1)
        problem = ConicProblem(
            A=A, b=np.array([1.0]), c=c, cone=ConeSpec(s=(k,))
        )
        sol = solve_conic(problem)
        assert sol.status == "solved"
        assert abs(sol.pobj - d.min()) < 1e-7
        assert abs(sol.dobj - d.min()) < 1e-7


def test_two_by_two_geometric_mean():
    # min X11 + X22 with X12 = 1: PSD forces X11*X22 >= 1, optimum 2
    A = sym_entry(2, 0, 1).reshape(1, -1)
    c = np.eye(2).reshape(-1)
    problem = ConicProblem(A=A, b=np.array([1.0]), c=c, cone=ConeSpec(s=(2,)))
    sol = solve_conic(problem)
    assert sol.status == "solved"
    assert abs(sol.pobj - 2.0) < 1e-7
    X = sol.x.reshape(2, 2)
    assert abs(X[0, 0] - 1.0) < 1e-5
    assert abs(X[0, 1] - 1.0) < 1e-5


def test_orthant_simplex_lp():
    rng = np.random.default_rng(1)
    c = rng.normal(size=6)
    A = np.ones((1, 6))
    problem = ConicProblem(A=A, b=np.array([1.0]), c=c, cone=ConeSpec(l=6))
    sol = solve_conic(problem)
    assert sol.status == "solved"
    assert abs(sol.pobj - c.min()) < 1e-7
    assert sol.x.min() > -1e-9


def random_feasible_sdp(rng):
    """Random cone problem with planted strictly feasible primal and dual."""
    l = int(rng.integers(0, 4))
    sizes = tuple(int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 3))))
    cone = ConeSpec(l=l, s=sizes)
    n = cone.total_length
    m = int(rng.integers(1, 7))

    rows = []
    for _ in range(m):
        parts = [rng.normal(size=l)]
        for k in sizes:
            S = rng.normal(size=(k, k))
            parts.append(((S + S.T) / 2).reshape(-1))
        rows.append(np.concatenate(parts))
    A = np.vstack(rows)

    def interior():
        parts = [rng.uniform(0.5, 1.5, size=l)]
        for k in sizes:
            G = rng.normal(size=(k, k))
            parts.append((G @ G.T + 0.5 * np.eye(k)).reshape(-1))
        return np.concatenate(parts)

    x0 = interior()
    z0 = interior()
    y0 = rng.normal(size=m)
    b = A @ x0
    c = A.T @ y0 + z0
    return ConicProblem(A=A, b=b, c=c, cone=cone), x0, y0


def in_cone_violation(cone, v):
    worst = 0.0
    if cone.l:
        worst = max(worst, float(-(v[: cone.l]).min(initial=0.0)))
    off = cone.l
    for k in cone.s:
        M = v[off : off + k * k].reshape(k, k)
        worst = max(worst, float(-np.linalg.eigvalsh((M + M.T) / 2).min()))
        off += k * k
    return worst


def test_random_sdp_duality_and_residuals():
    rng = np.random.default_rng(20240916)
    for case in range(50):
        problem, x0, y0 = random_feasible_sdp(rng)
        sol = solve_conic(problem, SolverParams(eps=1e-7))
        assert sol.status == "solved", (case, sol.status, sol.message)
        bscale = 1.0 + float(np.abs(problem.b).max())
        cscale = 1.0 + float(np.abs(problem.c).max())
        gap_scale = 1.0 + abs(sol.pobj) + abs(sol.dobj)
        # feasibility of the returned pair
        assert np.abs(problem.A @ sol.x - problem.b).max() < 1e-6 * bscale
        dres = problem.c - problem.A.T @ sol.y - sol.z
        assert np.abs(dres).max() < 1e-6 * cscale
        assert in_cone_violation(problem.cone, sol.x) < 1e-7
        assert in_cone_violation(problem.cone, sol.z) < 1e-7
        # weak duality, and the planted pair sandwiches the optimum
        assert sol.pobj - sol.dobj > -1e-6 * gap_scale
        assert sol.pobj < problem.c @ x0 + 1e-6 * gap_scale
        assert sol.dobj > problem.b @ y0 - 1e-6 * gap_scale
        assert abs(sol.pobj - sol.dobj) < 1e-6 * gap_scale


def test_infeasible_orthant():
    problem = ConicProblem(
        A=np.array([[1.0]]), b=np.array([-1.0]), c=np.array([1.0]),
        cone=ConeSpec(l=1),
    )
    sol = solve_conic(problem)
    assert sol.status == "infeasible"


def test_unbounded_direction():
    # x1 = x2 free along the diagonal with strictly decreasing objective
    problem = ConicProblem(
        A=np.array([[1.0, -1.0]]), b=np.array([0.0]),
        c=np.array([-1.0, 0.0]), cone=ConeSpec(l=2),
    )
    sol = solve_conic(problem)
    assert sol.status == "unbounded"


def test_solve_rejects_free_cone():
    problem = ConicProblem(
        A=np.array([[1.0, 1.0]]), b=np.array([1.0]),
        c=np.array([0.0, 1.0]), cone=ConeSpec(f=1, l=1),
    )
    with pytest.raises(ConicError):
        solve(problem)
    # the driver presolves the free column away instead
    sol = solve_conic(problem)
    assert sol.status == "solved"


def test_max_iter_validation():
    problem = ConicProblem(
        A=np.array([[1.0]]), b=np.array([1.0]), c=np.array([1.0]),
        cone=ConeSpec(l=1),
    )
    with pytest.raises(ConicError):
        solve(problem, SolverParams(max_iter=0))


def test_objective_value_sense_and_offset():
    problem = ConicProblem(
        A=np.eye(2), b=np.array([2.0, 3.0]), c=np.zeros(2),
        cone=ConeSpec(l=2), sense="max", offset=1.5,
    )
    y = np.array([1.0, 1.0])
    assert problem.objective_value(y) == pytest.approx(1.5 + 5.0)
    problem.sense = "min"
    assert problem.objective_value(y) == pytest.approx(1.5 - 5.0)


def presolve_invariants(problem, res):
    nf = problem.cone.f
    Af = np.asarray(scipy.sparse.csc_matrix(problem.A)[:, :nf].todense())
    assert np.abs(Af.T @ res.y0 - problem.c[:nf]).max() < 1e-9
    if res.N.shape[1]:
        assert np.abs(Af.T @ res.N).max() < 1e-9


def test_presolve_substitution_chain():
    # four equality rows: a pin, an alias onto the pin, an alias chain
    # and one row left for the reduced problem
    A = np.array([
        [2.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
    ])
    c = np.array([4.0, 5.0, 1.0, 0.5, 1.0, 1.0])
    b = np.array([1.0, 1.0, 1.0, 1.0])
    problem = ConicProblem(A=A, b=b, c=c, cone=ConeSpec(f=4, l=2))
    res = presolve_eliminate_equalities(problem)
    assert res.status == "ok"
    assert res.n_eliminated == 4
    assert res.problem.cone.f == 0
    assert res.problem.cone.l == 2
    # y0
    assert res.y0[0] == pytest.approx(2.0)  # 2 y1 = 4
    assert res.y0[1] == pytest.approx(3.0)  # y1 + y2 = 5
    assert res.y0[2] == pytest.approx(2.0)  # y2 - y3 = 1
    assert res.y0[3] == pytest.approx(0.5)  # y4 = 0.5
    assert res.N.shape == (4, 0)
    presolve_invariants(problem, res)


def test_presolve_leaves_coupled_rows_to_svd():
    rng = np.random.default_rng(5)
    m, nf, nl = 5, 3, 4
    Af = rng.normal(size=(m, nf))
    Al = rng.normal(size=(m, nl))
    ytrue = rng.normal(size=m)
    A = np.hstack([Af, Al])
    c = np.concatenate([Af.T @ ytrue, rng.uniform(1.0, 2.0, nl)])
    problem = ConicProblem(A=A, b=rng.normal(size=m), c=c,
                           cone=ConeSpec(f=nf, l=nl))
    res = presolve_eliminate_equalities(problem)
    assert res.status == "ok"
    assert res.problem.m == m - nf  # three independent dense rows
    assert res.N.shape == (m, m - nf)
    presolve_invariants(problem, res)
    # the reduced objective agrees with the original on the whole set
    t = rng.normal(size=res.problem.m)
    y = res.y0 + res.N @ t
    assert res.problem.objective_value(t) == pytest.approx(
        problem.objective_value(y)
    )


def test_presolve_inconsistent_rows():
    # two pins on the same dual variable with different values
    A = np.array([[2.0, 1.0, 1.0]])
    c = np.array([4.0, 1.0, 1.0])
    problem = ConicProblem(A=A, b=np.array([1.0]), c=c,
                           cone=ConeSpec(f=2, l=1))
    res = presolve_eliminate_equalities(problem)
    assert res.status == "infeasible"
    assert res.residual > 0.5


def test_presolve_consistent_duplicates():
    A = np.array([[2.0, 1.0, 1.0]])
    c = np.array([4.0, 2.0, 1.0])
    problem = ConicProblem(A=A, b=np.array([1.0]), c=c,
                           cone=ConeSpec(f=2, l=1))
    res = presolve_eliminate_equalities(problem)
    assert res.status == "ok"
    assert res.y0[0] == pytest.approx(2.0)


def test_presolve_then_solve_matches_direct():
    # eliminate one equality and check the lifted solve agrees with
    # the closed form: min x2 + x3 on x2 + x3 = 1 shifted by the pin
    A = np.array([
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 1.0],
    ])
    c = np.array([3.0, 1.0, 1.0])
    b = np.array([0.0, 1.0])
    problem = ConicProblem(A=A, b=b, c=c, cone=ConeSpec(f=1, l=2))
    sol = solve_conic(problem)
    assert sol.status == "solved"
    assert sol.y[0] == pytest.approx(3.0)  # pinned by the free column
    assert np.abs(problem.A @ sol.x - b).max() < 1e-7


def test_facial_reduction_zero_diagonal():
    # dual slacks: z_l = -y1 - y2, Z00 = y1, Z11 = y2.  Their sum is
    # identically zero, so all three are certified zero on the dual set
    # and the interior-point iteration only sees the reduced problem
    A = np.zeros((2, 5))
    A[:, 0] = [1.0, 1.0]   # orthant slack
    A[:, 1] = [-1.0, 0.0]  # Z00
    A[:, 4] = [0.0, -1.0]  # Z11
    c = np.zeros(5)
    b = np.zeros(2)
    problem = ConicProblem(A=A, b=b, c=c, cone=ConeSpec(l=1, s=(2,)))
    red = _reduce_zero_diagonals(problem)
    assert red is not None
    sol = solve_conic(problem)
    assert sol.status == "solved"
    assert abs(sol.pobj) < 1e-8
    # the dual set is the single point y = 0
    assert np.abs(sol.y).max() < 1e-8


def test_no_facial_reduction_with_interior():
    problem = ConicProblem(
        A=np.eye(4).reshape(1, -1), b=np.array([1.0]),
        c=np.arange(4.0), cone=ConeSpec(s=(2,)),
    )
    assert _reduce_zero_diagonals(problem) is None


def test_point_mass_support_solves():
    # squeeze a measure to the origin: x'x <= 0 forces a rank-one
    # moment matrix with zero diagonals, solvable only after reduction
    from gpmkit import GPMProblem, ModelContext, minimize, mom, solve_gpm

    ctx = ModelContext()
    x = ctx.vars("x", 2)
    problem = GPMProblem(
        minimize(mom(1 + x[0] + x[1])),
        [x[0] ** 2 + x[1] ** 2 <= 0],
    )
    sol = solve_gpm(problem)
    assert sol.status == 1
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    points, weights = sol.support(1)
    assert np.abs(points).max() < 1e-6


def test_to_conic_camel_shape():
    ctx, problem = camel_problem()
    msdp = assemble(problem, 3)
    conic = to_conic(msdp)
    assert conic.m == 27
    assert conic.cone.f == 0
    assert conic.cone.l == 0
    assert conic.cone.s == (10,)
    sol = solve_conic(conic)
    assert sol.status == "solved"
    assert conic.objective_value(sol.y) == pytest.approx(-1.0316, abs=1e-3)
