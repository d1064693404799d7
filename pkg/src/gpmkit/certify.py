"""Optimality certificates and support extraction.

A relaxation is exact when the moment matrix satisfies the flat
extension condition rank M_r = rank M_{r-v}, with v the half-degree of
the deepest inequality on the measure (v = 1 when unconstrained).  The
moment vector is then the moment vector of a discrete measure, whose
atoms are recovered from a column echelon factorization of the moment
matrix: the pivot monomials index a basis on which multiplication by
each variable acts as a matrix, and the atoms are read off the shared
Schur vectors of a random combination of those operators.  Weights are
recovered by nonnegative least squares against the moment vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .conic import (
    SolverParams,
    _partial_trace_cleanup,
    _trace_restriction,
    solve_conic,
    to_conic,
)
from .model import ModelError
from .polynomials import Monomial
from .relaxation import assemble, mmat_values


def numeric_rank(matrix, tol=1e-3):
    """Rank by singular values above tol times the largest."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    svals = scipy.linalg.svdvals(matrix)
    if svals[0] == 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


@dataclass
class FlatnessResult:
    """Rank pattern of one measure's moment matrix."""

    flat: bool
    rank: int
    rank_shifted: int
    v: int
    ranks_by_degree: dict


def _inequality_halfdegree(msdp, measure):
    v = 1
    for con in msdp.problem.support_constraints:
        if con.rel != "==" and con.measure is measure:
            v = max(v, math.ceil(con.gform().degree / 2))
    return v


def _moment_block(msdp, measure):
    for block in msdp.blocks:
        if block.kind == "moment" and block.measure is measure:
            return block
    raise ModelError(f"no moment matrix for measure {measure.label}")


def check_flatness(msdp, y, measure, tol=1e-3):
    """Evaluate the flat extension condition at the solution y."""
    measure = _as_measure(msdp, measure)
    block = _moment_block(msdp, measure)
    M = mmat_values(msdp, y, measure)
    v = _inequality_halfdegree(msdp, measure)
    degrees = [mono.degree for mono in block.basis]
    ranks = {}
    for d in range(msdp.order + 1):
        keep = [i for i, deg in enumerate(degrees) if deg <= d]
        ranks[d] = numeric_rank(M[np.ix_(keep, keep)], tol)
    rank = ranks[msdp.order]
    rank_shifted = ranks[max(msdp.order - v, 0)]
    return FlatnessResult(
        flat=rank == rank_shifted,
        rank=rank,
        rank_shifted=rank_shifted,
        v=v,
        ranks_by_degree=ranks,
    )


@dataclass
class ExtractionResult:
    """Atoms of one measure recovered from its moment matrix."""

    success: bool
    points: np.ndarray = None
    weights: np.ndarray = None
    rank: int = 0
    residual: float = 0.0
    message: str = ""


def _column_echelon(V):
    """Column echelon form of V preferring low-degree pivot rows.

    Rows are ordered by graded lexicographic degree already; for each
    column the pivot is the first remaining row whose entry is within
    a relative tolerance of the column maximum.  Returns the reduced
    matrix R (with R[pivots] = I) and the pivot row indices.
    """
    U = np.array(V, dtype=float)
    q, rho = U.shape
    pivots = []
    for c in range(rho):
        col = np.abs(U[:, c])
        col[pivots] = 0.0
        if col.max() == 0.0:
            return None, None
        threshold = 1e-4 * col.max()
        candidates = np.nonzero(col > threshold)[0]
        r = int(candidates[0])
        pivots.append(r)
        U[:, c] /= U[r, c]
        for c2 in range(rho):
            if c2 != c:
                U[:, c2] -= U[r, c2] * U[:, c]
    return U, pivots


def extract_points(msdp, y, measure, tol=1e-3, seed=0):
    """Recover the atoms of a measure from its moment matrix at y.

    Requires the flatness rank as the factorization order.  Returns
    points with one atom per row (coordinates in the measure's variable
    order) and their weights.  Extraction can legitimately fail when
    the moment matrix is not the moment matrix of a measure; the result
    then reports success=False rather than raising.
    """
    measure = _as_measure(msdp, measure)
    block = _moment_block(msdp, measure)
    M = mmat_values(msdp, y, measure)
    flat = check_flatness(msdp, y, measure, tol)
    rho = flat.rank_shifted
    if rho == 0:
        return ExtractionResult(success=False, message="moment matrix is zero")

    evals, evecs = scipy.linalg.eigh(M)
    idx = np.argsort(evals)[::-1][:rho]
    lead = np.clip(evals[idx], 0.0, None)
    V = evecs[:, idx] * np.sqrt(lead)

    R, pivots = _column_echelon(V)
    if R is None:
        return ExtractionResult(success=False, message="rank-deficient factorization")
    basis_pos = {mono: i for i, mono in enumerate(block.basis)}
    pivot_monos = [block.basis[i] for i in pivots]

    def coords_of(poly):
        """Coordinates of a reduced polynomial in the pivot basis."""
        row = np.zeros(rho)
        for mono, coeff in poly.terms.items():
            pos = basis_pos.get(mono)
            if pos is None:
                return None
            row += coeff * R[pos]
        return row

    operators = []
    for var in measure.vars:
        N = np.zeros((rho, rho))
        for j, w in enumerate(pivot_monos):
            shifted = w.mul(Monomial(((var, 1),)))
            reduced = msdp.index.reduce(measure, shifted)
            row = coords_of(reduced)
            if row is None:
                return ExtractionResult(
                    success=False,
                    message=f"monomial {shifted!r} leaves the truncated basis",
                )
            N[j] = row
        operators.append(N)

    rng = np.random.default_rng(seed)
    for _ in range(3):
        lam = rng.standard_normal(len(operators))
        lam /= np.linalg.norm(lam)
        combined = sum(l * N for l, N in zip(lam, operators))
        T, Q = scipy.linalg.schur(np.asarray(combined), output="real")
        sub = np.abs(np.diag(T, -1)).max() if rho > 1 else 0.0
        if sub > tol * max(1.0, np.abs(T).max()):
            continue  # complex eigenvalues: try another combination
        points = np.zeros((rho, len(operators)))
        for k, N in enumerate(operators):
            points[:, k] = np.einsum("ij,jk,ki->i", Q.T, N, Q)
        # weights by nonnegative least squares on the basis moments
        Phi = np.zeros((len(block.basis), rho))
        for i, mono in enumerate(block.basis):
            for j in range(rho):
                Phi[i, j] = mono.eval(dict(zip(measure.vars, points[j])))
        target = M[:, 0]
        weights, residual = scipy.optimize.nnls(Phi, target)
        scale = 1.0 + float(np.linalg.norm(target))
        if residual <= max(math.sqrt(tol), 1e-3) * scale:
            return ExtractionResult(
                success=True,
                points=points,
                weights=weights,
                rank=rho,
                residual=residual,
            )
    return ExtractionResult(
        success=False,
        rank=rho,
        message="no consistent atomic measure found",
    )


@dataclass
class Certificate:
    """Flatness and extraction outcome for every measure of a problem."""

    certified: bool
    flatness: dict
    extractions: dict
    objective_mismatch: float = 0.0
    infeasibility: float = 0.0


def certify(msdp, y, tol=1e-3, feas_tol=1e-4, seed=0):
    """Check flatness, extract atoms and verify them on all measures.

    Certification requires every measure flat, extraction successful,
    all extracted points feasible for their support constraints and the
    objective recomputed from the atoms to match the SDP objective.
    """
    flatness = {}
    extractions = {}
    certified = True
    for measure in msdp.problem.measures:
        flat = check_flatness(msdp, y, measure, tol)
        flatness[measure.label] = flat
        if not flat.flat:
            certified = False
            continue
        ext = extract_points(msdp, y, measure, tol, seed)
        extractions[measure.label] = ext
        if not ext.success:
            certified = False
    if not certified:
        return Certificate(False, flatness, extractions)

    infeas = 0.0
    for con in msdp.problem.support_constraints:
        ext = extractions[con.measure.label]
        g = con.gform()
        for point in ext.points:
            value = g.eval(dict(zip(con.measure.vars, point)))
            violation = abs(value) if con.rel == "==" else max(0.0, -value)
            infeas = max(infeas, violation / (1.0 + abs(value)))

    expr = msdp.problem.objective.expr
    recomputed = expr.constant
    for measure, poly in expr.terms_by_label():
        ext = extractions[measure.label]
        for point, weight in zip(ext.points, ext.weights):
            recomputed += weight * poly.eval(dict(zip(measure.vars, point)))
    sdp_objective = msdp.objective.value(y)
    mismatch = abs(recomputed - sdp_objective) / (1.0 + abs(sdp_objective))
    certified = infeas <= feas_tol and mismatch <= feas_tol
    return Certificate(certified, flatness, extractions, mismatch, infeas)


@dataclass
class GPMSolution:
    """Outcome of solving a problem through its moment relaxation.

    status 1: the relaxation is exact, optimal measures were extracted
    and stored on the measures themselves.  status 0: the SDP was
    solved but exactness was not certified, so objective is only a
    bound.  status -1: the SDP could not be solved (infeasible,
    unbounded or numerical failure) and objective is None.
    """

    status: int
    objective: object
    order: int
    msdp: object
    conic: object
    certificate: object = None
    moments: dict = field(default_factory=dict)

    def support(self, label):
        for measure in self.msdp.problem.measures:
            if measure.label == label:
                if measure.support_points is None:
                    raise ModelError("measure has no discrete support")
                return measure.support_points, measure.weights
        raise ModelError(f"no measure with label {label}")


def solve_gpm(problem, order=None, params=None, tol=1e-3, seed=0):
    """Assemble, solve and certify the moment relaxation of a problem.

    Returns a GPMSolution; on certification the extracted supports are
    stored into the measures, so eval_on_support reads the minimizers
    directly.  Moment vectors are stored on the measures whenever the
    SDP was solved.
    """
    params = params or SolverParams()
    msdp = assemble(problem, order)
    conic = to_conic(msdp)
    sol = solve_conic(conic, params)
    if sol.status in ("infeasible", "unbounded", "failed"):
        return GPMSolution(
            status=-1, objective=None, order=msdp.order, msdp=msdp, conic=sol
        )
    y = sol.y
    objective = conic.objective_value(y)
    cert = certify(msdp, y, tol=tol, seed=seed)
    if not cert.certified and conic.cone.s:
        y, cert = _recenter(msdp, conic, sol, y, objective, cert, params, tol, seed)
    moments = {}
    for measure in msdp.problem.measures:
        values = {}
        for mono in msdp.index.raw[measure]:
            values[mono] = msdp.index.form_of_monomial(measure, mono).value(y)
        measure.moments = values
        moments[measure.label] = values
    status = 1 if cert.certified else 0
    if cert.certified:
        for measure in msdp.problem.measures:
            ext = cert.extractions[measure.label]
            measure.set_support(ext.points, ext.weights)
    return GPMSolution(
        status=status,
        objective=objective,
        order=msdp.order,
        msdp=msdp,
        conic=sol,
        certificate=cert,
        moments=moments,
    )


def _recenter(msdp, conic, sol, y, objective, cert, params, tol, seed):
    """Re-center a solved point on the optimal face to expose flatness.

    Top-degree moments only appear on the moment matrix diagonal, so on
    a degenerate face the solver can inflate them without cost.  First
    recompute them as a minimal flat extension of the converged lower
    moments (pinned in a small box); if that fails, fall back to plain
    trace minimization, which may merge atoms but stays optimal.
    """
    bound = float(conic.b @ y)
    reparams = SolverParams(
        eps=max(params.eps, 1e-7),
        max_iter=params.max_iter,
        step_fraction=params.step_fraction,
        reg_floor=params.reg_floor,
    )
    drift_tol = max(1e-5 * (1.0 + abs(objective)), 1e3 * abs(sol.gap))

    def attempt(restricted):
        centered = solve_conic(restricted, reparams)
        if not np.all(np.isfinite(centered.y)):
            return None
        if abs(conic.objective_value(centered.y) - objective) > drift_tol:
            return None
        # solver status on the sliver-thin face does not matter:
        # certification itself validates the centered point
        recert = certify(msdp, centered.y, tol=tol, seed=seed)
        return (centered.y, recert) if recert.certified else None

    low = 2 * msdp.order - 2
    pins = [
        (k, float(y[k]))
        for k, (_, mono) in enumerate(msdp.index.var_meaning)
        if mono.degree <= low
    ]
    positions = _top_diagonal_positions(msdp, conic)
    if pins and positions:
        for rel in (1e-7, 1e-5):
            taus = np.array([max(10.0 * abs(sol.gap), rel * (1.0 + abs(v)))
                             for _, v in pins])
            slack = max(10.0 * abs(sol.gap), rel * (1.0 + abs(bound)))
            got = attempt(_partial_trace_cleanup(
                conic, pins, taus, bound, slack, positions
            ))
            if got:
                return got
    for rel in (1e-8, 1e-6):
        slack = max(10.0 * abs(sol.gap), rel * (1.0 + abs(bound)))
        got = attempt(_trace_restriction(conic, bound, slack))
        if got:
            return got
    return y, cert


def _top_diagonal_positions(msdp, conic):
    """x positions of top-degree moment-block diagonal entries."""
    off = conic.cone.f + conic.cone.l
    out = []
    for block in msdp.blocks:
        size = block.size
        if block.kind == "moment":
            for i, mono in enumerate(block.basis):
                if mono.degree == msdp.order:
                    out.append(off + i * (size + 1))
        off += size * size
    return out


def _as_measure(msdp, measure):
    if isinstance(measure, int):
        for m in msdp.index.measures:
            if m.label == measure:
                return m
        raise ModelError(f"no measure with label {measure}")
    return measure
