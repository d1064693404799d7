"""Conic form and a primal-dual interior-point solver.

Problems are stored in the standard primal form

    min c'x   s.t.  A x = b,  x in K,

with K a product of a free cone (dimension f), a nonnegative orthant
(dimension l) and dense symmetric PSD blocks (orders s).  The moments
of a relaxation are the dual variables y, and the dual slacks
z = c - A'y carry the moment and localizing matrices, so a moment SDP
converts with one column per scalar or matrix entry constraint.

Equality rows on the moments enter as free-cone columns and must be
eliminated by presolve before solving: the solver handles l and s cones
only.  Presolve parameterizes the affine solution set as y = y0 + N t
and rewrites the problem over t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg


class ConicError(ValueError):
    """Invalid conic problem or conversion."""


@dataclass(frozen=True)
class ConeSpec:
    """Dimensions of the cone product: free, orthant, PSD block orders."""

    f: int = 0
    l: int = 0
    s: tuple = ()

    @property
    def total_length(self):
        return self.f + self.l + sum(k * k for k in self.s)

    @property
    def barrier_degree(self):
        return self.l + sum(self.s)


@dataclass
class ConicProblem:
    """min c'x s.t. Ax = b, x in K; moments are the dual variables y.

    ``sense`` and ``offset`` recover the original objective: the source
    problem's optimum is offset - b'y for a minimization and
    offset + b'y for a maximization.
    """

    A: object
    b: np.ndarray
    c: np.ndarray
    cone: ConeSpec
    sense: str = "min"
    offset: float = 0.0

    @property
    def m(self):
        return self.b.shape[0]

    @property
    def n(self):
        return self.c.shape[0]

    def objective_value(self, y):
        by = float(self.b @ y)
        return self.offset + (by if self.sense == "max" else -by)


@dataclass
class SolverParams:
    """Interior-point settings; eps is the termination tolerance."""

    eps: float = 1e-9
    max_iter: int = 100
    step_fraction: float = 0.98
    reg_floor: float = 1e-12
    verbose: bool = False


@dataclass
class ConicSolution:
    """Solver outcome: iterates, residuals and a status string.

    status is one of 'solved', 'inaccurate', 'infeasible', 'unbounded',
    'failed'.  'infeasible' means no x satisfies the constraints (the
    dual objective diverges); 'unbounded' means c'x is unbounded below.
    history rows are (pobj, dobj, pinf, dinf, gap) per iteration.
    """

    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    pobj: float
    dobj: float
    pinf: float
    dinf: float
    gap: float
    iterations: int
    history: list = field(default_factory=list)
    message: str = ""


def to_conic(msdp):
    """Convert an assembled moment SDP to primal conic form.

    Equality rows become free columns with z = -(row value), inequality
    rows orthant columns with z = row value, and each symmetric block
    B(y) a PSD slack Z = C - sum_k y_k A_k with C the constant part of
    B and A_k minus its coefficient matrices.
    """
    m = msdp.n_vars
    rows, cols, vals = [], [], []
    cvals = []
    col = 0

    def add_column(form, negate):
        nonlocal col
        sign = -1.0 if negate else 1.0
        for idx, coef in form.coeffs.items():
            rows.append(idx)
            cols.append(col)
            vals.append(sign * coef)
        cvals.append(-sign * form.const)
        col += 1

    for form in msdp.lin_eq:
        add_column(form, negate=False)
    for form in msdp.lin_ineq:
        add_column(form, negate=True)
    block_sizes = []
    for block in msdp.blocks:
        size = block.size
        block_sizes.append(size)
        base = col
        centries = np.zeros((size, size))
        for i, j, form in block.entries:
            centries[i, j] = centries[j, i] = form.const
            for idx, coef in form.coeffs.items():
                rows.append(idx)
                cols.append(base + i * size + j)
                vals.append(-coef)
                if i != j:
                    rows.append(idx)
                    cols.append(base + j * size + i)
                    vals.append(-coef)
        cvals.extend(centries.reshape(-1).tolist())
        col += size * size

    n = col
    A = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(m, n), dtype=float
    )
    obj = np.zeros(m)
    for idx, coef in msdp.objective.coeffs.items():
        obj[idx] = coef
    sense = msdp.sense
    b = obj if sense == "max" else -obj
    cone = ConeSpec(f=len(msdp.lin_eq), l=len(msdp.lin_ineq), s=tuple(block_sizes))
    return ConicProblem(
        A=A, b=b, c=np.asarray(cvals), cone=cone, sense=sense, offset=msdp.objective.const
    )


def _trace_restriction(problem, bound, slack):
    """Minimize total PSD slack trace subject to b'y >= bound - slack.

    Re-centers a solved problem on its optimal face: when the face is
    degenerate the solver may land on a high-rank point, and trace
    minimization is the standard heuristic to recover a low-rank one.
    """
    cone = problem.cone
    m = problem.m
    b2 = np.zeros(m)
    off = cone.f + cone.l
    for size in cone.s:
        diag = [off + d * (size + 1) for d in range(size)]
        b2 += np.asarray(problem.A[:, diag].sum(axis=1)).ravel()
        off += size * size
    return _restricted(problem, b2, [], 0.0, bound, slack)


def _partial_trace_cleanup(problem, pins, taus, bound, slack, positions):
    """Box-pin selected duals and minimize part of the slack trace.

    pins are (dual index, value) pairs held within +-tau; positions are
    x indices whose slack entries form the trace objective.  Used to
    recompute drifting high-degree moments as a minimal flat extension
    of the converged low-degree ones.
    """
    b2 = np.asarray(problem.A[:, positions].sum(axis=1)).ravel()
    return _restricted(problem, b2, pins, taus, bound, slack)


def _restricted(problem, b2, pins, taus, bound, slack):
    cone = problem.cone
    m = problem.m
    split = cone.f + cone.l
    rows = list(np.nonzero(problem.b)[0])
    cols = [0] * len(rows)
    vals = [-problem.b[k] for k in rows]
    cvals = [slack - bound]
    col = 1
    for idx, (k, val) in enumerate(pins):
        tau = taus[idx] if np.ndim(taus) else taus
        rows.extend((k, k))
        cols.extend((col, col + 1))
        vals.extend((1.0, -1.0))
        cvals.extend((val + tau, tau - val))
        col += 2
    extra = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(m, col), dtype=float
    )
    A = scipy.sparse.hstack(
        [problem.A[:, :split], extra, problem.A[:, split:]], format="csr"
    )
    c = np.concatenate([problem.c[:split], cvals, problem.c[split:]])
    new_cone = ConeSpec(f=cone.f, l=cone.l + col, s=cone.s)
    return ConicProblem(A=A, b=b2, c=c, cone=new_cone, sense="min", offset=0.0)


@dataclass
class PresolveResult:
    """Outcome of equality elimination.

    When status is 'ok', ``problem`` has no free cone and original
    moments are recovered as y = y0 + N t from the reduced dual t.
    When status is 'infeasible' the equality rows are contradictory and
    ``residual`` reports the violation.
    """

    problem: object
    y0: np.ndarray
    N: object
    status: str
    residual: float = 0.0
    n_eliminated: int = 0


def presolve_eliminate_equalities(problem, tol=1e-9):
    """Eliminate free-cone columns (equality rows on the moments).

    Stage 1 resolves singleton rows (pins) and homogeneous-or-not
    doubleton rows (affine aliases) by substitution, which covers the
    bulk of substitution-style equalities cheaply.  Stage 2 applies a
    rank-revealing SVD to whatever dense coupling remains.

    Substitution chains can lose precision through cancellation, so the
    result is verified against every equality row; on failure the rows
    are resolved in one SVD pass instead.
    """
    res = _presolve_pass(problem, tol, substitute=True)
    if res.status != "ok" or problem.cone.f == 0:
        return res
    scale = 1.0 + float(np.abs(problem.c[: problem.cone.f]).max(initial=0.0))
    if _presolve_residual(problem, res) <= 1e-12 * scale:
        return res
    res2 = _presolve_pass(problem, tol, substitute=False)
    if res2.status == "ok" and _presolve_residual(problem, res2) < _presolve_residual(problem, res):
        return res2
    return res


def _presolve_residual(problem, res):
    """Worst violation of the equality rows by the y = y0 + N t set."""
    nf = problem.cone.f
    Af = scipy.sparse.csc_matrix(problem.A)[:, :nf]
    r0 = float(np.abs(Af.T @ res.y0 - problem.c[:nf]).max(initial=0.0))
    AfN = Af.T @ res.N
    r1 = float(np.abs(AfN.toarray() if scipy.sparse.issparse(AfN) else AfN).max(initial=0.0))
    return max(r0, r1)


def _presolve_pass(problem, tol, substitute):
    m = problem.m
    nf = problem.cone.f
    A = scipy.sparse.csc_matrix(problem.A)
    rows = []
    for col in range(nf):
        start, end = A.indptr[col], A.indptr[col + 1]
        coeffs = dict(zip(A.indices[start:end], A.data[start:end]))
        rows.append((coeffs, float(problem.c[col])))

    # affine resolution state: y_i = shift_i + scale_i * y_root(i)
    parent = list(range(m))
    scale = np.ones(m)
    shift = np.zeros(m)
    pinned = {}

    def find(i):
        if parent[i] == i:
            return i, 1.0, 0.0
        root, a, b = find(parent[i])
        a2 = scale[i] * a
        b2 = shift[i] + scale[i] * b
        parent[i], scale[i], shift[i] = root, a2, b2
        return root, a2, b2

    def resolve_row(coeffs, rhs):
        out = {}
        const = -rhs
        for i, c in coeffs.items():
            root, a, b = find(i)
            const += c * b
            if root in pinned:
                const += c * a * pinned[root]
            else:
                out[root] = out.get(root, 0.0) + c * a
        return {i: c for i, c in out.items() if c != 0.0}, const

    pending = rows
    leftovers = []
    infeasible_residual = 0.0
    rounds = m + len(rows) + 1 if substitute else 0
    for _ in range(rounds):
        next_pending = []
        changed = False
        for coeffs, rhs in pending:
            red, const = resolve_row(coeffs, rhs)
            # row now reads: sum red[i] * y_i + const = 0
            if not red:
                if abs(const) > tol:
                    infeasible_residual = max(infeasible_residual, abs(const))
                continue
            if len(red) == 1:
                (i, c), = red.items()
                pinned[i] = -const / c
                changed = True
                continue
            if len(red) == 2:
                (i, ci), (j, cj) = sorted(red.items())
                # alias the higher index: y_j = -const/cj - (ci/cj) y_i
                parent[j] = i
                scale[j] = -ci / cj
                shift[j] = -const / cj
                changed = True
                continue
            next_pending.append((coeffs, rhs))
        pending = next_pending
        if not changed:
            break
    if infeasible_residual > tol:
        return PresolveResult(
            problem=None, y0=None, N=None, status="infeasible",
            residual=infeasible_residual, n_eliminated=nf,
        )
    for coeffs, rhs in pending:
        red, const = resolve_row(coeffs, rhs)
        if not red:
            if abs(const) > tol:
                return PresolveResult(
                    problem=None, y0=None, N=None, status="infeasible",
                    residual=abs(const), n_eliminated=nf,
                )
            continue
        leftovers.append((red, const))

    roots = [i for i in range(m) if find(i)[0] == i and i not in pinned]
    root_pos = {i: k for k, i in enumerate(roots)}

    if leftovers:
        E = np.zeros((len(leftovers), len(roots)))
        e = np.zeros(len(leftovers))
        for k, (red, const) in enumerate(leftovers):
            for i, c in red.items():
                E[k, root_pos[i]] = c
            e[k] = -const
        yp, *_ = np.linalg.lstsq(E, e, rcond=None)
        # refine: one lstsq pass on an ill-conditioned consistent system
        # leaves a residual near eps*cond(E), which pollutes recovered moments
        for _ in range(2):
            yp = yp + np.linalg.lstsq(E, e - E @ yp, rcond=None)[0]
        residual = float(np.linalg.norm(E @ yp - e))
        if residual > tol * (1.0 + np.linalg.norm(e)):
            return PresolveResult(
                problem=None, y0=None, N=None, status="infeasible",
                residual=residual, n_eliminated=nf,
            )
        _, svals, Vt = np.linalg.svd(E)
        rank = int(np.sum(svals > max(E.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)))
        N2 = Vt[rank:].T
    else:
        yp = np.zeros(len(roots))
        N2 = np.eye(len(roots))

    mt = N2.shape[1]
    y0 = np.zeros(m)
    Nrows, Ncols, Nvals = [], [], []
    for i in range(m):
        root, a, bshift = find(i)
        if root in pinned:
            y0[i] = bshift + a * pinned[root]
            continue
        k = root_pos[root]
        y0[i] = bshift + a * yp[k]
        for t in range(mt):
            v = a * N2[k, t]
            if v != 0.0:
                Nrows.append(i)
                Ncols.append(t)
                Nvals.append(v)
    N = scipy.sparse.csr_matrix((Nvals, (Nrows, Ncols)), shape=(m, mt))

    keep = np.arange(nf, problem.n)
    A_rest = scipy.sparse.csc_matrix(problem.A)[:, keep].tocsr()
    A_red = (N.T @ A_rest).tocsr()
    c_red = np.asarray(problem.c[keep] - A_rest.T @ y0)
    b_red = np.asarray(N.T @ problem.b)
    by0 = float(problem.b @ y0)
    offset = problem.offset + (by0 if problem.sense == "max" else -by0)
    reduced = ConicProblem(
        A=A_red,
        b=b_red,
        c=c_red,
        cone=ConeSpec(f=0, l=problem.cone.l, s=problem.cone.s),
        sense=problem.sense,
        offset=offset,
    )
    return PresolveResult(
        problem=reduced, y0=y0, N=N, status="ok", n_eliminated=nf
    )


@dataclass
class _Reduction:
    """Facial reduction data: which slack positions were certified zero."""

    problem: ConicProblem
    kept_l: list
    kept_s: list
    added: list


def _reduce_zero_diagonals(problem):
    """Shrink cones along slacks that vanish on the whole dual set.

    A measure squeezed to a point mass (support like x'x <= 0) pins
    moment matrix diagonals at zero, so the dual cone has empty interior
    and the interior-point iteration cannot converge.  A nonnegative
    combination of orthant and psd-diagonal slack functionals that is
    identically zero certifies each participating slack as zero; the
    certified psd rows/cols are deleted and every deleted entry of
    c - A'y is pinned by a new equality column.  Returns None when no
    certificate exists.
    """
    cone = problem.cone
    if not cone.s:
        return None
    A = scipy.sparse.csc_matrix(problem.A)
    cols = []
    kinds = []
    for p in range(cone.l):
        cols.append(cone.f + p)
        kinds.append(("l", p))
    off = cone.f + cone.l
    for j, size in enumerate(cone.s):
        for d in range(size):
            cols.append(off + d * (size + 1))
            kinds.append(("s", j, d))
        off += size * size
    if not cols:
        return None
    # equality functionals (free columns) hold identically on the dual
    # set, so they may enter the certificate with free sign
    pick = cols + list(range(cone.f))
    A_eq = scipy.sparse.vstack(
        [A[:, pick], scipy.sparse.csr_matrix(problem.c[pick])], format="csc"
    )
    ncand = len(cols)
    res = scipy.optimize.linprog(
        c=np.concatenate([-np.ones(ncand), np.zeros(cone.f)]),
        A_eq=A_eq,
        b_eq=np.zeros(problem.m + 1),
        bounds=[(0.0, 1.0)] * ncand + [(None, None)] * cone.f,
        method="highs",
    )
    if not res.success or res.x is None:
        return None
    lam = np.asarray(res.x).copy()
    lam[:ncand] = np.where(lam[:ncand] > 1e-6, lam[:ncand], 0.0)
    if not lam[:ncand].any():
        return None
    # re-check the truncated certificate before trusting it
    scale_cert = float(lam[:ncand].sum()) + float(np.abs(lam[ncand:]).sum())
    if np.abs(A_eq @ lam).max() > 1e-7 * (1.0 + scale_cert):
        return None
    lam = lam[:ncand]
    forced_l = set()
    forced_s = [set() for _ in cone.s]
    for k in np.nonzero(lam)[0]:
        kind = kinds[k]
        if kind[0] == "l":
            forced_l.add(kind[1])
        else:
            forced_s[kind[1]].add(kind[2])

    added_cols = []
    added_c = []
    added = []
    kept_l = [p for p in range(cone.l) if p not in forced_l]
    for p in sorted(forced_l):
        added_cols.append(A[:, [cone.f + p]])
        added_c.append(float(problem.c[cone.f + p]))
        added.append(("l", p))
    off = cone.f + cone.l
    kept_s = []
    keep_cols = [cone.f + p for p in kept_l]
    new_sizes = []
    for j, size in enumerate(cone.s):
        D = forced_s[j]
        K = [i for i in range(size) if i not in D]
        kept_s.append(K)
        for d in sorted(D):
            for i in range(size):
                if i in D and i > d:
                    continue
                col = A[:, [off + d * size + i]]
                cval = float(problem.c[off + d * size + i])
                if i != d:
                    col = col + A[:, [off + i * size + d]]
                    cval += float(problem.c[off + i * size + d])
                added_cols.append(col)
                added_c.append(cval)
                added.append(("s", j, d, i))
        if K:
            new_sizes.append(len(K))
            keep_cols.extend(off + a * size + b for a in K for b in K)
        off += size * size

    pieces = []
    if cone.f:
        pieces.append(A[:, :cone.f])
    pieces.extend(added_cols)
    if keep_cols:
        pieces.append(A[:, keep_cols])
    if not pieces:
        return None
    A_new = scipy.sparse.hstack(pieces, format="csr")
    c_new = np.concatenate(
        [problem.c[:cone.f], np.asarray(added_c), problem.c[keep_cols]]
    )
    reduced = ConicProblem(
        A=A_new,
        b=problem.b.copy(),
        c=c_new,
        cone=ConeSpec(f=cone.f + len(added), l=len(kept_l), s=tuple(new_sizes)),
        sense=problem.sense,
        offset=problem.offset,
    )
    return _Reduction(problem=reduced, kept_l=kept_l, kept_s=kept_s, added=added)


def _lift_reduction(problem, red, inner):
    """Map a solution of the reduced problem back to original coordinates."""
    cone = problem.cone
    x = np.zeros(problem.n)
    xr = inner.x
    x[:cone.f] = xr[:cone.f]
    nadd = len(red.added)
    added_vals = xr[cone.f:cone.f + nadd]
    pos = cone.f + nadd
    for p, v in zip(red.kept_l, xr[pos:pos + len(red.kept_l)]):
        x[cone.f + p] = v
    pos += len(red.kept_l)
    off = cone.f + cone.l
    block_off = []
    for j, size in enumerate(cone.s):
        block_off.append(off)
        K = red.kept_s[j]
        if K:
            sub = xr[pos:pos + len(K) * len(K)].reshape(len(K), len(K))
            pos += len(K) * len(K)
            for a, ia in enumerate(K):
                for b, ib in enumerate(K):
                    x[off + ia * size + ib] = sub[a, b]
        off += size * size
    for val, spec in zip(added_vals, red.added):
        if spec[0] == "l":
            x[cone.f + spec[1]] = val
        else:
            _, j, d, i = spec
            size = cone.s[j]
            if i == d:
                x[block_off[j] + d * size + d] = val
            else:
                x[block_off[j] + d * size + i] = 0.5 * val
                x[block_off[j] + i * size + d] = 0.5 * val
    z = np.asarray(problem.c - problem.A.T @ inner.y).reshape(-1)
    if cone.f:
        z[:cone.f] = 0.0
    return ConicSolution(
        status=inner.status, x=x, y=inner.y, z=z,
        pobj=inner.pobj, dobj=inner.dobj, pinf=inner.pinf,
        dinf=inner.dinf, gap=inner.gap, iterations=inner.iterations,
        history=inner.history, message=inner.message,
    )


# ---------------------------------------------------------------------------
# interior-point solver


class _Cones:
    """Dense per-cone views of the problem data for the solver."""

    def __init__(self, problem):
        cone = problem.cone
        if cone.f:
            raise ConicError("free variables must be eliminated by presolve first")
        entries = problem.m * (cone.l + sum(s * s for s in cone.s))
        if entries > 2.5e8:
            raise ConicError("problem too large for the dense interior-point solver")
        A = scipy.sparse.csc_matrix(problem.A)
        self.m = problem.m
        self.l = cone.l
        self.sizes = list(cone.s)
        self.A_l = A[:, : cone.l].toarray()
        self.c_l = np.asarray(problem.c[: cone.l], dtype=float)
        self.A_s = []
        self.c_s = []
        off = cone.l
        for s in cone.s:
            blockA = A[:, off : off + s * s].toarray().reshape(self.m, s, s)
            blockA = 0.5 * (blockA + blockA.transpose(0, 2, 1))
            self.A_s.append(blockA)
            cblk = np.asarray(problem.c[off : off + s * s], dtype=float).reshape(s, s)
            self.c_s.append(0.5 * (cblk + cblk.T))
            off += s * s
        self.nu = cone.l + sum(cone.s)
        self.c_norm = math.sqrt(
            float(self.c_l @ self.c_l) + sum(float((c * c).sum()) for c in self.c_s)
        )

    def apply_A(self, x_l, X_s):
        """A(x): contract the primal point against every row."""
        out = self.A_l @ x_l if self.l else np.zeros(self.m)
        for Ablk, X in zip(self.A_s, X_s):
            out = out + np.tensordot(Ablk, X, axes=([1, 2], [0, 1]))
        return out

    def apply_At(self, y):
        """A'(y) per cone."""
        out_l = self.A_l.T @ y if self.l else np.zeros(0)
        out_s = [np.tensordot(y, Ablk, axes=(0, 0)) for Ablk in self.A_s]
        return out_l, out_s

    def inner(self, u_l, U_s, v_l, V_s):
        total = float(u_l @ v_l) if self.l else 0.0
        for U, V in zip(U_s, V_s):
            total += float((U * V).sum())
        return total


def _min_eig(M):
    return float(scipy.linalg.eigvalsh(M, subset_by_index=[0, 0])[0]) if M.size else 0.0


def _alpha_orthant(x, dx):
    if x.size == 0:
        return np.inf
    mask = dx < 0
    if not mask.any():
        return np.inf
    return float(np.min(-x[mask] / dx[mask]))


def _alpha_psd(X, dX):
    """Largest alpha with X + alpha dX still PSD, via Cholesky scaling."""
    if X.shape[0] == 0:
        return np.inf
    jitter = 0.0
    for _ in range(3):
        try:
            L = scipy.linalg.cholesky(X + jitter * np.eye(X.shape[0]), lower=True)
            break
        except scipy.linalg.LinAlgError:
            jitter = max(jitter * 100, 1e-14 * max(np.trace(X), 1.0))
    else:
        return 0.0
    W = scipy.linalg.solve_triangular(L, dX, lower=True)
    W = scipy.linalg.solve_triangular(L, W.T, lower=True)
    lam = _min_eig(0.5 * (W + W.T))
    if lam >= 0:
        return np.inf
    return -1.0 / lam


def _initial_point(cones, b):
    x_l = np.ones(cones.l)
    z_l = np.ones(cones.l)
    if cones.l:
        anorm = 1.0 + np.sqrt((cones.A_l ** 2).sum(axis=1))
        xi = max(10.0, math.sqrt(cones.l), float(np.max((1.0 + np.abs(b)) / anorm)))
        eta = max(
            10.0,
            math.sqrt(cones.l),
            (1.0 + float(np.linalg.norm(cones.c_l))) / math.sqrt(cones.l),
        )
        x_l *= xi
        z_l *= eta
    X_s, Z_s = [], []
    for Ablk, Cblk in zip(cones.A_s, cones.c_s):
        s = Cblk.shape[0]
        anorm = 1.0 + np.sqrt((Ablk ** 2).sum(axis=(1, 2)))
        xi = max(10.0, math.sqrt(s), s * float(np.max((1.0 + np.abs(b)) / anorm)))
        fnorms = np.sqrt((Ablk ** 2).sum(axis=(1, 2)))
        eta = max(
            10.0,
            math.sqrt(s),
            (1.0 + max(float(np.max(fnorms, initial=0.0)), float(np.linalg.norm(Cblk))))
            / math.sqrt(s),
        )
        X_s.append(xi * np.eye(s))
        Z_s.append(eta * np.eye(s))
    return x_l, X_s, z_l, Z_s


def solve(problem, params=None):
    """Solve a conic problem (orthant and PSD cones) to tolerance eps.

    HKM-scaled predictor-corrector path following: each iteration forms
    the Schur complement M_jk = tr(A_j Z^-1 A_k X) (plus the orthant
    diagonal term), factors it with escalating diagonal regularization
    if needed, and takes Mehrotra-corrected steps damped to the
    step_fraction of the distance to the cone boundary.
    """
    params = params or SolverParams()
    if params.max_iter < 1:
        raise ConicError("max_iter must be at least 1")
    cones = _Cones(problem)
    b = np.asarray(problem.b, dtype=float)
    m = cones.m

    if cones.nu == 0:
        # no cone constraints at all: dual feasibility is unconstrained
        if np.linalg.norm(b) > params.eps:
            return ConicSolution(
                status="unbounded", x=np.zeros(problem.n), y=np.zeros(m),
                z=np.zeros(problem.n), pobj=0.0, dobj=0.0, pinf=0.0,
                dinf=0.0, gap=0.0, iterations=0,
                message="dual objective nonzero with empty cone",
            )
        return ConicSolution(
            status="solved", x=np.zeros(problem.n), y=np.zeros(m),
            z=np.zeros(problem.n), pobj=0.0, dobj=0.0, pinf=0.0,
            dinf=0.0, gap=0.0, iterations=0,
        )
    if m == 0:
        # fully pinned duals: just check the slacks are in the cone
        zmin = float(np.min(cones.c_l)) if cones.l else 0.0
        for Cblk in cones.c_s:
            zmin = min(zmin, _min_eig(Cblk))
        status = "solved" if zmin >= -params.eps else "infeasible"
        return ConicSolution(
            status=status, x=np.zeros(problem.n), y=np.zeros(0),
            z=problem.c.copy(), pobj=0.0, dobj=0.0, pinf=0.0, dinf=0.0,
            gap=0.0, iterations=0,
        )

    x_l, X_s, z_l, Z_s = _initial_point(cones, b)
    y = np.zeros(m)
    b_norm = 1.0 + float(np.linalg.norm(b))
    c_norm = 1.0 + cones.c_norm
    gamma = params.step_fraction
    history = []
    best = None
    status = "failed"
    message = ""
    it = 0

    for it in range(1, params.max_iter + 1):
        rp = b - cones.apply_A(x_l, X_s)
        At_l, At_s = cones.apply_At(y)
        rd_l = cones.c_l - At_l - z_l
        Rd_s = [C - AtS - Z for C, AtS, Z in zip(cones.c_s, At_s, Z_s)]
        pobj = cones.inner(cones.c_l, cones.c_s, x_l, X_s)
        dobj = float(b @ y)
        mu = cones.inner(x_l, X_s, z_l, Z_s) / cones.nu
        pinf = float(np.linalg.norm(rp)) / b_norm
        dinf = math.sqrt(
            float(rd_l @ rd_l) + sum(float((R * R).sum()) for R in Rd_s)
        ) / c_norm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((pobj, dobj, pinf, dinf, gap))
        metric = max(pinf, dinf, gap)
        if best is None or metric < best[0]:
            best = (metric, x_l.copy(), [X.copy() for X in X_s],
                    y.copy(), z_l.copy(), [Z.copy() for Z in Z_s],
                    pobj, dobj, pinf, dinf, gap, it)
        if params.verbose:
            print(f"it {it:3d}  pobj {pobj:+.8e}  dobj {dobj:+.8e}  "
                  f"pinf {pinf:.2e}  dinf {dinf:.2e}  gap {gap:.2e}")
        if metric <= params.eps:
            status = "solved"
            break

        diverged = _divergence_status(problem, cones, x_l, X_s, y, pobj, dobj, params)
        if diverged:
            status, message = diverged
            break

        # HKM scaling data
        try:
            Zinv_s = [np.linalg.inv(Z) for Z in Z_s]
        except np.linalg.LinAlgError:
            status, message = "failed", "singular dual slack"
            break
        M = np.zeros((m, m))
        if cones.l:
            d = x_l / z_l
            M += (cones.A_l * d) @ cones.A_l.T
        flats = []
        for Ablk, Zinv, X in zip(cones.A_s, Zinv_s, X_s):
            T = Zinv @ Ablk @ X  # (m, s, s) batched
            flats.append((Ablk.reshape(m, -1), T.reshape(m, -1)))
            M += flats[-1][0] @ flats[-1][1].T
        M = 0.5 * (M + M.T)
        chol = _factor_with_regularization(M, params)
        if chol is None:
            status, message = "failed", "Schur complement factorization failed"
            break

        def schur_solve(rhs):
            # refine against the unregularized matrix: near the boundary
            # the factor carries a regularization shift
            dy = scipy.linalg.cho_solve(chol, rhs)
            for _ in range(2):
                resid = rhs - M @ dy
                dy = dy + scipy.linalg.cho_solve(chol, resid)
            return dy

        def solve_newton(sigma_mu, corr_l, corr_s):
            # rhs = b - sigma*mu*A(Z^-1) + A(Z^-1 Rd X) + A(corr)
            rhs = b.copy()
            if cones.l:
                rhs += cones.A_l @ (
                    -sigma_mu / z_l + (x_l / z_l) * rd_l + corr_l
                )
            for Ablk, Zinv, X, Rd, corr in zip(
                cones.A_s, Zinv_s, X_s, Rd_s, corr_s
            ):
                inner = -sigma_mu * Zinv + Zinv @ Rd @ X + corr
                rhs += np.tensordot(Ablk, 0.5 * (inner + inner.T), axes=([1, 2], [0, 1]))
            dy = schur_solve(rhs)
            dAt_l, dAt_s = cones.apply_At(dy)
            dz_l = rd_l - dAt_l
            dZ_s = [Rd - dAt for Rd, dAt in zip(Rd_s, dAt_s)]
            dx_l = (
                sigma_mu / z_l - x_l - (x_l / z_l) * dz_l - corr_l
                if cones.l
                else x_l
            )
            dX_s = []
            for Zinv, X, dZ, corr in zip(Zinv_s, X_s, dZ_s, corr_s):
                raw = sigma_mu * Zinv - X - Zinv @ dZ @ X - corr
                dX_s.append(0.5 * (raw + raw.T))
            return dx_l, dX_s, dy, dz_l, dZ_s

        zero_l = np.zeros(cones.l)
        zero_s = [np.zeros_like(X) for X in X_s]
        aff = solve_newton(0.0, zero_l, zero_s)
        if not _steps_finite(aff):
            status, message = "failed", "non-finite predictor step"
            break
        ap = _max_step(cones, x_l, X_s, aff[0], aff[1])
        ad = _max_step(cones, z_l, Z_s, aff[3], aff[4])
        ap_d = min(1.0, gamma * ap)
        ad_d = min(1.0, gamma * ad)
        mu_aff = cones.inner(
            x_l + ap_d * aff[0],
            [X + ap_d * dX for X, dX in zip(X_s, aff[1])],
            z_l + ad_d * aff[3],
            [Z + ad_d * dZ for Z, dZ in zip(Z_s, aff[4])],
        ) / cones.nu
        sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

        corr_l = aff[0] * aff[3] / z_l if cones.l else zero_l
        corr_s = [
            Zinv @ dZ @ dX for Zinv, dZ, dX in zip(Zinv_s, aff[4], aff[1])
        ]
        step = solve_newton(sigma * mu, corr_l, corr_s)
        if not _steps_finite(step):
            step = aff  # fall back to the plain predictor
        ap = min(1.0, gamma * _max_step(cones, x_l, X_s, step[0], step[1]))
        ad = min(1.0, gamma * _max_step(cones, z_l, Z_s, step[3], step[4]))
        if ap < 1e-8 and ad < 1e-8:
            status, message = "stalled", ""
            break
        # reject steps whose residuals blow up: near a boundary optimum the
        # regularized Schur system can produce garbage directions
        accepted = False
        for _ in range(4):
            x_n = x_l + ap * step[0]
            X_n = [X + ap * dX for X, dX in zip(X_s, step[1])]
            y_n = y + ad * step[2]
            z_n = z_l + ad * step[3]
            Z_n = [Z + ad * dZ for Z, dZ in zip(Z_s, step[4])]
            rp_n = b - cones.apply_A(x_n, X_n)
            At_ln, At_sn = cones.apply_At(y_n)
            rd_ln = cones.c_l - At_ln - z_n
            pinf_n = float(np.linalg.norm(rp_n)) / b_norm
            dinf_n = math.sqrt(
                float(rd_ln @ rd_ln)
                + sum(
                    float(((C - AtS - Z) ** 2).sum())
                    for C, AtS, Z in zip(cones.c_s, At_sn, Z_n)
                )
            ) / c_norm
            mu_n = cones.inner(x_n, X_n, z_n, Z_n) / cones.nu
            if (
                pinf_n <= 100.0 * pinf + 1e-12
                and dinf_n <= 100.0 * dinf + 1e-12
                and mu_n <= 100.0 * mu
            ):
                accepted = True
                break
            ap *= 0.2
            ad *= 0.2
        if not accepted:
            status, message = "stalled", "step rejected"
            break
        x_l, X_s, y, z_l, Z_s = x_n, X_n, y_n, z_n, Z_n
    else:
        status = "maxiter"

    if status in ("maxiter", "stalled", "failed") and best is not None:
        # the last iterate carries any diverging ray; the best iterate is
        # the most accurate point.  A validated certificate wins.
        diverged = _divergence_status(
            problem, cones, x_l, X_s, y, pobj, dobj, params, final=True
        )
        metric = best[0]
        if diverged is None:
            _, x_l, X_s, y, z_l, Z_s, pobj, dobj, pinf, dinf, gap, it_best = best
            diverged = _divergence_status(
                problem, cones, x_l, X_s, y, pobj, dobj, params, final=True
            )
        if diverged:
            status, message = diverged
        elif metric <= 1e3 * params.eps:
            status = "inaccurate"
        elif status != "failed":
            status, message = "failed", f"no convergence ({status})"

    x = np.concatenate([x_l] + [X.reshape(-1) for X in X_s]) if cones.nu else np.zeros(0)
    z = np.concatenate([z_l] + [Z.reshape(-1) for Z in Z_s]) if cones.nu else np.zeros(0)
    return ConicSolution(
        status=status, x=x, y=y, z=z, pobj=pobj, dobj=dobj,
        pinf=pinf, dinf=dinf, gap=gap, iterations=it,
        history=history, message=message,
    )


def _steps_finite(step):
    dx_l, dX_s, dy, dz_l, dZ_s = step
    arrays = [dx_l, dy, dz_l] + list(dX_s) + list(dZ_s)
    return all(np.all(np.isfinite(a)) for a in arrays)


def _max_step(cones, x_l, X_s, dx_l, dX_s):
    alpha = _alpha_orthant(x_l, dx_l)
    for X, dX in zip(X_s, dX_s):
        alpha = min(alpha, _alpha_psd(X, dX))
    return alpha


def _factor_with_regularization(M, params):
    reg = 0.0
    scale = max(float(np.trace(M)) / max(M.shape[0], 1), 1.0)
    for attempt in range(4):
        try:
            return scipy.linalg.cho_factor(
                M + reg * np.eye(M.shape[0]), lower=True
            )
        except scipy.linalg.LinAlgError:
            reg = max(params.reg_floor * scale, reg * 100.0, 1e-14 * scale)
    return None


def _divergence_status(problem, cones, x_l, X_s, y, pobj, dobj, params, final=False):
    """Farkas-style checks: normalized rays certify infeasibility sides.

    During the iteration only clear blowups are inspected; once the
    solve has stopped (final) a scale-relative gap between the two
    objectives is enough to try for a certificate, whose validation
    stays strict either way.
    """
    tol = 1e-8
    dual_ray = dobj > 1.0 / tol or (dobj > 1e3 and np.linalg.norm(y) > 1e7)
    if final:
        dual_ray = dual_ray or dobj > 100.0 * (1.0 + abs(pobj))
    if dual_ray:
        yhat = y / dobj
        At_l, At_s = cones.apply_At(yhat)
        worst = float(np.max(At_l, initial=0.0))
        for AtS in At_s:
            worst = max(worst, _min_eig(-AtS) * -1.0 if AtS.size else 0.0)
        feas = max(worst, 0.0)
        if feas <= tol * (1.0 + float(np.linalg.norm(yhat))):
            return "infeasible", "dual improving ray found"
    primal_ray = pobj < -1.0 / tol
    if final:
        primal_ray = primal_ray or pobj < -100.0 * (1.0 + abs(dobj))
    if primal_ray:
        scale = -pobj
        xhat_l = x_l / scale
        Xhat_s = [X / scale for X in X_s]
        ray_res = float(np.linalg.norm(cones.apply_A(xhat_l, Xhat_s)))
        xnorm = math.sqrt(
            float(xhat_l @ xhat_l) + sum(float((X * X).sum()) for X in Xhat_s)
        )
        if ray_res <= tol * (1.0 + xnorm):
            return "unbounded", "primal improving ray found"
    return None


def solve_conic(problem, params=None, presolve_tol=1e-9):
    """Presolve free columns away, solve, and lift back to original y.

    Returns a ConicSolution in the coordinates of ``problem``: y holds
    all original dual (moment) variables, x all original primal entries
    with the free components recovered by least squares.
    """
    params = params or SolverParams()
    red = _reduce_zero_diagonals(problem)
    if red is not None:
        inner = solve_conic(red.problem, params, presolve_tol)
        return _lift_reduction(problem, red, inner)
    if problem.cone.f == 0:
        return solve(problem, params)
    pre = presolve_eliminate_equalities(problem, tol=presolve_tol)
    if pre.status == "infeasible":
        return ConicSolution(
            status="infeasible", x=np.zeros(problem.n), y=np.zeros(problem.m),
            z=np.zeros(problem.n), pobj=0.0, dobj=0.0,
            pinf=pre.residual, dinf=0.0, gap=0.0, iterations=0,
            message="inconsistent equality rows",
        )
    inner = solve(pre.problem, params)
    y = pre.y0 + pre.N @ inner.y
    nf = problem.cone.f
    x = np.zeros(problem.n)
    x[nf:] = inner.x
    A = scipy.sparse.csc_matrix(problem.A)
    if nf:
        rhs = problem.b - A[:, nf:] @ inner.x
        x[:nf] = scipy.sparse.linalg.lsqr(A[:, :nf], rhs)[0]
    z = problem.c - problem.A.T @ y
    return ConicSolution(
        status=inner.status, x=x, y=y, z=np.asarray(z).reshape(-1),
        pobj=inner.pobj, dobj=inner.dobj, pinf=inner.pinf,
        dinf=inner.dinf, gap=inner.gap, iterations=inner.iterations,
        history=inner.history, message=inner.message,
    )
