"""Reading and writing conic problems: SDPA sparse and JSON.

The SDPA sparse format (.dat-s) describes

    min c'x  s.t.  X = sum_k x_k F_k - F_0,  X psd,

so a problem in our primal form maps through its dual: with slack
Z = C - sum_k y_k A_k and objective max b'y, take c_sdpa = -b,
F_0 = -C and F_k = -A_k.  A negative block size denotes a diagonal
(linear) block holding the orthant.  The format has no free cone;
equality columns must be eliminated by presolve before export.

The JSON format is a faithful dump of the ConicProblem fields and
round-trips exactly, including sense and offset, which SDPA cannot
carry.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse

from .conic import ConeSpec, ConicError, ConicProblem


def _require_no_free(problem):
    if problem.cone.f != 0:
        raise ConicError("free variables must be eliminated by presolve first")


def export_sdpa(problem, path):
    """Write the problem in SDPA sparse format.

    Block 1 is the diagonal orthant block (size -l) when present,
    followed by the PSD blocks in order.  Entries are upper triangular
    (i <= j, 1-based) and printed with 17 significant digits so doubles
    round-trip exactly.
    """
    _require_no_free(problem)
    cone = problem.cone
    m = problem.m
    blocks = []
    if cone.l:
        blocks.append(-cone.l)
    blocks.extend(cone.s)
    if not blocks:
        blocks = [-1]  # degenerate: keep the file well formed

    lines = []
    lines.append('"generated by gpmkit')
    lines.append(f"{m}")
    lines.append(f"{len(blocks)}")
    lines.append(" ".join(str(s) for s in blocks))
    lines.append(" ".join(_fmt(-v) for v in problem.b))

    def emit(matno, blkno, i, j, value):
        if value != 0.0:
            lines.append(f"{matno} {blkno} {i + 1} {j + 1} {_fmt(value)}")

    # F_0 = -C
    offset_col = 0
    blkno = 0
    if cone.l:
        blkno += 1
        for i in range(cone.l):
            emit(0, blkno, i, i, -problem.c[i])
        offset_col = cone.l
    for s in cone.s:
        blkno += 1
        Cblk = np.asarray(problem.c[offset_col : offset_col + s * s]).reshape(s, s)
        for i in range(s):
            for j in range(i, s):
                emit(0, blkno, i, j, -Cblk[i, j])
        offset_col += s * s

    # F_k = -A_k
    Acsr = scipy.sparse.csr_matrix(problem.A)
    for k in range(m):
        start, end = Acsr.indptr[k], Acsr.indptr[k + 1]
        for col, val in zip(Acsr.indices[start:end], Acsr.data[start:end]):
            if cone.l and col < cone.l:
                emit(k + 1, 1, col, col, -val)
                continue
            rel = col - cone.l
            blk = 1 if cone.l else 0
            for s in cone.s:
                blk += 1
                if rel < s * s:
                    i, j = divmod(rel, s)
                    if i <= j:
                        emit(k + 1, blk, i, j, -val)
                    break
                rel -= s * s
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(value):
    return f"{float(value):.17g}"


def import_sdpa(path):
    """Read an SDPA sparse file back into primal conic form.

    Comment lines starting with '"' or '*' are skipped; braces and
    commas in the block structure line are tolerated.  The orthant is
    reassembled from negative (diagonal) blocks.  SDPA has no sense or
    offset, so the result has sense 'min' and offset 0.
    """
    numbers = []
    header = []
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line[0] in '"*':
                continue
            line = line.replace("{", " ").replace("}", " ").replace(",", " ")
            line = line.replace("(", " ").replace(")", " ")
            if len(header) < 3:
                header.append(line)
                continue
            numbers.append(line)
    if len(header) < 3 or not numbers:
        raise ConicError(f"not a valid SDPA sparse file: {path}")
    m = int(header[0].split()[0])
    nblocks = int(header[1].split()[0])
    block_struct = [int(tok) for tok in header[2].split()]
    if len(block_struct) != nblocks:
        raise ConicError("block structure does not match the block count")
    c_sdpa = [float(tok) for tok in numbers[0].split()]
    if len(c_sdpa) != m:
        raise ConicError("objective vector length does not match mDIM")
    for line in numbers[1:]:
        toks = line.split()
        if len(toks) != 5:
            raise ConicError(f"malformed SDPA entry line: {line}")
        entries.append(
            (int(toks[0]), int(toks[1]), int(toks[2]), int(toks[3]), float(toks[4]))
        )

    l = sum(-s for s in block_struct if s < 0)
    s_sizes = tuple(s for s in block_struct if s > 0)
    # column offset of each block in the x layout: orthant first
    col_of_block = {}
    lp_seen = 0
    psd_off = l
    for bno, s in enumerate(block_struct, start=1):
        if s < 0:
            col_of_block[bno] = ("l", lp_seen)
            lp_seen += -s
        else:
            col_of_block[bno] = ("s", psd_off, s)
            psd_off += s * s

    n = l + sum(s * s for s in s_sizes)
    b = -np.asarray(c_sdpa)
    c = np.zeros(n)
    rows, cols, vals = [], [], []

    def positions(blkno, i, j):
        spec = col_of_block.get(blkno)
        if spec is None:
            raise ConicError(f"entry references unknown block {blkno}")
        if spec[0] == "l":
            if i != j:
                raise ConicError("off-diagonal entry in a diagonal block")
            yield spec[1] + i - 1
            return
        _, off, s = spec
        if not (1 <= i <= s and 1 <= j <= s):
            raise ConicError("entry indices outside the block")
        yield off + (i - 1) * s + (j - 1)
        if i != j:
            yield off + (j - 1) * s + (i - 1)

    for matno, blkno, i, j, value in entries:
        for pos in positions(blkno, i, j):
            if matno == 0:
                c[pos] = -value  # C = -F_0
            else:
                rows.append(matno - 1)
                cols.append(pos)
                vals.append(-value)  # A_k = -F_k
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return ConicProblem(
        A=A, b=b, c=c, cone=ConeSpec(f=0, l=l, s=s_sizes), sense="min", offset=0.0
    )


def export_json(problem, path):
    """Write the problem as JSON with A in coordinate form."""
    coo = scipy.sparse.coo_matrix(problem.A)
    payload = {
        "m": int(problem.m),
        "cone": {
            "f": int(problem.cone.f),
            "l": int(problem.cone.l),
            "s": [int(s) for s in problem.cone.s],
        },
        "A": {
            "rows": coo.row.tolist(),
            "cols": coo.col.tolist(),
            "vals": coo.data.tolist(),
        },
        "b": np.asarray(problem.b).tolist(),
        "c": np.asarray(problem.c).tolist(),
        "offset": float(problem.offset),
        "sense": problem.sense,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def import_json(path):
    """Read a JSON conic problem written by export_json."""
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("m", "cone", "A", "b", "c", "offset", "sense"):
        if key not in payload:
            raise ConicError(f"JSON problem misses required key: {key}")
    cone = ConeSpec(
        f=int(payload["cone"]["f"]),
        l=int(payload["cone"]["l"]),
        s=tuple(int(s) for s in payload["cone"]["s"]),
    )
    m = int(payload["m"])
    n = cone.total_length
    A = scipy.sparse.csr_matrix(
        (
            payload["A"]["vals"],
            (payload["A"]["rows"], payload["A"]["cols"]),
        ),
        shape=(m, n),
    )
    b = np.asarray(payload["b"], dtype=float)
    c = np.asarray(payload["c"], dtype=float)
    if b.shape[0] != m or c.shape[0] != n:
        raise ConicError("JSON problem has inconsistent dimensions")
    if payload["sense"] not in ("min", "max"):
        raise ConicError(f"invalid sense: {payload['sense']}")
    return ConicProblem(
        A=A, b=b, c=c, cone=cone, sense=payload["sense"],
        offset=float(payload["offset"]),
    )
