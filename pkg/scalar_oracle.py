"""
Scalar-loop reference implementations of the combined attention, used by the tests
as an independent oracle for the vectorized code. Plain Python floats and lists only.
"""
import math
from typing import List, Optional, Sequence

Matrix = List[List[float]]

SQUASH = {
    "tanh": math.tanh,
    "sigmoid": lambda x: 1.0 / (1.0 + math.exp(-x)),
    "arctan": math.atan,
}


def _project(x: Sequence[Sequence[float]], w: Optional[Sequence[Sequence[float]]]) -> Matrix:
    if w is None:
        return [list(map(float, row)) for row in x]
    cols = len(w[0])
    return [[sum(row[k] * w[k][c] for k in range(len(row))) for c in range(cols)] for row in x]


def _mean(matrix: Matrix, valid=None) -> float:
    total, count = 0.0, 0
    for i, row in enumerate(matrix):
        for j, value in enumerate(row):
            if valid is None or valid[i][j]:
                total += value
                count += 1
    return total / count if count else 0.0


def combined_matrix(fa_e: Matrix, fb_e: Matrix, fa_n: Matrix, fb_n: Matrix, *, alpha=1.0, beta=1.0,
                    f_e="tanh", f_n="sigmoid", norm_variant="none", valid=None) -> Matrix:
    d_k = len(fa_e[0]) if fa_e and fa_e[0] else 1
    root = math.sqrt(d_k)
    n, m = len(fa_e), len(fb_e)
    e = [[alpha / root * sum(fa_e[i][k] * fb_e[j][k] for k in range(len(fa_e[i]))) for j in range(m)] for i in range(n)]
    diff = [[-beta / root * sum(abs(fa_n[i][k] - fb_n[j][k]) for k in range(len(fa_n[i]))) for j in range(m)]
            for i in range(n)]
    if norm_variant == "center_n":
        mu = _mean(diff, valid)
        diff = [[value - mu for value in row] for row in diff]
    if norm_variant == "center_e":
        mu = _mean(e, valid)
        e = [[value - mu for value in row] for row in e]
    gain = 2.0 if norm_variant == "two_sigmoid" else 1.0
    return [[SQUASH[f_e](e[i][j]) * gain * SQUASH[f_n](diff[i][j]) for j in range(m)] for i in range(n)]


def attend(a, b, w_e=None, w_n=None, **options):
    """(Â, B̂) with Â_i = Σ_j M_ij b_j and B̂_j = Σ_i M_ij a_i"""
    fa_e, fb_e = _project(a, w_e), _project(b, w_e)
    w_n = w_e if w_n is None else w_n
    fa_n, fb_n = _project(a, w_n), _project(b, w_n)
    mat = combined_matrix(fa_e, fb_e, fa_n, fb_n, **options)
    width = len(a[0])
    a_hat = [[sum(mat[i][j] * b[j][c] for j in range(len(b))) for c in range(width)] for i in range(len(a))]
    b_hat = [[sum(mat[i][j] * a[i][c] for i in range(len(a))) for c in range(width)] for j in range(len(b))]
    return a_hat, b_hat


def _softmax_head(q, k, v, mask) -> Matrix:
    d_k = len(q[0]) if q and q[0] else 1
    out = []
    for qi in q:
        scores = [sum(x * y for x, y in zip(qi, kj)) / math.sqrt(d_k) for kj in k]
        allowed = [j for j in range(len(k)) if mask is None or mask[j]]
        if not allowed:
            out.append([0.0] * len(v[0]))
            continue
        top = max(scores[j] for j in allowed)
        exps = {j: math.exp(scores[j] - top) for j in allowed}
        total = sum(exps.values())
        out.append([sum(exps[j] / total * v[j][c] for j in allowed) for c in range(len(v[0]))])
    return out


def multi_head(q, k, v, num_heads: int, combined_heads: int, w_o=None, b_o=None, mask=None,
               **options) -> Matrix:
    """Heads [0, combined_heads) combined, the rest softmax; concatenate, then output projection"""
    width = len(q[0])
    d_k = width // num_heads
    rows = len(q)
    valid = None
    if mask is not None:
        query = mask if len(q) == len(k) else [True] * rows
        valid = [[bool(query[i] and mask[j]) for j in range(len(k))] for i in range(rows)]

    merged = [[] for _ in range(rows)]
    for h in range(num_heads):
        cols = slice(h * d_k, (h + 1) * d_k)
        q_h = [row[cols] for row in q]
        k_h = [row[cols] for row in k]
        v_h = [row[cols] for row in v]
        if h < combined_heads:
            mat = combined_matrix(q_h, k_h, q_h, k_h, valid=valid, **options)
            if mask is not None:
                mat = [[value if mask[j] else 0.0 for j, value in enumerate(row)] for row in mat]
            out = [[sum(mat[i][j] * v_h[j][c] for j in range(len(k_h))) for c in range(d_k)] for i in range(rows)]
        else:
            out = _softmax_head(q_h, k_h, v_h, mask)
        for i in range(rows):
            merged[i].extend(out[i])

    if w_o is None:
        return merged
    projected = _project(merged, w_o)
    if b_o is not None:
        projected = [[value + b_o[c] for c, value in enumerate(row)] for row in projected]
    return projected
