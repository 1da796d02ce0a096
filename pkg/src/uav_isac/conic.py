"""Canonical convex subproblem representation and its cone-solver backend.

Both inner loops emit instances of the same small program family:

    max/min   linear(blocks) + sum_k w_k * log(affine_k(blocks))
    s.t.      linear equalities / inequalities
              second-order-cone rows  ||v(blocks)|| <= t(blocks)
              every psd block Hermitian positive semidefinite

Blocks are either complex Hermitian matrices (beamforming covariances) or
real vectors (trajectory positions, slacks). Hermitian blocks are realified
through hermitian_embed and handed to Clarabel as PSD-triangle cones; the
optional log terms become exponential-cone hypographs. Problem sizes here
are tiny (M <= 8 antennas, N <= a few dozen slots), so everything is built
densely per solve.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

import clarabel

SQRT2 = math.sqrt(2.0)


class ProgramError(ValueError):
    """Malformed conic program."""


def hermitian_embed(H: np.ndarray, rel_tol: float = 1e-8) -> np.ndarray:
    """Realify a Hermitian matrix: [[Re H, -Im H], [Im H, Re H]].

    The embedding is symmetric, shares H's eigenvalues with doubled
    multiplicity (so PSD iff H is PSD), and has trace 2*tr(H).
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ProgramError("hermitian_embed expects a square matrix")
    asym = np.linalg.norm(H - H.conj().T)
    if asym > rel_tol * max(np.linalg.norm(H), 1e-300):
        raise ProgramError(f"matrix asymmetry {asym:.2e} above {rel_tol:.0e} rel")
    H = 0.5 * (H + H.conj().T)
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def hermitian_extract(T: np.ndarray) -> np.ndarray:
    """Inverse of hermitian_embed (up to averaging the redundant copies)."""
    n = T.shape[0]
    if n % 2:
        raise ProgramError("embedded matrix must have even dimension")
    M = n // 2
    re = 0.5 * (T[:M, :M] + T[M:, M:])
    im = 0.5 * (T[M:, :M] - T[:M, M:])
    return re + 1j * im


@dataclass
class LinExpr:
    """Affine scalar over program blocks: offset + sum_b <coeff_b, block_b>.

    For a psd block the coefficient is a Hermitian matrix C and the pairing
    is tr(C X) (real); for a vec block it is a real vector paired by dot
    product.
    """

    terms: dict = field(default_factory=dict)
    offset: float = 0.0

    def plus(self, other: "LinExpr") -> "LinExpr":
        terms = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v.copy()
        return LinExpr(terms, self.offset + other.offset)

    def scaled(self, c: float) -> "LinExpr":
        return LinExpr({k: c * v for k, v in self.terms.items()}, c * self.offset)

    def minus(self, other: "LinExpr") -> "LinExpr":
        return self.plus(other.scaled(-1.0))


def expr(terms: dict | None = None, offset: float = 0.0) -> LinExpr:
    out = LinExpr({}, float(offset))
    for name, coeff in (terms or {}).items():
        out.terms[name] = np.asarray(coeff, dtype=complex if np.iscomplexobj(coeff) else float)
    return out


@dataclass
class ConicProgram:
    """One convex subproblem instance; see the module docstring."""

    psd_blocks: list = field(default_factory=list)  # (name, M)
    vec_blocks: list = field(default_factory=list)  # (name, dim)
    sense: str = "max"
    objective: LinExpr = field(default_factory=LinExpr)
    log_terms: list = field(default_factory=list)  # (weight > 0, LinExpr)
    constraints: list = field(default_factory=list)  # ("eq"|"le", LinExpr) | ("soc", t, [v...])

    def add_psd_block(self, name: str, dim: int):
        self._check_new(name)
        self.psd_blocks.append((name, int(dim)))

    def add_vec_block(self, name: str, dim: int):
        self._check_new(name)
        self.vec_blocks.append((name, int(dim)))

    def _check_new(self, name):
        if any(n == name for n, _ in self.psd_blocks + self.vec_blocks):
            raise ProgramError(f"duplicate block {name!r}")

    def maximize(self, objective: LinExpr, log_terms=None):
        self.sense = "max"
        self.objective = objective
        self.log_terms = list(log_terms or [])

    def minimize(self, objective: LinExpr):
        self.sense = "min"
        self.objective = objective
        self.log_terms = []

    def add_eq(self, e: LinExpr):
        self.constraints.append(("eq", e))

    def add_le(self, e: LinExpr):
        """Constrain e <= 0."""
        self.constraints.append(("le", e))

    def add_ge(self, e: LinExpr):
        self.add_le(e.scaled(-1.0))

    def add_soc(self, t: LinExpr, vec: list):
        """Constrain ||(v_1, ..., v_k)|| <= t."""
        self.constraints.append(("soc", t, list(vec)))

    def block_dims(self) -> dict:
        dims = {n: ("psd", d) for n, d in self.psd_blocks}
        dims.update({n: ("vec", d) for n, d in self.vec_blocks})
        return dims

    def validate(self):
        dims = self.block_dims()

        def check(e: LinExpr):
            for name, coeff in e.terms.items():
                if name not in dims:
                    raise ProgramError(f"unknown block {name!r} in expression")
                kind, d = dims[name]
                if kind == "psd":
                    if coeff.shape != (d, d):
                        raise ProgramError(f"coefficient for {name!r} must be {d}x{d}")
                    asym = np.linalg.norm(coeff - coeff.conj().T)
                    if asym > 1e-8 * max(np.linalg.norm(coeff), 1e-300):
                        raise ProgramError(f"coefficient for psd block {name!r} not Hermitian")
                elif coeff.shape != (d,):
                    raise ProgramError(f"coefficient for {name!r} must be length {d}")

        check(self.objective)
        if self.log_terms and self.sense != "max":
            raise ProgramError("log terms are only supported when maximizing")
        for w, arg in self.log_terms:
            if w <= 0:
                raise ProgramError("log-term weights must be positive")
            check(arg)
        for c in self.constraints:
            if c[0] == "soc":
                check(c[1])
                for v in c[2]:
                    check(v)
            else:
                check(c[1])

    def has_power_cover(self) -> bool:
        """Structural boundedness: some 'le' constraint charges every psd
        block with a positive-definite coefficient (a total-power budget)."""
        psd_names = [n for n, _ in self.psd_blocks]
        if not psd_names:
            return True
        for c in self.constraints:
            if c[0] != "le":
                continue
            e = c[1]
            if all(
                n in e.terms and np.linalg.eigvalsh(0.5 * (e.terms[n] + e.terms[n].conj().T))[0] > 0
                for n in psd_names
            ):
                return True
        return False


@dataclass
class ConicSolution:
    blocks: dict
    log_values: list
    objective: float
    status: str  # optimal | infeasible | unbounded | max_iter
    kkt_gap: float
    comp_slackness: float
    primal_residual: float
    dual_residual: float
    iterations: int
    solve_time: float


def _pair_rank(i: int, j: int, M: int) -> int:
    # rank of (i, j), i < j, in row-major strict-upper-triangle order
    return i * (M - 1) - i * (i - 1) // 2 + j - i - 1


def _herm_param_count(M: int) -> int:
    return M * M


def _herm_coeff_row(C: np.ndarray) -> np.ndarray:
    """Row r with tr(C X) = r @ params(X) for Hermitian C, X."""
    M = C.shape[0]
    row = np.zeros(M * M)
    row[:M] = np.real(np.diag(C))
    for i in range(M):
        for j in range(i + 1, M):
            k = M + 2 * _pair_rank(i, j, M)
            row[k] = 2.0 * C[i, j].real
            row[k + 1] = 2.0 * C[i, j].imag
    return row


def _herm_from_params(p: np.ndarray, M: int) -> np.ndarray:
    X = np.zeros((M, M), dtype=complex)
    X[np.diag_indices(M)] = p[:M]
    for i in range(M):
        for j in range(i + 1, M):
            k = M + 2 * _pair_rank(i, j, M)
            X[i, j] = p[k] + 1j * p[k + 1]
            X[j, i] = p[k] - 1j * p[k + 1]
    return X


@lru_cache(maxsize=None)
def _embed_svec_entries(M: int):
    """Sparse map params(H) -> svec(hermitian_embed(H)) in Clarabel's
    upper-triangle column-major convention with sqrt(2)-scaled off-diagonals.
    Returns (rows, cols, vals, n_rows)."""
    rows, cols, vals = [], [], []

    def xr(i, j):
        return M + 2 * _pair_rank(i, j, M)

    def xi(i, j):
        return M + 2 * _pair_rank(i, j, M) + 1

    r = 0
    for l in range(2 * M):
        for k in range(l + 1):
            scale = 1.0 if k == l else SQRT2
            if l < M:
                if k == l:
                    rows.append(r), cols.append(k), vals.append(1.0)
                else:
                    rows.append(r), cols.append(xr(k, l)), vals.append(scale)
            elif k >= M:
                i, j = k - M, l - M
                if i == j:
                    rows.append(r), cols.append(i), vals.append(1.0)
                else:
                    rows.append(r), cols.append(xr(i, j)), vals.append(scale)
            else:
                i, j = k, l - M  # entry -Im H[i, j]; Im is antisymmetric
                if i < j:
                    rows.append(r), cols.append(xi(i, j)), vals.append(-scale)
                elif i > j:
                    rows.append(r), cols.append(xi(j, i)), vals.append(scale)
            r += 1
    return np.array(rows), np.array(cols), np.array(vals), r


class _Assembler:
    def __init__(self, prog: ConicProgram):
        self.offsets = {}
        n = 0
        for name, M in prog.psd_blocks:
            self.offsets[name] = (n, "psd", M)
            n += _herm_param_count(M)
        for name, d in prog.vec_blocks:
            self.offsets[name] = (n, "vec", d)
            n += d
        self.log_offsets = []
        for _ in prog.log_terms:
            self.log_offsets.append(n)
            n += 1
        self.n_vars = n

    def row(self, e: LinExpr) -> np.ndarray:
        out = np.zeros(self.n_vars)
        for name, coeff in e.terms.items():
            off, kind, d = self.offsets[name]
            if kind == "psd":
                out[off : off + d * d] = _herm_coeff_row(np.asarray(coeff, complex))
            else:
                out[off : off + d] = np.real(coeff)
        return out


def solve(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve the program to relative gap tol. Infeasibility and unboundedness
    come back through the status field, never as exceptions."""
    prog.validate()
    asm = _Assembler(prog)
    sign = -1.0 if prog.sense == "max" else 1.0

    q = sign * asm.row(prog.objective)
    # log hypographs only arise when maximizing: max w*t <-> min -w*t
    for (w, _), off in zip(prog.log_terms, asm.log_offsets):
        q[off] = -abs(w)
    A_rows, b_rows, cones = [], [], []

    eqs = [c for c in prog.constraints if c[0] == "eq"]
    les = [c for c in prog.constraints if c[0] == "le"]
    socs = [c for c in prog.constraints if c[0] == "soc"]

    if eqs:
        for _, e in eqs:
            A_rows.append(asm.row(e))
            b_rows.append(-e.offset)
        cones.append(clarabel.ZeroConeT(len(eqs)))
    if les:
        for _, e in les:
            A_rows.append(asm.row(e))
            b_rows.append(-e.offset)
        cones.append(clarabel.NonnegativeConeT(len(les)))
    for _, t, vec in socs:
        A_rows.append(-asm.row(t))
        b_rows.append(t.offset)
        for v in vec:
            A_rows.append(-asm.row(v))
            b_rows.append(v.offset)
        cones.append(clarabel.SecondOrderConeT(1 + len(vec)))
    for name, M in prog.psd_blocks:
        off = asm.offsets[name][0]
        rr, cc, vv, nr = _embed_svec_entries(M)
        block = np.zeros((nr, asm.n_vars))
        block[rr, off + cc] = -vv
        A_rows.extend(block)
        b_rows.extend(np.zeros(nr))
        cones.append(clarabel.PSDTriangleConeT(2 * M))
    for (w, arg), off in zip(prog.log_terms, asm.log_offsets):
        r0 = np.zeros(asm.n_vars)
        r0[off] = -1.0
        A_rows.append(r0)
        b_rows.append(0.0)
        A_rows.append(np.zeros(asm.n_vars))
        b_rows.append(1.0)
        A_rows.append(-asm.row(arg))
        b_rows.append(arg.offset)
        cones.append(clarabel.ExponentialConeT())

    A = sparse.csc_matrix(np.vstack(A_rows)) if A_rows else sparse.csc_matrix((0, asm.n_vars))
    b = np.asarray(b_rows, dtype=float)
    P = sparse.csc_matrix((asm.n_vars, asm.n_vars))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    raw = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()

    status = {
        "Solved": "optimal",
        "PrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
    }.get(str(raw.status), "max_iter")
    if (
        status == "max_iter"
        and abs(raw.obj_val - raw.obj_val_dual) <= tol * max(1.0, abs(raw.obj_val))
        and raw.r_prim <= 10 * tol
        and raw.r_dual <= 10 * tol
    ):
        # Clarabel declares reduced accuracy conservatively; accept the
        # solution when the achieved gap and residuals meet the request
        status = "optimal"

    x = np.asarray(raw.x, dtype=float)
    blocks = {}
    for name, (off, kind, d) in asm.offsets.items():
        if kind == "psd":
            blocks[name] = _herm_from_params(x[off : off + d * d], d)
        else:
            blocks[name] = x[off : off + d].copy()
    log_values = [float(x[off]) for off in asm.log_offsets]

    obj = prog.objective.offset + float(asm.row(prog.objective) @ x)
    for (w, _), off in zip(prog.log_terms, asm.log_offsets):
        obj += abs(w) * x[off]

    s = np.asarray(raw.s, dtype=float)
    z = np.asarray(raw.z, dtype=float)
    comp = abs(float(s @ z)) / max(1.0, abs(obj)) if s.size else 0.0
    gap = abs(raw.obj_val - raw.obj_val_dual) / max(1.0, abs(raw.obj_val))

    return ConicSolution(
        blocks=blocks,
        log_values=log_values,
        objective=obj,
        status=status,
        kkt_gap=gap,
        comp_slackness=comp,
        primal_residual=float(raw.r_prim),
        dual_residual=float(raw.r_dual),
        iterations=int(raw.iterations),
        solve_time=float(raw.solve_time),
    )


def dump(prog: ConicProgram) -> str:
    """Plain-text canonical form, stable across runs, for diffing."""
    out = io.StringIO()

    def fmt_expr(e: LinExpr) -> str:
        parts = [f"{e.offset:.17g}"]
        for name in sorted(e.terms):
            c = np.asarray(e.terms[name])
            flat = " ".join(f"{v.real:.17g}{v.imag:+.17g}j" if np.iscomplexobj(c) else f"{v:.17g}"
                            for v in c.ravel())
            parts.append(f"<{name}|[{flat}]>")
        return " + ".join(parts)

    print(f"sense {prog.sense}", file=out)
    for name, d in prog.psd_blocks:
        print(f"psd {name} {d}", file=out)
    for name, d in prog.vec_blocks:
        print(f"vec {name} {d}", file=out)
    print(f"objective {fmt_expr(prog.objective)}", file=out)
    for w, arg in prog.log_terms:
        print(f"log {w:.17g} {fmt_expr(arg)}", file=out)
    for c in prog.constraints:
        if c[0] == "soc":
            vecs = "; ".join(fmt_expr(v) for v in c[2])
            print(f"soc {fmt_expr(c[1])} >= ||{vecs}||", file=out)
        else:
            print(f"{c[0]} {fmt_expr(c[1])}", file=out)
    return out.getvalue()
