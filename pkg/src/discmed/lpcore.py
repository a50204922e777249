"""Dense LP solver whose optima are always vertices (basic feasible solutions).

Two-phase bounded-variable simplex over float64 with Bland's rule, so the
returned point is determined by ``n_vars`` linearly independent tight
constraints and re-solving the same program reproduces the same vertex.
Equality rows enter the tableau directly; they are never split into two
inequalities (that would break the basis counting downstream rounding
relies on).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
RATIO_TIE = 1e-12

_LO, _HI, _BASIC = 0, 1, 2


class LPError(Exception):
    pass


class InfeasibleLP(LPError):
    pass


class UnboundedLP(LPError):
    pass


@dataclass
class LinearProgram:
    """min objective . x  subject to rows and finite per-variable bounds."""

    n_vars: int
    objective: np.ndarray = None  # type: ignore[assignment]
    lo: np.ndarray = None  # type: ignore[assignment]
    hi: np.ndarray = None  # type: ignore[assignment]
    row_coeffs: list = field(default_factory=list)
    row_rel: list[str] = field(default_factory=list)
    row_rhs: list[float] = field(default_factory=list)

    def __post_init__(self):
        n = self.n_vars
        self.objective = np.zeros(n) if self.objective is None else np.asarray(self.objective, float)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, float)
        self.hi = np.ones(n) if self.hi is None else np.asarray(self.hi, float)

    def add_row(self, coeffs, rel: str, rhs: float) -> None:
        """coeffs is a dense vector or a {var index: coefficient} dict."""
        if rel not in ("<=", "=", ">="):
            raise LPError(f"unknown relation {rel!r}")
        if isinstance(coeffs, dict):
            dense = np.zeros(self.n_vars)
            for k, v in coeffs.items():
                dense[k] = v
        else:
            dense = np.asarray(coeffs, dtype=float)
            if dense.shape != (self.n_vars,):
                raise LPError("coefficient vector has wrong length")
        self.row_coeffs.append(dense)
        self.row_rel.append(rel)
        self.row_rhs.append(float(rhs))

    @property
    def n_rows(self) -> int:
        return len(self.row_rhs)

    def matrix(self) -> np.ndarray:
        if not self.row_coeffs:
            return np.zeros((0, self.n_vars))
        return np.vstack(self.row_coeffs)


@dataclass
class BasicOptimal:
    """An optimal vertex plus the equalities that pin it down.

    ``basis_certificate`` lists exactly ``n_vars`` linearly independent tight
    conditions: ("row", r) for a constraint satisfied with equality, or
    ("lo", j) / ("hi", j) for a variable at a bound.
    """

    values: np.ndarray
    objective_value: float
    tight_rows: list[int]
    basis_certificate: list[tuple[str, int]]


def solve(lp: LinearProgram) -> BasicOptimal:
    """Optimal vertex of ``lp``; raises InfeasibleLP / UnboundedLP otherwise."""
    n = lp.n_vars
    lo = np.asarray(lp.lo, float).copy()
    hi = np.asarray(lp.hi, float).copy()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise LPError("variable bounds must be finite")
    if np.any(lo > hi + 1e-15):
        raise InfeasibleLP("variable with lo > hi")
    hi = np.maximum(hi, lo)

    A = lp.matrix()
    b = np.asarray(lp.row_rhs, float)
    rels = list(lp.row_rel)
    m = len(rels)

    # column layout: structurals, then one slack per inequality row, then artificials
    slack_of_row = {}
    slack_sign = {}
    for i, rel in enumerate(rels):
        if rel != "=":
            slack_of_row[i] = n + len(slack_of_row)
            slack_sign[i] = 1.0 if rel == "<=" else -1.0
    n_slack = len(slack_of_row)

    # start structurals at the bound closest to zero
    x0 = np.where(np.abs(lo) <= np.abs(hi), lo, hi)
    resid = b - A @ x0 if m else np.zeros(0)

    basis = np.empty(m, dtype=np.int64)
    need_art = []
    for i in range(m):
        if i in slack_of_row:
            sval = resid[i] * slack_sign[i]
            if sval >= 0.0:
                basis[i] = slack_of_row[i]
                continue
        need_art.append(i)
    n_art = len(need_art)
    N = n + n_slack + n_art

    T = np.zeros((m, N))
    T[:, :n] = A
    for i, s in slack_of_row.items():
        T[i, s] = slack_sign[i]
    for k, i in enumerate(need_art):
        col = n + n_slack + k
        T[i, col] = 1.0 if resid[i] >= 0 else -1.0
        basis[i] = col
    for i in range(m):
        piv = T[i, basis[i]]
        if piv != 1.0:
            T[i, :] /= piv  # reduced form needs +1 on the basic column

    lob = np.concatenate([lo, np.zeros(n_slack + n_art)])
    upb = np.concatenate([hi, np.full(n_slack + n_art, np.inf)])
    status = np.full(N, _LO, dtype=np.int8)
    # structurals start at the bound nearest zero
    status[:n] = np.where(x0 == lo, _LO, _HI)
    xB = np.empty(m)
    for i in range(m):
        v = basis[i]
        if v < n + n_slack:
            xB[i] = resid[i] * slack_sign[i]
        else:
            xB[i] = abs(resid[i])
        status[v] = _BASIC

    nb_value = np.where(status[:N] == _HI, upb, lob)  # value of nonbasic vars

    def run(cost: np.ndarray, allowed: int) -> None:
        """Bland pivoting on columns [0, allowed) until optimal/unbounded."""
        movable = (lob < upb)[:allowed]
        for _ in range(100000):
            zrow = cost - cost[basis] @ T
            st = status[:allowed]
            z = zrow[:allowed]
            eligible = movable & (
                ((st == _LO) & (z < -FEAS_TOL)) | ((st == _HI) & (z > FEAS_TOL))
            )
            if not eligible.any():
                return
            enter = int(eligible.argmax())  # Bland: smallest eligible index
            direction = 1.0 if status[enter] == _LO else -1.0
            col = T[:, enter]
            ci = direction * col
            t = np.full(m, np.inf)
            dec = ci > PIVOT_TOL
            if dec.any():
                t[dec] = (xB[dec] - lob[basis[dec]]) / ci[dec]
            inc = ci < -PIVOT_TOL
            if inc.any():
                ub = upb[basis[inc]]
                ti = np.where(np.isfinite(ub), (ub - xB[inc]) / (-ci[inc]), np.inf)
                t[inc] = ti
            t = np.maximum(t, 0.0)
            t_rows = float(t.min()) if m else np.inf
            limit = upb[enter] - lob[enter]
            if t_rows == np.inf and not np.isfinite(limit):
                raise UnboundedLP("objective unbounded below")
            if limit < t_rows - RATIO_TIE:
                # bound flip, basis unchanged
                xB[:] = xB - ci * limit
                status[enter] = _HI if direction > 0 else _LO
                nb_value[enter] = upb[enter] if direction > 0 else lob[enter]
                continue
            cand = np.nonzero(t <= t_rows + RATIO_TIE)[0]
            leave_row = int(cand[np.argmin(basis[cand])])
            if np.isfinite(limit) and limit <= t_rows + RATIO_TIE:
                if enter < basis[leave_row]:
                    xB[:] = xB - ci * limit
                    status[enter] = _HI if direction > 0 else _LO
                    nb_value[enter] = upb[enter] if direction > 0 else lob[enter]
                    continue
            step = t_rows
            out_var = int(basis[leave_row])
            out_status = _LO if ci[leave_row] > 0 else _HI
            xB[:] = xB - ci * step
            enter_val = nb_value[enter] + direction * step
            piv = T[leave_row, enter]
            T[leave_row, :] /= piv
            colv = T[:, enter].copy()
            colv[leave_row] = 0.0
            T[:] -= np.outer(colv, T[leave_row, :])
            basis[leave_row] = enter
            status[enter] = _BASIC
            status[out_var] = out_status
            nb_value[out_var] = lob[out_var] if out_status == _LO else upb[out_var]
            xB[leave_row] = enter_val
        raise LPError("pivot limit exceeded")

    # phase 1: drive artificials to zero
    kept = list(range(m))
    if n_art:
        cost1 = np.zeros(N)
        cost1[n + n_slack :] = 1.0
        run(cost1, N)
        art_basic = basis >= n + n_slack
        if float(xB[art_basic].sum()) > FEAS_TOL * max(1.0, abs(b).max() if m else 1.0):
            raise InfeasibleLP("phase-1 optimum is positive")
        drop = []
        for i in range(m):
            if basis[i] < n + n_slack:
                continue
            pivcol = -1
            for j in range(n + n_slack):
                if status[j] != _BASIC and abs(T[i, j]) > PIVOT_TOL:
                    pivcol = j
                    break
            if pivcol < 0:
                drop.append(i)  # row redundant over real variables
                continue
            old = int(basis[i])
            piv = T[i, pivcol]
            T[i, :] /= piv
            colv = T[:, pivcol].copy()
            colv[i] = 0.0
            T[:] -= np.outer(colv, T[i, :])
            basis[i] = pivcol
            xB[i] = nb_value[pivcol]
            status[pivcol] = _BASIC
            status[old] = _LO
            nb_value[old] = 0.0
        if drop:
            keep = np.array([i for i in range(m) if i not in set(drop)], dtype=np.int64)
            T = T[keep, :]
            xB = xB[keep]
            basis = basis[keep]
            kept = [kept[i] for i in keep]
            m = len(kept)
    T = T[:, : n + n_slack]
    status = status[: n + n_slack]
    nb_value = nb_value[: n + n_slack]
    lob = lob[: n + n_slack]
    upb = upb[: n + n_slack]
    N = n + n_slack

    # phase 2
    cost2 = np.zeros(N)
    cost2[:n] = lp.objective
    run(cost2, N)

    x = nb_value.copy()
    x[basis] = xB
    values = x[:n].copy()

    # post-hoc feasibility audit against the original data
    if m_full := len(rels):
        lhs = A @ values
        for i in range(m_full):
            scale = max(1.0, abs(b[i]))
            err = lhs[i] - b[i]
            ok = (
                abs(err) <= FEAS_TOL * scale
                if rels[i] == "="
                else (err <= FEAS_TOL * scale if rels[i] == "<=" else err >= -FEAS_TOL * scale)
            )
            if not ok:
                raise LPError(f"post-hoc feasibility failed on row {i}: residual {err:.3g}")
    if np.any(values < lo - FEAS_TOL) or np.any(values > hi + FEAS_TOL):
        raise LPError("post-hoc bound check failed")

    tight = []
    if len(rels):
        lhs = A @ values
        for i in range(len(rels)):
            if rels[i] == "=" or abs(lhs[i] - b[i]) <= FEAS_TOL * max(1.0, abs(b[i])):
                tight.append(i)

    cert: list[tuple[str, int]] = []
    slack_rows = set(slack_of_row)
    for pos, orig in enumerate(kept):
        if orig not in slack_rows:
            cert.append(("row", orig))
        elif status[slack_of_row[orig]] != _BASIC:
            cert.append(("row", orig))
    for j in range(n):
        if status[j] == _LO:
            cert.append(("lo", j))
        elif status[j] == _HI:
            cert.append(("hi", j))
    if len(cert) != n:
        raise LPError(f"basis certificate has {len(cert)} conditions for {n} variables")

    return BasicOptimal(
        values=values,
        objective_value=float(lp.objective @ values),
        tight_rows=tight,
        basis_certificate=cert,
    )
