"""Small convex conic modelling layer on top of the Clarabel interior-point solver.

A :class:`ConicProgram` collects affine expressions over scalar variables and
places them in cones (zero, non-negative, second-order, rotated
second-order, exponential). The objective is linear plus an optional sum of
weighted squares of affine expressions. :func:`solve` assembles the program
into the standard form

    minimize    1/2 x'Px + q'x + const
    subject to  b - A x in K

and reports a solver-independent residual check next to the solver status.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"
ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True)
class Affine:
    """``sum(coef * x[idx]) + const``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    @staticmethod
    def var(i: int, coef: float = 1.0) -> "Affine":
        return Affine(np.array([int(i)]), np.array([float(coef)]), 0.0)

    @staticmethod
    def constant(c: float) -> "Affine":
        return Affine(np.zeros(0, dtype=int), np.zeros(0), float(c))

    @staticmethod
    def lin(idx, coef, const: float = 0.0) -> "Affine":
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).copy()
        return Affine(idx, coef, float(const))

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(self.idx, self.coef, self.const + float(other))
        return Affine(
            np.concatenate([self.idx, other.idx]),
            np.concatenate([self.coef, other.coef]),
            self.const + other.const,
        )

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s: float):
        return Affine(self.idx, self.coef * float(s), self.const * float(s))

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx] + self.const) if len(self.idx) else self.const


@dataclass
class _Cone:
    kind: str  # "zero" | "nonneg" | "soc" | "exp"
    exprs: list
    label: str = ""


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class ConicProgram:
    def __init__(self):
        self.n = 0
        self.names: list[str] = []
        self.q: list[tuple[int, float]] = []
        self.P: list[tuple[int, int, float]] = []
        self.const = 0.0
        self.cones: list[_Cone] = []

    # -- variables -----------------------------------------------------
    def add_variables(self, count: int, name: str = "x", lb=None, ub=None) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.names.extend(f"{name}[{j}]" for j in range(count))
        if lb is not None:
            lb = np.broadcast_to(np.asarray(lb, dtype=float), (count,))
            for i, b in zip(idx, lb):
                if np.isfinite(b):
                    self.add_le(Affine.constant(b) - Affine.var(i), label=f"lb {name}")
        if ub is not None:
            ub = np.broadcast_to(np.asarray(ub, dtype=float), (count,))
            for i, b in zip(idx, ub):
                if np.isfinite(b):
                    self.add_le(Affine.var(i) - b, label=f"ub {name}")
        return idx

    # -- objective -----------------------------------------------------
    def add_objective(self, expr: Affine) -> None:
        self.q.extend(zip(expr.idx.tolist(), expr.coef.tolist()))
        self.const += expr.const

    def add_square(self, expr: Affine, weight: float = 1.0) -> None:
        """Add ``weight * expr**2`` (weight >= 0) to the objective."""
        if weight < 0:
            raise ValueError("square terms need a non-negative weight")
        if weight == 0:
            return
        for i, a in zip(expr.idx.tolist(), expr.coef.tolist()):
            for j, b in zip(expr.idx.tolist(), expr.coef.tolist()):
                self.P.append((i, j, 2.0 * weight * a * b))
            self.q.append((i, 2.0 * weight * expr.const * a))
        self.const += weight * expr.const**2

    # -- constraints ---------------------------------------------------
    def _check(self, *exprs):
        for e in exprs:
            if len(e.idx) and (e.idx.min() < 0 or e.idx.max() >= self.n):
                raise IndexError("constraint references an undeclared variable")

    def add_eq(self, expr: Affine, label: str = "") -> None:
        self._check(expr)
        self.cones.append(_Cone("zero", [expr], label))

    def add_le(self, expr: Affine, label: str = "") -> None:
        """``expr <= 0``."""
        self._check(expr)
        self.cones.append(_Cone("nonneg", [-expr], label))

    def add_soc(self, t: Affine, ws, label: str = "") -> None:
        """``||ws|| <= t``."""
        ws = list(ws)
        self._check(t, *ws)
        self.cones.append(_Cone("soc", [t, *ws], label))

    def add_rotated_soc(self, u: Affine, v: Affine, ws, label: str = "") -> None:
        """``2 u v >= ||ws||^2`` with ``u, v >= 0``."""
        r = 1.0 / math.sqrt(2.0)
        self.add_soc((u + v) * r, [(u - v) * r, *ws], label=label)

    def add_exp(self, x: Affine, y: Affine, z: Affine, label: str = "") -> None:
        """``y exp(x / y) <= z`` with ``y > 0``."""
        self._check(x, y, z)
        self.cones.append(_Cone("exp", [x, y, z], label))

    # -- evaluation ----------------------------------------------------
    def objective_value(self, x: np.ndarray) -> float:
        val = self.const + sum(c * x[i] for i, c in self.q)
        val += 0.5 * sum(v * x[i] * x[j] for i, j, v in self.P)
        return float(val)

    def violations(self, x: np.ndarray) -> list[tuple[str, float]]:
        """Per-cone violation of ``x``, evaluated directly from the expressions."""
        out = []
        for cone in self.cones:
            vals = np.array([e.value(x) for e in cone.exprs])
            if cone.kind == "zero":
                v = abs(vals[0])
            elif cone.kind == "nonneg":
                v = max(0.0, -vals[0])
            elif cone.kind == "soc":
                v = max(0.0, float(np.linalg.norm(vals[1:])) - vals[0])
            else:
                ex, ey, ez = vals
                if ey <= 0:
                    v = max(0.0, -ey) + (max(0.0, -ez) if ex <= 0 else math.inf)
                else:
                    v = max(0.0, ey * math.exp(min(ex / ey, 700.0)) - ez)
            out.append((cone.label or cone.kind, float(v)))
        return out

    def max_violation(self, x: np.ndarray, relative: bool = True) -> float:
        worst = 0.0
        for (label, v), cone in zip(self.violations(x), self.cones):
            if relative:
                scale = 1.0 + max(abs(e.value(x)) for e in cone.exprs)
                v = v / scale
            worst = max(worst, v)
        return worst

    # -- assembly ------------------------------------------------------
    def standard_form(self):
        """Return ``(P, q, const, A, b, cones)`` with Clarabel cone objects."""
        order = {"zero": 0, "nonneg": 1, "soc": 2, "exp": 3}
        rows, cols, vals, b = [], [], [], []
        cone_spec: list[tuple[str, int]] = []
        for kind in ("zero", "nonneg", "soc", "exp"):
            for cone in (c for c in self.cones if order[c.kind] == order[kind]):
                for e in cone.exprs:
                    r = len(b)
                    rows.extend([r] * len(e.idx))
                    cols.extend(e.idx.tolist())
                    vals.extend((-e.coef).tolist())
                    b.append(e.const)
                if kind in ("zero", "nonneg") and cone_spec and cone_spec[-1][0] == kind:
                    cone_spec[-1] = (kind, cone_spec[-1][1] + 1)
                else:
                    cone_spec.append((kind, len(cone.exprs)))
        m = len(b)
        A = sp.csc_matrix((vals, (rows, cols)), shape=(m, self.n))
        A.sum_duplicates()
        q = np.zeros(self.n)
        for i, c in self.q:
            q[i] += c
        if self.P:
            pi, pj, pv = zip(*self.P)
            P = sp.csc_matrix((pv, (pi, pj)), shape=(self.n, self.n))
        else:
            P = sp.csc_matrix((self.n, self.n))
        P = sp.triu(P, format="csc")
        P.sum_duplicates()
        return P, q, self.const, A, np.array(b, dtype=float), cone_spec

    def dump(self, path: str | Path) -> None:
        """Write the standard form as plain text (see README for the layout)."""
        P, q, const, A, b, cones = self.standard_form()
        with open(path, "w") as fh:
            fh.write("# conic program: minimize 1/2 x'Px + q'x + const s.t. b - Ax in K\n")
            fh.write(f"VARIABLES {self.n}\n")
            fh.write(f"ROWS {A.shape[0]}\n")
            fh.write(f"CONST {const!r}\n")
            fh.write("CONES " + " ".join(f"{k.upper()}:{d}" for k, d in cones) + "\n")
            fh.write(f"Q {np.count_nonzero(q)}\n")
            for i in np.flatnonzero(q):
                fh.write(f"{i} {q[i]!r}\n")
            Pc = P.tocoo()
            fh.write(f"P {Pc.nnz}\n")
            for i, j, v in zip(Pc.row, Pc.col, Pc.data):
                fh.write(f"{i} {j} {v!r}\n")
            Ac = A.tocoo()
            fh.write(f"A {Ac.nnz}\n")
            for i, j, v in zip(Ac.row, Ac.col, Ac.data):
                fh.write(f"{i} {j} {v!r}\n")
            fh.write(f"B {len(b)}\n")
            for i, v in enumerate(b):
                fh.write(f"{i} {v!r}\n")


_STATUS = {
    "Solved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


def solve(program: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> SolveResult:
    """Solve ``program`` with an interior-point method.

    Infeasibility and unboundedness are reported through ``status``. When
    the solver stops short of full accuracy the point is still returned with
    status ``numerical-failure`` so callers can decide whether to use it.
    """
    P, q, const, A, b, spec = program.standard_form()
    cones = []
    for kind, dim in spec:
        if kind == "zero":
            cones.append(clarabel.ZeroConeT(dim))
        elif kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(dim))
        elif kind == "soc":
            cones.append(clarabel.SecondOrderConeT(dim))
        else:
            cones.append(clarabel.ExponentialConeT())
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_threads = 1
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    name = str(sol.status).split(".")[-1]
    status = _STATUS.get(name, NUMERICAL_FAILURE)
    if status in (INFEASIBLE, UNBOUNDED):
        return SolveResult(status, None, math.nan, iterations=sol.iterations, solve_time=sol.solve_time)
    x = np.array(sol.x)
    if not np.all(np.isfinite(x)):
        return SolveResult(NUMERICAL_FAILURE, None, math.nan, iterations=sol.iterations)
    primal = sol.obj_val + const
    dual = sol.obj_val_dual + const
    residuals = {
        "primal": float(sol.r_prim),
        "dual": float(sol.r_dual),
        "gap": abs(primal - dual) / max(1.0, abs(primal)),
        "violation": program.max_violation(x),
    }
    return SolveResult(status, x, float(primal), residuals, sol.iterations, sol.solve_time)
