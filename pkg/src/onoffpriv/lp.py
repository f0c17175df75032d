"""Exact optimal download cost via linear programming, for small n.

The optimal private query distribution solves

    minimize    sum_q |q| * s(q)
    subject to  sum_{q containing x} a(q, x, u) = p(x | u)   for all x, u
                sum_{x in q} a(q, x, u) - s(q) = 0           for all q, u
                a, s >= 0

where a(q, x, u) = p(x, q | u) ranges over subset queries q that contain x,
and s(q) is the common value of p(q | u) forced by privacy. Variables with
x outside q are never instantiated. The program has on the order of
n^3 * 2^n variables, which is why it is only solved for n <= 5; the
construction in scheme.py exists precisely because this does not scale.

The solver is a self-contained dense two-phase simplex with Bland's rule.
Problem sizes here are tiny, so robustness wins over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from onoffpriv.markov import ConditionalTable

MAX_STATES = 5
FEAS_TOL = 1e-7
RESIDUAL_TOL = 1e-8


class TooLarge(ValueError):
    """The chain has too many states for the exact LP to stay tractable."""


class IterationLimit(RuntimeError):
    """The simplex did not converge within the iteration budget."""


class Infeasible(RuntimeError):
    """Phase 1 ended with artificial mass left.

    Downloading everything is always a feasible private scheme, so this can
    only mean the problem matrix was built wrong.
    """


@dataclass(frozen=True, eq=False)
class LpProblem:
    """Equality-form LP: minimize c @ v subject to A @ v = b, v >= 0.

    var_keys annotates each column: ("a", q, x, u) for joint query mass or
    ("s", q) for shared query probability, with q a sorted member tuple.
    row_keys annotates each row: ("marginal", x, u) or ("tie", q, u).
    """

    n: int
    delta: int
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    var_keys: list
    row_keys: list

    def to_json_obj(self) -> dict:
        rows, cols = np.nonzero(self.A)
        return {
            "n": self.n,
            "delta": self.delta,
            "c": self.c.tolist(),
            "b": self.b.tolist(),
            "a_sparse": [
                [int(r), int(cl), float(self.A[r, cl])]
                for r, cl in zip(rows, cols)
            ],
            "var_keys": [_key_to_json(k) for k in self.var_keys],
            "row_keys": [_key_to_json(k) for k in self.row_keys],
        }


@dataclass(frozen=True, eq=False)
class LpSolution:
    """Optimal point of an LpProblem.

    value is the optimal expected query size (an inverse rate). primal maps
    the semantic key of every variable above 1e-12 to its value. status is
    "optimal" whenever the solver returns instead of raising; the other
    states ("infeasible", "iteration-limit") surface as exceptions and the
    field exists so serialized records can carry them.
    """

    value: float
    primal: dict
    status: str
    iterations: int

    def to_json_obj(self) -> dict:
        return {
            "value": self.value,
            "status": self.status,
            "iterations": self.iterations,
            "primal": [
                {"key": _key_to_json(k), "value": v}
                for k, v in sorted(self.primal.items(), key=lambda kv: str(kv[0]))
            ],
        }


def _key_to_json(key: tuple):
    if key[0] == "a":
        _, q, x, u = key
        return {"kind": "a", "q": list(q), "x": x, "u": u}
    if key[0] == "s":
        return {"kind": "s", "q": list(key[1])}
    if key[0] == "marginal":
        return {"kind": "marginal", "x": key[1], "u": key[2]}
    return {"kind": "tie", "q": list(key[1]), "u": key[2]}


def all_subsets(n: int) -> list[tuple]:
    """Nonempty subsets of range(n) as sorted tuples, in bitmask order."""
    out = []
    for mask in range(1, 1 << n):
        out.append(tuple(i for i in range(n) if mask >> i & 1))
    return out


def formulate_lp(cond: ConditionalTable) -> LpProblem:
    """Build the exact-cost LP for one likelihood table.

    Raises:
        TooLarge: n exceeds 5 and the dense program would be unreasonable.
    """
    n, m = cond.n, cond.m
    if n > MAX_STATES:
        raise TooLarge(f"exact LP limited to n <= {MAX_STATES}, got n={n}")
    subsets = all_subsets(n)

    var_keys: list = []
    a_index: dict = {}
    for q in subsets:
        for x in q:
            for u in range(m):
                a_index[(q, x, u)] = len(var_keys)
                var_keys.append(("a", q, x, u))
    s_index: dict = {}
    for q in subsets:
        s_index[q] = len(var_keys)
        var_keys.append(("s", q))
    nvars = len(var_keys)

    row_keys: list = []
    rows = []
    b = []
    for x in range(n):
        for u in range(m):
            row = np.zeros(nvars)
            for q in subsets:
                if x in q:
                    row[a_index[(q, x, u)]] = 1.0
            rows.append(row)
            b.append(cond.values[u, x])
            row_keys.append(("marginal", x, u))
    for q in subsets:
        for u in range(m):
            row = np.zeros(nvars)
            for x in q:
                row[a_index[(q, x, u)]] = 1.0
            row[s_index[q]] = -1.0
            rows.append(row)
            b.append(0.0)
            row_keys.append(("tie", q, u))

    c = np.zeros(nvars)
    for q in subsets:
        c[s_index[q]] = float(len(q))

    return LpProblem(
        n=n,
        delta=cond.delta,
        c=c,
        A=np.array(rows),
        b=np.array(b),
        var_keys=var_keys,
        row_keys=row_keys,
    )


def _pivot(T: np.ndarray, basis: np.ndarray, i: int, j: int) -> None:
    T[i] /= T[i, j]
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])
    basis[i] = j


def _bland_iterate(
    T: np.ndarray, basis: np.ndarray, ncols: int, max_iters: int, tol: float
) -> int:
    """Run simplex iterations on a tableau until optimal.

    The last tableau row holds reduced costs (objective row), the last
    column the right-hand side. Only the first ncols columns may enter.
    Entering rule: lowest column index with a negative reduced cost.
    Leaving rule: lowest basis index among the ratio-test minimizers.
    """
    it = 0
    while True:
        red = T[-1, :ncols]
        candidates = np.nonzero(red < -tol)[0]
        if candidates.size == 0:
            return it
        if it >= max_iters:
            raise IterationLimit(f"no optimum after {max_iters} iterations")
        j = int(candidates[0])
        col = T[:-1, j]
        pos = np.nonzero(col > tol)[0]
        if pos.size == 0:
            # equality-constrained probability masses are bounded, so an
            # unbounded ray means the tableau itself is corrupted
            raise ArithmeticError("unbounded direction in a bounded program")
        ratios = T[:-1, -1][pos] / col[pos]
        best = ratios.min()
        tied = pos[ratios <= best + 1e-12]
        i = int(tied[np.argmin(basis[tied])])
        _pivot(T, basis, i, j)
        it += 1


def solve_simplex(
    p: LpProblem, max_iters: int = 200_000, tol: float = 1e-9
) -> LpSolution:
    """Two-phase dense simplex with Bland's anti-cycling rule.

    Raises:
        Infeasible: phase 1 cannot zero the artificial variables.
        IterationLimit: either phase exhausts max_iters.
    """
    A = p.A.copy()
    b = p.b.copy()
    nrows, nvars = A.shape

    neg = b < 0.0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificial basis, minimize total artificial mass
    T = np.zeros((nrows + 1, nvars + nrows + 1))
    T[:-1, :nvars] = A
    T[:-1, nvars:-1] = np.eye(nrows)
    T[:-1, -1] = b
    T[-1, :nvars] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = np.arange(nvars, nvars + nrows)

    iters = _bland_iterate(T, basis, nvars + nrows, max_iters, tol)
    phase1 = -T[-1, -1]
    if phase1 > FEAS_TOL:
        raise Infeasible(f"artificial mass {phase1:g} remains after phase 1")

    # pivot artificials out of the basis; a row with no real coefficient
    # left is redundant and is dropped
    keep = np.ones(nrows, dtype=bool)
    for i in range(nrows):
        if basis[i] < nvars:
            continue
        row = T[i, :nvars]
        j = np.nonzero(np.abs(row) > tol)[0]
        if j.size:
            _pivot(T, basis, i, int(j[0]))
        else:
            keep[i] = False
    if not keep.all():
        T = np.vstack([T[:-1][keep], T[-1]])
        basis = basis[keep]
    nrows = basis.shape[0]

    # phase 2: real objective over the real columns
    T2 = np.zeros((nrows + 1, nvars + 1))
    T2[:-1, :nvars] = T[:-1, :nvars]
    T2[:-1, -1] = T[:-1, -1]
    cb = p.c[basis]
    T2[-1, :nvars] = p.c - cb @ T2[:-1, :nvars]
    T2[-1, -1] = -float(cb @ T2[:-1, -1])

    iters += _bland_iterate(T2, basis, nvars, max_iters, tol)

    x = np.zeros(nvars)
    x[basis] = T2[:-1, -1]
    if x.min() < -1e-10:
        raise ArithmeticError(f"negative primal value {x.min():g}")
    residual = float(np.abs(p.A @ x - p.b).max())
    if residual > RESIDUAL_TOL:
        raise ArithmeticError(f"constraint residual {residual:g}")

    value = float(p.c @ x)
    primal = {
        p.var_keys[k]: float(x[k]) for k in np.nonzero(x > 1e-12)[0]
    }
    return LpSolution(
        value=value, primal=primal, status="optimal", iterations=iters
    )


def optimal_rate(cond: ConditionalTable) -> float:
    """Exact optimal download rate (messages recovered per message sent).

    The inverse of the LP optimum; errors from the formulation and the
    solver propagate.
    """
    sol = solve_simplex(formulate_lp(cond))
    return 1.0 / sol.value
