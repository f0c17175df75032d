"""Markov request chains and the likelihood tables they induce.

States are indexed 0..n-1 throughout the package. A context is the pair
(xtau, xnext): the request made the last time privacy was on and the next
upcoming request. Contexts are flattened to a single row index
u = xtau * n + xnext, giving m = n^2 rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-9
SIGMA_MATCH_TOL = 1e-12


class ZeroContextProbability(ValueError):
    """A context pair (xtau, xnext) is unreachable under the chain.

    The likelihood table conditions on the context, so every pair must have
    positive probability after delta + 1 transitions.
    """


def u_index(xtau: int, xnext: int, n: int) -> int:
    """Flatten a context pair into a row index."""
    if not (0 <= xtau < n and 0 <= xnext < n):
        raise ValueError(f"context pair ({xtau}, {xnext}) out of range for n={n}")
    return xtau * n + xnext


def u_pair(u: int, n: int) -> tuple[int, int]:
    """Recover the (xtau, xnext) pair from a flat row index."""
    if not 0 <= u < n * n:
        raise ValueError(f"context index {u} out of range for n={n}")
    xtau, xnext = divmod(u, n)
    return xtau, xnext


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic transition matrix of an n-state request chain.

    Attributes:
        entries: n x n array, entries[i][j] = probability of moving to
            state j from state i.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("transition matrix must be square")
        if entries.shape[0] < 2:
            raise ValueError("need at least 2 states")
        if (entries < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        row_err = np.abs(entries.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (max deviation {row_err:g})")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def is_strictly_positive(self) -> bool:
        """True when every one-step transition has positive probability."""
        return bool((self.entries > 0).all())


@dataclass(frozen=True, eq=False)
class ConditionalTable:
    """Likelihoods p(x | u) for every context u at a fixed gap delta.

    Attributes:
        n: number of states.
        delta: gap since privacy was last on (t - tau).
        values: m x n array with m = n^2; values[u][x] = p(x | u).
    """

    n: int
    delta: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        m = self.n * self.n
        if values.shape != (m, self.n):
            raise ValueError(f"values must have shape ({m}, {self.n})")
        if (values < -1e-15).any() or (values > 1 + 1e-12).any():
            raise ValueError("likelihoods must lie in [0, 1]")
        row_err = np.abs(values.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (max deviation {row_err:g})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class SymmetricSigmas:
    """The five distinct likelihood values of a symmetric chain.

    For a symmetric chain, p(x | u) with u = (xtau, xnext) takes only five
    values, determined by the equality pattern among xtau, x, and xnext:

        sigma1: xtau = x = xnext
        sigma2: xtau = x, x != xnext
        sigma3: xtau != x, x = xnext
        sigma4: xtau = xnext, x different
        sigma5: all three distinct (needs n >= 3)
    """

    n: int
    alpha: float
    delta: int
    sigma1: float
    sigma2: float
    sigma3: float
    sigma4: float
    sigma5: float

    def as_table(self) -> ConditionalTable:
        """Expand the five case values into a full likelihood table."""
        n = self.n
        values = np.empty((n * n, n))
        for xtau in range(n):
            for xnext in range(n):
                u = u_index(xtau, xnext, n)
                for x in range(n):
                    if xtau == x and x == xnext:
                        v = self.sigma1
                    elif xtau == x:
                        v = self.sigma2
                    elif x == xnext:
                        v = self.sigma3
                    elif xtau == xnext:
                        v = self.sigma4
                    else:
                        v = self.sigma5
                    values[u, x] = v
        return ConditionalTable(n=n, delta=self.delta, values=values)


def symmetric_chain(n: int, alpha: float) -> TransitionMatrix:
    """Chain that stays put with probability alpha, else moves uniformly.

    Args:
        n: number of states, at least 2.
        alpha: self-transition probability in [0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if n < 2:
        raise ValueError("need at least 2 states")
    entries = np.full((n, n), (1.0 - alpha) / (n - 1))
    np.fill_diagonal(entries, alpha)
    return TransitionMatrix(entries)


def matrix_power(P: TransitionMatrix, delta: int) -> np.ndarray:
    """P raised to the delta-th power; delta = 0 gives the identity.

    Iterated multiplication is exact enough here: delta stays small in every
    workload, so squaring tricks would buy nothing.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    out = np.eye(P.n)
    for _ in range(delta):
        out = out @ P.entries
    return out


def conditional_table(P: TransitionMatrix, delta: int) -> ConditionalTable:
    """Likelihood table p(x | u) induced by the chain at gap delta.

    With u = (xtau, xnext), Bayes gives
        p(x | u) = P[x, xnext] * (P^delta)[xtau, x] / (P^(delta+1))[xtau, xnext].

    Raises:
        ZeroContextProbability: some pair (xtau, xnext) cannot occur in
            delta + 1 steps, so conditioning on it is undefined.
    """
    n = P.n
    pd = matrix_power(P, delta)
    pd1 = pd @ P.entries
    if (pd1 <= 0.0).any():
        bad = np.argwhere(pd1 <= 0.0)[0]
        raise ZeroContextProbability(
            f"context pair ({bad[0]}, {bad[1]}) has zero probability at "
            f"delta={delta}"
        )
    # numer[xtau, xnext, x] = pd[xtau, x] * P[x, xnext]
    numer = pd[:, None, :] * P.entries.T[None, :, :]
    values = (numer / pd1[:, :, None]).reshape(n * n, n)
    return ConditionalTable(n=n, delta=delta, values=values)


def symmetric_sigmas(n: int, alpha: float, delta: int) -> SymmetricSigmas:
    """Closed-form likelihood values for a symmetric chain at gap delta >= 1.

    Writing b = (n-1)^delta and g = (n*alpha - 1)^delta, the common
    denominators are
        d_plus  = b + g * (n*alpha - 1)        (contexts with xtau = xnext)
        d_minus = (n-1) * b - g * (n*alpha - 1) (contexts with xtau != xnext)
    and the five values follow by evaluating the delta-step and single-step
    transition probabilities case by case.
    """
    if n < 2:
        raise ValueError("need at least 2 states")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if delta < 1:
        raise ValueError("delta must be at least 1")
    b = float(n - 1) ** delta
    g = (n * alpha - 1.0) ** delta
    d_plus = b + g * (n * alpha - 1.0)
    d_minus = (n - 1.0) * b - g * (n * alpha - 1.0)
    if d_plus <= 0.0 or d_minus <= 0.0:
        raise ZeroContextProbability(
            f"symmetric chain with n={n}, alpha={alpha} has an unreachable "
            f"context at delta={delta}"
        )
    sigma1 = alpha * (b + g * (n - 1.0)) / d_plus
    sigma2 = (1.0 - alpha) * (b + g * (n - 1.0)) / d_minus
    sigma3 = alpha * ((n - 1.0) * b - g * (n - 1.0)) / d_minus
    sigma4 = (1.0 - alpha) * (b - g) / (d_plus * (n - 1.0))
    sigma5 = (1.0 - alpha) * (b - g) / d_minus
    return SymmetricSigmas(
        n=n,
        alpha=alpha,
        delta=delta,
        sigma1=float(sigma1),
        sigma2=float(sigma2),
        sigma3=float(sigma3),
        sigma4=float(sigma4),
        sigma5=float(sigma5),
    )


def chain_from_dict(spec: dict) -> TransitionMatrix:
    """Build a chain from its JSON representation.

    Two forms are accepted:
        {"n": 3, "rows": [[...], [...], [...]]}
        {"symmetric": {"n": 3, "alpha": 0.6}}
    """
    if "symmetric" in spec:
        sym = spec["symmetric"]
        return symmetric_chain(int(sym["n"]), float(sym["alpha"]))
    if "rows" in spec:
        rows = np.asarray(spec["rows"], dtype=float)
        if "n" in spec and int(spec["n"]) != rows.shape[0]:
            raise ValueError("declared n does not match row count")
        return TransitionMatrix(rows)
    raise ValueError("chain spec needs either 'rows' or 'symmetric'")


def chain_to_dict(P: TransitionMatrix) -> dict:
    """JSON representation of a chain; inverse of chain_from_dict."""
    return {"n": P.n, "rows": P.entries.tolist()}
