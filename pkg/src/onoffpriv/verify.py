"""Independent checks for query distributions.

Everything here recomputes its quantities from the sparse entries alone and
deliberately shares no code with the construction in scheme.py, so the two
can vouch for each other. A distribution passes when queries always contain
the request, the induced query distribution is context-independent, the
per-(x, u) masses add up to the likelihood table, the query-size law matches
the theta increments, and the expected size does not exceed the achievable
bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from onoffpriv.bounds import ThetaProfile
from onoffpriv.markov import ConditionalTable


class DimensionMismatch(ValueError):
    """Distribution, table, and profile do not describe the same instance."""


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Raw maxima of every checked property, for caller-chosen thresholds.

    Attributes:
        decodability_violations: entries whose query does not contain the
            request (or whose stored mass is not positive), as
            (query key, x, u) triples.
        max_privacy_gap: largest |p(q | u) - p(q | u')| over queries and
            context pairs.
        marginal_errors: m x n array, |sum_q g(q, x, u) - p(x | u)|.
        size_law_errors: length-n vector of max-over-contexts deviations
            |P(|Z| = ell) - theta_ell|, or None for set-form distributions,
            whose size law only holds as an inequality.
        expected_cost: expected query size under a uniform context prior.
        cost_slack: achievable bound minus expected_cost.
        entry_count: number of stored (q, x, u) masses.
        tol: threshold the report was requested at; passes() uses it when
            no explicit tolerance is given.
    """

    decodability_violations: list
    max_privacy_gap: float
    marginal_errors: np.ndarray
    size_law_errors: np.ndarray | None
    expected_cost: float
    cost_slack: float
    entry_count: int
    tol: float = 1e-9

    @property
    def max_marginal_error(self) -> float:
        return float(self.marginal_errors.max())

    @property
    def max_size_law_error(self) -> float:
        if self.size_law_errors is None:
            return 0.0
        return float(self.size_law_errors.max())

    def passes(self, tol: float | None = None) -> bool:
        """True when every correctness property holds within tol.

        Cost is deliberately not gated: a distribution that downloads more
        than the achievable bound is wasteful, not wrong. cost_slack stays
        in the report for callers who do want to gate on it.
        """
        if tol is None:
            tol = self.tol
        return (
            not self.decodability_violations
            and self.max_privacy_gap < tol
            and self.max_marginal_error < tol
            and self.max_size_law_error < tol
        )

    def to_json_obj(self) -> dict:
        return {
            "decodability_violations": [
                {"q": list(q), "x": x, "u": u}
                for q, x, u in self.decodability_violations
            ],
            "max_privacy_gap": self.max_privacy_gap,
            "max_marginal_error": self.max_marginal_error,
            "marginal_errors": self.marginal_errors.tolist(),
            "size_law_errors": (
                None
                if self.size_law_errors is None
                else self.size_law_errors.tolist()
            ),
            "expected_cost": self.expected_cost,
            "cost_slack": self.cost_slack,
            "entry_count": self.entry_count,
        }


def _entry_size(qkey: tuple, form: str) -> int:
    if form == "multiset":
        return int(sum(qkey))
    return len(qkey)


def _entry_support(qkey: tuple, form: str) -> tuple:
    if form == "multiset":
        return tuple(i for i, c in enumerate(qkey) if c > 0)
    return qkey


def check_scheme(
    s,
    cond: ConditionalTable,
    profile: ThetaProfile,
    tol: float = 1e-9,
) -> VerificationReport:
    """Recompute every property of a query distribution from its entries.

    All report fields carry raw maxima; tol is only remembered as the
    default threshold for report.passes().

    Raises:
        DimensionMismatch: s, cond, and profile disagree on n or delta.
    """
    n, m = cond.n, cond.m
    if s.n != n or profile.n != n or profile.m != m:
        raise DimensionMismatch("state counts disagree")
    if s.delta != cond.delta:
        raise DimensionMismatch(
            f"distribution built for delta={s.delta}, table has {cond.delta}"
        )

    violations = []
    query_mass: dict = {}
    marginals = np.zeros((m, n))
    for (qkey, x, u), mass in s.entries.items():
        if mass <= 0.0:
            violations.append((qkey, x, u))
            continue
        if x not in _entry_support(qkey, s.form):
            violations.append((qkey, x, u))
        row = query_mass.get(qkey)
        if row is None:
            row = np.zeros(m)
            query_mass[qkey] = row
        row[u] += mass
        marginals[u, x] += mass

    if query_mass:
        per_query = np.stack(list(query_mass.values()))
        privacy_gap = float((per_query.max(axis=1) - per_query.min(axis=1)).max())
    else:
        privacy_gap = 0.0

    marginal_errors = np.abs(marginals - cond.values)

    size_law_errors = None
    if s.form == "multiset":
        by_size = np.zeros((n + 1, m))
        for qkey, row in query_mass.items():
            by_size[_entry_size(qkey, s.form)] += row
        size_law_errors = np.abs(
            by_size[1:] - profile.theta[:, None]
        ).max(axis=1)

    cost = expected_cost(s, cond, np.full(m, 1.0 / m))
    inner = float(np.arange(1, n + 1) @ profile.theta)

    return VerificationReport(
        decodability_violations=violations,
        max_privacy_gap=privacy_gap,
        marginal_errors=marginal_errors,
        size_law_errors=size_law_errors,
        expected_cost=cost,
        cost_slack=inner - cost,
        entry_count=len(s.entries),
        tol=tol,
    )


def expected_cost(s, cond: ConditionalTable, u_prior: np.ndarray) -> float:
    """Expected query size under a context prior, in messages per step.

    For a private distribution the result does not depend on the prior,
    because p(q | u) is the same for every u.
    """
    u_prior = np.asarray(u_prior, dtype=float)
    if u_prior.shape != (cond.m,):
        raise DimensionMismatch(f"prior must have length {cond.m}")
    if abs(float(u_prior.sum()) - 1.0) > 1e-9:
        raise ValueError("prior must sum to 1")
    total = 0.0
    for (qkey, _x, u), mass in s.entries.items():
        total += _entry_size(qkey, s.form) * u_prior[u] * mass
    return float(total)
