import json

import numpy as np
import pytest

from onoffpriv.bounds import rate_inner, theta_profile
from onoffpriv.markov import conditional_table, symmetric_chain, u_index
from onoffpriv.scheme import (
    MismatchedTotals,
    SchemeDistribution,
    ZeroLikelihoodContext,
    build_scheme,
    collapse_to_sets,
    conditional_query_sampler,
    refine_segments,
)


def built(n, alpha, delta):
    cond = conditional_table(symmetric_chain(n, alpha), delta)
    profile = theta_profile(cond)
    return cond, profile, build_scheme(profile, cond)


def total_weighted_size(s):
    return sum(s.query_size(qkey) * mass for (qkey, _, _), mass in s.entries.items())


class TestConstruction:
    def test_uniform_chain_sends_singletons(self):
        _, _, s = built(3, 1 / 3, 2)
        assert all(sum(z) == 1 for (z, _, _) in s.entries)

    def test_zero_gap_sends_everything(self, rng, chain_factory):
        cond = conditional_table(chain_factory(rng, 3), 0)
        s = build_scheme(theta_profile(cond), cond)
        assert all(z == (1, 1, 1) for (z, _, _) in s.entries)

    def test_marginals_reconstruct_the_table(self, rng, chain_factory):
        for n in (2, 3, 5):
            for delta in (1, 2):
                cond = conditional_table(chain_factory(rng, n), delta)
                s = build_scheme(theta_profile(cond), cond)
                total = {}
                for (_, x, u), mass in s.entries.items():
                    total[(x, u)] = total.get((x, u), 0.0) + mass
                for u in range(cond.m):
                    for x in range(n):
                        assert total.get((x, u), 0.0) == pytest.approx(
                            cond.values[u, x], abs=1e-12
                        )

    def test_query_size_law_per_context(self, rng, chain_factory):
        # P(download size = l | u) equals theta_l for every context
        cond = conditional_table(chain_factory(rng, 4), 2)
        profile = theta_profile(cond)
        s = build_scheme(profile, cond)
        for u in range(cond.m):
            by_size = np.zeros(4)
            for (z, _x, uu), mass in s.entries.items():
                if uu == u:
                    by_size[sum(z) - 1] += mass
            assert np.allclose(by_size, profile.theta, atol=1e-9)

    def test_expected_size_attains_inner_bound(self, rng, chain_factory):
        cond = conditional_table(chain_factory(rng, 5), 3)
        profile = theta_profile(cond)
        s = build_scheme(profile, cond)
        cost = sum(sum(z) * mass for (z, _, u), mass in s.entries.items()) / cond.m
        assert cost == pytest.approx(rate_inner(profile), abs=1e-9)

    def test_entry_budget(self, rng, chain_factory):
        for n in (2, 4, 6):
            cond = conditional_table(chain_factory(rng, n), 2)
            s = build_scheme(theta_profile(cond), cond)
            assert s.entry_count <= n * n * n**4

    def test_residual_rows_carry_the_tail_mass(self, rng, chain_factory):
        cond = conditional_table(chain_factory(rng, 4), 1)
        profile = theta_profile(cond)
        _, ledger = build_scheme(profile, cond, return_ledger=True)
        assert np.allclose(
            ledger.m_final.sum(axis=1), profile.theta[-1], atol=1e-9
        )
        assert ledger.m_initial.min() >= 0.0

    def test_profile_table_mismatch_is_rejected(self, rng, chain_factory):
        cond_a = conditional_table(chain_factory(rng, 3), 1)
        cond_b = conditional_table(chain_factory(rng, 3), 1)
        with pytest.raises(ValueError):
            build_scheme(theta_profile(cond_a), cond_b)


class TestRefineSegments:
    def test_single_list_passes_through(self):
        segs = refine_segments([[(4, 0.3), (1, 0.2)]])
        assert segs == [((4,), 0.3), ((1,), 0.2)]

    def test_common_refinement_boundaries(self):
        segs = refine_segments([[(0, 0.5), (1, 0.5)], [(2, 0.25), (3, 0.75)]])
        assert segs == [
            ((0, 2), 0.25),
            ((0, 3), 0.25),
            ((1, 3), 0.5),
        ]

    def test_widths_reconstruct_each_input(self, rng):
        lists = []
        total = 1.0
        for _ in range(4):
            cuts = np.sort(rng.random(5)) * total
            widths = np.diff(np.concatenate([[0.0], cuts, [total]]))
            cols = rng.integers(0, 10, size=widths.size)
            lists.append([(int(c), float(w)) for c, w in zip(cols, widths)])
        segs = refine_segments(lists)
        for i, lst in enumerate(lists):
            got = {}
            for label, width in segs:
                got[label[i]] = got.get(label[i], 0.0) + width
            want = {}
            for col, width in lst:
                want[col] = want.get(col, 0.0) + width
            for col, w in want.items():
                assert got.get(col, 0.0) == pytest.approx(w, abs=1e-12)

    def test_mismatched_totals_raise(self):
        with pytest.raises(MismatchedTotals):
            refine_segments([[(0, 0.5)], [(1, 0.7)]])

    def test_empty_list_with_mass_raises(self):
        with pytest.raises(MismatchedTotals):
            refine_segments([[], [(1, 0.7)]])


class TestDistributionObject:
    def test_set_collapse_conserves_mass_and_helps_cost(self, rng, chain_factory):
        cond = conditional_table(chain_factory(rng, 4), 2)
        ms = build_scheme(theta_profile(cond), cond)
        st = collapse_to_sets(ms)
        tot_ms, tot_st = {}, {}
        for (z, x, u), mass in ms.entries.items():
            tot_ms[(x, u)] = tot_ms.get((x, u), 0.0) + mass
        for (q, x, u), mass in st.entries.items():
            tot_st[(x, u)] = tot_st.get((x, u), 0.0) + mass
            assert x in q
        for key, mass in tot_ms.items():
            assert tot_st[key] == pytest.approx(mass, abs=1e-12)
        assert total_weighted_size(st) <= total_weighted_size(ms) + 1e-12

    def test_json_round_trip_is_exact(self, rng, chain_factory):
        cond = conditional_table(chain_factory(rng, 3), 2)
        ms = build_scheme(theta_profile(cond), cond)
        for s in (ms, collapse_to_sets(ms)):
            obj = json.loads(json.dumps(s.to_json_obj()))
            back = SchemeDistribution.from_json_obj(obj)
            assert back.n == s.n and back.delta == s.delta
            assert back.form == s.form
            assert back.entries == s.entries

    def test_accepts_damaged_entries_for_later_checking(self):
        # the container must be able to hold a bad artifact; judging it
        # is the checker's job, not the constructor's
        s = SchemeDistribution(
            n=2, delta=1, form="set", entries={((0,), 0, 0): -0.25}
        )
        assert s.entry_count == 1

    def test_query_size_and_support(self):
        s = SchemeDistribution(
            n=3, delta=1, form="multiset", entries={((2, 0, 1), 0, 0): 1.0}
        )
        assert s.query_size((2, 0, 1)) == 3
        assert s.support_of((2, 0, 1)) == (0, 2)

    def test_unknown_context_raises(self):
        _, _, s = built(3, 0.6, 0)
        bad_x = 1  # impossible request when the context says x equals 0
        with pytest.raises(ZeroLikelihoodContext):
            s.mass_by_context(bad_x, u_index(0, 0, 3))


class TestSampler:
    def test_frequencies_track_masses(self, rng):
        cond, _, ms = built(3, 0.6, 1)
        s = collapse_to_sets(ms)
        x, u = 0, u_index(1, 2, 3)
        keys, cum = s.mass_by_context(x, u)
        probs = np.diff(np.concatenate([[0.0], cum])) / cum[-1]
        draws = 20000
        counts = {k: 0 for k in keys}
        for _ in range(draws):
            counts[conditional_query_sampler(s, x, u, rng)] += 1
        for k, p in zip(keys, probs):
            se = (p * (1 - p) / draws) ** 0.5
            assert abs(counts[k] / draws - p) <= 4 * se + 1e-9

    def test_deterministic_under_seed(self):
        _, _, ms = built(3, 0.25, 2)
        s = collapse_to_sets(ms)
        a = [
            conditional_query_sampler(s, 1, 4, np.random.default_rng(7))
            for _ in range(5)
        ]
        b = [
            conditional_query_sampler(s, 1, 4, np.random.default_rng(7))
            for _ in range(5)
        ]
        assert a == b
