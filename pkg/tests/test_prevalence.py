import math
import random

import pytest

from problemchild.errors import PrevalenceError
from problemchild.prevalence import (PrevalenceTable, build_prevalence,
                                     percentile_rank, query_pair,
                                     query_process)

from conftest import make_instance


def percentile_oracle(value, population):
    """Direct strict-count implementation."""
    below = 0
    for x in population:
        if x < value:
            below += 1
    return min(int(math.floor(100.0 * below / len(population))), 99)


def corpus_with_counts(counts, parent=None):
    """Instances with given name -> count; optionally all under one parent
    name (no parent instance needed for prevalence)."""
    out = []
    for name, count in counts.items():
        for _ in range(count):
            out.append(make_instance(
                name, parent_guid="p-guid" if parent else None,
                parent_name=parent))
    return out


class TestPercentileRank:
    def test_value_above_all_clamps_to_99(self):
        population = list(range(100))
        assert percentile_rank(1000.0, population) == 99

    def test_minimum_scores_zero(self):
        assert percentile_rank(1, [1, 2, 3]) == 0

    def test_tie_handling_strict_less_than(self):
        assert percentile_rank(5, [1, 2, 5, 5, 9]) == 40

    def test_empty_population_rejected(self):
        with pytest.raises(PrevalenceError):
            percentile_rank(1.0, [])

    def test_matches_oracle_on_random_multisets(self):
        rng = random.Random(8)
        for _ in range(1000):
            population = [rng.randrange(0, 20) for _ in
                          range(rng.randrange(1, 40))]
            value = rng.randrange(-2, 22)
            assert percentile_rank(value, population) == \
                percentile_oracle(value, population)


class TestBuildPrevalence:
    def test_single_name_single_sighting_percentile_zero(self):
        table = build_prevalence(corpus_with_counts({"a.exe": 1}))
        assert query_process(table, "a.exe").percentile == 0

    def test_single_child_conditional_probability_one(self):
        table = build_prevalence(
            corpus_with_counts({"ipconfig.exe": 3}, parent="cmd.exe"))
        stats = query_pair(table, "cmd.exe", "ipconfig.exe")
        assert stats.cond_prob == 1.0
        assert stats.percentile == 0  # population of one, nothing smaller

    def test_three_name_fixture(self):
        table = build_prevalence(
            corpus_with_counts({"a": 1, "b": 5, "c": 10}))
        assert query_process(table, "a").percentile == 0
        assert query_process(table, "b").percentile == 33
        assert query_process(table, "c").percentile == 66

    def test_empty_corpus_rejected(self):
        with pytest.raises(PrevalenceError, match="empty"):
            build_prevalence([])

    def test_pair_percentile_population_is_same_parent(self):
        # P(child|cmd) = {0.7, 0.2, 0.1}: the 0.7 child has 2 of 3 smaller.
        table = build_prevalence(
            corpus_with_counts({"a.exe": 7, "b.exe": 2, "c.exe": 1},
                               parent="cmd.exe"))
        assert query_pair(table, "cmd.exe", "a.exe").cond_prob == \
            pytest.approx(0.7)
        assert query_pair(table, "cmd.exe", "a.exe").percentile == 66
        assert query_pair(table, "cmd.exe", "b.exe").percentile == 33
        assert query_pair(table, "cmd.exe", "c.exe").percentile == 0

    def test_pairs_under_distinct_parents_do_not_mix(self):
        corpus = (corpus_with_counts({"a.exe": 9}, parent="cmd.exe")
                  + corpus_with_counts({"b.exe": 1}, parent="powershell.exe"))
        table = build_prevalence(corpus)
        # b.exe is powershell's only child: full probability, percentile 0.
        stats = query_pair(table, "powershell.exe", "b.exe")
        assert stats.cond_prob == 1.0 and stats.percentile == 0

    def test_conditional_probabilities_sum_to_one_per_parent(self):
        rng = random.Random(5)
        parents = ["cmd.exe", "explorer.exe", "services.exe"]
        corpus = []
        for parent in parents:
            for i in range(rng.randrange(2, 8)):
                corpus += corpus_with_counts(
                    {f"{parent}-kid{i}": rng.randrange(1, 9)}, parent=parent)
        table = build_prevalence(corpus)
        for parent in parents:
            total = sum(p for (par, _), p in table.pair_cond_prob.items()
                        if par == parent)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_count_monotone_implies_percentile_monotone(self):
        rng = random.Random(14)
        counts = {f"n{i}.exe": rng.randrange(1, 30) for i in range(25)}
        table = build_prevalence(corpus_with_counts(counts))
        for a in counts:
            for b in counts:
                if counts[a] > counts[b]:
                    assert table.process_percentile[a] >= \
                        table.process_percentile[b]

    def test_rebuild_from_permuted_corpus_identical(self):
        rng = random.Random(3)
        corpus = corpus_with_counts({"a": 3, "b": 1}, parent="cmd.exe")
        corpus += corpus_with_counts({"c": 2})
        baseline = build_prevalence(corpus)
        shuffled = corpus[:]
        rng.shuffle(shuffled)
        other = build_prevalence(shuffled)
        assert other == baseline


class TestQueries:
    def test_unseen_process(self):
        table = build_prevalence(corpus_with_counts({"a.exe": 1}))
        stats = query_process(table, "evil.exe")
        assert (stats.count, stats.percentile, stats.fraction) == (0, 0, 0.0)

    def test_unseen_pair(self):
        table = build_prevalence(corpus_with_counts({"a.exe": 1}))
        stats = query_pair(table, "cmd.exe", "evil.exe")
        assert (stats.cond_prob, stats.percentile, stats.fraction) == \
            (0.0, 0, 0.0)

    def test_most_common_process_has_maximal_percentile(self):
        table = build_prevalence(
            corpus_with_counts({"a": 1, "b": 5, "c": 10}))
        top = query_process(table, "c").percentile
        assert top == max(table.process_percentile.values())

    def test_outputs_in_range(self):
        rng = random.Random(77)
        counts = {f"n{i}": rng.randrange(1, 9) for i in range(30)}
        table = build_prevalence(corpus_with_counts(counts, parent="cmd.exe"))
        for name in counts:
            stats = query_process(table, name)
            assert 0 <= stats.percentile <= 99
            assert 0.0 <= stats.fraction < 1.0
            pair = query_pair(table, "cmd.exe", name)
            assert 0 <= pair.percentile <= 99
            assert 0.0 <= pair.fraction < 1.0


def test_json_round_trip(tmp_path):
    corpus = corpus_with_counts({"a": 2, "b": 3}, parent="cmd.exe")
    corpus += corpus_with_counts({"svchost.exe": 4})
    table = build_prevalence(corpus)
    path = tmp_path / "baseline.prev.json"
    table.save(path)
    again = PrevalenceTable.load(path)
    assert again == table


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "x.prev.json"
    path.write_text("{broken")
    with pytest.raises(PrevalenceError, match="corrupt"):
        PrevalenceTable.load(path)
    path.write_text('{"format": "other"}')
    with pytest.raises(PrevalenceError):
        PrevalenceTable.load(path)
