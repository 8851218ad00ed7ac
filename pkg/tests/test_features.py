import math
import random
import string

import numpy as np
import pytest

from problemchild.errors import FeaturizationError, VocabularyError
from problemchild.features import (LAYOUT_VERSION, ONEHOT_SIZE, UNK_SLOT,
                                   FeatureVocabulary, featurize_edge,
                                   fit_vocabulary, ngram_terms,
                                   shannon_entropy, tfidf_vector, tokenize)
from problemchild.ingest import IntegrityLevel, SignatureStatus

from conftest import make_instance


def entropy_oracle(s):
    """Independent frequency-count implementation."""
    if not s:
        return 0.0
    hist = {}
    for ch in s:
        hist[ch] = hist.get(ch, 0) + 1
    total = 0.0
    for count in hist.values():
        p = count / len(s)
        total -= p * math.log2(p)
    return total


class TestEntropy:
    def test_single_symbol(self):
        assert shannon_entropy("aaaa") == 0.0

    def test_two_equiprobable(self):
        assert shannon_entropy("ab") == 1.0

    def test_cmd_exe_golden(self):
        golden = 2.521640636343318  # frozen from entropy_oracle("cmd.exe")
        assert shannon_entropy("cmd.exe") == pytest.approx(golden, abs=1e-12)
        assert entropy_oracle("cmd.exe") == pytest.approx(golden, abs=1e-12)

    def test_empty(self):
        assert shannon_entropy("") == 0.0

    def test_matches_oracle_and_distinct_bound(self):
        rng = random.Random(17)
        alphabet = string.ascii_letters + string.digits + " .\\/-_%"
        for _ in range(200):
            s = "".join(rng.choice(alphabet)
                        for _ in range(rng.randrange(0, 60)))
            got = shannon_entropy(s)
            assert got == pytest.approx(entropy_oracle(s), abs=1e-12)
            if s:
                assert got <= math.log2(len(set(s))) + 1e-12


class TestTokenize:
    def test_splits_on_delimiters(self):
        assert tokenize("ipconfig /all") == ["ipconfig", "all"]
        assert tokenize('reg add "HKCU\\Env" /v windir') == [
            "reg", "add", "hkcu", "env", "v", "windir"]

    def test_lowercases(self):
        assert tokenize("PING -n 2") == ["ping", "-n", "2"]

    def test_empty(self):
        assert tokenize("") == []

    def test_ngrams(self):
        assert ngram_terms(["a", "b", "c"], (1, 2)) == [
            "a", "b", "c", "a b", "b c"]


class TestFitVocabulary:
    def test_most_frequent_name_gets_slot_zero(self):
        corpus = ([make_instance("svchost.exe") for _ in range(5)]
                  + [make_instance("cmd.exe") for _ in range(2)])
        vocab = fit_vocabulary(corpus, k_tfidf=10)
        assert vocab.process_onehot_names[0] == "svchost.exe"
        assert vocab.process_onehot_names[1] == "cmd.exe"

    def test_padding_and_unk(self):
        corpus = [make_instance(n) for n in ("a.exe", "b.exe", "c.exe")]
        vocab = fit_vocabulary(corpus, k_tfidf=5)
        names = vocab.process_onehot_names
        assert len(names) == ONEHOT_SIZE == 101
        assert names[:3] == ["a.exe", "b.exe", "c.exe"]
        assert all(n.startswith("<pad") for n in names[3:100])
        assert names[100] == "<unk>"
        assert len(set(names)) == 101
        assert all(n == n.lower() for n in names)

    def test_tie_break_lexicographic(self):
        corpus = [make_instance(n) for n in ("zz.exe", "aa.exe")]
        vocab = fit_vocabulary(corpus, k_tfidf=5)
        assert vocab.process_onehot_names[:2] == ["aa.exe", "zz.exe"]

    def test_idf_term_in_every_document(self):
        # IDF(t) = ln((1+N)/(1+df)) + 1 = ln(11/11) + 1 = 1.0
        corpus = [make_instance(cmdline=f"ping host{i}") for i in range(10)]
        vocab = fit_vocabulary(corpus, k_tfidf=50)
        idf = dict(vocab.tfidf_terms)
        assert idf["ping"] == pytest.approx(1.0, abs=1e-12)

    def test_idf_values_finite_positive(self):
        corpus = [make_instance(cmdline=c) for c in
                  ("a b", "a c", "d", "", "a b c d")]
        vocab = fit_vocabulary(corpus, k_tfidf=100)
        assert all(math.isfinite(idf) and idf > 0
                   for _, idf in vocab.tfidf_terms)

    def test_empty_corpus_rejected(self):
        with pytest.raises(VocabularyError, match="empty corpus"):
            fit_vocabulary([], k_tfidf=10)

    def test_order_invariant(self):
        rng = random.Random(3)
        corpus = [make_instance(f"p{i % 7}.exe", cmdline=f"run task{i % 5}")
                  for i in range(40)]
        baseline = fit_vocabulary(corpus, k_tfidf=30)
        shuffled = corpus[:]
        rng.shuffle(shuffled)
        other = fit_vocabulary(shuffled, k_tfidf=30)
        assert other.process_onehot_names == baseline.process_onehot_names
        assert other.tfidf_terms == baseline.tfidf_terms

    def test_json_round_trip(self):
        vocab = fit_vocabulary([make_instance(cmdline="a b c")], k_tfidf=5)
        again = FeatureVocabulary.from_json_dict(vocab.to_json_dict())
        assert again.process_onehot_names == vocab.process_onehot_names
        assert again.tfidf_terms == vocab.tfidf_terms
        assert again.delta_t_cap == vocab.delta_t_cap


class TestTfidfVector:
    def test_no_vocab_terms_gives_zero_vector(self):
        vocab = FeatureVocabulary(
            process_onehot_names=_names(), tfidf_terms=[("alpha", 1.5)])
        v = tfidf_vector("nothing matches here", vocab)
        assert not v.any()

    def test_single_matching_unigram_normalizes_to_one(self):
        vocab = FeatureVocabulary(
            process_onehot_names=_names(), tfidf_terms=[("ipconfig", 1.7)])
        v = tfidf_vector("ipconfig", vocab)
        assert v.tolist() == [1.0]

    def test_hand_computed_two_terms(self):
        # tf=1 for both terms, idf (1.3, 2.1) -> [1.3, 2.1] / ||.||.
        vocab = FeatureVocabulary(
            process_onehot_names=_names(),
            tfidf_terms=[("ipconfig", 1.3), ("all", 2.1)])
        v = tfidf_vector("ipconfig /all", vocab)
        assert v.tolist() == pytest.approx(
            [0.5263546146162954, 0.8502651466878619], abs=1e-12)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def _names(extra=()):
    names = list(extra)
    names += [f"<pad{i}>" for i in range(len(names), 100)]
    names.append("<unk>")
    return names


@pytest.fixture(scope="module")
def small_vocab():
    corpus = [make_instance(n, cmdline=c) for n, c in [
        ("cmd.exe", "cmd /c dir"),
        ("cmd.exe", "cmd /c dir"),
        ("explorer.exe", ""),
        ("svchost.exe", "svchost -k netsvcs"),
        ("ipconfig.exe", "ipconfig /all"),
    ]]
    return fit_vocabulary(corpus, k_tfidf=20)


class TestFeaturizeEdge:
    def _pair(self, child_name="cmd.exe", parent_name="explorer.exe",
              child_user="CORP\\alice", parent_user="CORP\\alice", **kwargs):
        parent = make_instance(parent_name, user=parent_user)
        child = make_instance(child_name, parent_guid=parent.guid,
                              parent_name=parent_name, user=child_user,
                              **kwargs)
        return parent, child

    def test_child_onehot_slot(self, small_vocab):
        parent, child = self._pair(child_name="cmd.exe")
        layout = small_vocab.layout
        slot = small_vocab.name_slot("cmd.exe")
        v = featurize_edge(parent, child, small_vocab).values
        block = v[layout.child_onehot]
        assert block[slot] == 1.0 and block.sum() == 1.0

    def test_unknown_name_maps_to_unk(self, small_vocab):
        parent, child = self._pair(child_name="evil.exe")
        v = featurize_edge(parent, child, small_vocab).values
        assert v[small_vocab.layout.child_onehot][UNK_SLOT] == 1.0

    def test_same_user_no_mismatch(self, small_vocab):
        parent, child = self._pair(child_user="SYSTEM", parent_user="SYSTEM")
        v = featurize_edge(parent, child, small_vocab).values
        assert v[small_vocab.layout.user_mismatch] == 0.0

    def test_different_users_mismatch(self, small_vocab):
        parent, child = self._pair(child_user="CORP\\bob",
                                   parent_user="CORP\\alice")
        v = featurize_edge(parent, child, small_vocab).values
        assert v[small_vocab.layout.user_mismatch] == 1.0

    def test_unknown_user_no_mismatch(self, small_vocab):
        parent, child = self._pair(child_user="CORP\\bob", parent_user="")
        v = featurize_edge(parent, child, small_vocab).values
        assert v[small_vocab.layout.user_mismatch] == 0.0

    def test_empty_cmdline_zero_entropy_zero_tfidf(self, small_vocab):
        parent, child = self._pair(cmdline="")
        layout = small_vocab.layout
        v = featurize_edge(parent, child, small_vocab).values
        assert v[layout.cmdline_entropy] == 0.0
        assert not v[layout.tfidf].any()

    def test_delta_t_clipped(self, small_vocab):
        parent, child = self._pair(lifetime=1e9)
        v = featurize_edge(parent, child, small_vocab).values
        assert v[small_vocab.layout.delta_t] == small_vocab.delta_t_cap

    def test_guid_mismatch_rejected(self, small_vocab):
        parent = make_instance("explorer.exe")
        child = make_instance("cmd.exe", parent_guid="someone-else")
        with pytest.raises(FeaturizationError, match="not a parent-child pair"):
            featurize_edge(parent, child, small_vocab)

    def test_pure_function_bit_identical(self, small_vocab):
        parent, child = self._pair(cmdline="cmd /c dir")
        a = featurize_edge(parent, child, small_vocab).values
        b = featurize_edge(parent, child, small_vocab).values
        assert a.tobytes() == b.tobytes()

    def test_layout_version_stamped(self, small_vocab):
        parent, child = self._pair()
        assert featurize_edge(parent, child, small_vocab).layout_version \
            == LAYOUT_VERSION


class TestBlockInvariants:
    """Property test: every vector satisfies the block invariants."""

    def test_random_instances(self, small_vocab):
        rng = random.Random(99)
        layout = small_vocab.layout
        names = ["cmd.exe", "evil.exe", "svchost.exe", "x.exe"]
        users = ["", "CORP\\alice", "CORP\\bob", "NT AUTHORITY\\SYSTEM"]
        cmdlines = ["", "cmd /c dir", "ipconfig /all",
                    "".join(chr(rng.randrange(33, 1000)) for _ in range(50))]
        for _ in range(100):
            parent = make_instance(rng.choice(names), user=rng.choice(users))
            child = make_instance(
                rng.choice(names),
                parent_guid=parent.guid,
                user=rng.choice(users),
                cmdline=rng.choice(cmdlines),
                lifetime=rng.uniform(-5, 2e5),
                signature=rng.choice(list(SignatureStatus)),
                integrity=rng.choice(list(IntegrityLevel)),
            )
            v = featurize_edge(parent, child, small_vocab).values
            assert len(v) == layout.length
            assert v[layout.child_onehot].sum() == 1.0
            assert v[layout.parent_onehot].sum() == 1.0
            assert v[layout.signature].sum() == 1.0
            assert v[layout.integrity].sum() == 1.0
            assert v[layout.elevation] in (0.0, 0.5, 1.0)
            assert v[layout.is_system] in (0.0, 0.5, 1.0)
            assert 0.0 <= v[layout.name_entropy] <= 8.0
            assert 0.0 <= v[layout.cmdline_entropy] <= 8.0
            assert 0.0 <= v[layout.delta_t] <= small_vocab.delta_t_cap
            norm = np.linalg.norm(v[layout.tfidf])
            assert norm == 0.0 or norm == pytest.approx(1.0, abs=1e-12)
