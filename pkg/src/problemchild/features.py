"""Edge featurization.

Turns one parent->child process pair into a fixed-layout numeric
vector, plus the vocabulary fitting that featurization depends on.

Vector layout (version 1), K = number of fitted TF-IDF terms:

    offset  width  block
    0       1      lifetime seconds of the child, clipped to [0, cap]
    1       101    child process-name one-hot (100 names + UNK)
    102     101    parent process-name one-hot (100 names + UNK)
    203     4      signature status one-hot (valid/invalid/unsigned/unknown)
    207     1      child elevation tri-state (0 / 0.5 / 1)
    208     5      integrity level one-hot (low/med/high/system/unknown)
    213     1      child runs-as-system tri-state (0 / 0.5 / 1)
    214     1      parent-child user mismatch flag
    215     1      entropy of child process name (clamped to [0, 8])
    216     1      entropy of child command line (clamped to [0, 8])
    217     K      TF-IDF of child command line word n-grams, L2-normed

Single-process blocks describe the child (the process being created);
the parent contributes its name one-hot and its user for the mismatch
flag.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import FeaturizationError, VocabularyError
from .ingest import (DEFAULT_DELTA_T_CAP, IntegrityLevel, ProcessInstance,
                     SignatureStatus, TriState)

LAYOUT_VERSION = 1

ONEHOT_NAMES = 100
ONEHOT_SIZE = ONEHOT_NAMES + 1  # + UNK
UNK_SLOT = ONEHOT_NAMES
UNK_TOKEN = "<unk>"

_SIGNATURE_ORDER = (SignatureStatus.SIGNED_VALID, SignatureStatus.SIGNED_INVALID,
                    SignatureStatus.UNSIGNED, SignatureStatus.UNKNOWN)
_INTEGRITY_ORDER = (IntegrityLevel.LOW, IntegrityLevel.MEDIUM,
                    IntegrityLevel.HIGH, IntegrityLevel.SYSTEM,
                    IntegrityLevel.UNKNOWN)
_TRISTATE_VALUE = {TriState.FALSE: 0.0, TriState.UNKNOWN: 0.5, TriState.TRUE: 1.0}

_TOKEN_DELIMS = set(' \t\r\n/\\=,;"')


def _pad_token(i: int) -> str:
    # '<' and '>' are illegal in Windows file names, so padding slots can
    # never collide with a real process basename.
    return f"<pad{i}>"


@dataclass
class FeatureLayout:
    """Named offsets into the feature vector for a given TF-IDF width."""

    k_tfidf: int
    delta_t: int = 0
    child_onehot: slice = field(default=slice(1, 1 + ONEHOT_SIZE))
    parent_onehot: slice = field(default=slice(102, 102 + ONEHOT_SIZE))
    signature: slice = field(default=slice(203, 207))
    elevation: int = 207
    integrity: slice = field(default=slice(208, 213))
    is_system: int = 213
    user_mismatch: int = 214
    name_entropy: int = 215
    cmdline_entropy: int = 216

    @property
    def tfidf(self) -> slice:
        return slice(217, 217 + self.k_tfidf)

    @property
    def length(self) -> int:
        return 217 + self.k_tfidf


@dataclass
class FeatureVocabulary:
    """Fitted featurization vocabularies; immutable after fit."""

    process_onehot_names: list
    tfidf_terms: list  # [(term, idf), ...] in slot order
    delta_t_cap: float = DEFAULT_DELTA_T_CAP
    ngram_range: tuple = (1, 2)
    layout_version: int = LAYOUT_VERSION

    def __post_init__(self):
        self._name_index = {
            name: i for i, name in enumerate(self.process_onehot_names)
            if not (name.startswith("<pad") or name == UNK_TOKEN)
        }
        self._term_index = {term: i for i, (term, _) in enumerate(self.tfidf_terms)}
        self._idf = np.array([idf for _, idf in self.tfidf_terms], dtype=np.float64)

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(k_tfidf=len(self.tfidf_terms))

    def name_slot(self, name: str) -> int:
        return self._name_index.get(name, UNK_SLOT)

    def to_json_dict(self) -> dict:
        return {
            "layout_version": self.layout_version,
            "delta_t_cap": self.delta_t_cap,
            "ngram_range": list(self.ngram_range),
            "process_onehot_names": list(self.process_onehot_names),
            "tfidf_terms": [[t, idf] for t, idf in self.tfidf_terms],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FeatureVocabulary":
        return cls(
            process_onehot_names=list(d["process_onehot_names"]),
            tfidf_terms=[(t, float(idf)) for t, idf in d["tfidf_terms"]],
            delta_t_cap=float(d["delta_t_cap"]),
            ngram_range=tuple(d["ngram_range"]),
            layout_version=int(d["layout_version"]),
        )


@dataclass(eq=False)
class EdgeFeatureVector:
    values: np.ndarray
    layout_version: int = LAYOUT_VERSION


def shannon_entropy(s: str) -> float:
    """Character-level Shannon entropy of s in bits; empty string -> 0."""
    if not s:
        return 0.0
    counts = Counter(s)
    n = len(s)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


def tokenize(command_line: str) -> list:
    """Split a command line on whitespace and / \\ = , ; " then lowercase."""
    tokens = []
    current = []
    for ch in command_line:
        if ch in _TOKEN_DELIMS:
            if current:
                tokens.append("".join(current).lower())
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current).lower())
    return tokens


def ngram_terms(tokens: Sequence[str], ngram_range: tuple) -> list:
    lo, hi = ngram_range
    terms = []
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            terms.append(" ".join(tokens[i:i + n]))
    return terms


def fit_vocabulary(training_instances: Sequence[ProcessInstance],
                   k_tfidf: int = 200,
                   ngram_range: tuple = (1, 2),
                   delta_t_cap: float = DEFAULT_DELTA_T_CAP) -> FeatureVocabulary:
    """Fit one-hot and TF-IDF vocabularies on a training corpus.

    One-hot slots go to the 100 most frequent process names (ties broken
    lexicographically); unused slots are padded with tokens that cannot
    collide with real names. TF-IDF keeps the top k terms by document
    frequency with IDF(t) = ln((1+N)/(1+df(t))) + 1 over the N training
    command lines.
    """
    if not training_instances:
        raise VocabularyError("cannot fit vocabulary on empty corpus")
    lo, hi = ngram_range
    if not (1 <= lo <= hi <= 3):
        raise VocabularyError(f"ngram_range {ngram_range} outside (1..3)")
    if k_tfidf < 1:
        raise VocabularyError(f"k_tfidf must be >= 1, got {k_tfidf}")

    name_counts = Counter(inst.process_name for inst in training_instances)
    ranked = sorted(name_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    names = [name for name, _ in ranked[:ONEHOT_NAMES]]
    names += [_pad_token(i) for i in range(len(names), ONEHOT_NAMES)]
    names.append(UNK_TOKEN)

    n_docs = len(training_instances)
    df: Counter = Counter()
    for inst in training_instances:
        terms = set(ngram_terms(tokenize(inst.create_event.command_line),
                                ngram_range))
        df.update(terms)
    top_terms = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:k_tfidf]
    tfidf_terms = [
        (term, math.log((1.0 + n_docs) / (1.0 + count)) + 1.0)
        for term, count in top_terms
    ]
    return FeatureVocabulary(
        process_onehot_names=names,
        tfidf_terms=tfidf_terms,
        delta_t_cap=delta_t_cap,
        ngram_range=(lo, hi),
    )


def tfidf_vector(command_line: str, vocab: FeatureVocabulary) -> np.ndarray:
    """Term-frequency x IDF over the vocabulary terms, L2-normalized.
    All-zero when no vocabulary term occurs."""
    out = np.zeros(len(vocab.tfidf_terms), dtype=np.float64)
    if not vocab.tfidf_terms:
        return out
    counts = Counter(ngram_terms(tokenize(command_line), vocab.ngram_range))
    for term, count in counts.items():
        slot = vocab._term_index.get(term)
        if slot is not None:
            out[slot] = count
    if out.any():
        out *= vocab._idf
        out /= np.linalg.norm(out)
    return out


def featurize_edge(parent: ProcessInstance, child: ProcessInstance,
                   vocab: FeatureVocabulary) -> EdgeFeatureVector:
    """Featurize one parent->child edge. Pure: identical inputs give
    bit-identical vectors."""
    if child.create_event.parent_guid != parent.guid:
        raise FeaturizationError("not a parent-child pair")
    layout = vocab.layout
    v = np.zeros(layout.length, dtype=np.float64)
    child_event = child.create_event

    v[layout.delta_t] = min(max(child.lifetime_seconds, 0.0), vocab.delta_t_cap)
    v[layout.child_onehot.start + vocab.name_slot(child.process_name)] = 1.0
    v[layout.parent_onehot.start + vocab.name_slot(parent.process_name)] = 1.0
    v[layout.signature.start +
      _SIGNATURE_ORDER.index(child_event.signature_status)] = 1.0
    v[layout.elevation] = _TRISTATE_VALUE[child_event.is_elevated]
    v[layout.integrity.start +
      _INTEGRITY_ORDER.index(child_event.integrity_level)] = 1.0
    v[layout.is_system] = _TRISTATE_VALUE[child_event.is_system_account]

    parent_user = parent.create_event.user
    child_user = child_event.user
    if parent_user and child_user and parent_user.lower() != child_user.lower():
        v[layout.user_mismatch] = 1.0

    v[layout.name_entropy] = min(shannon_entropy(child.process_name), 8.0)
    v[layout.cmdline_entropy] = min(shannon_entropy(child_event.command_line), 8.0)
    v[layout.tfidf] = tfidf_vector(child_event.command_line, vocab)
    return EdgeFeatureVector(values=v, layout_version=vocab.layout_version)
