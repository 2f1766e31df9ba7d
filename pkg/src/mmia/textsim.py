"""Sentence-level n-gram similarity metrics (BLEU-N, ROUGE-N, ROUGE-L).

All functions take token lists (see :func:`tokenize`). Multiple references are
handled by :func:`score_vector_multi`, which keeps the best score per metric.
"""

import math
import re
import string
from collections import Counter
from dataclasses import astuple, dataclass

from .errors import EmptyCaption

DEFAULT_EPS = 1e-9

_PUNCT = re.compile("[%s]" % re.escape(string.punctuation))


@dataclass(frozen=True)
class ScoreVector:
    bleu1: float
    bleu2: float
    bleu3: float
    rouge_l: float

    def as_tuple(self):
        return astuple(self)


def tokenize(text):
    """Lowercase, drop ASCII punctuation and split on whitespace.

    >>> tokenize("This is a cat.")
    ['this', 'is', 'a', 'cat']
    """
    tokens = _PUNCT.sub(" ", text.lower()).split()
    if not tokens:
        raise EmptyCaption(f"no tokens in {text!r}")
    return tokens


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(candidate, reference, n):
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    return sum((cand & ref).values()), sum(cand.values()), sum(ref.values())


def bleu_n(candidate, reference, n, eps=DEFAULT_EPS):
    """Cumulative sentence BLEU with uniform weights up to order ``n``."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    c, r = len(candidate), len(reference)
    if c < n or r == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        matches, total, _ = _clipped_matches(candidate, reference, k)
        p = matches / total if matches > 0 else eps
        log_sum += math.log(p)
    bp = min(1.0, math.exp(1.0 - r / c))
    return min(1.0, bp * math.exp(log_sum / n))


def rouge_n(candidate, reference, n):
    """N-gram recall of the reference."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    if len(reference) < n:
        return 0.0
    matches, _, total = _clipped_matches(candidate, reference, n)
    return matches / total


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """LCS F1 (beta = 1)."""
    if not candidate or not reference:
        raise EmptyCaption("rouge_l needs two non-empty sequences")
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def score_vector(candidate, reference, eps=DEFAULT_EPS):
    if not candidate or not reference:
        raise EmptyCaption("cannot score an empty caption")
    return ScoreVector(
        bleu_n(candidate, reference, 1, eps),
        bleu_n(candidate, reference, 2, eps),
        bleu_n(candidate, reference, 3, eps),
        rouge_l(candidate, reference),
    )


def score_vector_multi(candidate, references, eps=DEFAULT_EPS):
    """Score against every reference and keep the per-metric maximum."""
    if not references:
        raise EmptyCaption("no references")
    vecs = [score_vector(candidate, ref, eps).as_tuple() for ref in references]
    return ScoreVector(*(max(col) for col in zip(*vecs)))
