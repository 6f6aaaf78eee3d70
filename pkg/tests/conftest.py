"""Shared helpers for the test suite."""

import itertools
import math

import numpy as np
import pytest

from seqtransfer import collapse


def random_log_posteriors(rng: np.random.Generator, T: int, L: int) -> np.ndarray:
    """Random T x L log-posterior matrix with exactly normalized rows."""
    logits = rng.normal(0.0, 2.0, (T, L))
    return logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)


def oracle_best(post, lm, priors, w, alpha):
    """Exhaustive decoder objective: path enumeration grouped by collapse,
    plus per-character and terminal LM factors."""
    T, L = post.shape
    emis = w * (post - alpha * np.log(np.asarray(priors))[None, :])
    scores = {}
    for path in itertools.product(range(L), repeat=T):
        seq = collapse(path)
        s = float(sum(emis[t, c] for t, c in enumerate(path)))
        scores[seq] = np.logaddexp(scores.get(seq, -math.inf), s)
    if lm is not None:
        bos = lm.vocab.bos_id
        for seq in scores:
            ctx = (bos,) + seq
            lm_score = sum(lm._cond(c, ctx[:i + 1]) for i, c in enumerate(seq))
            scores[seq] += lm_score + lm._cond(lm.vocab.eos_id, ctx)
    return min(scores.items(), key=lambda kv: (-kv[1], kv[0]))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
