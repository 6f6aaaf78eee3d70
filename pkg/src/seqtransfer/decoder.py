"""Prior-scaled, LM-fused CTC prefix beam search.

Per frame, every label (blank included) receives the score

    emission_weight * (logpost[t, c] - prior_scale * log prior[c])

so dividing out a power of the label prior converts posteriors into
scaled likelihoods.  The character LM adds log p(c | prefix) exactly when
a hypothesis extends by a character, and a terminal EOS factor when the
final hypotheses are ranked.  The LM itself carries weight one;
emission_weight sets the relative weight of the recognizer evidence.
Passing lm=None treats every character sequence as equally likely, which
removes the LM terms entirely.

Hypotheses live in collapsed-prefix space: per prefix the search keeps
separate log scores for paths ending in blank and in a non-blank, and
merges duplicate prefixes by log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .ctc import check_posteriors
from .ngram_lm import NgramLM
from .vocab import BLANK_ID

_NEG_INF = -np.inf


@dataclass(frozen=True)
class DecoderConfig:
    emission_weight: float = 0.4
    prior_scale: float = 0.5
    beam_width: int = 64
    prior_floor: float = 1e-6

    def __post_init__(self):
        if self.emission_weight < 0.0:
            raise ValueError(f"emission_weight must be >= 0, got {self.emission_weight}")
        if self.prior_scale < 0.0:
            raise ValueError(f"prior_scale must be >= 0, got {self.prior_scale}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if not (0.0 < self.prior_floor < 1.0):
            raise ValueError(f"prior_floor must be in (0, 1), got {self.prior_floor}")


def uniform_priors(label_count: int) -> np.ndarray:
    if label_count < 2:
        raise ValueError("need at least blank plus one character")
    return np.full(label_count, 1.0 / label_count)


def floor_and_renorm(probs, floor: float) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    p = np.maximum(p, floor)
    return p / p.sum()


def estimate_priors(posterior_batches: Iterable[np.ndarray],
                    floor: float = 1e-6) -> np.ndarray:
    """Mean of exp(log-posterior rows) over every frame of every matrix,
    floored and renormalized."""
    total = None
    frames = 0
    for mat in posterior_batches:
        m = check_posteriors(mat)
        s = np.exp(m.astype(np.float64)).sum(axis=0)
        if total is None:
            total = s
        elif total.shape != s.shape:
            raise ValueError("posterior matrices disagree on label count")
        else:
            total += s
        frames += m.shape[0]
    if total is None or frames == 0:
        raise ValueError("no posterior rows to estimate priors from")
    return floor_and_renorm(total / frames, floor)


def check_priors(priors, label_count: int) -> np.ndarray:
    p = np.asarray(priors, dtype=np.float64)
    if p.shape != (label_count,):
        raise ValueError(f"priors must have shape ({label_count},), got {p.shape}")
    if np.any(p <= 0.0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("priors must be strictly positive and sum to 1")
    return p


def lm_beam_decode(posteriors, lm: NgramLM | None, priors,
                   cfg: DecoderConfig) -> tuple[tuple[int, ...], float]:
    """Decode one posterior matrix.  Returns (character ids, score of the
    winning hypothesis).  Ties in score break toward the lexicographically
    smaller id sequence."""
    post = check_posteriors(posteriors).astype(np.float64)
    T, L = post.shape
    prior = check_priors(priors, L)
    if lm is not None and lm.vocab.emit_size != L:
        raise ValueError(f"posterior matrix has {L} labels but the LM vocabulary "
                         f"has {lm.vocab.emit_size}")

    emis = cfg.emission_weight * (post - cfg.prior_scale * np.log(prior)[None, :])

    if lm is not None:
        bos = lm.vocab.bos_id
        lm_cache: dict[tuple[int, ...], np.ndarray] = {}

        def lm_vec(prefix):
            v = lm_cache.get(prefix)
            if v is None:
                v = lm.next_log_probs((bos,) + prefix)
                lm_cache[prefix] = v
            return v
    else:
        def lm_vec(prefix):
            return None

    # per prefix: [log score of paths ending in blank, ending in non-blank]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, _NEG_INF]}
    for t in range(T):
        nxt: dict[tuple[int, ...], list[float]] = {}

        def bump(prefix, idx, val):
            cell = nxt.get(prefix)
            if cell is None:
                cell = [_NEG_INF, _NEG_INF]
                nxt[prefix] = cell
            cell[idx] = np.logaddexp(cell[idx], val)

        for prefix, (pb, pnb) in beams.items():
            tot = np.logaddexp(pb, pnb)
            # blank keeps the prefix as-is
            bump(prefix, 0, tot + emis[t, BLANK_ID])
            # repeated emission of the last character also keeps it
            if prefix:
                bump(prefix, 1, pnb + emis[t, prefix[-1]])
            vec = lm_vec(prefix)
            cand = emis[t, 1:]
            if vec is not None:
                cand = cand + vec[1:L]
            for c in range(1, L):
                # extending with the last character needs a blank gap, so
                # only blank-terminated paths contribute
                base = pb if (prefix and c == prefix[-1]) else tot
                if base == _NEG_INF:
                    continue
                bump(prefix + (c,), 1, base + cand[c - 1])
        if len(nxt) > cfg.beam_width:
            ranked = sorted(nxt.items(),
                            key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
            nxt = dict(ranked[:cfg.beam_width])
        beams = nxt

    best_prefix, best_score = None, None
    for prefix, (pb, pnb) in beams.items():
        score = np.logaddexp(pb, pnb)
        vec = lm_vec(prefix)
        if vec is not None:
            score += vec[lm.vocab.eos_id]
        if best_score is None or score > best_score or \
                (score == best_score and prefix < best_prefix):
            best_prefix, best_score = prefix, score
    return best_prefix, float(best_score)
