"""
Beam search over word pieces with a length penalty and optional shallow fusion.

Scorers expose `start() -> state`, `step(state) -> (log_probs, state_after)` and
`feed(state_after, token) -> state`. Fusion LMs expose `start() -> (log_probs, state)`
(zero state with </s> already fed) and `step(state, token) -> (log_probs, state)`.
"""
from typing import Any, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from core.wordpiece import BOS_ID, EOS_ID, PAD_ID
from utils.config import LASConfig
from utils.errors import InvalidArgumentError
from utils.logger import logger

BLOCKED_TOKENS = frozenset((PAD_ID, BOS_ID))


class StepScorer(Protocol):
    vocab_size: int

    def start(self) -> Any: ...

    def step(self, state: Any) -> Tuple[np.ndarray, Any]: ...

    def feed(self, state: Any, token: int) -> Any: ...

    def default_max_steps(self, factor: float, offset: int) -> int: ...


class FusionLM(Protocol):
    def start(self) -> Tuple[np.ndarray, Any]: ...

    def step(self, state: Any, token: int) -> Tuple[np.ndarray, Any]: ...


class BeamConfig(BaseModel):
    beam: int = Field(16, ge=1)
    nbest: int = Field(16, ge=1)
    lm_weight: float = Field(0.3, ge=0)
    length_penalty: float = Field(0.6, ge=0)
    max_steps_factor: float = Field(2.0, ge=0)
    max_steps_offset: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _nbest_within_beam(self) -> "BeamConfig":
        if self.nbest > self.beam:
            raise ValueError(f"nbest ({self.nbest}) must not exceed beam ({self.beam})")
        return self

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "BeamConfig":
        return cls(
            beam=cfg.beam,
            nbest=cfg.nbest,
            lm_weight=cfg.lm_weight,
            length_penalty=cfg.length_penalty,
            max_steps_factor=cfg.max_steps_factor,
            max_steps_offset=cfg.max_steps_offset,
        )


class Hypothesis(BaseModel):
    tokens: List[int]                  # word-piece ids, ending with </s> when finished
    las_logp: float
    lm_logp: float = 0.0
    score: float
    finished: bool = True


class _Beam(NamedTuple):
    tokens: Tuple[int, ...]
    las_logp: float
    lm_logp: float
    state: Any
    lm_logprobs: Optional[np.ndarray]
    lm_state: Any


def length_penalty(length: int, alpha: float) -> float:
    """((5 + |y|) / 6) ** alpha."""
    return ((5.0 + length) / 6.0) ** alpha


def hypothesis_score(las_logp: float, lm_logp: float, length: int, lm_weight: float, alpha: float) -> float:
    return (las_logp + lm_weight * lm_logp) / length_penalty(length, alpha)


def _rank_key(hyp: Hypothesis):
    return (-hyp.score, tuple(hyp.tokens))


def beam_search(
    scorer: StepScorer,
    cfg: BeamConfig,
    fusion_lm: Optional[FusionLM] = None,
    max_steps: Optional[int] = None,
) -> List[Hypothesis]:
    """
    Decode one utterance.

    Every step expands all active hypotheses over every emittable token, ranks candidates
    by (las + lm_weight * lm) / lp(|y|) and keeps the best `beam`; candidates ending in </s>
    join the finished set (at most `beam` kept). Search stops when no active hypothesis can
    still beat the worst kept finished one, or at `max_steps`.

    Returns:
        up to `nbest` hypotheses, best first; unfinished ones (flagged) only if nothing finished
    """
    if max_steps is None:
        max_steps = scorer.default_max_steps(cfg.max_steps_factor, cfg.max_steps_offset)
    if max_steps < 1:
        raise InvalidArgumentError(f"max_steps must be >= 1, got {max_steps}")

    use_lm = fusion_lm is not None and cfg.lm_weight > 0.0
    alpha = cfg.length_penalty
    emittable = np.array([t for t in range(scorer.vocab_size) if t not in BLOCKED_TOKENS])

    lm_logprobs, lm_state = fusion_lm.start() if use_lm else (None, None)
    active = [_Beam((), 0.0, 0.0, scorer.start(), lm_logprobs, lm_state)]
    finished: List[Hypothesis] = []

    for step in range(max_steps):
        length = step + 1
        penalty = length_penalty(length, alpha)
        candidates = []
        after_states = []
        for index, beam in enumerate(active):
            las_logprobs, after = scorer.step(beam.state)
            after_states.append(after)
            for token in emittable:
                las = beam.las_logp + float(las_logprobs[token])
                lm = beam.lm_logp + float(beam.lm_logprobs[token]) if use_lm else 0.0
                raw = las + cfg.lm_weight * lm if use_lm else las
                candidates.append((raw / penalty, beam.tokens + (int(token),), index, las, lm))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        next_active: List[_Beam] = []
        for score, tokens, index, las, lm in candidates[:cfg.beam]:
            if tokens[-1] == EOS_ID:
                finished.append(Hypothesis(tokens=list(tokens), las_logp=las, lm_logp=lm, score=score))
                continue
            parent = active[index]
            lm_logprobs, lm_state = fusion_lm.step(parent.lm_state, tokens[-1]) if use_lm else (None, None)
            next_active.append(_Beam(tokens, las, lm, scorer.feed(after_states[index], tokens[-1]), lm_logprobs, lm_state))

        finished.sort(key=_rank_key)
        del finished[cfg.beam:]
        active = next_active
        if not active:
            break
        if len(finished) >= cfg.beam:
            best_raw = max(b.las_logp + (cfg.lm_weight * b.lm_logp if use_lm else 0.0) for b in active)
            # raw scores only fall with extension; the largest divisor is lp(max_steps)
            if best_raw / length_penalty(max_steps, alpha) <= finished[-1].score:
                break

    if finished:
        return finished[:cfg.nbest]

    logger.warning(f"No hypothesis emitted </s> within {max_steps} steps; returning unfinished hypotheses")
    fallback = [
        Hypothesis(
            tokens=list(b.tokens),
            las_logp=b.las_logp,
            lm_logp=b.lm_logp,
            score=hypothesis_score(b.las_logp, b.lm_logp, len(b.tokens), cfg.lm_weight if use_lm else 0.0, alpha),
            finished=False,
        )
        for b in active
    ]
    fallback.sort(key=_rank_key)
    return fallback[:cfg.nbest]


def greedy_search(scorer: StepScorer, max_steps: Optional[int] = None, max_steps_factor: float = 2.0, max_steps_offset: int = 10) -> Hypothesis:
    """Beam search with a single beam and no LM."""
    cfg = BeamConfig(beam=1, nbest=1, lm_weight=0.0, length_penalty=0.0,
                     max_steps_factor=max_steps_factor, max_steps_offset=max_steps_offset)
    return beam_search(scorer, cfg, max_steps=max_steps)[0]


def token_sequences(hyps: Sequence[Hypothesis]) -> List[List[int]]:
    """Token ids without the trailing </s>."""
    return [[t for t in h.tokens if t != EOS_ID] for h in hyps]
