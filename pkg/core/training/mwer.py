"""
Minimum expected word error training over n-best lists.

The n-best distribution is the model's sequence probabilities raised to gamma and renormalised
over the list; the loss is the expected word-error count divided by the reference length,
interpolated with cross-entropy. There is no mean-error baseline subtraction.
"""
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from core.decoder.beam_search import BeamConfig, beam_search
from core.decoder.rescoring import merge_wordpieces
from core.model.las import Features, LASModel, forward_ce
from core.numerics.layers import softmax
from core.numerics.tensor import Tensor, as_tensor, stack
from core.training.metrics import edit_distance
from core.wordpiece import WordPieceVocab
from utils.config import LASConfig
from utils.errors import InvalidArgumentError

Scalar = Union[float, Tensor]


class MwerConfig(BaseModel):
    n: int = Field(4, ge=1)
    gamma: float = Field(0.5, gt=0, le=1)
    lam: float = Field(0.01, ge=0)

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "MwerConfig":
        return cls(n=cfg.mwer_n, gamma=cfg.mwer_gamma, lam=cfg.mwer_lambda)


class MwerResult(NamedTuple):
    loss: Tensor
    expected_errors: float             # mean normalised expected word errors, CE term excluded


def renormalized_posteriors(log_probs: Sequence[Scalar], gamma: Scalar) -> Tensor:
    """P*_i = exp(gamma logP_i) / sum_j exp(gamma logP_j)."""
    if len(log_probs) == 0:
        raise InvalidArgumentError("empty n-best list")
    scores = stack([as_tensor(lp) for lp in log_probs])
    return softmax(as_tensor(gamma) * scores)


def mwer_loss(
    nbest: Sequence[Tuple[Sequence[str], Scalar]],
    ref: Sequence[str],
    gamma: Scalar,
    lam: float,
    ce_loss: Scalar = 0.0,
) -> Tensor:
    """
    (1/L) sum_i P*_i W(y_i, y*) + lam * ce_loss, with L the reference word count.

    Args:
        nbest: (hypothesis words, raw model log-probability) pairs
        ref: reference words
    """
    if not nbest:
        raise InvalidArgumentError("empty n-best list")
    if len(ref) == 0:
        raise InvalidArgumentError("reference has no words")
    posteriors = renormalized_posteriors([lp for _, lp in nbest], gamma)
    errors = Tensor(np.array([edit_distance(ref, words).total for words, _ in nbest], dtype=np.float64))
    expected = (posteriors * errors).sum() * (1.0 / len(ref))
    return expected + lam * as_tensor(ce_loss)


def nbest_hypotheses(model: LASModel, features: Features, beam_cfg: BeamConfig):
    return beam_search(model.scorer(features), beam_cfg)


def mwer_batch_loss(
    model: LASModel,
    batch: Sequence[Tuple[Features, Sequence[int]]],
    vocab: WordPieceVocab,
    mwer_cfg: MwerConfig,
    epsilon: float,
    rng: np.random.Generator,
    beam_cfg: Optional[BeamConfig] = None,
) -> MwerResult:
    """
    Mean MWER loss over a batch.

    N-best lists come from a gradient-free beam search; their log-probabilities are then
    recomputed with gradients by teacher forcing.
    """
    beam_cfg = beam_cfg or BeamConfig(beam=mwer_cfg.n, nbest=mwer_cfg.n, lm_weight=0.0)
    losses: List[Tensor] = []
    expected: List[float] = []
    for features, tokens in batch:
        ref_words = merge_wordpieces(tokens, vocab)
        hyps = nbest_hypotheses(model, features, beam_cfg)
        encoded = model.encode(features)
        nbest = [(merge_wordpieces(h.tokens, vocab), model.score_tokens(encoded, h.tokens)) for h in hyps]
        ce = forward_ce([(features, tokens)], model, 0.0, epsilon, rng).loss if mwer_cfg.lam > 0 else 0.0
        loss = mwer_loss(nbest, ref_words, mwer_cfg.gamma, mwer_cfg.lam, ce)
        losses.append(loss)
        expected.append(expected_error_value(nbest, ref_words, mwer_cfg.gamma))
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return MwerResult(loss=total * (1.0 / len(losses)), expected_errors=float(np.mean(expected)))


def expected_error_value(nbest: Sequence[Tuple[Sequence[str], Scalar]], ref: Sequence[str], gamma: float) -> float:
    """The expected-error term alone, as a plain number."""
    values = [float(lp.item() if isinstance(lp, Tensor) else lp) for _, lp in nbest]
    posteriors = softmax(gamma * np.array(values))
    errors = np.array([edit_distance(ref, words).total for words, _ in nbest], dtype=np.float64)
    return float(posteriors @ errors) / len(ref)
