"""Corpus perplexity for any LM exposing `token_logprobs`."""
import math
from typing import Iterable, List, Protocol, Sequence

from utils.errors import InvalidArgumentError


class TokenLM(Protocol):
    def token_logprobs(self, units: Sequence) -> List[float]:
        """Natural-log probability per unit plus the closing </s>; -inf for zero probability."""
        ...


def perplexity(lm: TokenLM, sentences: Iterable[Sequence]) -> float:
    """exp(-mean natural-log probability) over every scored token, </s> included."""
    total = 0.0
    count = 0
    for units in sentences:
        for value in lm.token_logprobs(units):
            if value == -math.inf:
                return math.inf
            total += value
            count += 1
    if count == 0:
        raise InvalidArgumentError("perplexity of an empty corpus")
    return math.exp(-total / count)
