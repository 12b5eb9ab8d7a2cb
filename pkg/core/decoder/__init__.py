from .beam_search import BeamConfig, Hypothesis, beam_search, greedy_search, length_penalty
from .rescoring import NBestEntry, merge_wordpieces, read_nbest, rescore_nbest, write_nbest

__all__ = [
    "BeamConfig",
    "Hypothesis",
    "beam_search",
    "greedy_search",
    "length_penalty",
    "NBestEntry",
    "merge_wordpieces",
    "read_nbest",
    "rescore_nbest",
    "write_nbest",
]
