from .ngram import NGramLM, load_arpa, ngram_logprob, train_ngram, write_arpa
from .nnlm import NeuralLM, WordLevelLM, nnlm_step, train_nnlm
from .perplexity import perplexity

__all__ = [
    "NGramLM",
    "load_arpa",
    "ngram_logprob",
    "train_ngram",
    "write_arpa",
    "NeuralLM",
    "WordLevelLM",
    "nnlm_step",
    "train_nnlm",
    "perplexity",
]
