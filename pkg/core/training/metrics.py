"""Word-level Levenshtein alignment and WER."""
from typing import NamedTuple, Sequence

from utils.errors import InvalidArgumentError, UndefinedMetricError


class EditCounts(NamedTuple):
    substitutions: int
    deletions: int
    insertions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """
    Unit-cost Levenshtein alignment of word sequences.

    Among minimum-cost alignments the one with the most substitutions is reported, so swapping
    ref and hyp keeps S and exchanges D with I.
    """
    n, m = len(ref), len(hyp)
    # cell = (cost, -substitutions, deletions, insertions); tuples compare lexicographically
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        row = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            diag = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                match = diag
            else:
                match = (diag[0] + 1, diag[1] - 1, diag[2], diag[3])
            up = prev[j]
            left = row[j - 1]
            deletion = (up[0] + 1, up[1], up[2] + 1, up[3])
            insertion = (left[0] + 1, left[1], left[2], left[3] + 1)
            row.append(min(match, deletion, insertion, key=lambda c: (c[0], c[1])))
        prev = row
    cost, neg_subs, deletions, insertions = prev[m]
    return EditCounts(substitutions=-neg_subs, deletions=deletions, insertions=insertions)


def corpus_errors(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]):
    """(total word errors, total reference words)."""
    if len(refs) != len(hyps):
        raise InvalidArgumentError(f"{len(refs)} references but {len(hyps)} hypotheses")
    errors = sum(edit_distance(r, h).total for r, h in zip(refs, hyps))
    words = sum(len(r) for r in refs)
    return errors, words


def wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """100 * sum of word errors / sum of reference lengths; may exceed 100."""
    errors, words = corpus_errors(refs, hyps)
    if words == 0:
        raise UndefinedMetricError("WER is undefined for empty references")
    return 100.0 * errors / words
