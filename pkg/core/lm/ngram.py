"""
Word-level backoff n-gram LMs in ARPA form.

Tables map word tuples to log10 probabilities and log10 backoff weights. A query uses the
longest stored n-gram and otherwise adds the backoff weight of each context it drops.
log10 values at or below -99 stand for zero probability.
"""
import math
import os
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from core.wordpiece import BOS, EOS, UNK, normalize_text
from utils.errors import ArpaParseError, InvalidArgumentError
from utils.logger import logger

LOG10_ZERO = -99.0
LN10 = math.log(10.0)

NGram = Tuple[str, ...]


def _log10(p: float) -> float:
    return math.log10(p) if p > 0.0 else LOG10_ZERO


class NGramLM:
    """Backoff n-gram tables; immutable once built."""

    def __init__(self, order: int, probs: Dict[NGram, float], backoffs: Dict[NGram, float]):
        if order < 1:
            raise InvalidArgumentError(f"n-gram order must be >= 1, got {order}")
        self.order = order
        self.probs = probs
        self.backoffs = backoffs
        self.vocab = {ngram[0] for ngram in probs if len(ngram) == 1}

    def counts(self) -> Dict[int, int]:
        counts = Counter(len(ngram) for ngram in self.probs)
        return {n: counts.get(n, 0) for n in range(1, self.order + 1)}

    def logprob(self, history: Sequence[str], word: str) -> float:
        return ngram_logprob(self, history, word)

    def token_logprobs(self, words: Sequence[str]) -> List[float]:
        """Natural-log probability of each word and the closing </s>; zero probability is -inf."""
        history = [BOS]
        values = []
        for word in list(words) + [EOS]:
            value = ngram_logprob(self, history, word)
            values.append(-math.inf if value <= LOG10_ZERO else value * LN10)
            history.append(word)
        return values

    def sentence_logprob10(self, words: Sequence[str]) -> float:
        history = [BOS]
        total = 0.0
        for word in list(words) + [EOS]:
            total += ngram_logprob(self, history, word)
            history.append(word)
        return total

    def sentence_logprob(self, words: Sequence[str]) -> float:
        """Natural log, with zero-probability entries counted at their stored -99."""
        return self.sentence_logprob10(words) * LN10


def ngram_logprob(lm: NGramLM, history: Sequence[str], token: str) -> float:
    """log10 p(token | history) by longest-match backoff; unknown words become <unk>."""
    word = token if token in lm.vocab else UNK
    context = [h if h in lm.vocab else UNK for h in history]
    context = context[len(context) - (lm.order - 1):] if lm.order > 1 else []
    backoff = 0.0
    for start in range(len(context) + 1):
        ctx = tuple(context[start:])
        value = lm.probs.get(ctx + (word,))
        if value is not None:
            return backoff + value
        backoff += lm.backoffs.get(ctx, 0.0)
    return LOG10_ZERO


def load_arpa(path: str, unk_penalty: float = 0.0) -> NGramLM:
    """
    Read an ARPA file.

    Higher-order entries containing <unk> are dropped and `unk_penalty` (log10, <= 0) is added
    to the <unk> unigram.
    """
    if unk_penalty > 0:
        raise InvalidArgumentError(f"unk penalty must be <= 0, got {unk_penalty}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    try:
        lm = parse_arpa(lines, unk_penalty)
    except ArpaParseError as e:
        logger.error(f"Failed to parse ARPA file {path}: {e}")
        raise
    logger.info(f"Loaded {lm.order}-gram LM from {path} ({lm.counts()})")
    return lm


def parse_arpa(lines: Sequence[str], unk_penalty: float = 0.0) -> NGramLM:
    i = 0
    while i < len(lines) and lines[i].strip() == "":
        i += 1
    if i >= len(lines) or lines[i].strip() != "\\data\\":
        raise ArpaParseError("expected '\\data\\' header", i + 1)
    i += 1

    declared: Dict[int, int] = {}
    while i < len(lines) and lines[i].strip():
        line = lines[i].strip()
        if not line.startswith("ngram ") or "=" not in line:
            raise ArpaParseError(f"bad count line '{line}'", i + 1)
        try:
            n, count = (int(v) for v in line[len("ngram "):].split("="))
        except ValueError as e:
            raise ArpaParseError(f"bad count line '{line}'", i + 1) from e
        declared[n] = count
        i += 1
    if not declared or sorted(declared) != list(range(1, max(declared) + 1)):
        raise ArpaParseError("missing or non-contiguous n-gram counts", i + 1)
    order = max(declared)

    probs: Dict[NGram, float] = {}
    backoffs: Dict[NGram, float] = {}
    found: Dict[int, int] = defaultdict(int)
    current: Optional[int] = None
    ended = False
    for i in range(i, len(lines)):
        line = lines[i].strip()
        if not line:
            continue
        if line == "\\end\\":
            ended = True
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                current = int(line[1:-len("-grams:")])
            except ValueError as e:
                raise ArpaParseError(f"bad section header '{line}'", i + 1) from e
            if current not in declared:
                raise ArpaParseError(f"undeclared section '{line}'", i + 1)
            continue
        if current is None:
            raise ArpaParseError(f"entry outside any section: '{line}'", i + 1)
        parts = line.split()
        if len(parts) not in (current + 1, current + 2):
            raise ArpaParseError(f"expected {current} words in '{line}'", i + 1)
        try:
            value = float(parts[0])
            bow = float(parts[current + 1]) if len(parts) == current + 2 else None
        except ValueError as e:
            raise ArpaParseError(f"bad number in '{line}'", i + 1) from e
        found[current] += 1
        ngram = tuple(parts[1:current + 1])
        if current > 1 and UNK in ngram:
            continue
        probs[ngram] = value
        if bow is not None:
            backoffs[ngram] = bow
    if not ended:
        raise ArpaParseError("missing '\\end\\'", len(lines))
    for n, count in declared.items():
        if found[n] != count:
            raise ArpaParseError(f"declared {count} {n}-grams but found {found[n]}")

    if (UNK,) in probs and unk_penalty:
        probs[(UNK,)] = max(probs[(UNK,)] + unk_penalty, LOG10_ZERO)
    return NGramLM(order, probs, backoffs)


def _format(value: float) -> str:
    return repr(float(value))


def write_arpa(lm: NGramLM, path: str) -> None:
    """Write tab-separated ARPA with shortest round-trip float text."""
    counts = lm.counts()
    lines = ["\\data\\"]
    lines.extend(f"ngram {n}={counts[n]}" for n in range(1, lm.order + 1))
    for n in range(1, lm.order + 1):
        lines.append("")
        lines.append(f"\\{n}-grams:")
        for ngram in sorted(g for g in lm.probs if len(g) == n):
            fields = [_format(lm.probs[ngram]), " ".join(ngram)]
            if ngram in lm.backoffs:
                fields.append(_format(lm.backoffs[ngram]))
            lines.append("\t".join(fields))
    lines.extend(["", "\\end\\", ""])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
    logger.info(f"Wrote {lm.order}-gram ARPA file {path}")


def train_ngram(corpus: Iterable[str], order: int = 3, discount: float = 0.5, lowercase: bool = True) -> NGramLM:
    """
    Interpolated absolute discounting, stored in backoff form.

    p(w|h) = max(c(h,w) - d, 0) / c(h) + d * N1+(h) / c(h) * p(w|h'), bottoming out in a
    uniform distribution over the vocabulary (all words, </s> and <unk>). Backoff weights are
    set so every observed context normalises exactly.
    """
    if order < 1:
        raise InvalidArgumentError(f"n-gram order must be >= 1, got {order}")
    if not 0.0 <= discount <= 1.0:
        raise InvalidArgumentError(f"discount must be in [0, 1], got {discount}")

    counts: List[Counter] = [Counter() for _ in range(order + 1)]
    sentences = 0
    for line in corpus:
        words = normalize_text(line, lowercase).split()
        padded = [BOS] + words + [EOS]
        sentences += 1
        for pos in range(1, len(padded)):
            for n in range(1, order + 1):
                if pos - n + 1 < 0:
                    break
                counts[n][tuple(padded[pos - n + 1:pos + 1])] += 1
    if sentences == 0:
        raise InvalidArgumentError("cannot train an n-gram LM on an empty corpus")

    vocab = sorted({g[0] for g in counts[1]} | {EOS, UNK})
    probs: List[Dict[NGram, float]] = [dict() for _ in range(order + 1)]
    bows: Dict[NGram, float] = {}

    def prob(context: NGram, word: str) -> float:
        """Backoff-form probability from the tables built so far."""
        if not context:
            return probs[1].get((word,), 0.0)
        value = probs[len(context) + 1].get(context + (word,))
        if value is not None:
            return value
        return bows.get(context, 1.0) * prob(context[1:], word)

    total = sum(counts[1].values())
    uniform = 1.0 / len(vocab)
    types = len(counts[1])
    for word in vocab:
        seen = counts[1].get((word,), 0)
        probs[1][(word,)] = max(seen - discount, 0.0) / total + discount * types / total * uniform
    probs[1][(BOS,)] = 0.0

    for n in range(2, order + 1):
        context_total: Counter = Counter()
        context_types: Counter = Counter()
        for ngram, c in counts[n].items():
            context_total[ngram[:-1]] += c
            context_types[ngram[:-1]] += 1
        for ngram, c in counts[n].items():
            context = ngram[:-1]
            lower = prob(context[1:], ngram[-1])
            probs[n][ngram] = (max(c - discount, 0.0) + discount * context_types[context] * lower) / context_total[context]
        followers: Dict[NGram, List[str]] = defaultdict(list)
        for ngram in counts[n]:
            followers[ngram[:-1]].append(ngram[-1])
        for context, words in followers.items():
            seen_mass = sum(probs[n][context + (w,)] for w in words)
            lower_mass = sum(prob(context[1:], w) for w in words)
            if lower_mass >= 1.0 - 1e-15:
                bows[context] = 1.0
            else:
                bows[context] = max(1.0 - seen_mass, 0.0) / (1.0 - lower_mass)

    table: Dict[NGram, float] = {}
    for n in range(1, order + 1):
        for ngram, p in probs[n].items():
            table[ngram] = _log10(p)
    backoffs = {context: _log10(b) for context, b in bows.items() if context in table}
    logger.info(f"Trained {order}-gram LM on {sentences} sentences, vocab {len(vocab)}")
    return NGramLM(order, table, backoffs)
