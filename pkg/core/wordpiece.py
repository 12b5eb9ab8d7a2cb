"""
Byte-pair-encoding word pieces.

Each word is prefixed with the marker "▁" on its first character and split into characters;
learned merges are replayed in order. Decoding concatenates pieces and splits on the marker.
"""
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from utils.errors import InvalidArgumentError, LASError
from utils.logger import logger

MARKER = "▁"
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

VOCAB_HEADER = "WPV1"
MERGES_SENTINEL = "#MERGES"

Pair = Tuple[str, str]


def normalize_text(text: str, lowercase: bool = True) -> str:
    text = " ".join(text.split())
    return text.lower() if lowercase else text


def word_symbols(word: str) -> List[str]:
    return [MARKER + word[0]] + list(word[1:])


def _merge_word(symbols: Sequence[str], pair: Pair) -> List[str]:
    first, second = pair
    merged: List[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == first and symbols[i + 1] == second:
            merged.append(first + second)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


class WordPieceVocab:
    """Ordered merges plus dense piece <-> id maps; ids 0-3 are <pad>, <s>, </s>, <unk>."""

    def __init__(self, pieces: Sequence[str], merges: Sequence[Pair], lowercase: bool = True):
        if tuple(pieces[:4]) != SPECIALS:
            raise InvalidArgumentError(f"vocab must start with {SPECIALS}")
        self.pieces: List[str] = list(pieces)
        self.merges: List[Pair] = [tuple(m) for m in merges]
        self.lowercase = lowercase
        self.piece_to_id: Dict[str, int] = {}
        for i, piece in enumerate(self.pieces):
            if piece in self.piece_to_id:
                raise InvalidArgumentError(f"duplicate piece '{piece}'")
            self.piece_to_id[piece] = i
        self._cache: Dict[str, List[int]] = {}

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def size(self) -> int:
        return len(self.pieces)

    def id_of(self, piece: str) -> int:
        return self.piece_to_id.get(piece, UNK_ID)

    def encode_word(self, word: str) -> List[int]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = word_symbols(word)
        for pair in self.merges:
            if len(symbols) < 2:
                break
            symbols = _merge_word(symbols, pair)
        ids = [self.id_of(s) for s in symbols]
        self._cache[word] = ids
        return ids

    def to_text(self) -> str:
        lines = [VOCAB_HEADER, *self.pieces, MERGES_SENTINEL]
        lines.extend(f"{a} {b}" for a, b in self.merges)
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())
        logger.info(f"Saved word-piece vocab ({self.size} pieces, {len(self.merges)} merges) to {path}")

    @classmethod
    def from_text(cls, text: str, lowercase: bool = True) -> "WordPieceVocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or lines[0] != VOCAB_HEADER:
            raise LASError(f"vocab file must start with '{VOCAB_HEADER}'")
        try:
            split = lines.index(MERGES_SENTINEL)
        except ValueError as e:
            raise LASError(f"vocab file lacks the '{MERGES_SENTINEL}' sentinel") from e
        merges = []
        for line in lines[split + 1:]:
            parts = line.split(" ")
            if len(parts) != 2:
                raise LASError(f"bad merge line '{line}'")
            merges.append((parts[0], parts[1]))
        return cls(lines[1:split], merges, lowercase=lowercase)

    @classmethod
    def load(cls, path: str, lowercase: bool = True) -> "WordPieceVocab":
        with open(path, "r", encoding="utf-8", newline="\n") as f:
            return cls.from_text(f.read(), lowercase=lowercase)


def learn_bpe(corpus: Iterable[str], target_size: int, lowercase: bool = True) -> WordPieceVocab:
    """
    Greedy most-frequent-pair merges.

    Stops at `target_size` pieces or when no pair occurs at least twice. Frequency ties go
    to the lexicographically smallest pair.
    """
    word_counts: Counter = Counter()
    for line in corpus:
        word_counts.update(normalize_text(line, lowercase).split())
    if not word_counts:
        raise InvalidArgumentError("cannot learn word pieces from an empty corpus")

    chars = sorted({ch for word in word_counts for ch in word})
    base = sorted(set(chars) | {MARKER + ch for ch in chars})
    if target_size < len(base) + len(SPECIALS):
        raise InvalidArgumentError(
            f"target size {target_size} is below the base inventory of {len(base)} characters + {len(SPECIALS)} specials"
        )

    pieces = list(SPECIALS) + base
    known = set(pieces)
    merges: List[Pair] = []
    words = {word: word_symbols(word) for word in sorted(word_counts)}

    while len(pieces) < target_size:
        pair_counts: Counter = Counter()
        for word, symbols in words.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(pair for pair, count in pair_counts.items() if count == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        if merged not in known:
            known.add(merged)
            pieces.append(merged)
        for word, symbols in words.items():
            if len(symbols) > 1:
                words[word] = _merge_word(symbols, best)

    logger.info(f"Learned {len(merges)} merges, vocab size {len(pieces)}")
    return WordPieceVocab(pieces, merges, lowercase=lowercase)


def encode(text: str, vocab: WordPieceVocab) -> List[int]:
    ids: List[int] = []
    for word in normalize_text(text, vocab.lowercase).split():
        ids.extend(vocab.encode_word(word))
    return ids


def encode_pieces(text: str, vocab: WordPieceVocab) -> List[str]:
    return [vocab.pieces[i] for i in encode(text, vocab)]


def decode(ids: Iterable[int], vocab: WordPieceVocab) -> str:
    """Concatenate pieces, drop specials and split on the word marker."""
    parts: List[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise InvalidArgumentError(f"token id {i} out of range for vocab of {vocab.size}")
        if i < len(SPECIALS):
            continue
        parts.append(vocab.pieces[i])
    return " ".join(w for w in "".join(parts).split(MARKER) if w)


class WordVocab:
    """Word-level vocabulary sharing the special ids; rare words map to <unk>."""

    def __init__(self, words: Sequence[str]):
        self.words: List[str] = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.word_to_id: Dict[str, int] = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        return len(self.words)

    def ids(self, words: Iterable[str]) -> List[int]:
        return [self.word_to_id.get(w, UNK_ID) for w in words]

    @classmethod
    def build(cls, corpus: Iterable[str], min_count: int = 4, lowercase: bool = True) -> "WordVocab":
        counts: Counter = Counter()
        for line in corpus:
            counts.update(normalize_text(line, lowercase).split())
        kept = sorted(w for w, c in counts.items() if c >= min_count)
        logger.info(f"Word vocab: kept {len(kept)} of {len(counts)} word types (min count {min_count})")
        return cls(kept)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(self.words[len(SPECIALS):]) + "\n")

    @classmethod
    def load(cls, path: str) -> "WordVocab":
        with open(path, "r", encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])
