"""Word-piece merging, N-best JSON Lines and second-pass LM rescoring."""
import json
import os
from typing import Dict, Iterable, List, Literal, Optional, Protocol, Sequence

from pydantic import BaseModel

from core.decoder.beam_search import Hypothesis
from core.wordpiece import SPECIALS, WordPieceVocab, decode
from utils.errors import InvalidArgumentError
from utils.logger import logger


class SentenceLM(Protocol):
    def sentence_logprob(self, units: Sequence) -> float:
        """Natural-log probability of a whole sentence, </s> included."""
        ...


class NBestEntry(BaseModel):
    id: str
    rank: int
    text: str
    tokens: List[int]
    las_logp: float
    lm_logp: float
    score: float
    finished: bool = True
    rescore_lm_logp: Optional[float] = None

    def words(self) -> List[str]:
        return self.text.split()


def merge_wordpieces(tokens: Iterable[int], vocab: WordPieceVocab) -> List[str]:
    """Word list of a token sequence; special tokens are ignored."""
    return decode(tokens, vocab).split()


def to_entries(utt_id: str, hyps: Sequence[Hypothesis], vocab: WordPieceVocab) -> List[NBestEntry]:
    return [
        NBestEntry(
            id=utt_id,
            rank=rank,
            text=" ".join(merge_wordpieces(h.tokens, vocab)),
            tokens=list(h.tokens),
            las_logp=h.las_logp,
            lm_logp=h.lm_logp,
            score=h.score,
            finished=h.finished,
        )
        for rank, h in enumerate(hyps, 1)
    ]


def rescore_nbest(
    nbest: Sequence[NBestEntry],
    lm: SentenceLM,
    weight: float,
    level: Literal["word", "wordpiece"] = "word",
) -> List[NBestEntry]:
    """
    score = las_logp + weight * LM log-probability, then a stable descending sort.

    Word-level LMs see the merged words, word-piece LMs the token ids without specials.
    """
    if not nbest:
        raise InvalidArgumentError("empty n-best list")
    if level not in ("word", "wordpiece"):
        raise InvalidArgumentError(f"unknown rescoring level '{level}'")
    rescored = []
    for entry in nbest:
        units = entry.words() if level == "word" else [t for t in entry.tokens if t >= len(SPECIALS)]
        lm_logp = float(lm.sentence_logprob(units))
        rescored.append(entry.model_copy(update={"rescore_lm_logp": lm_logp, "score": entry.las_logp + weight * lm_logp}))
    rescored.sort(key=lambda e: -e.score)
    return [e.model_copy(update={"rank": rank}) for rank, e in enumerate(rescored, 1)]


def format_entry(entry: NBestEntry) -> str:
    return json.dumps(entry.model_dump(exclude_none=True), ensure_ascii=False, sort_keys=True)


def write_nbest(path: str, entries: Iterable[NBestEntry]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        for entry in entries:
            f.write(format_entry(entry) + "\n")
    os.replace(tmp_path, path)


def read_nbest(path: str) -> Dict[str, List[NBestEntry]]:
    """Entries grouped by utterance id, in file order."""
    grouped: Dict[str, List[NBestEntry]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entry = NBestEntry.model_validate_json(line)
            except ValueError as e:
                logger.error(f"Bad n-best line {line_number} in {path}: {e}")
                raise InvalidArgumentError(f"{path}, line {line_number}: {e}") from e
            grouped.setdefault(entry.id, []).append(entry)
    return grouped


def best_words(entries: Sequence[NBestEntry]) -> List[str]:
    best = min(entries, key=lambda e: e.rank)
    return best.words()
