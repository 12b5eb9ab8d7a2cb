"""Decode a manifest into an N-best file and a WER summary."""
import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel

from core.decoder.beam_search import BeamConfig, FusionLM, beam_search
from core.decoder.rescoring import NBestEntry, format_entry, to_entries
from core.frontend import FbankOptions
from core.manifest import ManifestRecord, load_features
from core.model.las import LASModel
from core.training.metrics import corpus_errors
from core.wordpiece import WordPieceVocab, normalize_text
from utils.errors import LASError
from utils.logger import logger


class DecodeReport(BaseModel):
    utterances: int
    decoded: int
    failed: List[str]
    errors: int
    words: int
    wer: Optional[float]


def _decode_one(
    record: ManifestRecord,
    model: LASModel,
    vocab: WordPieceVocab,
    beam_cfg: BeamConfig,
    fusion_lm: Optional[FusionLM],
    fbank: Optional[FbankOptions],
) -> Tuple[ManifestRecord, Optional[List[NBestEntry]]]:
    try:
        features = load_features(record, fbank)
        hyps = beam_search(model.scorer(features), beam_cfg, fusion_lm=fusion_lm)
        return record, to_entries(record.id, hyps, vocab)
    except (LASError, OSError) as e:
        logger.error(f"Failed to decode utterance {record.id}: {e}")
        return record, None


def summarize(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]], total: int, failed: List[str]) -> DecodeReport:
    errors, words = corpus_errors(refs, hyps)
    return DecodeReport(
        utterances=total,
        decoded=total - len(failed),
        failed=failed,
        errors=errors,
        words=words,
        wer=100.0 * errors / words if words else None,
    )


def decode_corpus(
    model: LASModel,
    records: Sequence[ManifestRecord],
    vocab: WordPieceVocab,
    beam_cfg: BeamConfig,
    out_path: str,
    fusion_lm: Optional[FusionLM] = None,
    fbank: Optional[FbankOptions] = None,
    jobs: int = 1,
) -> DecodeReport:
    """
    Beam-search every record; utterances that fail are logged and skipped.

    Writes `out_path` (N-best JSON Lines in manifest order) and `out_path` + ".wer.json".
    """
    logger.info(f"Decoding {len(records)} utterances with beam {beam_cfg.beam} ({jobs} job(s))")
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as pool:
        results = list(pool.map(lambda r: _decode_one(r, model, vocab, beam_cfg, fusion_lm, fbank), records))

    lines: List[str] = []
    refs: List[List[str]] = []
    hyps: List[List[str]] = []
    failed: List[str] = []
    for record, entries in results:
        if entries is None:
            failed.append(record.id)
            continue
        lines.extend(format_entry(e) for e in entries)
        refs.append(normalize_text(record.text, vocab.lowercase).split())
        hyps.append(entries[0].words() if entries else [])

    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    tmp_path = f"{out_path}.tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))
    os.replace(tmp_path, out_path)

    report = summarize(refs, hyps, len(records), failed)
    with open(f"{out_path}.wer.json", "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(report.model_dump(), sort_keys=True) + "\n")
    if report.wer is not None:
        logger.info(f"Decoded {report.decoded}/{report.utterances} utterances, WER {report.wer:.2f}% ({report.errors}/{report.words})")
    else:
        logger.info(f"Decoded {report.decoded}/{report.utterances} utterances (no reference words)")
    return report
