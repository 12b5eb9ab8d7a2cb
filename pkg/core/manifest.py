"""Utterance manifests: JSON Lines of {id, audio | feats, text}."""
import json
import os
from typing import Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from core.frontend import FbankOptions, FeatureSequence, compute_fbank, read_audio, read_features
from utils.errors import InvalidArgumentError
from utils.logger import logger


class ManifestRecord(BaseModel):
    id: str
    audio: Optional[str] = None
    feats: Optional[str] = None
    text: str = ""

    @model_validator(mode="after")
    def _one_source(self) -> "ManifestRecord":
        if (self.audio is None) == (self.feats is None):
            raise ValueError(f"record '{self.id}' needs exactly one of 'audio' or 'feats'")
        return self


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def read_manifest(path: str) -> List[ManifestRecord]:
    """
    Load a manifest; relative audio/feats paths resolve against the manifest's directory.

    Raises:
        InvalidArgumentError: malformed line or duplicate id
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    records: List[ManifestRecord] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = ManifestRecord.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                logger.error(f"Bad manifest line {line_number} in {path}: {e}")
                raise InvalidArgumentError(f"{path}, line {line_number}: {e}") from e
            if record.id in seen:
                raise InvalidArgumentError(f"{path}, line {line_number}: duplicate id '{record.id}'")
            seen.add(record.id)
            if record.audio is not None:
                record.audio = _resolve(record.audio, base_dir)
            if record.feats is not None:
                record.feats = _resolve(record.feats, base_dir)
            records.append(record)
    logger.info(f"Read {len(records)} records from {path}")
    return records


def write_manifest(path: str, records: Iterable[ManifestRecord]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record.model_dump(exclude_none=True), ensure_ascii=False, sort_keys=True) + "\n")


def load_features(record: ManifestRecord, opts: Optional[FbankOptions] = None) -> FeatureSequence:
    """Features of one record, computed on the fly for audio records."""
    if record.feats is not None:
        return read_features(record.feats, utt_id=record.id)
    waveform = read_audio(record.audio)
    return compute_fbank(waveform, opts, utt_id=record.id)


def load_corpus(records: Iterable[ManifestRecord], opts: Optional[FbankOptions] = None) -> List[Tuple[str, np.ndarray, str]]:
    """(id, T x D frames, transcript) for every record, in manifest order."""
    return [(r.id, load_features(r, opts).frames, r.text) for r in records]
