"""
CE training (warmup then new-bob, scheduled sampling, gradient-norm tracking) and the MWER
fine-tuning stage, with per-epoch checkpoints and a JSON Lines training log.
"""
import json
import math
import os
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from core.decoder.beam_search import BeamConfig
from core.decoder.rescoring import merge_wordpieces
from core.model.las import LASModel, ModelDims, forward_ce
from core.numerics.optim import make_optimizer
from core.numerics.prng import make_prng
from core.numerics.tensor import no_grad, set_default_dtype
from core.training.metrics import wer
from core.training.mwer import MwerConfig, mwer_batch_loss
from core.training.schedules import (
    GradNormTracker, NewBobState, SamplingSchedule, newbob_update, sampling_prob, track_and_clip, warmup_lr,
)
from core.wordpiece import EOS_ID, WordPieceVocab, encode
from utils.config import LASConfig
from utils.errors import InvalidArgumentError, LASError, TrainingDivergedError, UndefinedMetricError
from utils.logger import logger

LOG_NAME = "train_log.jsonl"


class Utterance(NamedTuple):
    id: str
    features: np.ndarray               # T x D
    tokens: List[int]                  # word pieces followed by </s>
    text: str


class EpochRecord(BaseModel):
    stage: str
    epoch: int
    lr: float
    train_loss: Optional[float] = None
    val_loss: Optional[float] = None
    sampling_prob: Optional[float] = None
    grad_clip_events: int = 0
    train_wer: Optional[float] = None
    expected_errors: Optional[float] = None


class FitResult(NamedTuple):
    model: LASModel
    records: List[EpochRecord]
    checkpoints: List[str]


class TrainingLog:
    """Append-only JSON Lines; no timestamps so equal runs give equal files."""

    def __init__(self, path: str, truncate: bool = True):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if truncate:
            open(path, "w", encoding="utf-8").close()

    def write(self, record: BaseModel) -> None:
        with open(self.path, "a", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(record.model_dump(exclude_none=True), sort_keys=True) + "\n")


def prepare_utterances(corpus: Sequence[Tuple[str, np.ndarray, str]], vocab: WordPieceVocab) -> List[Utterance]:
    return [Utterance(utt_id, np.asarray(frames), encode(text, vocab) + [EOS_ID], text) for utt_id, frames, text in corpus]


def _batches(items: Sequence[Utterance], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield [items[i] for i in order[start:start + size]]


def evaluate_ce(model: LASModel, data: Sequence[Utterance], epsilon: float) -> float:
    """Teacher-forced mean label-smoothed CE per step."""
    with no_grad():
        result = forward_ce([(u.features, u.tokens) for u in data], model, 0.0, epsilon, make_prng(0))
    return result.loss.item()


def greedy_wer(model: LASModel, data: Sequence[Utterance], vocab: WordPieceVocab) -> Optional[float]:
    refs = [merge_wordpieces(u.tokens, vocab) for u in data]
    hyps = [merge_wordpieces(model.greedy_decode(u.features), vocab) for u in data]
    try:
        return wer(refs, hyps)
    except UndefinedMetricError:
        return None


def _check_finite(value: float, stage: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        logger.error(f"{stage} loss diverged at epoch {epoch}, step {step}: {value}")
        raise TrainingDivergedError(f"non-finite {stage} loss {value} at epoch {epoch}, step {step}")


def fit(
    train: Sequence[Utterance],
    vocab: WordPieceVocab,
    cfg: LASConfig,
    out_dir: str,
    val: Optional[Sequence[Utterance]] = None,
    seed: Optional[int] = None,
    model: Optional[LASModel] = None,
    augmented: Optional[Sequence[Utterance]] = None,
) -> FitResult:
    """
    Cross-entropy training followed by `cfg.mwer_epochs` epochs of MWER.

    The learning rate ramps linearly over `warmup_steps` updates, then follows new-bob on the
    validation loss. Training stops early once new-bob pushes the rate below `min_lr`.
    Writes `epochNNN.lasf` per CE epoch, `mwerNNN.lasf` per MWER epoch, `final.lasf` and
    `train_log.jsonl` under `out_dir`.
    """
    if not train:
        raise InvalidArgumentError("empty training set")
    seed = cfg.seed if seed is None else seed
    set_default_dtype(cfg.dtype)
    rng = make_prng(seed)
    os.makedirs(out_dir, exist_ok=True)
    log = TrainingLog(os.path.join(out_dir, LOG_NAME))

    if model is None:
        model = LASModel.initialize(ModelDims.from_config(cfg, vocab.size), rng=rng)
    if train[0].features.shape[1] != model.dims.feat_dim:
        raise InvalidArgumentError(f"features have dim {train[0].features.shape[1]}, model expects {model.dims.feat_dim}")
    val = val or train

    optimizer = make_optimizer(cfg.optimizer, model.graph)
    tracker = GradNormTracker.from_config(cfg)
    schedule = SamplingSchedule.from_config(cfg)
    newbob: Optional[NewBobState] = None
    records: List[EpochRecord] = []
    checkpoints: List[str] = []
    step = 0

    logger.info(f"CE training: {len(train)} utterances, {cfg.max_epochs} epochs, seed {seed}")
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            total, count, clips = 0.0, 0, 0
            lr = p = 0.0
            for batch in _batches(train, rng.permutation(len(train)), cfg.batch_size):
                p = sampling_prob(schedule, step, newbob.plateaued if newbob else False)
                result = forward_ce([(u.features, u.tokens) for u in batch], model, p, cfg.label_smoothing, rng)
                value = result.loss.item()
                _check_finite(value, "CE", epoch, step)
                grads, tracker, report = track_and_clip(model.graph.backward(result.loss), tracker)
                clips += int(report.clipped)
                lr = warmup_lr(step, cfg) if newbob is None else newbob.lr
                optimizer.step(grads, lr)
                total += value * len(batch)
                count += len(batch)
                step += 1

            val_loss = evaluate_ce(model, val, cfg.label_smoothing)
            _check_finite(val_loss, "validation", epoch, step)
            if step >= cfg.warmup_steps:
                newbob = newbob or NewBobState.from_config(cfg)
                newbob = newbob_update(newbob, val_loss)
            record = EpochRecord(
                stage="ce",
                epoch=epoch,
                lr=lr,
                train_loss=total / count,
                val_loss=val_loss,
                sampling_prob=p,
                grad_clip_events=clips,
                train_wer=greedy_wer(model, train, vocab) if cfg.eval_train_wer else None,
            )
            records.append(record)
            log.write(record)
            path = os.path.join(out_dir, f"epoch{epoch:03d}.lasf")
            model.save(path, dtype=cfg.checkpoint_dtype)
            checkpoints.append(path)
            logger.info(
                f"CE epoch {epoch}: train {record.train_loss:.4f}, val {val_loss:.4f}, lr {lr:.3e}, "
                f"p {p:.2f}, clips {clips}" + (f", train WER {record.train_wer:.2f}%" if record.train_wer is not None else "")
            )
            if newbob is not None and newbob.lr < cfg.min_lr:
                logger.info(f"Learning rate {newbob.lr:.3e} fell below {cfg.min_lr:.1e}; stopping CE training")
                break

        if cfg.mwer_epochs > 0:
            mwer_data = list(train) + (list(augmented) if cfg.mwer_augment and augmented else [])
            result = fit_mwer(model, mwer_data, vocab, cfg, out_dir, rng, log=log, eval_data=train)
            records.extend(result.records)
            checkpoints.extend(result.checkpoints)
    except LASError as e:
        logger.error(f"Training failed: {e}")
        raise

    final = os.path.join(out_dir, "final.lasf")
    model.save(final, dtype=cfg.checkpoint_dtype)
    checkpoints.append(final)
    return FitResult(model=model, records=records, checkpoints=checkpoints)


def expected_errors(model: LASModel, data: Sequence[Utterance], vocab: WordPieceVocab, mwer_cfg: MwerConfig, beam_cfg: BeamConfig) -> float:
    """Mean normalised expected word errors over n-best lists, without updating anything."""
    with no_grad():
        batch = [(u.features, u.tokens) for u in data]
        zero_ce = mwer_cfg.model_copy(update={"lam": 0.0})
        return mwer_batch_loss(model, batch, vocab, zero_ce, 0.0, make_prng(0), beam_cfg).expected_errors


def fit_mwer(
    model: LASModel,
    data: Sequence[Utterance],
    vocab: WordPieceVocab,
    cfg: LASConfig,
    out_dir: str,
    rng: Optional[np.random.Generator] = None,
    log: Optional[TrainingLog] = None,
    eval_data: Optional[Sequence[Utterance]] = None,
) -> FitResult:
    """
    MWER fine-tuning at the fixed rate `mwer_lr`.

    The expected-error term on `eval_data` (default: `data`) is logged before the first update
    as epoch 0 and after every epoch.
    """
    if not data:
        raise InvalidArgumentError("empty MWER training set")
    rng = rng if rng is not None else make_prng(cfg.seed)
    log = log or TrainingLog(os.path.join(out_dir, LOG_NAME))
    eval_data = eval_data or data
    mwer_cfg = MwerConfig.from_config(cfg)
    beam_cfg = BeamConfig(
        beam=mwer_cfg.n, nbest=mwer_cfg.n, lm_weight=0.0, length_penalty=cfg.length_penalty,
        max_steps_factor=cfg.max_steps_factor, max_steps_offset=cfg.max_steps_offset,
    )
    optimizer = make_optimizer(cfg.optimizer, model.graph)
    tracker = GradNormTracker.from_config(cfg)
    records: List[EpochRecord] = []
    checkpoints: List[str] = []

    initial = EpochRecord(
        stage="mwer",
        epoch=0,
        lr=cfg.mwer_lr,
        expected_errors=expected_errors(model, eval_data, vocab, mwer_cfg, beam_cfg),
        train_wer=greedy_wer(model, eval_data, vocab) if cfg.eval_train_wer else None,
    )
    records.append(initial)
    log.write(initial)
    logger.info(f"MWER stage: {len(data)} utterances, initial expected errors {initial.expected_errors:.4f}")

    step = 0
    for epoch in range(1, cfg.mwer_epochs + 1):
        total, count, clips = 0.0, 0, 0
        for batch in _batches(data, rng.permutation(len(data)), cfg.batch_size):
            result = mwer_batch_loss(model, [(u.features, u.tokens) for u in batch], vocab, mwer_cfg, cfg.label_smoothing, rng, beam_cfg)
            value = result.loss.item()
            _check_finite(value, "MWER", epoch, step)
            grads, tracker, report = track_and_clip(model.graph.backward(result.loss), tracker)
            clips += int(report.clipped)
            optimizer.step(grads, cfg.mwer_lr)
            total += value * len(batch)
            count += len(batch)
            step += 1
        record = EpochRecord(
            stage="mwer",
            epoch=epoch,
            lr=cfg.mwer_lr,
            train_loss=total / count,
            grad_clip_events=clips,
            expected_errors=expected_errors(model, eval_data, vocab, mwer_cfg, beam_cfg),
            train_wer=greedy_wer(model, eval_data, vocab) if cfg.eval_train_wer else None,
        )
        records.append(record)
        log.write(record)
        path = os.path.join(out_dir, f"mwer{epoch:03d}.lasf")
        model.save(path, dtype=cfg.checkpoint_dtype)
        checkpoints.append(path)
        logger.info(f"MWER epoch {epoch}: loss {record.train_loss:.4f}, expected errors {record.expected_errors:.4f}, clips {clips}")
    return FitResult(model=model, records=records, checkpoints=checkpoints)
