"""
Learning-rate warmup, new-bob decay, the gradient-norm tracker and scheduled-sampling probabilities.
"""
import math
from typing import Dict, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.numerics.graph import clip_grad_norm, global_norm, scale_gradients
from utils.config import LASConfig
from utils.errors import NumericDomainError
from utils.logger import logger


def warmup_lr(step: int, cfg: LASConfig) -> float:
    """Linear from lr_start to lr_end over warmup_steps, then lr_end."""
    if step >= cfg.warmup_steps:
        return cfg.lr_end
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * step / cfg.warmup_steps


class NewBobState(BaseModel):
    lr: float = Field(gt=0)
    best: Optional[float] = None
    decay: float = 0.9
    threshold: float = 1e-3
    num_decays: int = 0

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "NewBobState":
        return cls(lr=cfg.lr_end, decay=cfg.newbob_decay, threshold=cfg.newbob_threshold)

    @property
    def plateaued(self) -> bool:
        """The saturation signal: true once the first decay has happened."""
        return self.num_decays > 0


def newbob_update(state: NewBobState, val_loss: float) -> NewBobState:
    """
    Decay lr when the relative improvement over the best validation loss is below threshold.

    The first call only records the loss.
    """
    if not math.isfinite(val_loss):
        raise NumericDomainError(f"non-finite validation loss {val_loss}")
    if state.best is None:
        return state.model_copy(update={"best": val_loss})
    if state.best != 0:
        improvement = (state.best - val_loss) / abs(state.best)
    else:
        improvement = math.inf if val_loss < 0 else 0.0
    update: Dict[str, object] = {"best": min(state.best, val_loss)}
    if improvement < state.threshold:
        update["lr"] = state.lr * state.decay
        update["num_decays"] = state.num_decays + 1
        logger.info(f"New-bob decay: relative improvement {improvement:.2e}, lr {state.lr:.3e} -> {update['lr']:.3e}")
    return state.model_copy(update=update)


class GradNormTracker(BaseModel):
    mean: float = 0.0                  # EMA of the norm
    square: float = 0.0                # EMA of the squared norm
    decay: float = 0.95
    std_factor: float = 2.0
    static_cap: float = 5.0
    initialized: bool = False

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "GradNormTracker":
        return cls(decay=cfg.grad_decay, std_factor=cfg.grad_std_factor, static_cap=cfg.grad_static_cap)

    @property
    def std(self) -> float:
        return math.sqrt(max(self.square - self.mean * self.mean, 0.0))


class ClipReport(BaseModel):
    norm: float
    tracker_clipped: bool
    static_clipped: bool

    @property
    def clipped(self) -> bool:
        return self.tracker_clipped or self.static_clipped


def track_and_clip(
    grads: Mapping[str, np.ndarray], tracker: GradNormTracker
) -> Tuple[Dict[str, np.ndarray], GradNormTracker, ClipReport]:
    """
    Clip outliers against the running norm statistics, then apply the static cap.

    A norm above mean + std_factor * std is scaled to the mean. The EMAs are updated with the
    norm after clipping. The first call with a nonzero norm only initialises the statistics;
    zero norms before that leave the tracker untouched.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericDomainError(f"non-finite gradient norm {norm}")

    tracker_clipped = False
    clipped = dict(grads)
    if tracker.initialized and tracker.mean > 0 and norm > tracker.mean + tracker.std_factor * tracker.std:
        clipped = scale_gradients(grads, tracker.mean / norm)
        tracker_clipped = True
    clipped, static_clipped = clip_grad_norm(clipped, tracker.static_cap)
    final_norm = global_norm(clipped)

    if tracker.initialized:
        d = tracker.decay
        updated = tracker.model_copy(update={
            "mean": d * tracker.mean + (1.0 - d) * final_norm,
            "square": d * tracker.square + (1.0 - d) * final_norm * final_norm,
        })
    elif final_norm > 0:
        updated = tracker.model_copy(update={"mean": final_norm, "square": final_norm * final_norm, "initialized": True})
    else:
        updated = tracker
    return clipped, updated, ClipReport(norm=norm, tracker_clipped=tracker_clipped, static_clipped=static_clipped)


class SamplingSchedule(BaseModel):
    strategy: Literal["linear-ramp", "plateau-step", "constant"] = "plateau-step"
    start: float = Field(0.0, ge=0, le=1)
    end: float = Field(0.2, ge=0, le=1)
    ramp_steps: int = Field(10000, ge=0)
    base: float = Field(0.1, ge=0, le=1)
    boost: float = Field(0.2, ge=0, le=1)
    fixed: float = Field(0.1, ge=0, le=1)

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "SamplingSchedule":
        return cls(
            strategy=cfg.sampling_strategy,
            start=cfg.sampling_start,
            end=cfg.sampling_end,
            ramp_steps=cfg.sampling_ramp_steps,
            base=cfg.sampling_base,
            boost=cfg.sampling_boost,
            fixed=cfg.sampling_fixed,
        )


def sampling_prob(schedule: SamplingSchedule, step: int, plateau_signal: bool = False) -> float:
    if schedule.strategy == "constant":
        return schedule.fixed
    if schedule.strategy == "plateau-step":
        return schedule.boost if plateau_signal else schedule.base
    if schedule.ramp_steps == 0 or step >= schedule.ramp_steps:
        return schedule.end
    return schedule.start + (schedule.end - schedule.start) * step / schedule.ramp_steps
