from .metrics import EditCounts, edit_distance, wer
from .schedules import (
    GradNormTracker,
    NewBobState,
    SamplingSchedule,
    newbob_update,
    sampling_prob,
    track_and_clip,
    warmup_lr,
)

__all__ = [
    "EditCounts",
    "edit_distance",
    "wer",
    "GradNormTracker",
    "NewBobState",
    "SamplingSchedule",
    "newbob_update",
    "sampling_prob",
    "track_and_clip",
    "warmup_lr",
]
