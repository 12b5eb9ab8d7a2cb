from .listener import ListenerOutput, listen, reduced_length
from .attention import AttentionState, attend, initial_attention_state
from .speller import SpellerState, smooth_labels, spell_step
from .las import LASModel, LASScorer, ModelDims, forward_ce

__all__ = [
    "ListenerOutput",
    "listen",
    "reduced_length",
    "AttentionState",
    "attend",
    "initial_attention_state",
    "SpellerState",
    "smooth_labels",
    "spell_step",
    "LASModel",
    "LASScorer",
    "ModelDims",
    "forward_ce",
]
