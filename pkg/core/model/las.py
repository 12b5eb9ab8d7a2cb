"""
The LAS network: listener, attention and speller over one named-parameter Graph.

Canonical parameter names:
    listener.layer{l}.{fwd,bwd}.{Wx,Wh,b}
    attention.{w,W,V,U_loc,b,F}            (U_loc and F only with location-aware attention)
    speller.embed, speller.layer{l}.{Wx,Wh,b}, speller.out.{W,b}
"""
from typing import List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from core.frontend import FeatureSequence
from core.model.attention import AttentionState, advance, attend, init_attention, initial_attention_state, project_keys
from core.model.listener import ListenerOutput, init_listener, listen
from core.model.speller import SpellerState, init_speller, initial_layers, layer_sizes, smoothed_targets, spell_step
from core.numerics.checkpoint import read_checkpoint, write_checkpoint
from core.numerics.graph import Graph
from core.numerics.prng import make_prng, sample_index
from core.numerics.tensor import Tensor, no_grad, stack
from core.wordpiece import BOS_ID, EOS_ID, PAD_ID
from utils.config import LASConfig
from utils.errors import CheckpointFormatError, InvalidArgumentError
from utils.logger import logger

Features = Union[FeatureSequence, np.ndarray]

# never proposed as a next token at inference
BLOCKED_TOKENS = (PAD_ID, BOS_ID)


class ModelDims(BaseModel):
    vocab_size: int = Field(ge=5)
    feat_dim: int = Field(40, ge=1)
    listener_layers: int = Field(3, ge=1)
    listener_hidden: int = Field(1024, ge=1)
    speller_layers: int = Field(2, ge=1)
    speller_hidden: int = Field(512, ge=1)
    embed_dim: int = Field(0, ge=0)
    attention_dim: int = Field(512, ge=1)
    conv_filters: int = Field(20, ge=1)
    conv_width: int = Field(100, ge=1)
    location_aware: bool = True
    attention_history: Literal["accumulated", "previous"] = "accumulated"

    @property
    def embedding_size(self) -> int:
        return self.embed_dim or self.speller_hidden

    @property
    def context_dim(self) -> int:
        return 2 * self.listener_hidden

    @classmethod
    def from_config(cls, cfg: LASConfig, vocab_size: int) -> "ModelDims":
        return cls(
            vocab_size=vocab_size,
            feat_dim=cfg.feat_dim,
            listener_layers=cfg.listener_layers,
            listener_hidden=cfg.listener_hidden,
            speller_layers=cfg.speller_layers,
            speller_hidden=cfg.speller_hidden,
            embed_dim=cfg.embed_dim,
            attention_dim=cfg.attention_dim,
            conv_filters=cfg.conv_filters,
            conv_width=cfg.conv_width,
            location_aware=cfg.location_aware,
            attention_history=cfg.attention_history,
        )

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], attention_history: str = "accumulated") -> "ModelDims":
        """Recover the architecture from tensor shapes."""
        try:
            listener_layers = 0
            while f"listener.layer{listener_layers}.fwd.Wx" in arrays:
                listener_layers += 1
            speller_layers, speller_hidden = layer_sizes(arrays)
            vocab_size, embed_dim = arrays["speller.embed"].shape
            location_aware = "attention.F" in arrays
            filters, width = arrays["attention.F"].shape if location_aware else (20, 100)
            return cls(
                vocab_size=vocab_size,
                feat_dim=arrays["listener.layer0.fwd.Wx"].shape[1] // 2,
                listener_layers=listener_layers,
                listener_hidden=arrays["listener.layer0.fwd.Wh"].shape[1],
                speller_layers=speller_layers,
                speller_hidden=speller_hidden,
                embed_dim=embed_dim,
                attention_dim=arrays["attention.w"].shape[0],
                conv_filters=filters,
                conv_width=width,
                location_aware=location_aware,
                attention_history=attention_history,
            )
        except (KeyError, ValueError, InvalidArgumentError) as e:
            raise CheckpointFormatError(f"checkpoint does not describe a LAS model: {e}") from e


class Encoded(NamedTuple):
    listener: ListenerOutput
    keys: Tensor                       # V h_j, reused by every decoder step


class UtteranceDiagnostics(NamedTuple):
    fed_tokens: List[int]
    truth_probs: List[float]
    loss: float


class CEResult(NamedTuple):
    loss: Tensor
    num_steps: int
    diagnostics: List[UtteranceDiagnostics]


def feature_matrix(features: Features) -> np.ndarray:
    frames = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise InvalidArgumentError(f"expected a non-empty T x D feature map, got shape {frames.shape}")
    return frames


class LASModel:
    def __init__(self, graph: Graph, dims: ModelDims):
        self.graph = graph
        self.dims = dims
        self.attention_params = graph.group("attention")

    @classmethod
    def initialize(cls, dims: ModelDims, rng: Optional[np.random.Generator] = None, seed: int = 1) -> "LASModel":
        rng = rng if rng is not None else make_prng(seed)
        graph = Graph()
        init_listener(graph, rng, dims.feat_dim, dims.listener_hidden, dims.listener_layers)
        init_attention(
            graph, rng,
            query_dim=dims.speller_hidden,
            key_dim=dims.context_dim,
            attention_dim=dims.attention_dim,
            conv_filters=dims.conv_filters,
            conv_width=dims.conv_width,
            location_aware=dims.location_aware,
        )
        init_speller(
            graph, rng,
            vocab_size=dims.vocab_size,
            embed_dim=dims.embedding_size,
            context_dim=dims.context_dim,
            hidden=dims.speller_hidden,
            num_layers=dims.speller_layers,
        )
        logger.info(f"Initialized LAS model with {graph.num_parameters()} parameters")
        return cls(graph, dims)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], attention_history: str = "accumulated") -> "LASModel":
        dims = ModelDims.from_arrays(arrays, attention_history)
        return cls(Graph.from_arrays(arrays), dims)

    @classmethod
    def load(cls, path: str, attention_history: str = "accumulated") -> "LASModel":
        model = cls.from_arrays(read_checkpoint(path), attention_history)
        logger.info(f"Loaded LAS model from {path} (vocab {model.dims.vocab_size})")
        return model

    def save(self, path: str, dtype: Optional[str] = None) -> None:
        write_checkpoint(path, self.graph.state_dict(), dtype=dtype)

    @property
    def vocab_size(self) -> int:
        return self.dims.vocab_size

    def encode(self, features: Features) -> Encoded:
        frames = feature_matrix(features)
        if frames.shape[1] != self.dims.feat_dim:
            raise InvalidArgumentError(f"feature dim {frames.shape[1]} does not match model dim {self.dims.feat_dim}")
        memory = listen(frames, self.graph, self.dims.listener_layers)
        return Encoded(listener=memory, keys=project_keys(memory, self.attention_params))

    def initial_state(self, encoded: Encoded) -> SpellerState:
        return SpellerState(
            layers=initial_layers(self.dims.speller_layers, self.dims.speller_hidden),
            prev_token=BOS_ID,
            attention=initial_attention_state(encoded.listener.length, self.dims.attention_history),
        )

    def step(self, state: SpellerState, encoded: Encoded) -> Tuple[Tensor, SpellerState]:
        """
        Score the next token given the state's previous token.

        Returns:
            (log-distribution over the vocabulary, state after the step; set prev_token before the next call)
        """
        context, alpha = attend(state.query, encoded.listener, state.attention, self.attention_params, encoded.keys)
        log_probs, layers = spell_step(state, context, self.graph)
        return log_probs, SpellerState(layers=layers, prev_token=state.prev_token, attention=advance(state.attention, alpha))

    def max_steps(self, encoded: Encoded, factor: float = 2.0, offset: int = 10) -> int:
        return int(factor * encoded.listener.length) + offset

    def sequence_logprob(self, features: Features, tokens: Sequence[int]) -> Tensor:
        """Teacher-forced natural-log p(tokens | features); tokens normally end with </s>."""
        return self.score_tokens(self.encode(features), tokens)

    def score_tokens(self, encoded: Encoded, tokens: Sequence[int]) -> Tensor:
        if not tokens:
            raise InvalidArgumentError("empty token sequence")
        state = self.initial_state(encoded)
        picks = []
        for token in tokens:
            log_probs, state = self.step(state, encoded)
            picks.append(log_probs[int(token)])
            state = state._replace(prev_token=int(token))
        return stack(picks).sum()

    def greedy_decode(self, features: Features, max_steps: Optional[int] = None) -> List[int]:
        """Arg-max tokens until </s>; the returned ids exclude </s>."""
        with no_grad():
            encoded = self.encode(features)
            limit = max_steps if max_steps is not None else self.max_steps(encoded)
            state = self.initial_state(encoded)
            tokens: List[int] = []
            for _ in range(limit):
                log_probs, state = self.step(state, encoded)
                scores = log_probs.data.copy()
                scores[list(BLOCKED_TOKENS)] = -np.inf
                token = int(np.argmax(scores))
                if token == EOS_ID:
                    break
                tokens.append(token)
                state = state._replace(prev_token=token)
        return tokens

    def scorer(self, features: Features) -> "LASScorer":
        return LASScorer(self, features)


class LASScorer:
    """Step-scorer view of one utterance for beam search: start / step / feed."""

    def __init__(self, model: LASModel, features: Features):
        with no_grad():
            self.model = model
            self.encoded = model.encode(features)

    @property
    def vocab_size(self) -> int:
        return self.model.vocab_size

    def default_max_steps(self, factor: float, offset: int) -> int:
        return self.model.max_steps(self.encoded, factor, offset)

    def start(self) -> SpellerState:
        return self.model.initial_state(self.encoded)

    def step(self, state: SpellerState) -> Tuple[np.ndarray, SpellerState]:
        with no_grad():
            log_probs, state = self.model.step(state, self.encoded)
        return log_probs.data, state

    def feed(self, state: SpellerState, token: int) -> SpellerState:
        return state._replace(prev_token=int(token))


def forward_ce(
    batch: Sequence[Tuple[Features, Sequence[int]]],
    model: LASModel,
    sampling_prob: float,
    epsilon: float,
    rng: np.random.Generator,
) -> CEResult:
    """
    Label-smoothed cross-entropy with scheduled sampling.

    At every step after the first, with probability `sampling_prob` the fed previous token is
    drawn from the model's previous-step distribution (a constant input), otherwise it is the
    ground truth. The loss is the mean over all steps in the batch.
    """
    if not 0.0 <= sampling_prob <= 1.0:
        raise InvalidArgumentError(f"sampling probability must be in [0, 1], got {sampling_prob}")
    if not batch:
        raise InvalidArgumentError("empty batch")

    utterance_losses: List[Tensor] = []
    diagnostics: List[UtteranceDiagnostics] = []
    total_steps = 0
    for features, tokens in batch:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise InvalidArgumentError("empty token sequence")
        if tokens[-1] != EOS_ID:
            raise InvalidArgumentError("token sequence must end with </s>")

        encoded = model.encode(features)
        state = model.initial_state(encoded)
        rows: List[Tensor] = []
        fed: List[int] = []
        previous_probs: Optional[np.ndarray] = None
        for i in range(len(tokens)):
            if i == 0:
                token = BOS_ID
            elif sampling_prob > 0.0 and rng.random() < sampling_prob:
                token = sample_index(rng, previous_probs)
            else:
                token = tokens[i - 1]
            state = state._replace(prev_token=token)
            log_probs, state = model.step(state, encoded)
            rows.append(log_probs)
            fed.append(token)
            previous_probs = np.exp(log_probs.data)

        log_probs = stack(rows)
        targets = smoothed_targets(tokens, model.vocab_size, epsilon)
        loss = -(Tensor(targets) * log_probs).sum()
        utterance_losses.append(loss)
        total_steps += len(tokens)
        truth_probs = [float(np.exp(log_probs.data[i, t])) for i, t in enumerate(tokens)]
        diagnostics.append(UtteranceDiagnostics(fed_tokens=fed, truth_probs=truth_probs, loss=loss.item() / len(tokens)))

    total = utterance_losses[0]
    for loss in utterance_losses[1:]:
        total = total + loss
    return CEResult(loss=total * (1.0 / total_steps), num_steps=total_steps, diagnostics=diagnostics)
