import os
from typing import Dict, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

class Config:
    # Reproducibility: overrides the seed of any loaded experiment config
    LAS_SEED = os.getenv("LAS_SEED")

    # Logging
    LAS_LOG_LEVEL = os.getenv("LAS_LOG_LEVEL", "INFO")

    # Parallel utterance processing for features/augment/decode
    LAS_JOBS = int(os.getenv("LAS_JOBS", "1"))

    # Computation precision when no config file says otherwise
    LAS_DTYPE = os.getenv("LAS_DTYPE", "float64")

# Global config instance
config = Config()


class LASConfig(BaseModel):
    """Experiment configuration. Every key may appear in a `key = value` config file."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Frontend
    sample_rate: int = Field(16000, gt=0)
    window_ms: float = Field(25.0, gt=0)
    hop_ms: float = Field(10.0, gt=0)
    preemphasis: float = Field(0.97, ge=0, le=1)
    num_mel_bins: int = Field(40, ge=1)
    low_freq: float = Field(20.0, ge=0)
    high_freq: float = Field(0.0, ge=0)            # 0 means Nyquist
    log_floor: float = Field(1e-10, gt=0)
    apply_cmvn: bool = False
    speed_factors: str = "0.9,1.1"

    # Word pieces
    wp_size: int = Field(500, ge=5)
    lowercase: bool = True

    # Model
    feat_dim: int = Field(40, ge=1)
    listener_layers: int = Field(3, ge=1)
    listener_hidden: int = Field(1024, ge=1)
    speller_layers: int = Field(2, ge=1)
    speller_hidden: int = Field(512, ge=1)
    embed_dim: int = Field(0, ge=0)                # 0 means speller_hidden
    attention_dim: int = Field(512, ge=1)
    conv_filters: int = Field(20, ge=1)
    conv_width: int = Field(100, ge=1)
    location_aware: bool = True
    attention_history: Literal["accumulated", "previous"] = "accumulated"

    # CE training
    optimizer: Literal["sgd", "adam"] = "sgd"      # adam is an opt-in extension; the LSTM LM always uses Adam
    lr_start: float = Field(0.0002, gt=0)
    lr_end: float = Field(0.002, gt=0)
    warmup_steps: int = Field(2000, ge=0)
    newbob_decay: float = Field(0.9, gt=0, le=1)
    newbob_threshold: float = Field(0.001, ge=0)
    min_lr: float = Field(1e-6, ge=0)
    grad_decay: float = Field(0.95, gt=0, lt=1)
    grad_std_factor: float = Field(2.0, ge=0)
    grad_static_cap: float = Field(5.0, gt=0)
    label_smoothing: float = Field(0.01, ge=0, lt=1)
    sampling_strategy: Literal["linear-ramp", "plateau-step", "constant"] = "plateau-step"
    sampling_start: float = Field(0.0, ge=0, le=1)
    sampling_end: float = Field(0.2, ge=0, le=1)
    sampling_ramp_steps: int = Field(10000, ge=0)
    sampling_base: float = Field(0.1, ge=0, le=1)
    sampling_boost: float = Field(0.2, ge=0, le=1)
    sampling_fixed: float = Field(0.1, ge=0, le=1)
    batch_size: int = Field(8, ge=1)
    max_epochs: int = Field(20, ge=0)
    eval_train_wer: bool = True
    checkpoint_dtype: Literal["float32", "float64"] = "float32"

    # MWER stage
    mwer_epochs: int = Field(0, ge=0)
    mwer_n: int = Field(4, ge=1)
    mwer_gamma: float = Field(0.5, gt=0, le=1)
    mwer_lambda: float = Field(0.01, ge=0)
    mwer_lr: float = Field(0.0002, gt=0)
    mwer_augment: bool = True

    # Decoding
    beam: int = Field(16, ge=1)
    nbest: int = Field(16, ge=1)
    lm_weight: float = Field(0.3, ge=0)
    length_penalty: float = Field(0.6, ge=0)
    max_steps_factor: float = Field(2.0, ge=0)
    max_steps_offset: int = Field(10, ge=1)
    rescore_weight: float = Field(0.5, ge=0)

    # Language models
    ngram_order: int = Field(3, ge=1)
    ngram_discount: float = Field(0.5, ge=0, le=1)
    unk_penalty: float = Field(-10.0, le=0)
    nnlm_layers: int = Field(2, ge=1)
    nnlm_hidden: int = Field(1024, ge=1)
    nnlm_embed: int = Field(0, ge=0)               # 0 means nnlm_hidden
    nnlm_lr: float = Field(0.001, gt=0)
    nnlm_epochs: int = Field(10, ge=0)
    nnlm_clip: float = Field(5.0, gt=0)
    word_min_count: int = Field(4, ge=1)

    # Reproducibility / precision
    seed: int = Field(1, ge=0)
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("speed_factors")
    @classmethod
    def _check_speed_factors(cls, value: str) -> str:
        factors = [f.strip() for f in value.split(",") if f.strip()]
        if not factors:
            raise ValueError("at least one speed factor is required")
        for f in factors:
            if float(f) <= 0:
                raise ValueError(f"speed factor must be positive, got {f}")
        return value

    @model_validator(mode="after")
    def _check_beam(self) -> "LASConfig":
        if self.nbest > self.beam:
            raise ValueError(f"nbest ({self.nbest}) must not exceed beam ({self.beam})")
        return self

    @property
    def speed_factor_list(self) -> Tuple[float, ...]:
        return tuple(float(f) for f in self.speed_factors.split(",") if f.strip())


def _parse_config_lines(text: str) -> Tuple[Dict[str, str], Dict[str, int]]:
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for line_number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{raw.strip()}'", line_number=line_number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line_number=line_number)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line_number=line_number)
        values[key] = value
        lines[key] = line_number
    return values, lines


def build_config(values: Dict[str, object], lines: Optional[Dict[str, int]] = None) -> LASConfig:
    """Validate raw key/value pairs into an LASConfig, applying LAS_DTYPE and the LAS_SEED override."""
    lines = lines or {}
    values = dict(values)
    values.setdefault("dtype", config.LAS_DTYPE)
    if config.LAS_SEED is not None and config.LAS_SEED != "":
        values["seed"] = config.LAS_SEED
    try:
        return LASConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first["loc"][0]) if first.get("loc") else None
        message = "unknown key" if first.get("type") == "extra_forbidden" else first.get("msg", str(e))
        raise ConfigError(message, key=key, line_number=lines.get(key)) from e


def load_config(path: Optional[str] = None) -> LASConfig:
    """
    Load an experiment config file.

    Args:
        path: `key = value` file with `#` comments; None gives the full default config

    Returns:
        Validated LASConfig
    """
    if path is None:
        return build_config({})
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    values, lines = _parse_config_lines(text)
    return build_config(values, lines)
