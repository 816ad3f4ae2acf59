"""Typed configuration.

Four component configs (model, corpus synthesis, GP, reward) and one flat
``ExperimentConfig`` that the CLI loads from a ``key = value`` file:

    # comment
    domain = letsgo6
    reward = iq
    seeds = 1, 2, 3
    iq_embedding_dim = none

Unknown keys are rejected before any work starts.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Embedding width used when no pretrained vectors are given.
SMALL_EMBEDDING_DIM = 32
PRETRAINED_EMBEDDING_DIM = 300


class IqModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(default=1, ge=1)
    embedding_dim: int = Field(default=SMALL_EMBEDDING_DIM, ge=1)
    turn_hidden: int = Field(default=64, ge=1)
    attention_dim: int = Field(default=64, ge=1)
    dialogue_hidden: int = Field(default=64, ge=1)
    num_classes: Literal[5] = 5
    max_context_turns: int = Field(default=100, ge=1)
    dropout_rate: float = Field(default=0.5, ge=0.0, lt=1.0)
    lr: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=30, ge=1)
    batch_dialogues: int = Field(default=8, ge=1)
    seed: int = Field(default=0, ge=0)
    attention_scale: float = 1.0
    clip_norm: float = Field(default=5.0, gt=0.0)
    init_scale: float = Field(default=0.08, gt=0.0)


class SynthConfig(BaseModel):
    """Synthetic corpus shape; defaults follow the LEGO corpus statistics."""

    model_config = ConfigDict(frozen=True)

    n_dialogues: int = Field(default=400, ge=1)
    mean_turns: float = Field(default=65.0, ge=1.0)
    max_turns: int = Field(default=200, ge=1)
    mean_tokens: float = Field(default=26.0, ge=1.0)
    max_tokens: int = Field(default=76, ge=1)
    error_rate: float = Field(default=0.25, ge=0.0, le=1.0)
    seed: int = Field(default=11, ge=0)
    domain: str = "letsgo4"

    @model_validator(mode="after")
    def _check_shape(self) -> "SynthConfig":
        if self.max_turns < self.mean_turns:
            raise ValueError(f"max_turns {self.max_turns} below mean_turns {self.mean_turns}")
        if self.max_tokens < self.mean_tokens:
            raise ValueError(f"max_tokens {self.max_tokens} below mean_tokens {self.mean_tokens}")
        return self


class GpConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    noise_std: float = Field(default=5.0, gt=0.0)
    sparsity: float = Field(default=0.001, ge=0.0)
    discount: float = Field(default=1.0, gt=0.0, le=1.0)
    dictionary_cap: Optional[int] = Field(default=1000, ge=1)


class RewardConfig(BaseModel):
    """Episode return = per-turn penalty * T + terminal bonus."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["ts", "iq"] = "ts"
    turn_penalty: float = -1.0
    success_bonus: float = 20.0
    iq_scale: float = 5.0
    max_turns: int = Field(default=25, ge=1)


_LIST_KEYS = ("seeds", "iq_context_sweep")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # Environment
    domain: str = "letsgo4"
    db_size: Optional[int] = Field(default=None, ge=0)
    reward: Literal["ts", "iq"] = "ts"
    estimator: str = "oracle"
    estimator_model: Optional[str] = None
    estimator_address: Optional[str] = None
    estimator_timeout: float = Field(default=10.0, gt=0.0)
    max_turns: int = Field(default=25, ge=1)

    # RL
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3])
    n_train_dialogues: int = Field(default=1000, ge=0)
    n_eval_dialogues: int = Field(default=100, ge=1)
    gp_noise_std: float = Field(default=5.0, gt=0.0)
    gp_sparsity: float = Field(default=0.001, ge=0.0)
    gp_discount: float = Field(default=1.0, gt=0.0, le=1.0)
    gp_dictionary_cap: Optional[int] = Field(default=1000, ge=1)

    # Corpus
    corpus_path: Optional[str] = None
    corpus_mapping: Optional[str] = None
    synth_n_dialogues: int = Field(default=400, ge=1)
    synth_mean_turns: float = 65.0
    synth_max_turns: int = 200
    synth_mean_tokens: float = 26.0
    synth_max_tokens: int = 76
    synth_error_rate: float = Field(default=0.25, ge=0.0, le=1.0)
    synth_seed: int = Field(default=11, ge=0)

    # IQ model
    iq_embedding_dim: Optional[int] = Field(default=None, ge=1)
    iq_embeddings_path: Optional[str] = None
    iq_turn_hidden: int = 64
    iq_attention_dim: int = 64
    iq_dialogue_hidden: int = 64
    iq_max_context_turns: int = 100
    iq_dropout: float = 0.5
    iq_lr: float = 1e-3
    iq_epochs: int = 30
    iq_batch_dialogues: int = 8
    iq_attention_scale: float = 1.0
    iq_min_count: int = Field(default=1, ge=1)
    iq_seed: int = Field(default=0, ge=0)
    iq_context_sweep: list[int] = Field(default_factory=lambda: [1, 5, 10, 25, 50, 100])
    cv_folds: int = Field(default=10, ge=2)
    cv_seed: int = Field(default=0, ge=0)

    output: str = "results"

    @field_validator(*_LIST_KEYS, mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("seeds")
    @classmethod
    def _nonempty_seeds(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("seeds must name at least one seed")
        return value

    def iq_model_config(self, vocab_size: int = 1) -> IqModelConfig:
        dim = self.iq_embedding_dim
        if dim is None:
            dim = PRETRAINED_EMBEDDING_DIM if self.iq_embeddings_path else SMALL_EMBEDDING_DIM
        return IqModelConfig(
            vocab_size=vocab_size,
            embedding_dim=dim,
            turn_hidden=self.iq_turn_hidden,
            attention_dim=self.iq_attention_dim,
            dialogue_hidden=self.iq_dialogue_hidden,
            max_context_turns=self.iq_max_context_turns,
            dropout_rate=self.iq_dropout,
            lr=self.iq_lr,
            epochs=self.iq_epochs,
            batch_dialogues=self.iq_batch_dialogues,
            seed=self.iq_seed,
            attention_scale=self.iq_attention_scale,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_dialogues=self.synth_n_dialogues,
            mean_turns=self.synth_mean_turns,
            max_turns=self.synth_max_turns,
            mean_tokens=self.synth_mean_tokens,
            max_tokens=self.synth_max_tokens,
            error_rate=self.synth_error_rate,
            seed=self.synth_seed,
            domain=self.domain,
        )

    def gp_config(self) -> GpConfig:
        return GpConfig(
            noise_std=self.gp_noise_std,
            sparsity=self.gp_sparsity,
            discount=self.gp_discount,
            dictionary_cap=self.gp_dictionary_cap,
        )

    def reward_config(self) -> RewardConfig:
        return RewardConfig(kind=self.reward, max_turns=self.max_turns)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``none`` becomes None."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = None if value.lower() == "none" else value
    return values


def load_experiment_config(
    path: str | Path | None = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ExperimentConfig:
    """Build an ExperimentConfig from a file plus CLI overrides (None skipped)."""
    values: dict[str, Any] = {}
    if path is not None:
        values = parse_config_text(Path(path).read_text(), source=str(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return ExperimentConfig.model_validate(values)
