"""The joint model: configuration, parameter registry, forward pass, prediction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Example
from .encoder import EncoderConfig, EncodedViews, VARIANTS, encode, init_encoder_params
from .errors import ConfigError, DataError
from .heads import (
    GoldLabels,
    LossWeights,
    Prediction,
    TaskOutputs,
    TaskSet,
    DropoutStream,
    NUM_CLASSES,
    fuse_bully,
    head_hidden,
    head_output,
    init_fusion_params,
    init_head_params,
    init_rationale_params,
    prediction_from_outputs,
    rationale_probs,
)
from .tensor import Tensor, softmax_rows


@dataclass
class ModelConfig:
    embed_dim: int
    hidden_dim: int = 128
    attention_dim: int = 200
    filters: int = 200
    window: int = 3
    segment_len: int = 8
    max_len: int = 64
    variant: str = "mexcb"
    head_width: int = 100
    tasks: TaskSet = field(default_factory=TaskSet)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            attention_dim=self.attention_dim,
            filters=self.filters,
            window=self.window,
            segment_len=self.segment_len,
            max_len=self.max_len,
            variant=self.variant,
        )

    def validate(self) -> None:
        self.encoder_config().validate()
        if self.head_width <= 0:
            raise ConfigError(f"head_width must be positive, got {self.head_width}")
        self.loss_weights.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = self.tasks.to_dict()
        d["loss_weights"] = self.loss_weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["tasks"] = TaskSet.from_dict(d.get("tasks", {}))
        d["loss_weights"] = LossWeights.from_dict(
            d.get("loss_weights", LossWeights().to_dict()))
        return cls(**d)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Model:
    """Encoder plus task heads with one flat, ordered parameter registry."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        enc_cfg = config.encoder_config()
        rng = np.random.default_rng(config.seed)
        self.params = init_encoder_params(enc_cfg, rng)

        width = config.head_width
        sent_w = enc_cfg.sentence_width
        init_head_params(self.params, rng, "bully_head", sent_w, width,
                         NUM_CLASSES["bully"])
        if config.tasks.rationale:
            init_rationale_params(self.params, rng, "rationale_head",
                                  enc_cfg.rationale_width, config.max_len)
            init_fusion_params(self.params, rng, "rationale_proj",
                               config.max_len, width)
        if config.tasks.sentiment:
            init_head_params(self.params, rng, "sentiment_head", sent_w, width,
                             NUM_CLASSES["sentiment"])
        if config.tasks.target:
            init_head_params(self.params, rng, "target_head", sent_w, width,
                             NUM_CLASSES["target"])

    def parameter_count(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def forward(self, embedded, mask, dropout_rate: float = 0.0,
                stream: DropoutStream | None = None,
                return_views: bool = False):
        """Run one example through the encoder and every enabled head."""
        views: EncodedViews = encode(embedded, mask, self.config.encoder_config(),
                                     self.params)
        tasks = self.config.tasks
        sent = views.sentence_vector

        rationale_raw = rationale_masked = None
        if tasks.rationale:
            rationale_raw, rationale_masked = rationale_probs(
                self.params, "rationale_head", views.rationale_features, views.mask)

        sentiment_probs = sentiment_hidden = None
        if tasks.sentiment:
            sentiment_hidden = head_hidden(self.params, "sentiment_head", sent,
                                           dropout_rate, stream)
            sentiment_probs = softmax_rows(
                head_output(self.params, "sentiment_head", sentiment_hidden))

        target_probs = None
        if tasks.target:
            target_hidden = head_hidden(self.params, "target_head", sent,
                                        dropout_rate, stream)
            target_probs = softmax_rows(
                head_output(self.params, "target_head", target_hidden))

        bully_hidden = head_hidden(self.params, "bully_head", sent,
                                   dropout_rate, stream)
        fused = fuse_bully(self.params, "rationale_proj", bully_hidden,
                           rationale_masked if tasks.rationale else None,
                           sentiment_hidden)
        bully_probs = softmax_rows(head_output(self.params, "bully_head", fused))

        outputs = TaskOutputs(bully_probs=bully_probs,
                              rationale_raw=rationale_raw,
                              rationale_masked=rationale_masked,
                              sentiment_probs=sentiment_probs,
                              target_probs=target_probs)
        if return_views:
            return outputs, views
        return outputs

    def predict(self, embedded, mask, n_tokens: int | None = None) -> Prediction:
        """Inference without dropout, detached into numpy arrays and labels."""
        mask_arr = np.asarray(mask, dtype=np.float64)
        if n_tokens is None:
            n_tokens = int(mask_arr.sum())
        outputs = self.forward(embedded, mask_arr)
        return prediction_from_outputs(outputs, mask_arr, n_tokens)


def gold_from_example(ex: Example, max_len: int, mask) -> GoldLabels:
    """Pad or truncate an example's labels to the model window."""
    rationale = np.zeros(max_len)
    for i, v in enumerate(ex.rationale[:max_len]):
        rationale[i] = float(v)
    live = np.asarray(mask, dtype=np.float64).reshape(max_len)
    if live.sum() == 0:
        raise DataError(f"example {ex.id!r} has no live tokens")
    return GoldLabels(bully=ex.bully_id, sentiment=ex.sentiment_id,
                      target=ex.target_id, rationale=rationale, mask=live)
