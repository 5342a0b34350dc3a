import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from models.network import NetworkParams, NetworkSpec, ParamKey, TrainConfig
from services.nn_core import (
    TRAINING,
    bce_loss,
    init_params,
    network_backward,
    network_forward,
    sgd_step,
    total_loss,
)
from services.patches import SampleSet
from utils.errors import ConfigError, NumericError

logger = logging.getLogger("training")


@dataclass
class SeedStreams:
    """Independent generators for the random choices of one training run"""

    init: np.random.Generator
    sampling: np.random.Generator
    shuffle: np.random.Generator
    dropout: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, salt: int = 0) -> "SeedStreams":
        entropy = [seed, salt] if salt else seed
        children = np.random.SeedSequence(entropy).spawn(4)
        return cls(*(np.random.default_rng(child) for child in children))


@dataclass
class TrainingHistory:
    epoch_losses: List[float] = field(default_factory=list)
    member: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "member": [self.member] * len(self.epoch_losses),
                "epoch": range(1, len(self.epoch_losses) + 1),
                "loss": self.epoch_losses,
            }
        )


class NetworkTrainer:
    """Mini-batch momentum SGD over a SampleSet for one network"""

    def __init__(self, spec: NetworkSpec, config: TrainConfig, streams: SeedStreams, dtype=np.float32):
        self.spec = spec.with_dropout(config.dropout_rate)
        self.config = config
        self.streams = streams
        self.dtype = dtype
        self.params = init_params(self.spec, streams.init, dtype=dtype)
        self.velocity: Dict[ParamKey, np.ndarray] = {}

    def train_step(self, inputs: np.ndarray, labels: np.ndarray) -> float:
        """One forward/backward/update on a batch; returns the batch's total loss before the update"""
        outputs, cache = network_forward(self.spec, self.params, inputs, mode=TRAINING, rng=self.streams.dropout)
        loss = total_loss(bce_loss(outputs, labels), self.params, self.config.l2_beta)
        if not np.isfinite(loss):
            raise NumericError(f"Training loss became non-finite ({loss})")
        grads = network_backward(self.spec, self.params, cache, labels, beta=self.config.l2_beta)
        self.params = sgd_step(self.params, grads, self.config, self.velocity)
        return loss

    def fit(self, samples: SampleSet, member: Optional[int] = None) -> TrainingHistory:
        """
        Train for ``config.epochs`` epochs

        Args:
            samples: Training patches
            member: Ensemble member index, used in log lines

        Returns:
            TrainingHistory with the mean batch loss of every epoch
        """
        if len(samples) == 0:
            raise ConfigError("Cannot train on an empty sample set")
        history = TrainingHistory(member=member)
        label = f"member {member}" if member is not None else "network"
        for epoch in range(1, self.config.epochs + 1):
            order = self.streams.shuffle.permutation(len(samples))
            losses = []
            for start in range(0, len(order), self.config.batch_size):
                inputs, labels = samples.batch(order[start:start + self.config.batch_size], dtype=self.dtype)
                losses.append(self.train_step(inputs, labels))
            epoch_loss = float(np.mean(losses))
            history.epoch_losses.append(epoch_loss)
            logger.info(f"{label} epoch {epoch}/{self.config.epochs}: loss {epoch_loss:.5f}")
        return history


def train_network(
    spec: NetworkSpec, config: TrainConfig, samples: SampleSet, streams: SeedStreams, member: Optional[int] = None
) -> Tuple[NetworkParams, TrainingHistory]:
    trainer = NetworkTrainer(spec, config, streams)
    history = trainer.fit(samples, member=member)
    return trainer.params, history
