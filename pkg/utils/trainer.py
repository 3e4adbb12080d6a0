"""
Adversarial training loop.

Each iteration runs one discriminator step followed by `g_steps` generator
steps on the same batch, each with freshly drawn noise. The generator loss adds
two feature matching terms to the adversarial term:

    g_loss = adv + lambda1 * |mean(X) - mean(G(z))|^2 + lambda2 * |mean(f(X)) - mean(f(G(z)))|^2

where f is the output of the discriminator's first convolution.
"""

import os
from dataclasses import astuple, dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, field_validator

from utils.adam import AdamState, adam_step
from utils.checkpoint import Checkpoint, save_checkpoint
from utils.errors import ContractError, NonFiniteLossError
from utils.logger import log_event
from utils.models import MidiNet, ModelVariant, monophonize
from utils.pianoroll import Batch, TripleDataset, batch_iter
from utils.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    batch_mean,
    frozen,
    l2_diff,
    scale,
    sigmoid_cross_entropy,
)


class TrainConfig(BaseModel):
    variant: ModelVariant
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    label_smooth: float = 0.9
    g_steps: int = 2
    checkpoint_every: int = 1
    max_iterations: Optional[int] = None

    @field_validator("epochs", "batch_size", "g_steps")
    @classmethod
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("label_smooth")
    @classmethod
    def _smoothing_range(cls, value):
        if not 0.5 < value <= 1.0:
            raise ValueError("label_smooth must lie in (0.5, 1]")
        return value

    @field_validator("checkpoint_every")
    @classmethod
    def _cadence(cls, value):
        if value < 0:
            raise ValueError("checkpoint_every must be >= 0 (0 keeps only the final checkpoint)")
        return value

    def adam_hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.adam_eps}


@dataclass
class DStepResult:
    d_loss: float
    d_real: float
    d_fake: float


@dataclass
class GStepResult:
    g_loss: float
    g_adv: float
    fm_data: float
    fm_feature: float


@dataclass
class StepMetrics:
    step: int
    d_loss: float
    g_adv: float
    fm1: float
    fm2: float
    d_real: float
    d_fake: float

    def to_line(self) -> str:
        step, *values = astuple(self)
        return "\t".join([str(step)] + [f"{v:.6g}" for v in values])


class MetricsLog:
    """Append-only per-iteration metrics, mirrored to a TSV file when a path is given."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[StepMetrics] = []
        self.d_steps = 0
        self.g_steps = 0
        self._file = open(path, "a", encoding="utf-8") if path else None

    def append(self, metrics: StepMetrics):
        self.records.append(metrics)
        if self._file is not None:
            self._file.write(metrics.to_line() + "\n")

    def close(self):
        if self._file is not None:
            self._file.flush()
            self._file.close()
            self._file = None

    def __len__(self):
        return len(self.records)


def _finite(value: float, step: int, what: str) -> float:
    if not np.isfinite(value):
        log_event("trainer", "non_finite_loss", f"step={step}, what={what}, value={value}", level="error")
        raise NonFiniteLossError(step, what)
    return value


class Trainer:
    def __init__(self, config: TrainConfig, net: Optional[MidiNet] = None):
        self.config = config
        self.variant = config.variant
        self.net = net if net is not None else MidiNet(config.variant, seed=config.seed)
        if self.net.variant.model_dump(exclude={"id", "lambda1", "lambda2"}) != \
                self.variant.model_dump(exclude={"id", "lambda1", "lambda2"}):
            raise ContractError("network was built for a different variant")
        self.noise = np.random.default_rng([config.seed, 1])
        self.g_state = AdamState.for_params(self.net.g_params, **config.adam_hyper())
        self.d_state = AdamState.for_params(self.net.d_params, **config.adam_hyper())
        self.step = 0
        self.epoch = 0

    ######################################
    # Inputs
    ######################################

    def sample_noise(self, n: int) -> Tensor:
        return Tensor(self.noise.standard_normal((n, self.variant.noise_dim)))

    def _conditions(self, batch: Batch) -> Tuple[Optional[Tensor], Tensor]:
        if len(batch) == 0:
            raise ContractError("empty batch")
        chord = None
        if self.variant.use_chord:
            if batch.chord is None:
                raise ContractError("variant uses chords but the batch has none")
            chord = Tensor(batch.chord)
        return chord, Tensor(batch.prev)

    def generate(self, batch: Batch, z: Optional[Tensor] = None) -> Tensor:
        chord, prev = self._conditions(batch)
        z = z if z is not None else self.sample_noise(len(batch))
        acts = self.net.generate(z, chord, prev)
        return monophonize(acts) if self.variant.straight_through else acts

    ######################################
    # Losses
    ######################################

    def feature_matching(self, batch: Batch, fake: Tensor) -> Tuple[Tensor, Tensor]:
        """(data-space term, first-layer feature term) between the real batch and `fake`."""
        chord, prev = self._conditions(batch)
        real = Tensor(batch.cur)
        real_features = self.net.discriminate(real, chord, prev).features
        fake_features = self.net.discriminate(fake, chord, prev).features
        fm_data = l2_diff(batch_mean(fake), batch_mean(real))
        fm_feature = l2_diff(batch_mean(fake_features), batch_mean(real_features))
        return fm_data, fm_feature

    def generator_loss(self, batch: Batch, z: Optional[Tensor] = None) -> Tuple[Tensor, GStepResult]:
        chord, prev = self._conditions(batch)
        fake = self.generate(batch, z)
        fake_out = self.net.discriminate(fake, chord, prev)
        adv = sigmoid_cross_entropy(fake_out.logit, np.ones(len(batch)))
        fm_data, fm_feature = self.feature_matching(batch, fake)
        loss = add(adv, add(scale(fm_data, self.variant.lambda1), scale(fm_feature, self.variant.lambda2)))
        return loss, GStepResult(loss.item(), adv.item(), fm_data.item(), fm_feature.item())

    def discriminator_loss(self, batch: Batch) -> Tuple[Tensor, DStepResult]:
        chord, prev = self._conditions(batch)
        with frozen(self.net.g_params.values()):
            fake = self.generate(batch)
        real_out = self.net.discriminate(Tensor(batch.cur), chord, prev)
        fake_out = self.net.discriminate(fake, chord, prev)
        n = len(batch)
        loss = add(
            sigmoid_cross_entropy(real_out.logit, np.full(n, self.config.label_smooth)),
            sigmoid_cross_entropy(fake_out.logit, np.zeros(n)),
        )
        result = DStepResult(loss.item(), float(real_out.prob.data.mean()), float(fake_out.prob.data.mean()))
        return loss, result

    ######################################
    # Steps
    ######################################

    def d_step(self, batch: Batch) -> DStepResult:
        """Update the discriminator only."""
        with Tape() as tape:
            loss, result = self.discriminator_loss(batch)
            _finite(result.d_loss, self.step, "d_loss")
            backward(loss, tape)
        adam_step(self.net.d_params, self.d_state)
        return result

    def g_step(self, batch: Batch) -> GStepResult:
        """Update generator and conditioner; the discriminator is held fixed."""
        with Tape() as tape, frozen(self.net.d_params.values()):
            loss, result = self.generator_loss(batch)
            _finite(result.g_loss, self.step, "g_loss")
            backward(loss, tape)
        adam_step(self.net.g_params, self.g_state)
        return result

    def iteration(self, batch: Batch, log: Optional[MetricsLog] = None) -> StepMetrics:
        """One d_step then `g_steps` g_steps; generator columns are averaged over the g_steps."""
        d = self.d_step(batch)
        if log is not None:
            log.d_steps += 1
        results: List[GStepResult] = []
        for _ in range(self.config.g_steps):
            results.append(self.g_step(batch))
            if log is not None:
                log.g_steps += 1
        g_adv, fm_data, fm_feature = np.mean([(r.g_adv, r.fm_data, r.fm_feature) for r in results], axis=0)
        self.step += 1
        metrics = StepMetrics(self.step, d.d_loss, float(g_adv), float(fm_data), float(fm_feature), d.d_real, d.d_fake)
        if log is not None:
            log.append(metrics)
        return metrics

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_net(
            self.net,
            {"g": self.g_state, "d": self.d_state},
            self.epoch,
            self.step,
            self.config.model_dump(mode="json"),
        )


def default_metrics_path(checkpoint_path: str) -> str:
    return os.path.splitext(checkpoint_path)[0] + ".metrics.tsv"


def train(dataset: TripleDataset, config: TrainConfig, checkpoint_path: Optional[str] = None,
          metrics_path: Optional[str] = None, net: Optional[MidiNet] = None) -> Tuple[Checkpoint, MetricsLog]:
    """
    Train for `config.epochs` epochs (or until `config.max_iterations`).

    Checkpoints are written every `checkpoint_every` epochs and once at the end.
    The metrics log is flushed even when training aborts.
    """
    if config.variant.use_chord and not dataset.has_chords:
        raise ContractError(f"variant {config.variant.id} needs chord conditions but the dataset has none")
    if len(dataset) < config.batch_size:
        raise ContractError(f"dataset has {len(dataset)} triples, fewer than one batch of {config.batch_size}")

    trainer = Trainer(config, net)
    log = MetricsLog(metrics_path)
    log_event("trainer", "start", f"variant={config.variant.id}, triples={len(dataset)}, "
                                  f"epochs={config.epochs}, batch={config.batch_size}, seed={config.seed}")
    try:
        for epoch in range(config.epochs):
            for batch in batch_iter(dataset.triples, config.batch_size, config.seed, epoch):
                if config.max_iterations is not None and trainer.step >= config.max_iterations:
                    break
                trainer.iteration(batch, log)
            trainer.epoch = epoch + 1
            last = log.records[-1] if log.records else None
            if last is not None:
                log_event("trainer", "epoch_done", f"epoch={trainer.epoch}, step={trainer.step}, "
                                                   f"d_loss={last.d_loss:.4f}, g_adv={last.g_adv:.4f}")
            if config.max_iterations is not None and trainer.step >= config.max_iterations:
                break
            if checkpoint_path and config.checkpoint_every and trainer.epoch % config.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, trainer.checkpoint())
        final = trainer.checkpoint()
        if checkpoint_path:
            save_checkpoint(checkpoint_path, final)
    finally:
        log.close()
    log_event("trainer", "done", f"steps={trainer.step}, d_steps={log.d_steps}, g_steps={log.g_steps}")
    return final, log
