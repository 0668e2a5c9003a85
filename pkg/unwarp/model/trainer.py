'''
Training loop: mean L1 between predicted and ground-truth backward flows,
AdamW with a one-cycle learning-rate schedule.

Every step draws its batch and its color jitter from a generator seeded with
(seed, step), so a run resumed from a checkpoint replays exactly the steps
an uninterrupted run would have taken.
'''
import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from mashumaro import DataClassDictMixin

from unwarp.core import autodiff as ad
from unwarp.core.autodiff import NdValue, NonFiniteValueError, Tape
from unwarp.core.flow import resize_flow, sentinel_flow
from unwarp.core.models import SampleRecord
from unwarp.core.optim import AdamWState, adamw_step, onecycle_lr
from unwarp.core.raster import ImageRaster, resize_raster
from unwarp.model.checkpoint import (Checkpoint, CheckpointMismatchError,
                                     save_checkpoint)
from unwarp.model.config import ModelConfig
from unwarp.model.network import network_forward
from unwarp.model.params import Params, as_values, init_params
from unwarp.synth.jitter import (DEFAULT_MAX_DH, DEFAULT_MAX_DS,
                                 DEFAULT_MAX_DV, hsv_jitter)
from unwarp.utils.files import atomic_write_text

LOG = logging.getLogger(__name__)

FLOW_MODES = ("continuous", "sentinel")
TRACE_COLUMNS = ["step", "lr", "loss"]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingRun(DataClassDictMixin):
    steps: int = 500
    batch: int = 4
    lr_max: float = 1e-4
    warmup_frac: float = 0.1
    seed: int = 42
    flow_mode: str = "continuous"
    max_dh: float = DEFAULT_MAX_DH
    max_ds: float = DEFAULT_MAX_DS
    max_dv: float = DEFAULT_MAX_DV
    # 0 writes a checkpoint only at the end.
    checkpoint_every: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch < 1:
            raise ValueError(f"Need at least one step and one sample per "
                             f"batch, got {self.steps} and {self.batch}")
        if self.flow_mode not in FLOW_MODES:
            raise ValueError(f"flow_mode must be one of {FLOW_MODES}, got "
                             f"{self.flow_mode!r}")


@dataclass(frozen=True)
class LossPoint:
    step: int
    lr: float
    loss: float


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    trace: list[LossPoint] = field(default_factory=list)


@dataclass(frozen=True)
class TrainingExample:
    '''A sample brought to network extents, with its regression target.'''
    image: ImageRaster
    target: np.ndarray


def prepare_examples(records: t.Iterable[SampleRecord], config: ModelConfig,
                     flow_mode: str) -> list[TrainingExample]:
    '''
    Resizes images and flows to the network extents, moving flow
    coordinates into the resized image's frame. In "sentinel" mode flow
    entries pointing outside the image become -1.
    '''
    examples: list[TrainingExample] = []
    for record in records:
        assert (record.flow.height, record.flow.width) == (
            record.image.height, record.image.width)
        image = resize_raster(record.image, config.height, config.width)
        flow = resize_flow(record.flow, config.height, config.width,
                           config.height, config.width)
        if flow_mode == "sentinel":
            flow = sentinel_flow(flow, config.height, config.width)
        examples.append(TrainingExample(image, flow.stacked()))
    if not examples:
        raise ValueError("Cannot train on an empty dataset")
    return examples


def train(examples: t.Sequence[TrainingExample],
          config: ModelConfig,
          run: TrainingRun,
          checkpoint_path: str | None = None,
          trace_path: str | None = None,
          resume: Checkpoint | None = None,
          initial_trace: t.Sequence[LossPoint] = ()) -> TrainingResult:
    '''
    Runs steps [start, run.steps), where `start` is 0 or the resumed
    checkpoint's step. Checkpoints (with optimizer state) are written every
    `run.checkpoint_every` steps and at the end.
    '''
    if resume is not None:
        if resume.config != config:
            raise CheckpointMismatchError(
                f"Resumed checkpoint was trained with {resume.config}, this "
                f"run uses {config}")
        params = dict(resume.params)
        state = resume.optimizer or AdamWState.zeros_like(params)
        start = resume.step
        LOG.info("Resuming from step %d", start)
    else:
        params = init_params(config, run.seed)
        state = AdamWState.zeros_like(params)
        start = 0

    trace = [p for p in initial_trace if p.step < start]
    checkpoint = Checkpoint(config, params, start, state)
    for step in range(start, run.steps):
        lr = onecycle_lr(step, run.steps, run.lr_max, run.warmup_frac)
        loss, grads = _loss_and_grads(examples, params, config, run, step)
        params, state = adamw_step(params, grads, state, lr)
        trace.append(LossPoint(step, lr, loss))

        if run.log_every and (step % run.log_every == 0
                              or step == run.steps - 1):
            LOG.info("step %d/%d  lr %.3e  loss %.5f", step + 1, run.steps,
                     lr, loss)

        checkpoint = Checkpoint(config, params, step + 1, state)
        done = step == run.steps - 1
        periodic = run.checkpoint_every > 0 \
            and (step + 1) % run.checkpoint_every == 0
        if checkpoint_path is not None and (done or periodic):
            save_checkpoint(checkpoint_path, checkpoint)
            if trace_path is not None:
                write_trace(trace_path, trace)

    return TrainingResult(checkpoint, trace)


def trace_frame(trace: t.Sequence[LossPoint]) -> pd.DataFrame:
    return pd.DataFrame([(p.step, p.lr, p.loss) for p in trace],
                        columns=TRACE_COLUMNS)


def write_trace(path: str, trace: t.Sequence[LossPoint]) -> None:
    atomic_write_text(path, trace_frame(trace).to_csv(index=False))


def read_trace(path: str) -> list[LossPoint]:
    frame = pd.read_csv(path)
    return [
        LossPoint(int(row.step), float(row.lr), float(row.loss))
        for row in frame.itertuples(index=False)
    ]


def batch_loss(examples: t.Sequence[TrainingExample],
               params: t.Mapping[str, NdValue],
               config: ModelConfig) -> NdValue:
    '''Mean over the batch of each example's mean absolute flow error.'''
    losses = [
        ad.l1_loss(network_forward(NdValue(example.image.pixels), params,
                                   config), example.target)
        for example in examples
    ]
    total = losses[0]
    for loss in losses[1:]:
        total = ad.add(total, loss)
    return ad.mul(total, 1.0 / len(losses))


#
# Private helpers.
#


def _loss_and_grads(examples: t.Sequence[TrainingExample], params: Params,
                    config: ModelConfig, run: TrainingRun,
                    step: int) -> tuple[float, dict[str, np.ndarray]]:
    rng = np.random.default_rng([run.seed, step])
    chosen = rng.integers(0, len(examples), size=run.batch)
    batch = [
        TrainingExample(
            hsv_jitter(examples[i].image,
                       run.max_dh,
                       run.max_ds,
                       run.max_dv,
                       seed=rng), examples[i].target) for i in chosen
    ]

    values = as_values(params, requires_grad=True)
    try:
        with Tape() as tape:
            loss = batch_loss(batch, values, config)
        ad.backward(tape, loss)
    except NonFiniteValueError as ex:
        raise TrainingDivergedError(
            f"Training diverged at step {step}: {ex}") from ex

    grads = {
        name: value.grad if value.grad is not None else np.zeros_like(
            value.data) for name, value in values.items()
    }
    return loss.item(), grads
