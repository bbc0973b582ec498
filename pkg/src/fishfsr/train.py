"""Two-stage training: ParsingNet on the mask loss, then FishFSRNet on the
SR L1 loss with the ParsingNet frozen."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blocks import ConfigError
from .checkpoint import Checkpoint, save_checkpoint
from .data import Sample, stack
from .networks import FishFSRNet, ModelConfig, ParsingNet, build_model
from .nn import ParameterStore
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import NumericalError, Tensor, backward, l1_loss, no_grad

STAGES = ("parsingnet", "fishfsrnet")


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_steps: int = 1000
    lr: float = 1e-4
    seed: int = 0
    stage: str = "parsingnet"
    checkpoint_interval: int = 0
    data: str = ""
    ckpt_dir: str = ""
    joint: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")


@dataclass
class Models:
    """Both networks over one parameter store, plus which stages are trained."""

    config: ModelConfig
    parsingnet: ParsingNet
    fishnet: FishFSRNet
    params: ParameterStore
    trained: set = field(default_factory=set)

    @classmethod
    def build(cls, config: ModelConfig) -> "Models":
        return cls(config, *build_model(config))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Models":
        return cls(ckpt.config, *ckpt.build(), trained=set(ckpt.trained))

    @property
    def parsing_params(self) -> ParameterStore:
        return self.params.subset("parsing.")

    @property
    def fish_params(self) -> ParameterStore:
        return self.params.subset("fish.")

    def save(self, path, **meta) -> Path:
        meta = {"trained": ",".join(sorted(self.trained)), **meta}
        return save_checkpoint(path, self.config, self.params, meta)

    def predict_parsing(self, lr: Tensor) -> Tensor:
        with no_grad():
            return self.parsingnet(lr)

    def super_resolve(self, lr: Tensor, parsing: Tensor | None = None) -> Tensor:
        """SR image; the parsing map defaults to the ParsingNet estimate."""
        with no_grad():
            if parsing is None and self.config.use_pmb:
                parsing = self.parsingnet(lr)
            return self.fishnet(lr, parsing)


@dataclass
class TrainResult:
    models: Models
    stage: str
    trace: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def batch_schedule(n_samples: int, batch_size: int, steps: int, seed: int) -> list[np.ndarray]:
    """Index batches for ``steps`` updates: each epoch is a seeded permutation
    cut into consecutive batches; the last batch of an epoch may be short."""
    rng = Rng(seed)
    size = min(batch_size, n_samples)
    out: list[np.ndarray] = []
    while len(out) < steps:
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, size):
            out.append(perm[start:start + size])
            if len(out) == steps:
                break
    return out


def _check_dataset(dataset: Sequence[Sample], scale: int):
    if not dataset:
        raise ConfigError("training dataset is empty")
    for s in dataset:
        ratio = s.hr.shape[2] // s.lr.shape[2]
        if ratio * s.lr.shape[2] != s.hr.shape[2] or ratio != scale:
            raise ConfigError(
                f"sample {s.id}: HR {s.hr.shape[2:]} / LR {s.lr.shape[2:]} does not match scale {scale}")
        if s.parsing_gt.shape[2:] != s.lr.shape[2:]:
            raise ConfigError(f"sample {s.id}: parsing map {s.parsing_gt.shape[2:]} != LR {s.lr.shape[2:]}")


def _run(cfg: TrainConfig, stage: str, models: Models, dataset: Sequence[Sample],
         params: ParameterStore, loss_fn: Callable, on_step: Callable | None) -> TrainResult:
    lr = stack([s.lr for s in dataset])
    hr = stack([s.hr for s in dataset])
    gt = stack([s.parsing_gt for s in dataset])
    result = TrainResult(models, stage)
    opt = AdamState(lr=cfg.lr)
    for step, idx in enumerate(batch_schedule(len(dataset), cfg.batch_size, cfg.max_steps, cfg.seed)):
        try:
            loss = loss_fn(Tensor(lr.data[idx]), Tensor(hr.data[idx]), Tensor(gt.data[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"loss is {value}")
            backward(loss)
        except NumericalError as exc:
            raise NumericalError(f"{stage} step {step}: {exc}") from exc
        adam_step(opt, params)
        result.trace.append(value)
        if on_step is not None:
            on_step(step, value)
        done = step + 1
        if cfg.ckpt_dir and cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0 and done < cfg.max_steps:
            path = Path(cfg.ckpt_dir) / f"{stage}_step{done:06d}.fckp"
            result.checkpoints.append(models.save(path, step=done))
    models.trained.add("parsing" if stage == "parsingnet" else "sr")
    if cfg.joint and stage == "fishfsrnet":
        models.trained.add("parsing")
    if cfg.ckpt_dir:
        result.checkpoints.append(models.save(Path(cfg.ckpt_dir) / f"{stage}.fckp", step=cfg.max_steps))
    return result


def train_parsingnet(cfg: TrainConfig, dataset: Sequence[Sample], models: Models,
                     on_step: Callable | None = None) -> TrainResult:
    """Minimise mean |P - Y| between the ParsingNet estimate and the LR mask."""
    _check_dataset(dataset, models.config.scale)

    def loss_fn(lr, hr, gt):
        return l1_loss(models.parsingnet(lr), gt)

    return _run(cfg, "parsingnet", models, dataset, models.parsing_params, loss_fn, on_step)


def train_fishfsrnet(cfg: TrainConfig, dataset: Sequence[Sample], models: Models,
                     on_step: Callable | None = None) -> TrainResult:
    """Minimise mean |SR - HR|. The ParsingNet runs without recording unless
    ``cfg.joint``, in which case it is updated through the SR loss as well."""
    _check_dataset(dataset, models.config.scale)
    if cfg.joint and not models.config.use_pmb:
        raise ConfigError("joint training needs the parsing branch (use_pmb)")
    use_map = models.config.use_pmb

    def loss_fn(lr, hr, gt):
        if not use_map:
            parsing = None
        elif cfg.joint:
            parsing = models.parsingnet(lr)
        else:
            with no_grad():
                parsing = models.parsingnet(lr)
        return l1_loss(models.fishnet(lr, parsing), hr)

    params = models.params if cfg.joint else models.fish_params
    return _run(cfg, "fishfsrnet", models, dataset, params, loss_fn, on_step)


def loss_csv(results: Sequence[TrainResult]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["step", "stage", "loss"])
    for res in results:
        for step, value in enumerate(res.trace):
            out.writerow([step, res.stage, repr(float(value))])
    return buf.getvalue()
