"""Face super-resolution with a parsing-map prior: a numpy autograd engine,
the FishFSRNet / ParsingNet models, synthetic data, metrics and a CLI."""

from .blocks import ConfigError
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Sample,
    bicubic_resize,
    generate_dataset,
    load_dataset,
    load_manifest,
    parsing_downsample,
    read_ften,
    rgb_to_y,
    synth_face,
    write_ften,
)
from .gradcheck import grad_check, run_suite
from .metrics import MetricReport, psnr, ssim
from .networks import (
    FishFSRNet,
    ModelConfig,
    ParsingNet,
    build_model,
    count_stage_resolutions,
    expected_parameter_count,
)
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import ContractError, NumericalError, Tensor, backward, no_grad
from .train import Models, TrainConfig, train_fishfsrnet, train_parsingnet

__version__ = "0.1.0"
