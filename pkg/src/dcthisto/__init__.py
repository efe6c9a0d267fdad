"""Hybrid DCT-attention / MobileConv image classifier on a numpy autodiff core."""

from .attention import CgaConfig, TokenMap, attention_head, cascaded_group_attention, dct_attention_branch
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, SynthSpec, load_run_config, preset
from .data import ArrayDataset, Manifest, ManifestDataset, load_image, load_manifest, synth_dataset
from .errors import (
    ConfigError,
    ContractError,
    DctHistoError,
    DimensionError,
    FormatError,
    InputError,
    ManifestError,
    NumericError,
)
from .frequency import LowPassConfig, Spectrum2D, dc_normalize, dct2d, idct2d, lowpass_crop
from .metrics import ConfusionMatrix, MetricsReport, aggregate_seeds, compute_metrics
from .mobileconv import MobileBlockConfig, mobile_block
from .model import DctHistoModel, ModelConfig, count_flops, count_params, desk_config, forward, init_params, micro_config
from .rng import RngState
from .tensor import Function, GradTape, Tensor
from .train import AdamWState, TrainConfig, adamw_step, cross_entropy, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AdamWState",
    "ArrayDataset",
    "CgaConfig",
    "ConfigError",
    "ConfusionMatrix",
    "ContractError",
    "DctHistoError",
    "DctHistoModel",
    "DimensionError",
    "FormatError",
    "Function",
    "GradTape",
    "InputError",
    "LowPassConfig",
    "Manifest",
    "ManifestDataset",
    "ManifestError",
    "MetricsReport",
    "MobileBlockConfig",
    "ModelConfig",
    "NumericError",
    "RngState",
    "RunConfig",
    "Spectrum2D",
    "SynthSpec",
    "Tensor",
    "TokenMap",
    "TrainConfig",
    "adamw_step",
    "aggregate_seeds",
    "attention_head",
    "cascaded_group_attention",
    "compute_metrics",
    "count_flops",
    "count_params",
    "cross_entropy",
    "dc_normalize",
    "dct2d",
    "dct_attention_branch",
    "desk_config",
    "evaluate",
    "forward",
    "idct2d",
    "init_params",
    "load_checkpoint",
    "load_image",
    "load_manifest",
    "load_run_config",
    "lowpass_crop",
    "micro_config",
    "mobile_block",
    "preset",
    "save_checkpoint",
    "synth_dataset",
    "train",
]
