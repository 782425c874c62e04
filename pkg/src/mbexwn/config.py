"""Pipeline configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .layers import TOY_F0_SPEC
from .losses import RESOLUTIONS


@dataclass
class MelConfig:
    samplerate: int = 24000
    window_size: int = 960
    hop_size: int = 240
    fft_size: int = 1024
    n_mels: int = 80
    floor: float = 1e-5


@dataclass
class WavetableConfig:
    table_size: int = 4096
    num_tables: int = 5
    f0_min: float = 45.0
    f0_max: float = 1400.0
    margin: float = 0.9


@dataclass
class PQMFConfig:
    num_bands: int = 15
    taps: int = 512
    kaiser_beta: float = 9.0
    cutoff_ratio: float | None = None     # None: grid search at design time
    postnet_in_channels: int = 30


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 40
    segment_s: float = 0.2
    f0_spec: str = TOY_F0_SPEC
    f0_weight: float = 1.0
    recon_weight: float = 1.0
    recon_every: int = 0        # >0: boundary L_R joins the objective every k-th step; 0: reported only
    dtype: str = "float32"
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 500
    # full-scale schedule, recorded for reference only
    pretrain_f0_batches: int = 100_000
    pretrain_generator_batches: int = 200_000


@dataclass
class PipelineConfig:
    mel: MelConfig = field(default_factory=MelConfig)
    wavetable: WavetableConfig = field(default_factory=WavetableConfig)
    pqmf: PQMFConfig = field(default_factory=PQMFConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    resolutions: tuple = RESOLUTIONS
    n_ceps: int = 160
    seed: int = 0

    def __post_init__(self):
        if self.mel.samplerate != 24000:
            raise ValueError("all components run at 24 kHz")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        sub = {"mel": MelConfig, "wavetable": WavetableConfig, "pqmf": PQMFConfig,
               "optimizer": OptimizerConfig, "train": TrainConfig}
        kw = {k: (sub[k](**v) if k in sub else v) for k, v in d.items()}
        if "resolutions" in kw:
            kw["resolutions"] = tuple(tuple(r) for r in kw["resolutions"])
        return cls(**kw)
