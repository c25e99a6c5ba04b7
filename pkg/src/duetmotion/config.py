"""Run configuration: one nested, hashable record for every tunable.

All defaults are pinned here so a bare config file reproduces the desk-scale
setup: 30-frame windows at 10 fps, 1000 diffusion steps sampled with 50 DDIM
steps, contact threshold 0.013 m, interaction weight 0.5, anchor noise 0.02,
condition keep rates (0.8 text, 0.2 pose). Parsing is strict: an unknown key
anywhere is an error, not a warning, so typos cannot silently fall back to
defaults. The sha256 hash of the canonical JSON form is stamped into every
artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .interaction_data import ExtractionConfig
from .metrics import AutoencoderConfig
from .pose_animator import AnimatorConfig, AnimatorLossWeights
from .pose_generator import GeneratorConfig, GeneratorLossWeights


class ConfigError(ValueError):
    pass


@dataclass
class NetSection:
    latent_dim: int = 128
    num_layers: int = 4
    num_heads: int = 8


@dataclass
class ScheduleSection:
    diffusion_steps: int = 1000
    ddim_steps: int = 50


@dataclass
class LossSection:
    lambda_diff: float = 1.0
    lambda_pose: float = 1.0
    lambda_inter: float = 0.5
    lambda_vel: float = 1.0
    lambda_bone: float = 1.0
    contact_margin: float = 0.10  # hinge activation distance in the interaction loss


@dataclass
class OptimizerSection:
    lr: float = 1e-4
    weight_decay: float = 2e-5
    batch_size: int = 16
    train_steps: int = 500
    anchor_noise_std: float = 0.02
    p_text: float = 0.8
    p_pose: float = 0.2


@dataclass
class ExtractionSection:
    contact_threshold: float = 0.013
    window_seconds: float = 3.0
    fps: float = 10.0


@dataclass
class MetricsSection:
    feature_dim: int = 64
    hidden_dim: int = 512
    ae_lr: float = 1e-3
    ae_train_steps: int = 400
    knn_k: int = 3
    diversity_pairs: int = 300
    mmodality_pairs: int = 100
    contact_threshold: float = 0.013


_SECTIONS = {
    "net": NetSection,
    "schedule": ScheduleSection,
    "loss": LossSection,
    "optimizer": OptimizerSection,
    "extraction": ExtractionSection,
    "metrics": MetricsSection,
}


def _parse_section(cls, doc: dict, where: str):
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = getattr(cls(), name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{name} must be a number, got {value!r}")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{where}.{name} must be an integer, got {value!r}")
        kwargs[name] = type(default)(value)
    return cls(**kwargs)


@dataclass
class RunConfig:
    net: NetSection = field(default_factory=NetSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    extraction: ExtractionSection = field(default_factory=ExtractionSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def __post_init__(self):
        # fail fast: every derived module config revalidates its own ranges
        self.animator_config()
        self.generator_config()
        self.extraction_config()
        self.autoencoder_config()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            sub = doc.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"section {name!r} must be an object")
            sections[name] = _parse_section(section_cls, sub, name)
        try:
            return cls(**sections)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in config file: {e}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # adapters into the per-module configurations

    @property
    def num_frames(self) -> int:
        return self.extraction_config().frames

    def animator_config(self) -> AnimatorConfig:
        return AnimatorConfig(
            num_frames=self.num_frames,
            fps=self.extraction.fps,
            diffusion_steps=self.schedule.diffusion_steps,
            ddim_steps=self.schedule.ddim_steps,
            latent_dim=self.net.latent_dim,
            num_layers=self.net.num_layers,
            num_heads=self.net.num_heads,
            lr=self.optimizer.lr,
            weight_decay=self.optimizer.weight_decay,
            batch_size=self.optimizer.batch_size,
            train_steps=self.optimizer.train_steps,
            anchor_noise_std=self.optimizer.anchor_noise_std,
            weights=AnimatorLossWeights(
                lambda_diff=self.loss.lambda_diff,
                lambda_pose=self.loss.lambda_pose,
                lambda_inter=self.loss.lambda_inter,
                lambda_vel=self.loss.lambda_vel,
                contact_threshold=self.loss.contact_margin,
            ),
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            fps=self.extraction.fps,
            diffusion_steps=self.schedule.diffusion_steps,
            ddim_steps=self.schedule.ddim_steps,
            latent_dim=self.net.latent_dim,
            num_layers=self.net.num_layers,
            num_heads=self.net.num_heads,
            lr=self.optimizer.lr,
            weight_decay=self.optimizer.weight_decay,
            batch_size=self.optimizer.batch_size,
            train_steps=self.optimizer.train_steps,
            p_text=self.optimizer.p_text,
            p_pose=self.optimizer.p_pose,
            weights=GeneratorLossWeights(
                lambda_diff=self.loss.lambda_diff,
                lambda_pose=self.loss.lambda_pose,
                lambda_bone=self.loss.lambda_bone,
            ),
        )

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(
            contact_threshold=self.extraction.contact_threshold,
            window_seconds=self.extraction.window_seconds,
            fps=self.extraction.fps,
        )

    def autoencoder_config(self) -> AutoencoderConfig:
        return AutoencoderConfig(
            feature_dim=self.metrics.feature_dim,
            hidden_dim=self.metrics.hidden_dim,
            lr=self.metrics.ae_lr,
            train_steps=self.metrics.ae_train_steps,
        )
