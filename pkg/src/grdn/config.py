"""Structured text configuration.

One file with ``key = value`` sections drives every command:

    [model]      denoiser topology           -> ModelConfig
    [gan]        noise generator topology    -> GanConfig
    [train]      denoiser optimizer/schedule -> TrainingSchedule + extras
    [gan-train]  GAN optimizer/schedule      -> TrainingSchedule + extras
    [data]       scene/patch/noise settings  -> DataConfig

Unknown keys are rejected. The raw text is echoed verbatim into checkpoints
and reports; the fingerprint hashes its canonical form.
"""

import configparser
import dataclasses
from dataclasses import dataclass

from .checkpoint import config_fingerprint
from .errors import ConfigError
from .gan import GanConfig
from .models import ModelConfig
from .schedule import TrainingSchedule


@dataclass
class DataConfig:
    num_scenes: int = 24
    num_val_scenes: int = 8
    scene_size: int = 96
    patch_size: int = 32
    gan_patch_size: int = 24
    margin: int = 8
    noise_a: float = 0.0
    noise_b: float = 0.009611687812379854  # (25/255)^2
    mix_real: float = 0.90
    mix_stat: float = 0.05
    mix_gan: float = 0.05
    seed: int = 0

    @property
    def mix_weights(self):
        return (self.mix_real, self.mix_stat, self.mix_gan)


@dataclass
class TrainExtras:
    val_every: int = 500
    checkpoint_every: int = 1000
    seed: int = 0


@dataclass
class AppConfig:
    text: str
    model: ModelConfig
    gan: GanConfig
    train: TrainingSchedule
    gan_train: TrainingSchedule
    data: DataConfig
    train_extras: TrainExtras
    gan_train_extras: TrainExtras

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.text)


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(value: str, target_type, key: str):
    value = value.strip()
    if target_type is bool:
        try:
            return _BOOL_WORDS[value.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None
    try:
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}") from None
    return value


def _fill(cls, section: dict, section_name: str, extra_fields=()):
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    leftovers = {}
    for key, value in section.items():
        if key in known:
            ftype = known[key]
            if isinstance(ftype, str):  # string annotations
                ftype = {"int": int, "float": float, "bool": bool}.get(ftype, str)
            kwargs[key] = _convert(value, ftype, f"[{section_name}] {key}")
        elif key in extra_fields:
            leftovers[key] = value
        else:
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
    return cls(**kwargs), leftovers


def parse_config(text: str) -> AppConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {name.lower(): dict(parser.items(name)) for name in parser.sections()}
    for name in sections:
        if name not in ("model", "gan", "train", "gan-train", "data"):
            raise ConfigError(f"unknown section [{name}]")

    extras_keys = {f.name for f in dataclasses.fields(TrainExtras)}
    model, _ = _fill(ModelConfig, sections.get("model", {}), "model")
    gan, _ = _fill(GanConfig, sections.get("gan", {}), "gan")
    train, train_left = _fill(TrainingSchedule, sections.get("train", {}), "train", extras_keys)
    gan_train, gan_left = _fill(
        TrainingSchedule, sections.get("gan-train", {}), "gan-train", extras_keys
    )
    data, _ = _fill(DataConfig, sections.get("data", {}), "data")
    train_extras, _ = _fill(TrainExtras, train_left, "train")
    gan_train_extras, _ = _fill(TrainExtras, gan_left, "gan-train")
    return AppConfig(text, model, gan, train, gan_train, data, train_extras, gan_train_extras)


def load_config(path) -> AppConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


TINY_CONFIG = """\
[model]
num_grdbs = 2
rdbs_per_grdb = 2
convs_per_rdb = 4
base_filters = 8
growth = 8
cbam = true
cbam_reduction = 4
dtype = float32
seed = 0

[gan]
num_resblocks = 3
width = 16
alpha = 0.1
latent_channels = 3
disc_stages = 3
disc_width = 32
dtype = float32
seed = 0

[train]
lr0 = 2e-3
policy = step
step_period = 2000
total_iterations = 5000
batch_size = 4
beta1 = 0.9
beta2 = 0.999
val_every = 500
checkpoint_every = 2500
seed = 0

[gan-train]
lr0 = 2e-4
policy = linear
linear_start = 4500
linear_end = 5000
total_iterations = 5000
batch_size = 8
beta1 = 0.0
beta2 = 0.9
val_every = 500
checkpoint_every = 2500
seed = 0

[data]
num_scenes = 48
num_val_scenes = 8
scene_size = 96
patch_size = 32
gan_patch_size = 24
noise_a = 0.0
noise_b = 0.009611687812379854
seed = 0
"""


def default_config_text() -> str:
    """Full-scale settings matching the published recipe; not desk-runnable."""
    return """\
[model]
num_grdbs = 4
rdbs_per_grdb = 4
convs_per_rdb = 8
base_filters = 64
growth = 64
cbam = true
cbam_reduction = 16
dtype = float32
seed = 0

[gan]
num_resblocks = 8
width = 64
alpha = 0.1
latent_channels = 3
disc_stages = 4
disc_width = 64
dtype = float32
seed = 0

[train]
lr0 = 1e-4
policy = step
step_period = 200000
total_iterations = 1000000
batch_size = 16
beta1 = 0.9
beta2 = 0.999
seed = 0

[gan-train]
lr0 = 2e-4
policy = linear
linear_start = 320000
linear_end = 340000
total_iterations = 340000
batch_size = 32
beta1 = 0.0
beta2 = 0.9
seed = 0

[data]
patch_size = 48
gan_patch_size = 48
noise_a = 0.02
noise_b = 1e-4
seed = 0
"""
