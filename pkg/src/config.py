"""
Configuration - pydantic models, file loading and environment overrides.

Environment variables prefixed with HIERTSP_ override file values; a double
underscore separates nesting levels, e.g. HIERTSP_PPO__CLIP_EPS=0.1.
"""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union
import json
import logging
import os

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

logger = logging.getLogger(__name__)

ENV_PREFIX = "HIERTSP_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DecomposerConfig(_Section):
    k: int = Field(40, ge=1)
    sub_length: int = Field(200, ge=4)
    max_num: int = Field(190, ge=1)
    use_knn: bool = True
    use_fragment: bool = True

    @model_validator(mode="after")
    def _check_sizes(self) -> "DecomposerConfig":
        if self.max_num > self.sub_length - 2:
            raise ValueError("max_num must leave room for two fragment endpoints")
        return self


class FeaturizerConfig(_Section):
    grid_h: int = Field(32, ge=1)
    grid_w: int = Field(32, ge=1)


class UpperModelConfig(_Section):
    embed_channels: int = Field(16, ge=1)
    cnn_channels: Tuple[int, int, int] = (16, 32, 32)
    kernel_size: int = 3
    stride: int = 2
    embedding_dim: int = 128
    mlp_width: int = 128


class LowerModelConfig(_Section):
    embed_dim: int = 128
    encoder_layers: int = Field(12, ge=1)
    heads: int = Field(8, ge=1)
    feedforward_dim: int = 512
    tanh_clip: float = 10.0


class PPOConfig(_Section):
    clip_eps: float = Field(0.2, gt=0)
    gamma: float = Field(1.0, ge=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    entropy_coef: float = Field(0.01, ge=0)
    value_coef: float = Field(1.0, ge=0)
    epochs: int = Field(4, ge=1)
    minibatch_size: int = Field(64, ge=1)
    max_grad_norm: float = Field(1.0, gt=0)
    normalize_advantages: bool = True


class OptimizerConfig(_Section):
    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-6, ge=0)


class LowerTrainingConfig(_Section):
    rollouts: int = Field(8, ge=2)
    batch_size: int = Field(16, ge=1)
    buffer_capacity: int = Field(4096, ge=1)
    max_grad_norm: float = Field(1.0, gt=0)


class WarmupConfig(_Section):
    epochs: int = Field(20, ge=0)
    instances_per_epoch: int = Field(8, ge=1)
    instance_size: int = Field(1000, ge=2)
    validation_problems: int = Field(200, ge=1)
    validation_size: int = Field(12, ge=3, le=16)


class TrainingConfig(_Section):
    epochs: int = Field(50, ge=0)
    episodes_per_epoch: int = Field(16, ge=1)
    instance_size: int = Field(1000, ge=2)
    joint_training: bool = True
    eval_every: int = Field(1, ge=1)
    validation_instances: int = Field(8, ge=1)
    reference_dir: Optional[str] = None


class ExternalSolverConfig(_Section):
    command: Optional[str] = None
    time_limit: float = Field(10.0, gt=0)
    coordinate_scale: float = Field(1_000_000.0, gt=0)


class SolveConfig(_Section):
    upper: Literal["learned", "random"] = "learned"
    lower: Literal["learned", "farthest", "external"] = "learned"
    lower_mode: Literal["greedy", "sample"] = "greedy"
    upper_mode: Literal["mean", "sample"] = "mean"


class Config(_Section):
    """Full run configuration."""

    seed: int = 0
    device: str = "cpu"
    workers: int = Field(1, ge=1)
    out_dir: str = "runs"
    run_name: str = "default"
    decomposer: DecomposerConfig = DecomposerConfig()
    featurizer: FeaturizerConfig = FeaturizerConfig()
    upper: UpperModelConfig = UpperModelConfig()
    lower: LowerModelConfig = LowerModelConfig()
    ppo: PPOConfig = PPOConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    lower_training: LowerTrainingConfig = LowerTrainingConfig()
    warmup: WarmupConfig = WarmupConfig()
    training: TrainingConfig = TrainingConfig()
    external: ExternalSolverConfig = ExternalSolverConfig()
    solve: SolveConfig = SolveConfig()


ABLATIONS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "no_fragment": {"decomposer": {"use_fragment": False}},
    "no_knn": {"decomposer": {"use_knn": False}},
    "no_joint": {"training": {"joint_training": False}},
    "no_warmup": {"warmup": {"epochs": 0}},
    "random_upper": {"solve": {"upper": "random"}},
    "farthest_lower": {"solve": {"lower": "farthest"}},
}


def ablation_overrides(name: str) -> Dict[str, Any]:
    """Config overrides for a named training ablation."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation '{name}', expected one of {sorted(ABLATIONS)}")
    return ABLATIONS[name]


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _parse_env_value(raw: str) -> Any:
    # JSON covers numbers, booleans, lists; anything else stays a string
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ: Mapping[str, str], prefix: str = ENV_PREFIX) -> Dict[str, Any]:
    """Collect nested overrides from prefixed environment variables."""
    overrides: Dict[str, Any] = {}
    for key, raw in environ.items():
        if not key.startswith(prefix):
            continue
        path = key[len(prefix):].lower().split("__")
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_env_value(raw)
    return overrides


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON or YAML config file into a dict."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"Config file must contain a mapping: {path}")
    return data


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Config:
    """
    Build a Config from defaults, a file, environment variables and explicit overrides.

    Later sources win: file < environment < overrides.

    Raises:
        ValueError: If the merged values fail validation
    """
    data: Dict[str, Any] = {}
    if path is not None:
        data = read_config_file(path)
    data = _deep_merge(data, env_overrides(os.environ if environ is None else environ))
    if overrides:
        data = _deep_merge(data, overrides)

    try:
        config = Config.model_validate(data)
    except ValidationError as e:
        raise ValueError(f"Invalid configuration: {e}") from e

    logger.debug(f"Loaded config (seed={config.seed}, run={config.run_name})")
    return config


def save_config(config: Config, path: Union[str, Path]) -> Path:
    """Write the resolved config as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.model_dump(), indent=2))
    return path
