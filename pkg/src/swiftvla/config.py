"""Model and training configuration, plus the key/value config file loader."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

VIEWS = ("left", "right", "front")
CACHE_K_CHOICES = (3, 4, 5, 6)


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


@dataclass
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 4
    shuffle: int = 2
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 4
    n_fusion: int = 8
    traj_horizon: int = 8
    n_lang_tokens: int = 4
    n_instructions: int = 3
    state_dim: int = 4
    action_dim: int = 4
    chunk: int = 8
    expert_layers: int = 4
    diffusion_steps: int = 10
    sampler_steps: int = 10
    d_geo: int = 32
    geo_blocks: int = 4  # frozen geometry branch is the heaviest component, as in the full-size system
    geo_mlp_mult: int = 4
    geo_seed: int = 1234
    use_4d: bool = True

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens_per_view(self) -> int:
        return (self.grid // self.shuffle) ** 2

    @property
    def n_2d(self) -> int:
        return self.tokens_per_view * len(VIEWS)

    @property
    def n_4d(self) -> int:
        return self.tokens_per_view

    def validate(self):
        if self.image_size % self.patch or self.grid % self.shuffle:
            raise ConfigError("image_size must be divisible by patch * shuffle")
        if self.tokens_per_view > 64:
            raise ConfigError(f"{self.tokens_per_view} visual tokens per frame exceeds the 64-token budget")
        if self.d_model % self.n_heads or self.d_geo % self.n_heads:
            raise ConfigError("d_model and d_geo must be divisible by n_heads")
        if self.n_fusion < 0 or self.n_layers < 1 or self.expert_layers < 1:
            raise ConfigError("layer and token counts must be positive")
        return self


@dataclass
class TrainingConfig:
    stage1_steps: int = 2000
    stage2_steps: int = 3000
    batch_size: int = 32
    noise_draws: int = 1  # diffusion (step, noise) draws per observation in the action loss
    seed: int = 0
    lambda_2d: float = 1.0
    lambda_4d: float = 1.0
    lambda_action: float = 1.0
    lambda_traj: float = 0.1
    p_none: float = 0.5
    p_mask2d: float = 0.25
    p_mask4d: float = 0.25
    use_fusion: bool = True
    use_4d_input: bool = True
    cache_policy: str = "random"
    cache_k: int = 6
    lr_stage1: float = 1e-3
    lr_stage2: float = 5e-4
    min_lr_ratio: float = 0.025
    warmup_steps: int = 200
    beta1: float = 0.85
    beta2: float = 0.9
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    eval_episodes: int = 50
    episode_cap: int = 120
    exec_horizon: int = 4
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        probs = (self.p_none, self.p_mask2d, self.p_mask4d)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError(f"mask probabilities must be >= 0 and sum to 1, got {probs}")
        for name in ("lambda_2d", "lambda_4d", "lambda_action", "lambda_traj"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.cache_policy not in ("fixed", "random"):
            raise ConfigError(f"cache_policy must be 'fixed' or 'random', got {self.cache_policy!r}")
        if self.cache_k not in CACHE_K_CHOICES:
            raise ConfigError(f"cache_k must be one of {CACHE_K_CHOICES}, got {self.cache_k}")
        if self.noise_draws < 1:
            raise ConfigError("noise_draws must be >= 1")
        if self.stage1_steps < 0 or self.stage2_steps < 0 or self.batch_size < 1:
            raise ConfigError("step counts must be >= 0 and batch_size >= 1")
        if not (self.model.use_4d and self.use_4d_input) and self.p_mask4d > 0:
            raise ConfigError("p_mask4d > 0 requires 4D input (model.use_4d and use_4d_input)")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        self.model.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {where}{key}")
        if key == "model" and cls is TrainingConfig:
            value = _build(ModelConfig, value or {}, "model.")
        else:
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{where}{key} must be a boolean")
            elif isinstance(default, int) and not isinstance(value, bool):
                if isinstance(value, float) and value.is_integer():
                    value = int(value)
                if not isinstance(value, int):
                    raise ConfigError(f"{where}{key} must be an integer")
            elif isinstance(default, float):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"{where}{key} must be a number")
                value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> TrainingConfig:
    return _build(TrainingConfig, dict(data or {}), "").validate()


def load_config(path) -> TrainingConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return config_from_dict(data)


def dump_config(cfg: TrainingConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
