"""Run configuration: every tunable constant, loadable from one JSON file."""

import json
from dataclasses import asdict, dataclass, field, fields

from .mcts import MctsConfig

__all__ = ["ConfigError", "Config", "load_config", "DEFAULT_EVAL_METHODS"]

DEFAULT_EVAL_METHODS = (
    "ours", "ours_zf", "lpf_recon", "lpf_zf", "uniform_zf", "vds_zf", "vds_tv",
)


class ConfigError(ValueError):
    """Raised for unreadable config files, unknown keys or bad values."""


@dataclass
class Config:
    seed: int = 0
    dtype: str = "float64"

    # acquisition
    acceleration: int = 4
    initial_pattern: str = "dc"

    # networks
    recon_width: int = 64
    recon_blocks: int = 8
    sample_base_width: int = 64
    sample_max_width: int = 256
    sample_dense_width: int = 1024
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    zero_init_final: bool = True

    # optimizer
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4

    # self-play
    rounds: int = 50
    images_per_round: int = 8
    batch_size: int = 16
    max_iters_per_round: int = 1000
    max_epochs_per_round: float = 3.0
    replay_rounds: int = 10
    train_recon_on_final: bool = True
    workers: int = 1
    checkpoint_every: int = 10

    # tree search
    mcts_alpha: float = 0.5
    mcts_c_puct: float = 1.0
    mcts_epsilon: float = 0.25
    mcts_dirichlet: float = 0.3
    mcts_simulations: int = 10
    reward_scale: float = 40.0

    # baselines
    vds_exponent: float = 2.0
    tv_lambda: float = 1e-3
    tv_max_iters: int = 200
    tv_step: float = 1.0
    tv_tolerance: float = 1e-7
    tv_inner_iters: int = 20

    eval_methods: list = field(default_factory=lambda: list(DEFAULT_EVAL_METHODS))
    figures: bool = True

    def __post_init__(self):
        if self.initial_pattern not in ("dc", "empty"):
            raise ConfigError(f"initial_pattern must be 'dc' or 'empty', got {self.initial_pattern!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.acceleration < 1:
            raise ConfigError("acceleration must be >= 1")
        if not 0 <= self.mcts_alpha <= 1 or not 0 <= self.mcts_epsilon <= 1:
            raise ConfigError("mcts_alpha and mcts_epsilon must lie in [0, 1]")
        if self.tv_step > 1.0:
            raise ConfigError("tv_step must be <= 1 (the data-term Lipschitz constant)")
        unknown = set(self.eval_methods) - set(DEFAULT_EVAL_METHODS)
        if unknown:
            raise ConfigError(f"unknown eval methods: {sorted(unknown)}")

    def budget(self, side):
        return max(1, side // self.acceleration)

    def mcts(self, side):
        return MctsConfig(
            budget=self.budget(side),
            alpha=self.mcts_alpha,
            c_puct=self.mcts_c_puct,
            epsilon=self.mcts_epsilon,
            dirichlet_concentration=self.mcts_dirichlet,
            simulations=self.mcts_simulations,
        )

    def forward_kwargs(self):
        return {"slope": self.leaky_slope, "bn_eps": self.bn_eps, "bn_momentum": self.bn_momentum}

    def adam_kwargs(self):
        return {
            "lr": self.lr,
            "beta1": self.adam_beta1,
            "beta2": self.adam_beta2,
            "eps": self.adam_eps,
            "weight_decay": self.weight_decay,
        }

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides):
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return Config.from_dict(data)
