"""Experiment configuration: JSON in, validated dataclass out."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

from ..diffnet import ConfigError
from ..envs import TASKS, EnvConfig, default_course
from ..ppo import PpoConfig

METHODS = ("sdax-metra", "sdax-diayn", "task-only", "div-only", "rnd")
INTRINSIC_OF = {"sdax-metra": "metra", "sdax-diayn": "diayn", "div-only": "metra", "rnd": "rnd",
                "task-only": None}


@dataclass
class ExperimentConfig:
    task: str = "crawl"
    method: str = "sdax-metra"
    lambda_mode: str = "adaptive"
    lambda_init: float = 10.0
    lambda_fixed: float = 1.0
    lambda_step: float = 1e-2
    lambda_bounds: tuple = (1e-4, 100.0)
    meta_grad_mode: str = "batch_mean"
    seeds: list = field(default_factory=lambda: [0])
    iterations: int = 3000
    num_envs: int = 64
    skill_dim: int = 1
    policy_hidden: list = field(default_factory=lambda: [64, 64])
    critic_hidden: list = field(default_factory=lambda: [64, 64])
    phi_hidden: list = field(default_factory=lambda: [64, 64])
    ppo: dict = field(default_factory=lambda: asdict(PpoConfig()))
    metra: dict = field(default_factory=lambda: {"kappa": 30.0, "eps": 1e-3, "lr": 1e-4, "kappa_lr": 1e-3,
                                                 "updates_per_iter": 10, "batch_size": 256})
    diayn: dict = field(default_factory=lambda: {"lr": 1e-4, "updates_per_iter": 10, "batch_size": 256})
    rnd: dict = field(default_factory=lambda: {"lr": 1e-3, "updates_per_iter": 10, "scale": 1.0,
                                               "batch_size": 256})
    env: dict = field(default_factory=dict)
    observation_noise: dict = field(default_factory=dict)
    feature_scale: float | None = None
    checkpoint_every: int = 500
    success_min_obstacles: int = 1
    stop_at_obstacles: float | None = None
    out_dir: str = "runs"

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lambda_mode not in ("adaptive", "fixed"):
            raise ConfigError(f"lambda_mode must be 'adaptive' or 'fixed', got {self.lambda_mode!r}")
        if self.lambda_mode == "fixed" and self.lambda_fixed < 0:
            raise ConfigError("fixed lambda must be >= 0")
        if self.meta_grad_mode not in ("batch_mean", "per_sample"):
            raise ConfigError(f"unknown meta_grad_mode {self.meta_grad_mode!r}")
        if self.skill_dim < 1:
            raise ConfigError("skill_dim must be >= 1")
        if self.iterations < 0 or self.num_envs < 1 or not self.seeds:
            raise ConfigError("iterations >= 0, num_envs >= 1 and at least one seed are required")
        unknown = set(self.ppo) - {f.name for f in fields(PpoConfig)}
        if unknown:
            raise ConfigError(f"unknown ppo settings {sorted(unknown)}")
        self.env_config()
        return self

    @property
    def intrinsic(self):
        return INTRINSIC_OF[self.method]

    def ppo_config(self):
        return PpoConfig(**self.ppo)

    def env_config(self):
        base = default_course(self.task).to_dict()
        base.update(copy.deepcopy(self.env))
        base["div_only"] = self.method == "div-only"
        try:
            return EnvConfig.from_dict(base)
        except TypeError as e:
            raise ConfigError(f"bad env settings: {e}") from None

    def effective_lambda(self):
        """(mode, initial value) after applying the method's baseline rules."""
        if self.method == "task-only":
            return "fixed", 0.0
        if self.method == "div-only":
            return "fixed", 1.0
        if self.lambda_mode == "fixed":
            return "fixed", float(self.lambda_fixed)
        return "adaptive", float(self.lambda_init)

    def run_name(self, seed):
        mode, lam = self.effective_lambda()
        tag = "adaptive" if mode == "adaptive" else f"fixed{lam:g}"
        return f"{self.task}_{self.method}_{tag}_s{seed}"

    def to_dict(self):
        d = asdict(self)
        d["lambda_bounds"] = list(self.lambda_bounds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = cls()
        merged = {}
        for k, v in d.items():
            default = getattr(base, k)
            if isinstance(default, dict) and isinstance(v, dict):
                merged[k] = {**default, **v}
            else:
                merged[k] = v
        if "lambda_bounds" in merged:
            merged["lambda_bounds"] = tuple(merged["lambda_bounds"])
        return cls(**merged).validate()


def load_defaults():
    text = resources.files("sdax").joinpath("configs/defaults.json").read_text()
    return json.loads(text)


def load_config(path=None, overrides=None):
    d = load_defaults()
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        d = _merge(d, user)
    if overrides:
        d = _merge(d, overrides)
    return ExperimentConfig.from_dict(d)


def _merge(a, b):
    out = dict(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text):
    """``key.sub=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = cur = {}
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return out
