"""Line-based ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .experiments import (BenchConfig, DampedConfig, LyapunovConfig,
                          PendulumConfig)
from .soc import SOCConfig

SEED_ENV = "DISKO_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    system: str = "pendulum"
    dictionary: str = ""
    dt: Optional[float] = None
    beta: float = 0.0
    seed: int = 0
    output_dir: str = "."
    # fitting
    trajectories: List[str] = field(default_factory=list)
    chunks: int = 1
    rho: float = 1.0
    max_iter: int = 20000
    rel_tol: float = 1e-9
    step_init: float = 1e-3
    restarts: int = 1
    init: str = "lyapunov"
    # pendulum prediction
    train_sizes: List[int] = field(default_factory=lambda: [50, 100, 200, 500, 1000])
    train_theta: float = 2 * math.pi
    train_omega: float = 2.5
    eval_theta: float = 2 * math.pi
    eval_omega: float = 2.5
    n_eval: int = 300
    horizon: float = 3.0
    pendulum_max_iter: int = 5000
    # damped sweep
    n_seeds: int = 20
    n_train: int = 500
    damped_beta: float = -0.1
    damped_theta: float = math.pi
    damped_omega: float = 1.0
    # LQR / Lyapunov
    q_state: List[float] = field(default_factory=lambda: [1.0, 1.0])
    r: List[float] = field(default_factory=lambda: [0.01])
    control_dt: float = 0.1
    n_design: int = 3000
    design_theta: float = 1.2 * math.pi
    design_omega: float = 8.0
    input_range: List[float] = field(default_factory=lambda: [-20.0, 20.0])
    s0: List[float] = field(default_factory=lambda: [math.pi, 5.0])
    target: List[float] = field(default_factory=lambda: [0.0, 0.0])
    duration: float = 10.0
    normalize_pairs: bool = True
    path: str = "continuous"
    residual: str = "forward"
    # random benchmark
    grid_w: List[int] = field(default_factory=lambda: [2, 5, 10, 20])
    grid_p: List[int] = field(default_factory=lambda: [2, 5, 10, 20, 50])
    workers: int = 1
    bench_max_iter: int = 2000
    cell_timeout: Optional[float] = None

    # -- derived configs ----------------------------------------------------

    def soc_config(self, max_iter: Optional[int] = None,
                   max_seconds: Optional[float] = None) -> SOCConfig:
        return SOCConfig(rho=self.rho, max_iter=max_iter or self.max_iter,
                         rel_tol=self.rel_tol, step_init=self.step_init,
                         restarts=self.restarts, seed=self.seed, init=self.init,
                         max_seconds=max_seconds)

    def pendulum_config(self) -> PendulumConfig:
        return PendulumConfig(
            train_sizes=tuple(self.train_sizes),
            train_ranges=((-self.train_theta, self.train_theta),
                          (-self.train_omega, self.train_omega)),
            eval_ranges=((-self.eval_theta, self.eval_theta),
                         (-self.eval_omega, self.eval_omega)),
            n_eval=self.n_eval, horizon=self.horizon, dt=self.dt or 0.02,
            beta=self.beta, seed=self.seed,
            soc=self.soc_config(self.pendulum_max_iter))

    def damped_config(self) -> DampedConfig:
        return DampedConfig(
            n_seeds=self.n_seeds, n_train=self.n_train, beta=self.damped_beta,
            dt=self.dt or 0.02, seed=self.seed,
            train_ranges=((-self.damped_theta, self.damped_theta),
                          (-self.damped_omega, self.damped_omega)),
            soc=self.soc_config(self.pendulum_max_iter))

    def lyapunov_config(self) -> LyapunovConfig:
        if len(self.input_range) != 2 or len(self.s0) != 2 or len(self.target) != 2:
            raise ConfigError("input_range, s0 and target need two values")
        return LyapunovConfig(
            dt=self.control_dt, n_design=self.n_design,
            design_ranges=((-self.design_theta, self.design_theta),
                           (-self.design_omega, self.design_omega)),
            input_range=tuple(self.input_range), q_state=tuple(self.q_state),
            r=tuple(self.r), s0=tuple(self.s0), target=tuple(self.target),
            duration=self.duration, seed=self.seed,
            normalize_pairs=self.normalize_pairs, path=self.path,
            residual=self.residual, soc=self.soc_config())

    def bench_config(self) -> BenchConfig:
        return BenchConfig(grid_w=tuple(self.grid_w), grid_p=tuple(self.grid_p),
                           seed=self.seed, workers=self.workers,
                           soc=self.soc_config(self.bench_max_iter,
                                               self.cell_timeout))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_PRESETS = ("pendulum6", "pendulum8")


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_value(name: str, raw: str):
    ftype = str(_FIELDS[name].type)
    raw = raw.strip()
    if ftype.startswith("Optional") and raw.lower() in ("", "none"):
        return None
    if "List" in ftype:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        conv = int if "int" in ftype else (float if "float" in ftype else str)
        return [conv(s) for s in items]
    if "bool" in ftype:
        return _parse_bool(raw)
    if "int" in ftype:
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys fail."""
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _parse_value(key, value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    if base_dir is not None:
        resolve_paths(cfg, base_dir)
    return cfg


def resolve_paths(cfg: ExperimentConfig, base_dir: Path) -> ExperimentConfig:
    base = Path(base_dir)

    def res(p: str) -> str:
        if not p or p in _PRESETS:
            return p
        return str((base / p).resolve())

    cfg.dictionary = res(cfg.dictionary)
    cfg.output_dir = res(cfg.output_dir)
    cfg.trajectories = [res(p) for p in cfg.trajectories]
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, p.parent)


def apply_env(cfg: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """``DISKO_SEED`` overrides the configured seed."""
    if SEED_ENV in environ:
        try:
            cfg.seed = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    try:
        cfg.soc_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.chunks < 1:
        raise ConfigError("chunks must be positive")
    if cfg.path not in ("continuous", "discrete"):
        raise ConfigError("path must be 'continuous' or 'discrete'")
    if cfg.residual not in ("forward", "hold"):
        raise ConfigError("residual must be 'forward' or 'hold'")
    if cfg.system != "pendulum":
        raise ConfigError(f"unknown system {cfg.system!r}")
    return cfg
