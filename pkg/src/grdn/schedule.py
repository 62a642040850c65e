"""Optimizer hyperparameters and learning-rate decay policies."""

from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class TrainingSchedule:
    lr0: float = 1e-4
    policy: str = "step"            # "step" halves every `step_period`;
    step_period: int = 200_000      # "linear" ramps to zero between start and end
    linear_start: int = 320_000
    linear_end: int = 340_000
    total_iterations: int = 5000
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "l1"
    grad_clip: float = 0.0          # 0 disables clipping

    def __post_init__(self):
        if self.policy not in ("step", "linear"):
            raise ConfigError(f"unknown lr policy {self.policy!r}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.policy == "step" and self.step_period < 1:
            raise ConfigError("step_period must be >= 1")
        if self.policy == "linear" and self.linear_end <= self.linear_start:
            raise ConfigError("linear_end must exceed linear_start")


def lr_at(schedule: TrainingSchedule, t: int) -> float:
    """Learning rate at iteration t; non-increasing in t for both policies."""
    if t < 0:
        raise ConfigError(f"iteration must be >= 0, got {t}")
    if schedule.policy == "step":
        return schedule.lr0 * 0.5 ** (t // schedule.step_period)
    if t <= schedule.linear_start:
        return schedule.lr0
    if t >= schedule.linear_end:
        return 0.0
    span = schedule.linear_end - schedule.linear_start
    return schedule.lr0 * (schedule.linear_end - t) / span
