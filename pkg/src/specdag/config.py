"""Run configuration with the default hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, replace

MODES = ("vanilla", "ssd", "tsd", "gsd")
VERIFICATIONS = ("deterministic", "stochastic")


@dataclass(frozen=True)
class DraftConfig:
    """Drafting and verification settings for one run.

    Defaults: depth 10, out-degree 4, probability threshold 0.2, sibling
    threshold 0.3, redundancy threshold 2, top-p 0.7, temperature 0.7.
    """

    mode: str = "gsd"
    k: int = 4
    gamma_max: int = 10
    theta_prob: float = 0.2
    theta_sib: float = 0.3
    tau: int = 2
    verification: str = "deterministic"
    top_p: float = 0.7
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.verification not in VERIFICATIONS:
            raise ValueError(f"verification must be one of {VERIFICATIONS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gamma_max < 1:
            raise ValueError("gamma_max must be >= 1")
        if not (0 <= self.theta_prob <= 1 and 0 <= self.theta_sib <= 1):
            raise ValueError("pruning thresholds must lie in [0, 1]")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def deterministic(self) -> bool:
        return self.verification == "deterministic"

    def with_(self, **changes) -> "DraftConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "gamma_max": self.gamma_max,
            "theta_prob": self.theta_prob,
            "theta_sib": self.theta_sib,
            "tau": self.tau,
            "verification": self.verification,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "seed": self.seed,
        }
