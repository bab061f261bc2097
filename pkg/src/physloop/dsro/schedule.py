"""Variance-preserving noise schedule for the shape denoiser."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseSchedule:
    """Linear-beta corruption with cumulative signal coefficients.

    alpha_bar[0] == 1 (t = 0 is the clean sample); alpha_bar is strictly
    decreasing and ends below 0.05 so the terminal marginal is near-Gaussian.
    """

    n_steps: int = 64
    beta_start: float = 1e-3
    beta_end: float = 0.112
    weight_mode: str = "uniform"  # or "snr"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        self.betas = np.linspace(self.beta_start, self.beta_end, self.n_steps)
        alphas = 1.0 - self.betas
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(alphas)])
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if self.alpha_bar[-1] >= 0.05:
            raise ValueError(
                f"terminal signal {self.alpha_bar[-1]:.4f} too strong; raise beta_end"
            )

    @property
    def T(self) -> int:
        return self.n_steps

    def signal(self, t) -> np.ndarray:
        """sqrt(alpha_bar_t)."""
        return np.sqrt(self.alpha_bar[np.asarray(t)])

    def noise(self, t) -> np.ndarray:
        """sqrt(1 - alpha_bar_t)."""
        return np.sqrt(1.0 - self.alpha_bar[np.asarray(t)])

    def weight(self, t) -> np.ndarray:
        """Per-step loss weight w(t) > 0."""
        t = np.asarray(t)
        if self.weight_mode == "uniform":
            return np.ones_like(t, dtype=np.float64)
        if self.weight_mode == "snr":
            ab = self.alpha_bar[t]
            return ab / (1.0 - ab)
        raise ValueError(f"unknown weight mode {self.weight_mode!r}")
