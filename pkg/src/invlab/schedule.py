"""Discrete noise schedule and forward noising."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, StepError

KINDS = ("linear", "scaled_linear")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Betas and cumulative alpha products for steps 1..T.

    ``alpha_bars[t]`` is indexed directly by the step; slot 0 holds the
    clean-data value 1.0 so ``alpha_bars[t - 1]`` is always valid.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    kind: str = "linear"
    beta_start: float = 0.0
    beta_end: float = 0.0

    def __post_init__(self):
        # forward-step coefficients (a_t, b_t), precomputed because every
        # sampler step needs them; slot 0 is unused
        ab = np.asarray(self.alpha_bars, dtype=np.float64)
        a = np.sqrt(ab[:-1]) / np.sqrt(ab[1:])
        b = np.sqrt(ab[:-1]) * (np.sqrt(1.0 / ab[:-1] - 1.0) - np.sqrt(1.0 / ab[1:] - 1.0))
        object.__setattr__(self, "_fwd", [(None, None)] + list(zip(a.tolist(), b.tolist())))

    def alpha_bar(self, t):
        if not 0 <= t <= self.T:
            raise StepError(f"step {t} outside 0..{self.T}")
        return float(self.alpha_bars[t])

    def to_dict(self):
        return {"T": self.T, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "kind": self.kind}

    def same_as(self, other):
        return (self.T == other.T
                and np.array_equal(self.alpha_bars, other.alpha_bars))


def build_schedule(T, beta_start, beta_end, kind="scaled_linear"):
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise ConfigError("T", f"must be a positive integer, got {T!r}")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {KINDS}, got {kind!r}")
    if not beta_start > 0:
        raise ConfigError("beta_start", f"must be > 0, got {beta_start}")
    if not beta_end < 1:
        raise ConfigError("beta_end", f"must be < 1, got {beta_end}")
    if beta_start > beta_end:
        raise ConfigError("beta_start", f"{beta_start} exceeds beta_end {beta_end}")
    T = int(T)
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T, dtype=np.float64) ** 2
    alpha_bars = np.empty(T + 1)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(1.0 - betas)
    betas_full = np.concatenate([[0.0], betas])
    betas_full.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(T, betas_full, alpha_bars, kind, float(beta_start), float(beta_end))


def default_schedule(T=50):
    """Linear-DDPM endpoints rescaled by 1000/T on a scaled_linear ramp.

    Valid for T >= 21; shorter schedules push beta_end past 1 and must be
    given explicitly.
    """
    if isinstance(T, (int, np.integer)) and not isinstance(T, bool) and 1 <= T <= 20:
        raise ConfigError("T", f"default beta endpoints need T >= 21, got {T}; pass them explicitly")
    scale = 1000.0 / T
    return build_schedule(T, 1e-4 * scale, 0.02 * scale, "scaled_linear")


def q_sample(z0, t, eps, s):
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise DimensionError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if not 1 <= t <= s.T:
        raise StepError(f"step {t} outside 1..{s.T}")
    ab = s.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
