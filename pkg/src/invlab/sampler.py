"""Deterministic DDIM stepping in both directions, with trajectory recording."""
from dataclasses import dataclass
import json

import numpy as np

from .errors import ConfigError, StepError
from .model import cfg_eps

LABELS = ("inversion", "unguided_recon", "guided_recon", "corrected", "edited")


def step_coefficients(s, t):
    """(a, b) with ddim_forward_step(z, t, e) == a*z + b*e."""
    if not 1 <= t <= s.T:
        raise StepError(f"forward step needs t in 1..{s.T}, got {t}")
    return s._fwd[t]


def ddim_forward_step(z_t, t, eps_hat, s):
    a, b = step_coefficients(s, t)
    return a * z_t + b * eps_hat


def ddim_inverse_step(z_prev, t_prev, eps_hat, s):
    if not 0 <= t_prev <= s.T - 1:
        raise StepError(f"inverse step needs t_prev in 0..{s.T - 1}, got {t_prev}")
    t = t_prev + 1
    ab_t = s.alpha_bars[t]
    ab_prev = s.alpha_bars[t_prev]
    a = np.sqrt(ab_t) / np.sqrt(ab_prev)
    b = np.sqrt(ab_t) * (np.sqrt(1.0 / ab_t - 1.0) - np.sqrt(1.0 / ab_prev - 1.0))
    return a * z_prev + b * eps_hat


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States z_0..z_T of one branch; ``states[t]`` is the latent at step t."""

    states: np.ndarray  # (T+1, H, W)
    branch_label: str
    cond: object
    w: float
    schedule: object = None

    def __post_init__(self):
        if self.branch_label not in LABELS:
            raise ConfigError("branch_label", f"unknown label {self.branch_label!r}")
        if self.schedule is not None and len(self.states) != self.schedule.T + 1:
            raise ConfigError("states", "trajectory must hold T+1 states")
        self.states.setflags(write=False)

    @property
    def T(self):
        return len(self.states) - 1

    def to_json(self):
        return json.dumps({"branch_label": self.branch_label, "w": self.w,
                           "cond": self.cond.to_dict() if self.cond is not None else None,
                           "states": self.states.tolist()})


def invert(z0, cond, null_cond, w_inv, m, s):
    z0 = np.asarray(z0, dtype=np.float64)
    states = np.empty((s.T + 1,) + z0.shape)
    states[0] = z0
    for t in range(1, s.T + 1):
        # noise is read at the previous state z_{t-1}; the step-t noise level
        # is used because alpha_bar(0) = 1 leaves eps undefined at t-1 = 0
        eps = cfg_eps(m, states[t - 1], t, cond, null_cond, w_inv, s)
        states[t] = ddim_inverse_step(states[t - 1], t - 1, eps, s)
    return Trajectory(states, "inversion", cond, float(w_inv), s)


def sample(z_T, cond, null_cond, w_fwd, m, s):
    z_T = np.asarray(z_T, dtype=np.float64)
    states = np.empty((s.T + 1,) + z_T.shape)
    states[s.T] = z_T
    for t in range(s.T, 0, -1):
        eps = cfg_eps(m, states[t], t, cond, null_cond, w_fwd, s)
        states[t - 1] = ddim_forward_step(states[t], t, eps, s)
    label = "unguided_recon" if w_fwd == 1 else "guided_recon"
    return Trajectory(states, label, cond, float(w_fwd), s)
