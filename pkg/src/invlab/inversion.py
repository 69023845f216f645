"""Inversion-correction methods for the source (reconstruction) branch.

Four methods share one forward loop:

ddim        plain guided DDIM sampling from the inverted noise.
null_var    per-step optimisation of the unconditional slot's logits so the
            guided step lands on the inversion trajectory (null-text style).
neg_prompt  the source condition replaces the null condition, which makes
            guidance collapse to scale 1.
direct      record the per-step gap to the inversion trajectory and add it
            back to the source branch only.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import Condition, combine_guidance, component_terms, eps_batch
from .sampler import ddim_forward_step, step_coefficients

METHODS = ("ddim", "null_var", "neg_prompt", "direct")
TARGET_MODES = ("none", "source_offset", "target_offset")


@dataclass(frozen=True)
class CorrectionConfig:
    method: str = "direct"
    opt_iters: int = 10
    opt_step: float = 1.0
    scale: float = 1.0
    interval: int = 1
    target_mode: str = "none"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}, got {self.method!r}")
        if not isinstance(self.opt_iters, int) or self.opt_iters < 0:
            raise ConfigError("opt_iters", f"must be an integer >= 0, got {self.opt_iters!r}")
        if not self.opt_step > 0:
            raise ConfigError("opt_step", f"must be > 0, got {self.opt_step!r}")
        if not 0.0 <= self.scale <= 1.0:
            raise ConfigError("scale", f"must lie in [0, 1], got {self.scale!r}")
        if not isinstance(self.interval, int) or self.interval < 1:
            raise ConfigError("interval", f"must be an integer >= 1, got {self.interval!r}")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError("target_mode", f"must be one of {TARGET_MODES}, got {self.target_mode!r}")
        if self.method != "direct" and self.target_mode != "none":
            raise ConfigError("target_mode", "only meaningful with method=direct")

    def to_dict(self):
        return {"method": self.method, "opt_iters": self.opt_iters, "opt_step": self.opt_step,
                "scale": self.scale, "interval": self.interval, "target_mode": self.target_mode}

    def applies_at(self, T, t):
        """Whether the offset is added back at step t (first step always corrects)."""
        return (T - t) % self.interval == 0


@dataclass(frozen=True, eq=False)
class OffsetSequence:
    """Per-step gaps; ``src[i]`` / ``tgt[i]`` belong to the step landing on t-1 = i."""

    src: tuple = ()
    tgt: tuple = ()

    def __len__(self):
        return len(self.src)

    @property
    def empty(self):
        return len(self.src) == 0


def negative_prompt_condition(c_src):
    return c_src


def _check_traj(traj_star, s):
    if traj_star.branch_label != "inversion":
        raise ConfigError("traj_star", f"expected an inversion trajectory, got {traj_star.branch_label!r}")
    if traj_star.schedule is not None and not traj_star.schedule.same_as(s):
        raise ConfigError("schedule", "trajectory was inverted under a different schedule")
    if traj_star.T != s.T:
        raise ConfigError("schedule", f"trajectory has T={traj_star.T}, schedule has T={s.T}")


def _step_objective(m, z_t, t, z_target, eps_c, logits, w, s, terms=None):
    # squared distance to z_target for each row of candidate null logits
    ll, comp_mean = terms if terms is not None else component_terms(m, z_t, t, s)
    ab = s.alpha_bars[t]
    sc = m._log_prior[None, :] + np.asarray(logits, dtype=np.float64) + ll[None, :]
    sc -= sc.max(axis=1, keepdims=True)
    resp = np.exp(sc)
    resp /= resp.sum(axis=1, keepdims=True)
    z = z_t.reshape(-1)
    eps_null = (z[None, :] - np.sqrt(ab) * (resp @ comp_mean)) / np.sqrt(1.0 - ab)
    eps = combine_guidance(eps_c.reshape(-1)[None, :], eps_null, w)
    a, b = step_coefficients(s, t)
    pred = a * z[None, :] + b * eps
    return ((pred - z_target.reshape(-1)[None, :]) ** 2).sum(axis=1)


def optimize_null_variable(traj_star, cond, w, opt_iters, opt_step, m, s,
                           fd_step=1e-4, max_halvings=8, return_trace=False):
    """Per-step coordinate descent on the unconditional slot's logits.

    Walks t = T..1 along the guided trajectory that uses the optimised
    variables, minimising ||z''_{t-1} - z*_{t-1}||^2 at each step. Each
    iteration sweeps the K logits once; the partial derivative comes from a
    central difference and the trial move is ``opt_step`` logits against its
    sign. A trial is accepted only if it does not increase the objective,
    halving the move up to ``max_halvings`` times.
    Variables are warm-started from the previous step's optimum.

    Returns a list indexed by step (entry 0 unused) of Conditions; with
    ``return_trace`` also the per-step objective histories, one value per
    accepted iteration starting from the initial value.
    """
    _check_traj(traj_star, s)
    if opt_iters < 0:
        raise ConfigError("opt_iters", "must be >= 0")
    K = m.K
    variables = [None] * (s.T + 1)
    traces = [None] * (s.T + 1)
    logits = np.zeros(K)
    z = traj_star.states[s.T].copy()
    a_trials = opt_step * 0.5 ** np.arange(max_halvings + 1)
    for t in range(s.T, 0, -1):
        target = traj_star.states[t - 1]
        eps_c = eps_batch(m, z, t, (cond,), s)[0]
        terms = component_terms(m, z, t, s)
        current = _step_objective(m, z, t, target, eps_c, logits[None], w, s, terms)[0]
        trace = [current]
        for _ in range(opt_iters):
            for k in range(K):
                probe = np.repeat(logits[None], 2, axis=0)
                probe[0, k] += fd_step
                probe[1, k] -= fd_step
                f = _step_objective(m, z, t, target, eps_c, probe, w, s, terms)
                grad = (f[0] - f[1]) / (2.0 * fd_step)
                if grad == 0.0:
                    continue
                # the objective's scale varies by orders of magnitude across
                # steps, so the move is opt_step logits along -sign(grad)
                trials = np.repeat(logits[None], len(a_trials), axis=0)
                trials[:, k] -= np.sign(grad) * a_trials
                ft = _step_objective(m, z, t, target, eps_c, trials, w, s, terms)
                ok = np.flatnonzero(ft <= current)
                if ok.size:
                    logits = trials[ok[0]]
                    current = ft[ok[0]]
            trace.append(current)
        variables[t] = Condition(logits.copy(), f"null-var-{t}")
        traces[t] = np.array(trace)
        eps_null = eps_batch(m, z, t, (variables[t],), s)[0]
        z = ddim_forward_step(z, t, combine_guidance(eps_c, eps_null, w), s)
    if return_trace:
        return variables, traces
    return variables


@dataclass
class SourceBranch:
    """Stateful source branch; ``step`` advances from t to t-1.

    After each step, ``eps_effective`` is the noise that maps the previous
    state onto the new one under the plain DDIM update, i.e. the predicted
    noise with any added offset folded in.
    """

    traj_star: object
    cond: Condition
    null_cond: Condition
    w_fwd: float
    cfg: CorrectionConfig
    m: object
    s: object
    variables: list = None
    z: np.ndarray = None
    eps_effective: np.ndarray = None
    last_offset: np.ndarray = None
    offsets_src: list = field(default_factory=list)

    def __post_init__(self):
        self.z = self.traj_star.states[self.s.T].copy()
        if self.cfg.method == "null_var" and self.variables is None:
            self.variables = optimize_null_variable(
                self.traj_star, self.cond, self.w_fwd, self.cfg.opt_iters,
                self.cfg.opt_step, self.m, self.s)

    def null_at(self, t):
        if self.cfg.method == "neg_prompt":
            return negative_prompt_condition(self.cond)
        if self.cfg.method == "null_var":
            return self.variables[t]
        return self.null_cond

    def step(self, t):
        eps2 = eps_batch(self.m, self.z, t, (self.cond, self.null_at(t)), self.s)
        eps = combine_guidance(eps2[0], eps2[1], self.w_fwd)
        pred = ddim_forward_step(self.z, t, eps, self.s)
        self.eps_effective = eps
        self.last_offset = None
        if self.cfg.method == "direct":
            offset = self.traj_star.states[t - 1] - pred
            self.offsets_src.append(offset)
            if self.cfg.applies_at(self.s.T, t):
                added = self.cfg.scale * offset
                self.last_offset = added
                pred = pred + added
                _, b = step_coefficients(self.s, t)
                self.eps_effective = eps + added / b
        self.z = pred
        return pred


def direct_offsets(traj_star, cond_pair, null_cond, w_fwd, m, s):
    """Offsets of the batched source/target pair under Direct Inversion.

    Both slots start from z*_T. The source slot is corrected with its own
    offset each step; the target slot evolves uncorrected.
    """
    _check_traj(traj_star, s)
    c_src, c_tgt = cond_pair
    z_src = traj_star.states[s.T].copy()
    z_tgt = z_src.copy()
    src, tgt = [None] * s.T, [None] * s.T
    for t in range(s.T, 0, -1):
        e_s = eps_batch(m, z_src, t, (c_src, null_cond), s)
        e_t = eps_batch(m, z_tgt, t, (c_tgt, null_cond), s)
        p_s = ddim_forward_step(z_src, t, combine_guidance(e_s[0], e_s[1], w_fwd), s)
        p_t = ddim_forward_step(z_tgt, t, combine_guidance(e_t[0], e_t[1], w_fwd), s)
        src[t - 1] = traj_star.states[t - 1] - p_s
        tgt[t - 1] = traj_star.states[t - 1] - p_t
        z_src = p_s + src[t - 1]
        z_tgt = p_t
    return OffsetSequence(tuple(src), tuple(tgt))


def reconstruct(traj_star, cond, null_cond, w_fwd, cfg, m, s, variables=None, return_states=False):
    """Run the source branch from z*_T; returns (z0_hat, offsets).

    ``offsets`` is empty unless method=direct, in which case ``src`` holds the
    observed gap at every step, indexed by the landing step t-1.
    """
    _check_traj(traj_star, s)
    branch = SourceBranch(traj_star, cond, null_cond, w_fwd, cfg, m, s, variables=variables)
    states = np.empty_like(traj_star.states) if return_states else None
    if return_states:
        states[s.T] = branch.z
    for t in range(s.T, 0, -1):
        z = branch.step(t)
        if return_states:
            states[t - 1] = z
    offsets = OffsetSequence()
    if cfg.method == "direct":
        offsets = OffsetSequence(tuple(reversed(branch.offsets_src)), ())
    if return_states:
        return branch.z, offsets, states
    return branch.z, offsets
