"""Dual-branch editing loop with a noise-blending stand-in for the editing model.

For the early (high-noise) steps the target branch mixes in a "source" noise:
the source branch's rule (source condition, source null slot) evaluated at
the target latent, plus whatever correction the source branch applied at that
step, folded into noise units. With rho=1 the target therefore retraces the
source branch exactly. The source branch is the same ``SourceBranch`` that
``reconstruct`` runs, so nothing from the target side can leak into it.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .inversion import CorrectionConfig, OffsetSequence, SourceBranch, optimize_null_variable
from .model import Condition, combine_guidance, eps_batch
from .sampler import ddim_forward_step, invert, step_coefficients


@dataclass(frozen=True)
class EditConfig:
    rho: float = 0.6
    tau: int = 10
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    single_branch_variables: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho", f"must lie in [0, 1], got {self.rho!r}")
        if not isinstance(self.tau, int) or self.tau < 0:
            raise ConfigError("tau", f"must be an integer >= 0, got {self.tau!r}")
        if self.single_branch_variables and self.correction.method != "null_var":
            raise ConfigError("single_branch_variables", "requires correction.method=null_var")

    def validate_for(self, s):
        if self.tau > s.T:
            raise ConfigError("tau", f"must lie in 0..{s.T}, got {self.tau}")

    def to_dict(self):
        return {"rho": self.rho, "tau": self.tau, "correction": self.correction.to_dict(),
                "single_branch_variables": self.single_branch_variables}


@dataclass(frozen=True, eq=False)
class EditResult:
    z0_src: np.ndarray
    z0_tgt: np.ndarray
    offsets: OffsetSequence
    config: EditConfig


def blend_eps(eps_src, eps_tgt, t, rho, tau):
    if t > tau:
        return rho * eps_src + (1.0 - rho) * eps_tgt
    return eps_tgt


def edit(z0, c_src, c_tgt, ec, w_inv, w_fwd, m, s, null_cond=None, traj_star=None,
         variables=None):
    """Invert z0 under c_src, then run source and target branches together.

    ``traj_star`` and ``variables`` (null-variable optimum) may be passed in
    to reuse work across configurations sharing the same inversion.
    """
    ec.validate_for(s)
    for c in (c_src, c_tgt):
        if c.logits.shape != (m.K,):
            raise ConfigError("condition", f"needs K={m.K} logits, got {c.logits.size}")
    if null_cond is None:
        null_cond = Condition.null(m.K)
    if traj_star is None:
        traj_star = invert(z0, c_src, null_cond, w_inv, m, s)
    cc = ec.correction
    if cc.method == "null_var" and variables is None:
        variables = optimize_null_variable(traj_star, c_src, w_fwd, cc.opt_iters, cc.opt_step, m, s)
    src = SourceBranch(traj_star, c_src, null_cond, w_fwd, cc, m, s, variables=variables)
    z_tgt = src.z.copy()
    offsets_tgt = []
    for t in range(s.T, 0, -1):
        if cc.method == "null_var" and not ec.single_branch_variables:
            tgt_null = variables[t]
        elif cc.method == "neg_prompt":
            tgt_null = src.null_at(t)
        else:
            tgt_null = null_cond
        e = eps_batch(m, z_tgt, t, (c_tgt, tgt_null, c_src, src.null_at(t)), s)
        eps_tgt = combine_guidance(e[0], e[1], w_fwd)
        src.step(t)
        # source rule on the target latent: source guidance plus the source
        # branch's applied correction expressed as noise
        eps_src = combine_guidance(e[2], e[3], w_fwd)
        if src.last_offset is not None:
            eps_src = eps_src + src.last_offset / step_coefficients(s, t)[1]
        z_next = ddim_forward_step(z_tgt, t, blend_eps(eps_src, eps_tgt, t, ec.rho, ec.tau), s)
        if cc.method == "direct":
            plain = ddim_forward_step(z_tgt, t, eps_tgt, s)
            o_tgt = traj_star.states[t - 1] - plain
            offsets_tgt.append(o_tgt)
            if cc.applies_at(s.T, t):
                if cc.target_mode == "source_offset":
                    z_next = z_next + cc.scale * src.offsets_src[-1]
                elif cc.target_mode == "target_offset":
                    z_next = z_next + cc.scale * o_tgt
        z_tgt = z_next
    offsets = OffsetSequence()
    if cc.method == "direct":
        offsets = OffsetSequence(tuple(reversed(src.offsets_src)), tuple(reversed(offsets_tgt)))
    return EditResult(src.z, z_tgt, offsets, ec)
