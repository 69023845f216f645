"""Exactly-verifiable diffusion inversion laboratory on an analytic mixture model."""
__version__ = "0.1.0"

from .errors import ConfigError, DimensionError, InvLabError, MetricError, StepError
from .schedule import NoiseSchedule, build_schedule, default_schedule, q_sample
from .model import (Condition, MixtureModel, cfg_eps, empirical_denoise_loss,
                    predict_eps, responsibilities)
from .sampler import Trajectory, ddim_forward_step, ddim_inverse_step, invert, sample
from .inversion import (CorrectionConfig, OffsetSequence, direct_offsets,
                        negative_prompt_condition, optimize_null_variable, reconstruct)
from .editor import EditConfig, EditResult, blend_eps, edit
