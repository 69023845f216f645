"""Analytic Gaussian-mixture denoiser with condition reweighting and CFG.

The data distribution is a mixture of isotropic Gaussians over latent grids.
Under the forward process each component stays Gaussian, so the minimum-MSE
noise predictor E[eps | z_t, cond] is available in closed form and stands in
for a trained network.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError, StepError


@dataclass(frozen=True, eq=False)
class MixtureModel:
    means: np.ndarray  # (K, H, W)
    sigma2: np.ndarray  # (K,)
    prior_weights: np.ndarray  # (K,)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        sigma2 = np.array(self.sigma2, dtype=np.float64).reshape(-1)
        prior = np.array(self.prior_weights, dtype=np.float64).reshape(-1)
        if means.ndim != 3:
            raise DimensionError(f"means must be (K, H, W), got shape {means.shape}")
        k = means.shape[0]
        if sigma2.shape != (k,) or prior.shape != (k,):
            raise DimensionError(f"sigma2/prior_weights must have length K={k}")
        if not np.all(sigma2 > 0):
            raise ConfigError("sigma2", "all component variances must be > 0")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ConfigError("prior_weights", "must be nonnegative and sum to 1")
        if not np.all(np.isfinite(means)):
            raise ConfigError("means", "must be finite")
        for arr in (means, sigma2, prior):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "prior_weights", prior)
        flat = np.ascontiguousarray(means.reshape(k, -1))
        flat.setflags(write=False)
        object.__setattr__(self, "_flat_means", flat)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_prior", np.log(prior))

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def dims(self):
        return self.means.shape[1:]

    def to_dict(self):
        return {"K": self.K, "dims": list(self.dims),
                "means": self.means.tolist(), "sigma2": self.sigma2.tolist(),
                "prior_weights": self.prior_weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        means = np.asarray(d["means"], dtype=np.float64)
        if means.shape[0] != d["K"] or list(means.shape[1:]) != list(d["dims"]):
            raise DimensionError("means do not match declared K/dims")
        return cls(means, d["sigma2"], d["prior_weights"])


@dataclass(frozen=True, eq=False)
class Condition:
    """Logit reweighting of the prior; all-zero logits is the null condition."""

    logits: np.ndarray
    label: str = ""

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(logits)):
            raise ConfigError("logits", "must be finite")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def null(cls, K):
        return cls(np.zeros(K), "null")

    @classmethod
    def one_hot(cls, K, k, strength, label=""):
        logits = np.zeros(K)
        logits[k] = strength
        return cls(logits, label or f"component-{k}")

    def weights(self, m):
        return np.exp(self.log_weights(m))

    def log_weights(self, m):
        cached = self.__dict__.get("_lw")
        if cached is not None and cached[0] is m:
            return cached[1]
        if self.logits.shape != (m.K,):
            raise DimensionError(f"condition has {self.logits.size} logits, model has K={m.K}")
        s = m._log_prior + self.logits
        top = s[np.isfinite(s)].max()
        lw = s - (top + np.log(np.exp(s - top).sum()))
        lw.setflags(write=False)
        # remember the last model only; conditions are immutable
        object.__setattr__(self, "_lw", (m, lw))
        return lw

    def to_dict(self):
        return {"logits": self.logits.tolist(), "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(d["logits"], d.get("label", ""))


def _check_step(t, s):
    if not 1 <= t <= s.T:
        raise StepError(f"step {t} outside 1..{s.T}")


def _flat(z, m):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != tuple(m.dims):
        raise DimensionError(f"latent shape {z.shape} != model dims {tuple(m.dims)}")
    return np.ascontiguousarray(z.reshape(-1))


def eps_batch(m, z_t, t, conds, s):
    """Noise predictions for several conditions sharing one latent: (M, H, W)."""
    _check_step(t, s)
    logw = np.stack([c.log_weights(m) for c in conds])
    eps, _ = _kernels.mixture_eps(_flat(z_t, m), m._flat_means, m.sigma2,
                                  logw, float(s.alpha_bars[t]))
    return eps.reshape((len(conds),) + tuple(m.dims))


def component_terms(m, z_t, t, s):
    """Per-component log-likelihood (K,) of z_t and posterior means of z0 (K, N).

    Only the mixing weights depend on the condition, so callers scoring many
    conditions at one (z_t, t) can reuse these.
    """
    _check_step(t, s)
    ab = float(s.alpha_bars[t])
    z = _flat(z_t, m)
    sa = np.sqrt(ab)
    var = ab * m.sigma2 + (1.0 - ab)
    d2 = ((z[None, :] - sa * m._flat_means) ** 2).sum(axis=1)
    ll = -0.5 * d2 / var - 0.5 * z.size * np.log(var)
    comp_mean = (m.sigma2[:, None] * sa * z[None, :] + (1.0 - ab) * m._flat_means) / var[:, None]
    return ll, comp_mean


def responsibilities(m, cond, z_t, t, s):
    _check_step(t, s)
    logw = cond.log_weights(m)[None, :]
    _, resp = _kernels.mixture_eps(_flat(z_t, m), m._flat_means, m.sigma2,
                                   logw, float(s.alpha_bars[t]))
    return resp[0]


def posterior_mean(m, cond, z_t, t, s):
    """E[z0 | z_t, cond], the clean-data estimate implied by predict_eps."""
    ab = s.alpha_bars[t]
    eps = predict_eps(m, z_t, t, cond, s)
    return (np.asarray(z_t) - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def predict_eps(m, z_t, t, cond, s):
    return eps_batch(m, z_t, t, (cond,), s)[0]


def combine_guidance(eps_cond, eps_null, w):
    return w * eps_cond + (1.0 - w) * eps_null


def cfg_eps(m, z_t, t, cond, null_cond, w, s):
    eps = eps_batch(m, z_t, t, (cond, null_cond), s)
    return combine_guidance(eps[0], eps[1], w)


def sample_data(m, cond, n, rng):
    """Draw n clean latents from the condition-reweighted mixture."""
    ks = rng.choice(m.K, size=n, p=cond.weights(m))
    noise = rng.standard_normal((n,) + tuple(m.dims))
    return m.means[ks] + np.sqrt(m.sigma2[ks])[:, None, None] * noise


def _batch_eps(m, cond, z_t, ab):
    """Vectorised predict_eps over a stack (n, H, W); ``ab`` is scalar or per-sample (n,)."""
    n = len(z_t)
    flat = z_t.reshape(n, -1)
    ab = np.broadcast_to(np.asarray(ab, dtype=np.float64), (n,))[:, None]
    sa = np.sqrt(ab)
    mu = m._flat_means
    var = ab * m.sigma2[None, :] + (1.0 - ab)  # (n, K)
    d2 = ((flat[:, None, :] - sa[:, :, None] * mu[None]) ** 2).sum(axis=2)
    sc = cond.log_weights(m)[None, :] - 0.5 * d2 / var - 0.5 * flat.shape[1] * np.log(var)
    sc -= sc.max(axis=1, keepdims=True)
    r = np.exp(sc)
    r /= r.sum(axis=1, keepdims=True)
    # E[z0 | z_t] = sum_k r_k (sigma2_k sa z + (1 - ab) mu_k) / var_k
    wz = (r * m.sigma2[None, :] / var).sum(axis=1, keepdims=True) * sa
    z0 = wz * flat + (1.0 - ab) * ((r / var) @ mu)
    return ((flat - sa * z0) / np.sqrt(1.0 - ab)).reshape(z_t.shape)


def _residual_chunks(m, cond, n_samples, seed, s, chunk=4096):
    # eps - predict_eps(z_t, t) in fixed-size chunks drawn from one Philox stream
    if n_samples < 1:
        raise ConfigError("n_samples", "must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    for lo in range(0, n_samples, chunk):
        c = min(chunk, n_samples - lo)
        z0 = sample_data(m, cond, c, rng)
        ts = rng.integers(1, s.T + 1, size=c)
        eps = rng.standard_normal(z0.shape)
        ab = s.alpha_bars[ts]
        z_t = np.sqrt(ab)[:, None, None] * z0 + np.sqrt(1.0 - ab)[:, None, None] * eps
        yield (eps - _batch_eps(m, cond, z_t, ab)).reshape(c, -1)


def denoise_residuals(m, cond, n_samples, seed, s):
    """Per-sample eps - predict_eps(z_t, t) for the Monte-Carlo training objective.

    t ~ Uniform{1..T}, eps ~ N(0, I), z0 from the cond-reweighted mixture,
    all drawn from a Philox stream keyed by ``seed``.
    """
    res = np.concatenate(list(_residual_chunks(m, cond, n_samples, seed, s)))
    return res.reshape((n_samples,) + tuple(m.dims))


def denoise_loss_stats(m, cond, n_samples, seed, s, perturbation=None):
    """(mean, standard error) of the per-cell squared noise-prediction error.

    ``perturbation`` is a fixed grid added to every prediction, or a stack of
    grids (P, H, W), in which case both outputs are length-P arrays computed
    on the same samples.
    """
    cells = int(np.prod(m.dims))
    if perturbation is None:
        pert = np.zeros((1, cells))
    else:
        pert = np.asarray(perturbation, dtype=np.float64)
        if pert.shape[-2:] != tuple(m.dims) or pert.ndim not in (2, 3):
            raise DimensionError(f"perturbation shape {pert.shape} does not match dims {tuple(m.dims)}")
        pert = pert.reshape(-1, cells)
    pp = (pert ** 2).sum(axis=1)
    total = np.zeros(len(pert))
    total_sq = np.zeros(len(pert))
    for r in _residual_chunks(m, cond, n_samples, seed, s):
        # ||r - p||^2 expanded so the P perturbations share one pass
        per = ((r ** 2).sum(axis=1)[:, None] - 2.0 * r @ pert.T + pp[None, :]) / cells
        total += per.sum(axis=0)
        total_sq += (per ** 2).sum(axis=0)
    mean = total / n_samples
    if n_samples > 1:
        var = np.maximum(total_sq - n_samples * mean ** 2, 0.0) / (n_samples - 1)
        se = np.sqrt(var / n_samples)
    else:
        se = np.zeros_like(mean)
    if perturbation is None or pert.shape[0] == 1 and np.ndim(perturbation) == 2:
        return float(mean[0]), float(se[0])
    return mean, se


def empirical_denoise_loss(m, cond, n_samples, seed, s, perturbation=None):
    """Monte-Carlo noise-prediction loss; an array when ``perturbation`` is a stack."""
    return denoise_loss_stats(m, cond, n_samples, seed, s, perturbation)[0]
