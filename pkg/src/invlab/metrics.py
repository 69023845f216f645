"""Masked preservation metrics, patch self-similarity distance, and a
density-based edit-fidelity score."""
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import DimensionError, MetricError

PSNR_CAP = 100.0
METRIC_FIELDS = ("mse_all", "mse_bg", "psnr_bg", "ssim_bg", "structure_distance",
                 "fidelity_whole", "fidelity_region")


@dataclass(frozen=True)
class MetricsRow:
    mse_all: float
    mse_bg: float
    psnr_bg: float
    ssim_bg: float
    structure_distance: float
    fidelity_whole: float
    fidelity_region: float

    def as_dict(self):
        return asdict(self)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def selection(shape, mask, invert_mask):
    """Boolean grid of cells a metric reads; ``mask`` marks the edit region."""
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise DimensionError(f"mask shape {mask.shape} != {tuple(shape)}")
    return ~mask if invert_mask else mask.copy()


def mse(a, b, mask=None, invert_mask=False):
    a, b = _pair(a, b)
    sel = selection(a.shape, mask, invert_mask)
    if not sel.any():
        raise MetricError("empty cell selection")
    return float(np.mean((a[sel] - b[sel]) ** 2))


def psnr(a, b, mask=None, invert_mask=False, peak=None):
    """PSNR in dB; ``peak=None`` uses the dynamic range of ``a`` over the selection."""
    a, b = _pair(a, b)
    sel = selection(a.shape, mask, invert_mask)
    if not sel.any():
        raise MetricError("empty cell selection")
    if peak is None:
        peak = float(a[sel].max() - a[sel].min())
        if peak == 0.0:
            raise MetricError("zero dynamic range; pass a fixed peak")
    err = float(np.mean((a[sel] - b[sel]) ** 2))
    if err == 0.0:
        return PSNR_CAP
    # log domain so tiny peaks do not underflow; err < peak^2 * 1e-10 hits the cap
    return float(min(20.0 * np.log10(peak) - 10.0 * np.log10(err), PSNR_CAP))


def ssim(a, b, mask=None, invert_mask=False, window=7, c1=None, c2=None, peak=None):
    """Mean local SSIM over square windows lying entirely inside the selection.

    Local statistics use a uniform window with population (co)variances.
    """
    a, b = _pair(a, b)
    if window % 2 != 1 or window < 1:
        raise MetricError(f"window must be a positive odd integer, got {window}")
    if window > min(a.shape):
        raise MetricError(f"window {window} exceeds grid {a.shape}")
    sel = selection(a.shape, mask, invert_mask)
    if peak is None:
        vals = a[sel] if sel.any() else a
        peak = float(vals.max() - vals.min())
    # work in units of the peak: SSIM is unchanged when the signals and
    # sqrt(c1), sqrt(c2) are rescaled together, and tiny inputs stay representable
    unit = peak if peak > 0 else 1.0
    a, b = a / unit, b / unit
    c1 = 0.01 ** 2 if c1 is None else c1 / unit / unit
    c2 = 0.03 ** 2 if c2 is None else c2 / unit / unit
    inside = sliding_window_view(sel, (window, window)).all(axis=(2, 3))
    if not inside.any():
        raise MetricError("selection has no window fully inside it")
    wa = sliding_window_view(a, (window, window))[inside]
    wb = sliding_window_view(b, (window, window))[inside]
    mu_a = wa.mean(axis=(1, 2))
    mu_b = wb.mean(axis=(1, 2))
    var_a = ((wa - mu_a[:, None, None]) ** 2).mean(axis=(1, 2))
    var_b = ((wb - mu_b[:, None, None]) ** 2).mean(axis=(1, 2))
    cov = ((wa - mu_a[:, None, None]) * (wb - mu_b[:, None, None])).mean(axis=(1, 2))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    if np.any(den == 0):
        raise MetricError("degenerate SSIM window (zero constants and zero signal)")
    return float(np.mean(num / den))


def patch_similarity(x, patch):
    """Cosine-similarity matrix between non-overlapping patches (row-major)."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    if h % patch or w % patch:
        raise MetricError(f"patch {patch} does not divide grid {x.shape}")
    p = x.reshape(h // patch, patch, w // patch, patch).transpose(0, 2, 1, 3)
    p = p.reshape(-1, patch * patch)
    # pre-scale by the largest entry so squared norms cannot underflow
    top = np.abs(p).max(axis=1)
    p = p / np.where(top > 0, top, 1.0)[:, None]
    norms = np.linalg.norm(p, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = p / safe[:, None]
    sim = u @ u.T
    zero = norms == 0
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def structure_distance(a, b, patch=4):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(patch_similarity(a, patch) - patch_similarity(b, patch))))


def edit_fidelity(z, m, c_tgt, mask=None):
    """Average per-cell log-density of z under the c_tgt-reweighted mixture.

    With a mask, the mixture is marginalised onto the masked cells and the
    log-density is averaged over them.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != tuple(m.dims):
        raise DimensionError(f"latent shape {z.shape} != model dims {tuple(m.dims)}")
    sel = selection(z.shape, mask, False)
    if not sel.any():
        raise MetricError("empty mask selection")
    logw = c_tgt.log_weights(m)[None, :]
    means = np.ascontiguousarray(m.means[:, sel])
    lp = _kernels.mixture_logpdf(np.ascontiguousarray(z[sel]), means, m.sigma2, logw)[0]
    return float(lp / sel.sum())


def compute_metrics(z_out, z_ref, mask, m, c_tgt, peak=None, ssim_window=7, patch=4):
    """MetricsRow of an output latent against the source latent."""
    return MetricsRow(
        mse_all=mse(z_out, z_ref),
        mse_bg=mse(z_out, z_ref, mask, invert_mask=True),
        psnr_bg=psnr(z_ref, z_out, mask, invert_mask=True, peak=peak),
        ssim_bg=ssim(z_ref, z_out, mask, invert_mask=True, window=ssim_window, peak=peak),
        structure_distance=structure_distance(z_ref, z_out, patch),
        fidelity_whole=edit_fidelity(z_out, m, c_tgt),
        fidelity_region=edit_fidelity(z_out, m, c_tgt, mask),
    )
