"""Hot numeric kernels.

Each kernel has a numba ``@njit`` implementation and a pure-numpy twin with
the same signature. The numba path is used when numba imports cleanly and
``INVLAB_NUMBA`` is not set to ``0``; ``BACKEND`` reports the active choice.
Both paths agree to ~1e-13 but are not bitwise identical, so determinism
guarantees hold per backend.
"""
import os

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


def _want_numba():
    flag = os.environ.get("INVLAB_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


try:
    if not _want_numba():
        raise ImportError("numba disabled by INVLAB_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def mixture_eps_numpy(z, means, sigma2, logw, ab):
    """Posterior noise prediction for a batch of component log-weights.

    z: (N,) noisy latent; means: (K, N); sigma2: (K,); logw: (M, K) log
    effective weights, one row per condition; ab: alpha_bar at the step.
    Returns (eps (M, N), resp (M, K)).
    """
    sa = np.sqrt(ab)
    n = z.shape[0]
    var = ab * sigma2 + (1.0 - ab)
    d2 = ((z[None, :] - sa * means) ** 2).sum(axis=1)
    ll = -0.5 * d2 / var - 0.5 * n * np.log(var)
    scores = logw + ll[None, :]
    scores = scores - scores.max(axis=1, keepdims=True)
    resp = np.exp(scores)
    resp /= resp.sum(axis=1, keepdims=True)
    # per-component posterior mean of z0: (K, N)
    comp_mean = (sigma2[:, None] * sa * z[None, :] + (1.0 - ab) * means) / var[:, None]
    z0_hat = resp @ comp_mean
    eps = (z[None, :] - sa * z0_hat) / np.sqrt(1.0 - ab)
    return eps, resp


def mixture_logpdf_numpy(z, means, sigma2, logw):
    """Log-density of z under the clean mixture, per row of logw. Returns (M,)."""
    n = z.shape[0]
    d2 = ((z[None, :] - means) ** 2).sum(axis=1)
    ll = -0.5 * d2 / sigma2 - 0.5 * n * (np.log(sigma2) + _LOG_2PI)
    scores = logw + ll[None, :]
    top = scores.max(axis=1)
    return top + np.log(np.exp(scores - top[:, None]).sum(axis=1))


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def mixture_eps_numba(z, means, sigma2, logw, ab):
        k_count, n = means.shape
        m_count = logw.shape[0]
        sa = np.sqrt(ab)
        sn = np.sqrt(1.0 - ab)
        ll = np.empty(k_count)
        comp_mean = np.empty((k_count, n))
        for k in range(k_count):
            var = ab * sigma2[k] + (1.0 - ab)
            c_z = sigma2[k] * sa / var
            c_mu = (1.0 - ab) / var
            d2 = 0.0
            for i in range(n):
                d = z[i] - sa * means[k, i]
                d2 += d * d
                comp_mean[k, i] = c_z * z[i] + c_mu * means[k, i]
            ll[k] = -0.5 * d2 / var - 0.5 * n * np.log(var)
        resp = np.empty((m_count, k_count))
        for m in range(m_count):
            top = -np.inf
            for k in range(k_count):
                s = logw[m, k] + ll[k]
                resp[m, k] = s
                if s > top:
                    top = s
            tot = 0.0
            for k in range(k_count):
                resp[m, k] = np.exp(resp[m, k] - top)
                tot += resp[m, k]
            for k in range(k_count):
                resp[m, k] /= tot
        eps = np.zeros((m_count, n))
        for m in range(m_count):
            for k in range(k_count):
                r = resp[m, k]
                for i in range(n):
                    eps[m, i] += r * comp_mean[k, i]
            for i in range(n):
                eps[m, i] = (z[i] - sa * eps[m, i]) / sn
        return eps, resp

    @njit(cache=True, nogil=True)
    def mixture_logpdf_numba(z, means, sigma2, logw):
        k_count, n = means.shape
        m_count = logw.shape[0]
        ll = np.empty(k_count)
        for k in range(k_count):
            d2 = 0.0
            for i in range(n):
                d = z[i] - means[k, i]
                d2 += d * d
            ll[k] = -0.5 * d2 / sigma2[k] - 0.5 * n * (np.log(sigma2[k]) + 1.8378770664093453)
        out = np.empty(m_count)
        for m in range(m_count):
            top = -np.inf
            for k in range(k_count):
                if logw[m, k] + ll[k] > top:
                    top = logw[m, k] + ll[k]
            tot = 0.0
            for k in range(k_count):
                tot += np.exp(logw[m, k] + ll[k] - top)
            out[m] = top + np.log(tot)
        return out

    mixture_eps = mixture_eps_numba
    mixture_logpdf = mixture_logpdf_numba
    BACKEND = "numba"
else:
    mixture_eps = mixture_eps_numpy
    mixture_logpdf = mixture_logpdf_numpy
    BACKEND = "numpy"
