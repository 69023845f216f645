"""Synthetic editing suite and the sweep runner that produces report rows.

Randomness comes from numpy's Philox4x64-10 counter-based bit generator.
Each scenario gets its own 64-bit key derived from ``(master_seed, replicate,
index)`` through ``SeedSequence``, so a scenario depends only on its key and
the generator parameters, never on worker count or iteration order.
"""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
import io
import json
import math
import time

import numpy as np

from . import __version__
from .editor import EditConfig, edit
from .errors import ConfigError
from .inversion import CorrectionConfig, optimize_null_variable
from .metrics import METRIC_FIELDS, MetricsRow, compute_metrics, mse
from .model import Condition, MixtureModel
from .sampler import invert

GENERATOR_VERSION = 1
EDIT_TYPES = ("translate_blob", "recolor_blob", "background_shift")
REPORT_FIELDS = (("scenario_id", "seed", "method", "w_inv", "w_fwd", "opt_iters", "scale",
                  "interval", "target_mode", "rho", "tau")
                 + METRIC_FIELDS + ("recon_mse", "wall_ms", "error", "version"))


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    seed: int
    model: MixtureModel
    c_src: Condition
    c_tgt: Condition
    z0: np.ndarray
    mask: np.ndarray
    edit_type: str

    def to_dict(self):
        return {"id": self.id, "seed": self.seed, "edit_type": self.edit_type,
                "model": self.model.to_dict(), "c_src": self.c_src.to_dict(),
                "c_tgt": self.c_tgt.to_dict(), "z0": self.z0.tolist(),
                "mask": self.mask.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], int(d["seed"]), MixtureModel.from_dict(d["model"]),
                   Condition.from_dict(d["c_src"]), Condition.from_dict(d["c_tgt"]),
                   np.asarray(d["z0"], dtype=np.float64), np.asarray(d["mask"], dtype=bool),
                   d["edit_type"])


def scenario_key(master_seed, replicate, index):
    """64-bit Philox key for one scenario."""
    ss = np.random.SeedSequence([int(master_seed) & (2 ** 64 - 1), replicate, index, GENERATOR_VERSION])
    return int(ss.generate_state(1, np.uint64)[0])


def philox(key):
    return np.random.Generator(np.random.Philox(key=key))


def _disk(dims, center, radius):
    yy, xx = np.mgrid[0:dims[0], 0:dims[1]]
    return ((yy - center[0]) ** 2 + (xx - center[1]) ** 2) <= radius ** 2


def _smooth_field(rng, dims, n_waves=4):
    yy, xx = np.mgrid[0:dims[0], 0:dims[1]] / np.array(dims, dtype=float)[:, None, None]
    f = np.zeros(dims)
    for _ in range(n_waves):
        ky, kx = rng.uniform(-2.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        f += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (ky * yy + kx * xx) + phase)
    f -= f.mean()
    return f / f.std()


def _has_window(bg, window):
    from numpy.lib.stride_tricks import sliding_window_view
    if window > min(bg.shape):
        return False
    return bool(sliding_window_view(bg, (window, window)).all(axis=(2, 3)).any())


def _blob_delta(rng, dims, radius, edit_type):
    """Unit-norm mean difference for one localized edit, the touched cells,
    and (for translations) the blob's original position."""
    def center():
        return (int(rng.integers(radius, dims[0] - radius)),
                int(rng.integers(radius, dims[1] - radius)))

    if edit_type == "translate_blob":
        c1 = center()
        c2 = center()
        while c2 == c1:
            c2 = center()
        d1, d2 = _disk(dims, c1, radius), _disk(dims, c2, radius)
        delta, touched, old = d2.astype(float) - d1.astype(float), d1 ^ d2, d1
    else:
        disk = _disk(dims, center(), radius)
        if edit_type == "recolor_blob":
            delta = disk.astype(float)
        else:
            yy, xx = np.mgrid[0:dims[0], 0:dims[1]]
            delta = np.where((yy // 2 + xx // 2) % 2 == 0, 1.0, -1.0) * disk
        touched, old = disk, None
    return delta / np.linalg.norm(delta), touched, old


def make_scenario(key, index, dims=(16, 16), K=4, separation=4.0, blob_radius=3,
                  sigma=1.0, cond_strength=4.0, distractor_var_spread=0.0, ssim_window=7,
                  edit_type=None, label=None):
    """Build one scenario deterministically from its 64-bit key.

    Component 0 is the source image and component 1 the edited image; they
    differ only inside the blob, by a total distance of ``separation * sigma``.
    Components 2..K-1 are distractors: global smooth perturbations of the
    source at the same distance, standing in for the other images the
    unconditional model also covers. Blob placement is redrawn until the
    background still holds one full ``ssim_window`` square.
    """
    dims = tuple(int(d) for d in dims)
    if K < 2:
        raise ConfigError("K", "the editing suite needs K >= 2")
    if blob_radius < 1 or 2 * blob_radius + 1 > min(dims):
        raise ConfigError("blob_radius", f"blob of radius {blob_radius} does not fit grid {dims}")
    if separation <= 0:
        raise ConfigError("separation", f"must be > 0 for a non-degenerate edit, got {separation}")
    if not sigma > 0:
        raise ConfigError("sigma", "must be > 0")
    rng = philox(key)
    edit_type = edit_type or EDIT_TYPES[index % len(EDIT_TYPES)]
    dist = separation * sigma
    base = _smooth_field(rng, dims)
    for _ in range(100):
        delta, touched, old = _blob_delta(rng, dims, blob_radius, edit_type)
        if _has_window(~touched, ssim_window):
            break
    mu_src = base.copy()
    if old is not None:
        # the translated blob sits at its old position in the source
        mu_src = mu_src + dist * np.abs(delta).max() * old
    means = [mu_src, mu_src + dist * delta]
    for _ in range(K - 2):
        f = _smooth_field(rng, dims)
        means.append(mu_src + dist * f / np.linalg.norm(f))
    means = np.stack(means)
    sigma2 = np.full(K, sigma ** 2)
    if K > 2 and distractor_var_spread:
        sigma2[2:] = sigma ** 2 * np.exp(rng.uniform(-distractor_var_spread, distractor_var_spread, K - 2))
    model = MixtureModel(means, sigma2, np.full(K, 1.0 / K))
    c_src = Condition.one_hot(K, 0, cond_strength, "source")
    c_tgt = Condition.one_hot(K, 1, cond_strength, "target")
    diff = np.abs(means[1] - means[0])
    mask = diff > 0.5 * diff.max()
    if not mask.any() or mask.all():
        raise ConfigError("blob_radius", "edit mask must leave a nonempty background")
    comp = rng.choice(K, p=c_src.weights(model))
    z0 = means[comp] + np.sqrt(sigma2[comp]) * rng.standard_normal(dims)
    return Scenario(label or f"s{index:03d}-{edit_type}", key, model, c_src, c_tgt, z0, mask, edit_type)


def generate_suite(n, master_seed, dims=(16, 16), K=4, separation=4.0, blob_radius=3,
                   replicates=1, **kwargs):
    """``n`` scenarios per replicate, cycling through the edit types."""
    if n < 1:
        raise ConfigError("n", "must be >= 1")
    suite = []
    for r in range(replicates):
        for i in range(n):
            key = scenario_key(master_seed, r, i)
            label = f"r{r}-s{i:03d}-{EDIT_TYPES[i % len(EDIT_TYPES)]}"
            suite.append(make_scenario(key, i, dims, K, separation, blob_radius, label=label, **kwargs))
    return suite


@dataclass(frozen=True)
class RunSpec:
    """One sweep configuration: correction method, editor knobs, guidance pair."""

    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    rho: float = 0.6
    tau_fraction: float = 0.2
    w_inv: float = 1.0
    w_fwd: float = 7.5
    single_branch_variables: bool = False

    def edit_config(self, T):
        return EditConfig(self.rho, int(round(self.tau_fraction * T)), self.correction,
                          self.single_branch_variables)


def _nan_metrics():
    return {k: math.nan for k in METRIC_FIELDS}


def _row(sc, spec, T, metrics, recon, wall_ms, error=""):
    c = spec.correction
    row = {"scenario_id": sc.id, "seed": sc.seed, "method": c.method,
           "w_inv": spec.w_inv, "w_fwd": spec.w_fwd, "opt_iters": c.opt_iters if c.method == "null_var" else 0,
           "scale": c.scale, "interval": c.interval, "target_mode": c.target_mode,
           "rho": spec.rho, "tau": int(round(spec.tau_fraction * T))}
    row.update(metrics)
    row.update({"recon_mse": recon, "wall_ms": wall_ms, "error": error, "version": __version__})
    return row


def run_scenario(sc, specs, s, null_cond=None):
    """All configurations on one scenario; inversions and null-variable optima are shared."""
    null_cond = null_cond or Condition.null(sc.model.K)
    peak = float(sc.z0.max() - sc.z0.min())
    inversions, nullvars, rows = {}, {}, []
    for spec in specs:
        t0 = time.perf_counter()
        try:
            ec = spec.edit_config(s.T)
            if spec.w_inv not in inversions:
                inversions[spec.w_inv] = invert(sc.z0, sc.c_src, null_cond, spec.w_inv, sc.model, s)
            traj = inversions[spec.w_inv]
            variables = None
            c = spec.correction
            if c.method == "null_var":
                nk = (spec.w_inv, spec.w_fwd, c.opt_iters, c.opt_step)
                if nk not in nullvars:
                    nullvars[nk] = optimize_null_variable(traj, sc.c_src, spec.w_fwd, c.opt_iters,
                                                          c.opt_step, sc.model, s)
                variables = nullvars[nk]
            res = edit(sc.z0, sc.c_src, sc.c_tgt, ec, spec.w_inv, spec.w_fwd, sc.model, s,
                       null_cond=null_cond, traj_star=traj, variables=variables)
            metrics = compute_metrics(res.z0_tgt, sc.z0, sc.mask, sc.model, sc.c_tgt, peak=peak).as_dict()
            recon = mse(res.z0_src, sc.z0)
            error = ""
        except Exception as exc:  # isolate failures to their own row
            metrics, recon, error = _nan_metrics(), math.nan, f"{type(exc).__name__}: {exc}"
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rows.append(_row(sc, spec, s.T, metrics, recon, wall_ms, error))
    return rows


def _run_chunk(args):
    scenarios, specs, s = args
    return [run_scenario(sc, specs, s) for sc in scenarios]


def run_bench(suite, specs, s, workers=1):
    """Rows ordered by (scenario, config) regardless of ``workers``."""
    if not specs:
        raise ConfigError("methods", "at least one configuration is required")
    suite = list(suite)
    if workers <= 1 or len(suite) <= 1:
        per_scenario = [run_scenario(sc, specs, s) for sc in suite]
    else:
        workers = min(workers, len(suite))
        chunks = [suite[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, [(c, specs, s) for c in chunks]))
        per_scenario = [None] * len(suite)
        for w, res in enumerate(results):
            for j, rows in enumerate(res):
                per_scenario[w + j * workers] = rows
    return [row for rows in per_scenario for row in rows]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(rows, path, fmt="csv"):
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format", f"must be csv or json, got {fmt!r}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in REPORT_FIELDS])
        text = buf.getvalue()
    else:
        clean = [{k: (None if isinstance(row[k], float) and math.isnan(row[k]) else row[k])
                  for k in REPORT_FIELDS} for row in rows]
        text = json.dumps(clean, indent=1) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return path


_INT_FIELDS = {"seed", "opt_iters", "interval", "tau"}
_STR_FIELDS = {"scenario_id", "method", "target_mode", "error", "version"}


def _parse(k, v):
    if k in _STR_FIELDS:
        return v
    if k in _INT_FIELDS:
        return int(v)
    return float(v)


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        if str(path).endswith(".json"):
            rows = json.load(fh)
            return [{k: (math.nan if v is None else v) for k, v in r.items()} for r in rows]
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise ConfigError("report", f"{path} does not have the report header")
        return [{k: _parse(k, v) for k, v in r.items()} for r in reader]


CONFIG_KEYS = ("method", "w_inv", "w_fwd", "opt_iters", "scale", "interval", "target_mode", "rho", "tau")
SUMMARY_FIELDS = ("mse_bg", "recon_mse", "psnr_bg", "ssim_bg", "structure_distance",
                  "fidelity_whole", "fidelity_region")


def summarize(rows):
    """Suite means and standard deviations per configuration, in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in CONFIG_KEYS), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        entry = dict(zip(CONFIG_KEYS, key))
        entry["runs"] = len(rs)
        entry["errors"] = len(rs) - len(ok)
        for f in SUMMARY_FIELDS:
            vals = np.array([r[f] for r in ok], dtype=float)
            entry[f] = float(vals.mean()) if len(vals) else math.nan
            entry[f + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(entry)
    return out


def format_summary(summary):
    head = f"{'method':<11}{'w_inv':>6}{'w_fwd':>6}{'scale':>6}{'int':>4} {'target':<14}" \
           f"{'runs':>5}{'err':>4}{'recon_mse':>12}{'mse_bg':>12}{'psnr_bg':>9}{'ssim_bg':>8}" \
           f"{'struct':>9}{'fid_reg':>9}"
    lines = [head]
    for e in summary:
        lines.append(f"{e['method']:<11}{e['w_inv']:>6g}{e['w_fwd']:>6g}{e['scale']:>6g}{e['interval']:>4d} "
                     f"{e['target_mode']:<14}{e['runs']:>5d}{e['errors']:>4d}{e['recon_mse']:>12.4e}"
                     f"{e['mse_bg']:>12.4e}{e['psnr_bg']:>9.3f}{e['ssim_bg']:>8.4f}"
                     f"{e['structure_distance']:>9.5f}{e['fidelity_region']:>9.4f}")
    return "\n".join(lines)
