"""Run configuration: JSON loading, dotted-path overrides and validation.

A config is a nested JSON object. Missing keys take the defaults below;
unknown keys are rejected. ``INVLAB_SEED`` overrides ``suite.master_seed``.
"""
import copy
from dataclasses import dataclass
import itertools
import json
import os

from .bench import RunSpec, generate_suite
from .errors import ConfigError
from .inversion import CorrectionConfig, TARGET_MODES
from .schedule import build_schedule, default_schedule

DEFAULTS = {
    "schedule": {"T": 50, "kind": "scaled_linear", "beta_start": None, "beta_end": None},
    "suite": {"n": 16, "replicates": 4, "master_seed": 0, "dims": [16, 16], "K": 4,
              "separation": 4.0, "blob_radius": 3},
    "methods": [
        {"method": "ddim"},
        {"method": "null_var", "opt_iters": 20},
        {"method": "neg_prompt"},
        {"method": "direct"},
    ],
    "edit": {"rho": 0.6, "tau_fraction": 0.2, "target_modes": ["none", "source_offset", "target_offset"],
             "single_branch_variables": False},
    "guidance": {"w_inv": [1.0], "w_fwd": [7.5]},
    "output": {"path": "report.csv", "format": "csv"},
}
METHOD_KEYS = ("method", "opt_iters", "opt_step", "scale", "interval", "target_mode")


def _merge(base, over, path):
    if not isinstance(over, dict):
        raise ConfigError(path or "config", "must be a JSON object")
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(p, "unknown key")
        if isinstance(base[k], dict):
            out[k] = _merge(base[k], v, p)
        else:
            out[k] = v
    return out


def parse_value(text):
    """Flag values are JSON when they parse as JSON, otherwise plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw, dotted, value):
    """Set ``raw[a][b]...`` from ``a.b...``; list items are addressed by index."""
    parts = dotted.split(".")
    node = raw
    for i, part in enumerate(parts):
        where = ".".join(parts[:i + 1])
        last = i == len(parts) - 1
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(where, "no such list item")
            part = int(part)
        elif not isinstance(node, dict) or part not in node:
            if isinstance(node, dict) and last and parts[0] == "methods" and part in METHOD_KEYS:
                pass  # method entries may omit optional fields
            else:
                raise ConfigError(where, "unknown key")
        if last:
            node[part] = value
        else:
            node = node[part]
    return raw


def _num(v, path, integer=False):
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
    return v


def _num_list(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of numbers")
    return [float(_num(x, f"{path}.{i}")) for i, x in enumerate(v)]


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @property
    def schedule(self):
        sc = self.raw["schedule"]
        if sc["beta_start"] is None and sc["beta_end"] is None and sc["kind"] == "scaled_linear":
            return default_schedule(sc["T"])
        if sc["beta_start"] is None or sc["beta_end"] is None:
            raise ConfigError("schedule.beta_start", "give both beta endpoints or neither")
        return build_schedule(sc["T"], sc["beta_start"], sc["beta_end"], sc["kind"])

    def suite(self):
        s = self.raw["suite"]
        return generate_suite(s["n"], s["master_seed"], tuple(s["dims"]), s["K"], s["separation"],
                              s["blob_radius"], replicates=s["replicates"])

    def corrections(self):
        """CorrectionConfigs with the target-mode sweep applied to direct entries."""
        out = []
        modes = self.raw["edit"]["target_modes"]
        for entry in self.raw["methods"]:
            if entry["method"] == "direct" and "target_mode" not in entry:
                out.extend(CorrectionConfig(**entry, target_mode=tm) for tm in modes)
            else:
                out.append(CorrectionConfig(**entry))
        return out

    def run_specs(self):
        e, g = self.raw["edit"], self.raw["guidance"]
        return [RunSpec(c, e["rho"], e["tau_fraction"], wi, wf, e["single_branch_variables"])
                for c in self.corrections()
                for wi, wf in itertools.product(g["w_inv"], g["w_fwd"])]


def validate(raw):
    """Field-by-field checks; raises ConfigError naming the first bad field."""
    sc = raw["schedule"]
    _num(sc["T"], "schedule.T", integer=True)
    for k in ("beta_start", "beta_end"):
        if sc[k] is not None:
            _num(sc[k], f"schedule.{k}")
    su = raw["suite"]
    for k in ("n", "replicates", "K", "blob_radius"):
        if _num(su[k], f"suite.{k}", integer=True) < 1:
            raise ConfigError(f"suite.{k}", "must be >= 1")
    _num(su["master_seed"], "suite.master_seed", integer=True)
    if not 0 <= su["master_seed"] < 2 ** 64:
        raise ConfigError("suite.master_seed", "must fit in 64 unsigned bits")
    if su["K"] < 2:
        raise ConfigError("suite.K", "needs a source and a target component")
    dims = su["dims"]
    if not (isinstance(dims, list) and len(dims) == 2
            and all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims)):
        raise ConfigError("suite.dims", f"expected [height, width] positive integers, got {dims!r}")
    _num(su["separation"], "suite.separation")
    if not isinstance(raw["methods"], list) or not raw["methods"]:
        raise ConfigError("methods", "expected a nonempty list")
    for i, entry in enumerate(raw["methods"]):
        if not isinstance(entry, dict) or "method" not in entry:
            raise ConfigError(f"methods.{i}", "each entry needs a method")
        for k in entry:
            if k not in METHOD_KEYS:
                raise ConfigError(f"methods.{i}.{k}", "unknown key")
        try:
            CorrectionConfig(**entry)
        except ConfigError as exc:
            raise exc.under(f"methods.{i}") from None
    ed = raw["edit"]
    _num(ed["rho"], "edit.rho")
    if not 0.0 <= _num(ed["tau_fraction"], "edit.tau_fraction") <= 1.0:
        raise ConfigError("edit.tau_fraction", "must lie in [0, 1]")
    if not isinstance(ed["target_modes"], list) or not ed["target_modes"]:
        raise ConfigError("edit.target_modes", "expected a nonempty list")
    for tm in ed["target_modes"]:
        if tm not in TARGET_MODES:
            raise ConfigError("edit.target_modes", f"unknown mode {tm!r}")
    if not isinstance(ed["single_branch_variables"], bool):
        raise ConfigError("edit.single_branch_variables", "expected true or false")
    for k in ("w_inv", "w_fwd"):
        _num_list(raw["guidance"][k], f"guidance.{k}")
    out = raw["output"]
    if not isinstance(out["path"], str) or not out["path"]:
        raise ConfigError("output.path", "expected a file path")
    if out["format"] not in ("csv", "json"):
        raise ConfigError("output.format", f"must be csv or json, got {out['format']!r}")
    cfg = RunConfig(raw)
    # construct once so every derived object is checked before any work starts
    try:
        s = cfg.schedule
    except ConfigError as exc:
        raise (exc if exc.field.startswith("schedule.") else exc.under("schedule")) from None
    try:
        for spec in cfg.run_specs():
            spec.edit_config(s.T).validate_for(s)
    except ConfigError as exc:
        raise (exc if "." in exc.field else exc.under("edit")) from None
    return cfg


def load_config(path=None, overrides=(), env=None):
    """Read ``path`` (or only defaults when None), apply overrides and validate."""
    env = os.environ if env is None else env
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"no such file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    raw = _merge(DEFAULTS, user, "")
    for dotted, value in overrides:
        apply_override(raw, dotted, value)
    seed = env.get("INVLAB_SEED")
    if seed is not None and seed != "":
        try:
            raw["suite"]["master_seed"] = int(seed)
        except ValueError:
            raise ConfigError("INVLAB_SEED", f"expected an integer, got {seed!r}") from None
    return validate(raw)
