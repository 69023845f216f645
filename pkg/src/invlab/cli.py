"""``invlab`` command line: invert, edit, bench, report.

Exit codes: 0 success, 2 configuration error, 3 runtime error. Any config
field can be overridden with a dotted flag, e.g. ``--edit.rho 0.8`` or
``--methods.1.opt_iters 5``.
"""
import argparse
import dataclasses
import os
import sys
import time

from . import __version__, _kernels
from .bench import GENERATOR_VERSION, format_summary, read_report, run_bench, summarize, write_report
from .config import load_config, parse_value
from .editor import edit
from .errors import ConfigError
from .inversion import reconstruct
from .metrics import compute_metrics, edit_fidelity, mse, psnr, ssim, structure_distance
from .model import Condition
from .sampler import invert


def build_id():
    return f"invlab {__version__} (generator {GENERATOR_VERSION}, backend {_kernels.BACKEND})"


def sci(v):
    """Scientific notation; magnitudes at or below 1e-10 print as 0.0e0."""
    if abs(v) <= 1e-10:
        return "0.0e0"
    return f"{v:.4e}"


def split_overrides(extra):
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into (path, value) pairs.

    Paths may have a single segment (``--methods '[...]'`` replaces the list);
    unknown paths are rejected when the override is applied.
    """
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(tok.lstrip("-") or tok, "unrecognised argument")
        key = tok[2:]
        if "=" in key:
            key, text = key.split("=", 1)
        elif i + 1 < len(extra):
            i += 1
            text = extra[i]
        else:
            raise ConfigError(key, "override needs a value")
        out.append((key, parse_value(text)))
        i += 1
    return out


def _find(cfg, scenario_id):
    for sc in cfg.suite():
        if sc.id == scenario_id:
            return sc
    raise ConfigError("scenario_id", f"no scenario {scenario_id!r} in the configured suite")


def _unique_corrections(specs):
    # target_mode only affects the target branch, so reconstructions dedupe on the rest
    seen, out = set(), []
    for spec in specs:
        c = dataclasses.replace(spec.correction, target_mode="none")
        key = (c, spec.w_inv, spec.w_fwd)
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def cmd_invert(args, overrides):
    cfg = load_config(args.config, overrides)
    sc = _find(cfg, args.scenario_id)
    s = cfg.schedule
    null = Condition.null(sc.model.K)
    peak = float(sc.z0.max() - sc.z0.min())
    trajs = {}
    for c, w_inv, w_fwd in _unique_corrections(cfg.run_specs()):
        if w_inv not in trajs:
            trajs[w_inv] = invert(sc.z0, sc.c_src, null, w_inv, sc.model, s)
        z, _ = reconstruct(trajs[w_inv], sc.c_src, null, w_fwd, c, sc.model, s)
        print(f"scenario={sc.id} method={c.method} w_inv={w_inv:g} w_fwd={w_fwd:g} "
              f"mse_all={sci(mse(z, sc.z0))} psnr={psnr(sc.z0, z, peak=peak):.3f} "
              f"ssim={ssim(sc.z0, z, peak=peak):.6f} "
              f"structure_distance={sci(structure_distance(sc.z0, z))} "
              f"fidelity_whole={edit_fidelity(z, sc.model, sc.c_src):.6f}")
    return 0


def cmd_edit(args, overrides):
    cfg = load_config(args.config, overrides)
    sc = _find(cfg, args.scenario_id)
    s = cfg.schedule
    c_tgt = sc.c_src if args.same_prompt else sc.c_tgt
    null = Condition.null(sc.model.K)
    peak = float(sc.z0.max() - sc.z0.min())
    for spec in cfg.run_specs():
        ec = spec.edit_config(s.T)
        res = edit(sc.z0, sc.c_src, c_tgt, ec, spec.w_inv, spec.w_fwd, sc.model, s, null_cond=null)
        row = compute_metrics(res.z0_tgt, sc.z0, sc.mask, sc.model, c_tgt, peak=peak)
        c = spec.correction
        fields = " ".join(f"{k}={sci(v) if k.startswith('mse') or k == 'structure_distance' else f'{v:.6f}'}"
                          for k, v in row.as_dict().items())
        print(f"scenario={sc.id} method={c.method} target_mode={c.target_mode} w_inv={spec.w_inv:g} "
              f"w_fwd={spec.w_fwd:g} rho={ec.rho:g} tau={ec.tau} {fields}")
        if args.same_prompt:
            rf = edit_fidelity(res.z0_src, sc.model, sc.c_src, sc.mask)
            print(f"  reconstruction fidelity_region={rf:.6f}")
    return 0


def cmd_bench(args, overrides):
    cfg = load_config(args.config, overrides)
    out = cfg.raw["output"]
    path = args.output or out["path"]
    fmt = args.format or out["format"]
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    t0 = time.perf_counter()
    rows = run_bench(cfg.suite(), cfg.run_specs(), cfg.schedule, workers=workers)
    write_report(rows, path, fmt)
    print(format_summary(summarize(rows)))
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {len(rows)} rows ({failed} failed) to {path} in {time.perf_counter() - t0:.1f}s "
          f"[{build_id()}, workers={workers}]")
    return 0


def cmd_report(args, overrides):
    if overrides:
        raise ConfigError(overrides[0][0], "report takes no config overrides")
    try:
        rows = read_report(args.report)
    except FileNotFoundError:
        raise ConfigError("report", f"no such file: {args.report}") from None
    print(format_summary(summarize(rows)))
    return 0


def make_parser():
    p = argparse.ArgumentParser(prog="invlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=build_id())
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("invert", "reconstruction metrics for one scenario"),
                           ("edit", "edit metrics for one scenario")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("config", help="run-config JSON")
        q.add_argument("scenario_id", help="e.g. r0-s000-translate_blob")
        if name == "edit":
            q.add_argument("--same-prompt", action="store_true",
                           help="use the source condition as the target condition")
    q = sub.add_parser("bench", help="run the full sweep and write a report")
    q.add_argument("config", help="run-config JSON")
    q.add_argument("--workers", type=int, default=None, help="processes (default: all cores)")
    q.add_argument("--output", default=None, help="report path (overrides output.path)")
    q.add_argument("--format", choices=("csv", "json"), default=None)
    q = sub.add_parser("report", help="summarise an existing report")
    q.add_argument("report", help="CSV or JSON report")
    return p


COMMANDS = {"invert": cmd_invert, "edit": cmd_edit, "bench": cmd_bench, "report": cmd_report}


def main(argv=None):
    parser = make_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return COMMANDS[args.command](args, split_overrides(extra))
    except ConfigError as exc:
        print(f"invlab: configuration error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("invlab: interrupted", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures map to exit 3, never a traceback
        print(f"invlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
