"""Command-line entry point: ``swiftvla <command> [flags]``.

Exit codes: 0 success, 2 config or contract error, 3 numerical fault,
4 acceptance violation (failed gradient check or ablation assertion).
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import subprocess
import sys
import time

import yaml

from . import arena, binio, trainer
from .checks import GRAD_MODULES, gradcheck
from .config import ConfigError, TrainingConfig, config_from_dict
from .numerics import ContractError, NumericalFault

log = logging.getLogger("swiftvla")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4


class AcceptanceViolation(RuntimeError):
    pass


# -- helpers --------------------------------------------------------------
def _seed(value):
    """Explicit flag, else ``SVLA_SEED``, else None."""
    if value is not None:
        return value
    env = os.environ.get("SVLA_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SVLA_SEED must be an integer, got {env!r}") from None


def _revision() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version
    try:
        return "release-" + version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir, command, args, seed, config_path=None, path=None) -> str:
    """Write the run manifest (default ``out_dir/manifest.json``) before any other artifact."""
    os.makedirs(out_dir, exist_ok=True)
    path = path or os.path.join(out_dir, "manifest.json")
    manifest = {"command": command, "argv": sys.argv[1:], "config_path": config_path, "seed": seed,
                "revision": _revision(), "output_dir": os.path.abspath(out_dir),
                "started_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
                "args": {k: v for k, v in vars(args).items() if k != "func"}}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_table(out_dir, name, headers, rows) -> str:
    text = trainer.format_table(headers, rows)
    if out_dir:
        with open(os.path.join(out_dir, f"{name}.txt"), "w") as fh:
            fh.write(text + "\n")
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(headers)
            w.writerows([[f"{c:.6f}" if isinstance(c, float) else c for c in r] for r in rows])
    print(text)
    return text


def _load_cfg(path, flag_seed):
    """Config file merged with the seed: ``--seed`` beats the file, the file beats ``SVLA_SEED``."""
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    if flag_seed is not None:
        data = {**data, "seed": flag_seed}
    elif "seed" not in data and _seed(None) is not None:
        data = {**data, "seed": _seed(None)}
    return config_from_dict(data)


def _tasks(value):
    tasks = [t.strip() for t in value.split(",") if t.strip()] if value else list(arena.TASKS)
    for t in tasks:
        arena.Task.get(t)
    return tasks


# -- commands -------------------------------------------------------------
def cmd_gen_data(args):
    if args.episodes_per_task < 0:
        raise ConfigError("--episodes-per-task must be >= 0")
    seed = _seed(args.seed) or 0
    tasks = _tasks(args.tasks)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "gen-data", args, seed,
                   path=args.out + ".manifest.json")
    demos = arena.generate_demos(tasks, args.episodes_per_task, seed)
    arena.export_dataset(demos, args.out)
    print(f"wrote {len(demos)} episodes ({sum(d.length for d in demos)} steps) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    if args.resume and not args.config:
        cfg = trainer.load_checkpoint(args.resume).config
    else:
        cfg = _load_cfg(args.config, args.seed)
    write_manifest(args.out, "train", args, cfg.seed, args.config)
    from .config import dump_config
    dump_config(cfg, os.path.join(args.out, "config.yaml"))
    data = trainer.DemoSet(arena.import_dataset(args.data))
    r = trainer.train(cfg, data, out_dir=args.out, resume=args.resume, stop_at=args.stop_at)
    last = r.records[-1]["losses"] if r.records else {}
    print(f"trained to step {r.step}; last losses {json.dumps(last)}")
    return EXIT_OK


def cmd_eval(args):
    if args.episodes is not None and args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    seed = _seed(args.seed)
    seed = 10_000 if seed is None else seed
    write_manifest(args.out, "eval", args, seed)
    policy, cfg = None, TrainingConfig()
    if args.mode not in ("expert", "random"):
        if not args.ckpt:
            raise ConfigError(f"--ckpt is required for mode {args.mode}")
        ck = trainer.load_checkpoint(args.ckpt)
        policy, cfg = ck.policy, ck.config
    n = args.episodes or cfg.eval_episodes
    results = trainer.evaluate(policy, n, args.mode, _tasks(args.tasks), seed=seed, **trainer.eval_kwargs(cfg))
    stream = trainer.MetricsStream(os.path.join(args.out, "metrics.jsonl"))
    rows = []
    for task, r in results.items():
        stream.write(r.record())
        rows.append([task, args.mode, n, r.success_rate, r.mean_length])
    sr, ml = trainer.overall(results)
    stream.write({"kind": "eval", "task": "all", "mode": args.mode, "episodes": n * len(results),
                  "success_rate": sr, "mean_length": ml})
    rows.append(["all", args.mode, n * len(results), sr, ml])
    write_table(args.out, "eval", ["task", "mode", "episodes", "SR", "mean_length"], rows)
    return EXIT_OK


def cmd_profile(args):
    seed = _seed(args.seed) or 0
    write_manifest(args.out, "profile", args, seed)
    if args.ckpt:
        policy = trainer.load_checkpoint(args.ckpt).policy
    else:
        from .config import ModelConfig
        from .policy import Policy
        policy = Policy(ModelConfig(), seed=seed)
    modes = ["with4d", "pruned"] if args.mode == "both" else [args.mode]
    reports = [trainer.profile(policy, m, args.warmup, args.iters, seed=seed) for m in modes]
    rows = [[r["mode"], r["parameters"], r["median_latency_s"] * 1e3, r["peak_bytes"] / 2 ** 20] for r in reports]
    with open(os.path.join(args.out, "profile.jsonl"), "w") as fh:
        for r in reports:
            fh.write(json.dumps(r) + "\n")
    write_table(args.out, "profile", ["mode", "parameters", "median_latency_ms", "peak_MiB"], rows)
    if len(reports) == 2:
        w, p = reports
        print(f"speedup {w['median_latency_s'] / p['median_latency_s']:.2f}x, "
              f"parameters {p['parameters']} < {w['parameters']}")
    return EXIT_OK


def cmd_gradcheck(args):
    seed = _seed(args.seed) or 0
    modules = list(GRAD_MODULES) if args.module == "all" else [args.module]
    write_manifest(args.out, "gradcheck", args, seed)
    reports = [gradcheck(m, args.n_params, args.tol, seed) for m in modules]
    rows = [[r.module, r.n_params, r.max_rel_err, r.n_fail, "pass" if r.passed else "FAIL"] for r in reports]
    rows = [[a, b, f"{c:.3e}", d, e] for a, b, c, d, e in rows]
    write_table(args.out, "gradcheck", ["module", "params", "max_rel_err", "failures", "result"], rows)
    if not all(r.passed for r in reports):
        raise AcceptanceViolation("gradient check failed")
    return EXIT_OK


def cmd_ablate(args):
    names = [g.strip() for g in args.grid.split(",") if g.strip()]
    if not names:
        raise ConfigError("--grid is empty")
    for g in names:
        if g not in trainer.GRIDS:
            raise ConfigError(f"unknown grid {g!r}; expected some of {sorted(trainer.GRIDS)}")
    base = _load_cfg(args.config, args.seed)
    write_manifest(args.out, "ablate", args, base.seed, args.config)
    data = trainer.DemoSet(arena.import_dataset(args.data) if args.data
                           else arena.generate_demos(n_per_task=args.episodes_per_task, seed=base.seed))
    stage1, trained = {}, {}
    modes = ("with4d", "pruned")
    ok = True
    for g in names:
        t0 = time.perf_counter()
        rows = trainer.run_grid(base, trainer.GRIDS[g], data, modes, args.episodes, os.path.join(args.out, g),
                                stage1_cache=stage1, trained=trained)
        with open(os.path.join(args.out, "timing.jsonl"), "a") as fh:
            fh.write(json.dumps({"kind": "timing", "grid": g, "seconds": time.perf_counter() - t0}) + "\n")
        headers, body = trainer.grid_table(rows, modes)
        write_table(args.out, g, headers, body)
        with open(os.path.join(args.out, "metrics.jsonl"), "a") as fh:
            for r in rows:
                for m in modes:
                    for res in r.results[m].values():
                        fh.write(json.dumps({"schema": trainer.METRICS_SCHEMA, "grid": g, "config": r.name,
                                             **res.record()}) + "\n")
        if args.check:
            ok &= _check_grid(g, {r.name: r for r in rows})
    if not ok:
        raise AcceptanceViolation("ablation trend assertions failed")
    return EXIT_OK


def _check_grid(grid, rows) -> bool:
    """Trend assertions for a finished grid; prints one line per check."""
    checks = []
    if grid == "table5":
        nm, full = rows["no-mask"], rows["mask2d+mask4d+recon"]
        w, p = nm.sr("with4d"), nm.sr("pruned")
        checks.append(("no-mask pruned drop >= 50%", w > 0 and (w - p) / w >= 0.5))
        fw, fp = full.sr("with4d"), full.sr("pruned")
        checks.append(("full pruned within 10% of with4d", fw > 0 and abs(fw - fp) / fw <= 0.10))
        order = [rows[n].sr("pruned") for n in ("no-mask", "mask4d-only", "mask4d+recon", "mask2d+mask4d+recon")]
        checks.append(("pruned SR ordering", all(a < b + 0.04 for a, b in zip(order, order[1:]))))
    elif grid == "table6":
        best = max(rows[f"K={k}"].sr("pruned") for k in (3, 4, 5, 6))
        checks.append(("random K >= best fixed K - 0.04", rows["random"].sr("pruned") >= best - 0.04))
    elif grid == "fusion":
        a, b, c = (rows[n].sr("with4d") for n in ("2D-only", "2D&4D", "2D&4D+FT"))
        checks.append(("2D-only < 2D&4D < 2D&4D+FT by 0.03", b - a >= 0.03 and c - b >= 0.03))
    for name, ok in checks:
        print(f"[{'pass' if ok else 'FAIL'}] {grid}: {name}")
    return all(ok for _, ok in checks)


# -- parser ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swiftvla", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate scripted-expert demonstrations")
    p.add_argument("--tasks", default=None, help="comma-separated task ids (default: all)")
    p.add_argument("--episodes-per-task", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run two-stage training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, default=None, help="stop early at this global step")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint in the arena")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mode", choices=trainer.MODES, default="with4d")
    p.add_argument("--episodes", type=int, default=None, help="episodes per task")
    p.add_argument("--tasks", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="svla-runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="latency, memory and parameter counts per inference mode")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mode", choices=("with4d", "pruned", "both"), default="both")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="svla-runs/profile")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward")
    p.add_argument("--module", choices=("all",) + GRAD_MODULES, default="all")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--n-params", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="svla-runs/gradcheck")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and evaluate ablation grids")
    p.add_argument("--grid", required=True, help=f"comma-separated grids from {sorted(trainer.GRIDS)}")
    p.add_argument("--config", default=None, help="base config")
    p.add_argument("--data", default=None, help="dataset file (default: generate)")
    p.add_argument("--episodes-per-task", type=int, default=50)
    p.add_argument("--episodes", type=int, default=None, help="eval episodes per task")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--check", action="store_true", help="assert the expected trends (exit 4 on failure)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, binio.FormatError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFault as err:
        print(f"numerical fault: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except AcceptanceViolation as err:
        print(f"acceptance violation: {err}", file=sys.stderr)
        return EXIT_ACCEPT


if __name__ == "__main__":
    sys.exit(main())
