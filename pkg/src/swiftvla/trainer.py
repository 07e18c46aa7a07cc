"""Two-stage training, checkpoints, evaluation sweeps and inference profiling."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import arena, binio
from . import expert as ex
from .config import CACHE_K_CHOICES, TrainingConfig, config_from_dict
from .fusion import MaskMode
from .geo4d import TemporalCache, process_timestep_batch
from .numerics import (ContractError, LrSchedule, MemoryMeter, NumericalFault, OptimizerState,
                       backward, no_grad, opt_step, zero_grad)
from .policy import Batch, Policy, weights_from

log = logging.getLogger(__name__)

METRICS_SCHEMA = 1
CKPT_MAGIC = b"SVLA"
CKPT_VERSION = 1
MODES = ("with4d", "pruned", "with4d-mask4d", "expert", "random")


# -- data -----------------------------------------------------------------
class DemoSet:
    """Demonstrations flattened to one row per (episode, step)."""

    def __init__(self, demos):
        self.demos = list(demos)
        if not self.demos:
            raise ContractError("training needs at least one demonstration")
        self.lengths = np.array([d.length for d in self.demos])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.images = np.concatenate([d.images for d in self.demos])
        self.states = np.concatenate([d.states for d in self.demos])
        self.chunks = np.concatenate([d.chunks for d in self.demos])
        self.traj = np.concatenate([d.traj for d in self.demos])
        self.instruction = np.repeat([d.instruction for d in self.demos], self.lengths)
        self._f4d = {}

    def __len__(self):
        return len(self.states)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Row indices with every task equally likely, so long episodes do not dominate a batch."""
        tasks = sorted(set(self.instruction.tolist()))
        rows = [np.flatnonzero(self.instruction == t) for t in tasks]
        pick = rng.integers(0, len(tasks), n)
        return np.array([rows[t][rng.integers(0, len(rows[t]))] for t in pick], dtype=np.int64)

    def features_4d(self, k: int, geo, cfg) -> np.ndarray:
        """Frozen 4D features of every row under a cache of ``k`` timesteps.

        All episodes are streamed in lockstep from their first frame, so each
        row sees exactly the history it would see online. Finished episodes
        repeat their last frame; those outputs are discarded.
        """
        key = (k, cfg.geo_seed)
        if key not in self._f4d:
            out = np.empty((len(self), cfg.n_4d, cfg.d_geo))
            cache = TemporalCache(k)
            for t in range(self.lengths.max()):
                rows = self.offsets + np.minimum(t, self.lengths - 1)
                f = process_timestep_batch(arena.to_float(self.images[rows]), cache, geo, cfg)
                live = t < self.lengths
                out[self.offsets[live] + t] = f[live]
            self._f4d[key] = out
        return self._f4d[key]

    def batch(self, idx, f4d=None) -> Batch:
        return Batch(arena.to_float(self.images[idx]), self.states[idx], self.instruction[idx], f4d,
                     self.chunks[idx], self.traj[idx])


# -- stochastic training choices -------------------------------------------
def sample_mask_mode(rng: np.random.Generator, cfg: TrainingConfig, stage: int = 2, size=None):
    """Categorical draw over (none, mask2d, mask4d); never both modalities at once."""
    if stage != 2:
        raise ContractError("mask modes are only sampled in stage 2")
    return rng.choice(3, size=size, p=[cfg.p_none, cfg.p_mask2d, cfg.p_mask4d])


def sample_cache_K(rng: np.random.Generator, cfg: TrainingConfig, stage: int = 2) -> int:
    if stage != 2:
        raise ContractError("cache sizes are only sampled in stage 2")
    if cfg.cache_policy == "fixed":
        return cfg.cache_k
    return int(rng.choice(CACHE_K_CHOICES))


def lr_at(cfg: TrainingConfig, step: int) -> float:
    if step < cfg.stage1_steps:
        sched = LrSchedule(cfg.lr_stage1, cfg.lr_stage1 * cfg.min_lr_ratio, cfg.warmup_steps, cfg.stage1_steps)
        return sched(step)
    sched = LrSchedule(cfg.lr_stage2, cfg.lr_stage2 * cfg.min_lr_ratio, cfg.warmup_steps, cfg.stage2_steps)
    return sched(step - cfg.stage1_steps)


def new_optimizer(cfg: TrainingConfig) -> OptimizerState:
    return OptimizerState(beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay, eps=cfg.adam_eps,
                          base_lr=cfg.lr_stage1)


# -- checkpoints ----------------------------------------------------------
@dataclass
class Checkpoint:
    config: TrainingConfig
    step: int
    policy: Policy
    optimizer: OptimizerState


def save_checkpoint(path, policy: Policy, opt: OptimizerState, cfg: TrainingConfig, step: int) -> None:
    meta = {"format": "swiftvla-checkpoint", "step": step, "geo_seed": cfg.model.geo_seed,
            "config": cfg.to_dict(),
            "optimizer": {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2,
                          "weight_decay": opt.weight_decay, "eps": opt.eps, "base_lr": opt.base_lr}}
    blocks = [(f"param/{k}", p.data) for k, p in sorted(policy.params.items())]
    for k in sorted(opt.m):
        blocks += [(f"adam.m/{k}", opt.m[k]), (f"adam.v/{k}", opt.v[k])]
    tmp = f"{path}.tmp"
    binio.write(tmp, CKPT_MAGIC, CKPT_VERSION, meta, blocks)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Read and fully validate a checkpoint before building any state from it."""
    meta, blocks = binio.read(path, CKPT_MAGIC, CKPT_VERSION)
    cfg = config_from_dict(meta["config"])
    if meta["geo_seed"] != cfg.model.geo_seed:
        raise binio.FormatError("checkpoint geo seed disagrees with its config")
    policy = Policy(cfg.model, seed=cfg.seed)
    stored = {k[len("param/"):]: v for k, v in blocks.items() if k.startswith("param/")}
    if set(stored) != set(policy.params):
        missing = sorted(set(policy.params) ^ set(stored))
        raise binio.FormatError(f"parameter set mismatch: {missing[:5]}")
    for k, arr in stored.items():
        if arr.shape != policy.params[k].shape:
            raise binio.FormatError(f"parameter {k} has shape {arr.shape}, expected {policy.params[k].shape}")
    for k, arr in stored.items():
        policy.params[k].data = arr
    o = meta["optimizer"]
    opt = OptimizerState(beta1=o["beta1"], beta2=o["beta2"], weight_decay=o["weight_decay"], eps=o["eps"],
                         base_lr=o["base_lr"], step=o["step"])
    for k, arr in blocks.items():
        if k.startswith("adam.m/"):
            opt.m[k[7:]] = arr
        elif k.startswith("adam.v/"):
            opt.v[k[7:]] = arr
    return Checkpoint(cfg, int(meta["step"]), policy, opt)


# -- metrics --------------------------------------------------------------
class MetricsStream:
    """Append-only JSON-lines writer with strictly increasing train steps."""

    def __init__(self, path, truncate_from: int | None = None):
        self.path = path
        self.last_step = -1
        kept = []
        if path and os.path.exists(path):
            with open(path) as fh:
                for line in fh:
                    rec = json.loads(line)
                    if truncate_from is not None and rec.get("step", -1) >= truncate_from:
                        break
                    kept.append(line)
                    self.last_step = max(self.last_step, rec.get("step", -1))
            with open(path, "w") as fh:
                fh.writelines(kept)

    def write(self, record: dict):
        record = {"schema": METRICS_SCHEMA, **record}
        if record.get("kind") == "train":
            if record["step"] <= self.last_step:
                raise ContractError(f"metrics step {record['step']} is not after {self.last_step}")
            self.last_step = record["step"]
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        return record


@dataclass
class TrainResult:
    policy: Policy
    optimizer: OptimizerState
    step: int
    records: list = field(default_factory=list)


def _dump_fault(out_dir, step, stage, err, last):
    info = {"step": step, "stage": stage, "op": getattr(err, "op", None), "error": str(err),
            "last_losses": last}
    log.error("non-finite value at step %d (stage %d): %s; last losses %s", step, stage, err, last)
    if out_dir:
        with open(os.path.join(out_dir, "fault.json"), "w") as fh:
            json.dump(info, fh, indent=2)


def train_step(policy: Policy, opt: OptimizerState, data: DemoSet, cfg: TrainingConfig, step: int) -> dict:
    """One optimizer update at global ``step``; returns the metrics record.

    The step's randomness comes from ``default_rng([seed, step])`` alone, so a
    resumed run replays exactly.
    """
    stage = 1 if step < cfg.stage1_steps else 2
    rng = np.random.default_rng([cfg.seed, step])
    idx = data.sample(rng, cfg.batch_size)
    use_4d = cfg.use_4d_input and cfg.model.use_4d
    k = None
    modes = np.zeros(cfg.batch_size, dtype=np.int64)
    if stage == 2:
        k = sample_cache_K(rng, cfg) if use_4d else None
        modes = sample_mask_mode(rng, cfg, size=cfg.batch_size)
    dstep = ex.sample_step(rng, cfg.batch_size * cfg.noise_draws, policy.cfg)
    f4d = data.features_4d(k, policy.geo, policy.cfg)[idx] if k is not None else None
    batch = data.batch(idx, f4d)
    terms = policy.losses(batch, dstep, weights_from(cfg), modes, use_fusion=cfg.use_fusion and stage == 2,
                          stage=stage)
    backward(terms.total)
    lr = lr_at(cfg, step)
    opt_step(opt, policy.params, lr)
    zero_grad(policy.params)
    hist = np.bincount(modes, minlength=3)
    return {"kind": "train", "step": step, "stage": stage, "lr": lr, "losses": terms.values(),
            "mask_hist": {m.name.lower(): int(hist[m]) for m in MaskMode}, "cache_k": k}


def train(cfg: TrainingConfig, data: DemoSet, out_dir=None, resume=None, stop_at: int | None = None) -> TrainResult:
    """Run (or continue) the two-stage schedule.

    ``resume`` is a :class:`Checkpoint` or a path to one; training continues
    from its step with ``cfg``. ``stop_at`` ends the run early at that global
    step (a checkpoint is written there when ``out_dir`` is set).
    """
    cfg.validate()
    if isinstance(resume, (str, os.PathLike)):
        resume = load_checkpoint(resume)
    if resume is not None:
        policy, opt, start = resume.policy, resume.optimizer, resume.step
    else:
        policy, opt, start = Policy(cfg.model, seed=cfg.seed), new_optimizer(cfg), 0
    total = cfg.stage1_steps + cfg.stage2_steps
    end = total if stop_at is None else min(stop_at, total)
    metrics = timing = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics = os.path.join(out_dir, "metrics.jsonl")
        timing = os.path.join(out_dir, "timing.jsonl")
    stream = MetricsStream(metrics, truncate_from=start)
    clock = MetricsStream(timing, truncate_from=start)
    result = TrainResult(policy, opt, start)
    last = None
    for step in range(start, end):
        t0 = time.perf_counter()
        try:
            rec = train_step(policy, opt, data, cfg, step)
        except NumericalFault as err:
            _dump_fault(out_dir, step, 1 if step < cfg.stage1_steps else 2, err, last)
            raise
        last = rec["losses"]
        result.records.append(stream.write(rec))
        clock.write({"kind": "timing", "step": step, "seconds": time.perf_counter() - t0})
        result.step = step + 1
        if out_dir and (cfg.checkpoint_every and result.step % cfg.checkpoint_every == 0
                        or result.step == cfg.stage1_steps):
            name = "stage1.svla" if result.step == cfg.stage1_steps else f"ckpt_{result.step:06d}.svla"
            save_checkpoint(os.path.join(out_dir, name), policy, opt, cfg, result.step)
    if out_dir:
        name = "final.svla" if result.step == total else f"ckpt_{result.step:06d}.svla"
        save_checkpoint(os.path.join(out_dir, name), policy, opt, cfg, result.step)
    return result


def stage1_key(cfg: TrainingConfig) -> str:
    """Hash of every setting that influences stage 1, for sharing it across configs."""
    keep = {k: v for k, v in cfg.to_dict().items()
            if k in ("stage1_steps", "batch_size", "seed", "lambda_action", "lr_stage1", "min_lr_ratio",
                     "warmup_steps", "beta1", "beta2", "weight_decay", "adam_eps", "model")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:12]


# -- evaluation -----------------------------------------------------------
@dataclass
class EvalResult:
    task: str
    mode: str
    successes: np.ndarray  # (n,) bool
    lengths: np.ndarray  # (n,) steps to success, or the cap
    scores: np.ndarray  # (n,) partial scores at episode end
    actions: np.ndarray | None = None  # (n, T, 4) executed actions

    @property
    def success_rate(self) -> float:
        return float(self.successes.mean())

    @property
    def mean_length(self) -> float:
        return float(self.lengths.mean())

    def record(self) -> dict:
        return {"kind": "eval", "task": self.task, "mode": self.mode, "episodes": len(self.successes),
                "success_rate": self.success_rate, "mean_length": self.mean_length,
                "mean_score": float(self.scores.mean())}


def evaluate_task(policy: Policy | None, task: str, n_episodes: int, mode: str = "with4d", seed: int = 10_000,
                  cap: int = arena.EPISODE_CAP, exec_horizon: int = 4, cache_k: int = 6, use_fusion: bool = True,
                  use_4d_input: bool = True, keep_actions: bool = False) -> EvalResult:
    """Roll out ``n_episodes`` of ``task`` in lockstep.

    Episode ``i`` starts from ``reset(task, seed + i)``. The policy is queried
    every ``exec_horizon`` steps; its sampler noise for each decision comes
    from ``default_rng([seed, task index, decision])`` so that every mode sees
    the same noise.
    """
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    if mode not in MODES:
        raise ContractError(f"unknown eval mode {mode!r}; expected one of {MODES}")
    if policy is None and mode not in ("expert", "random"):
        raise ContractError(f"mode {mode!r} needs a policy")
    ti = arena.TASKS.index(task)
    states = [arena.reset(task, seed + i) for i in range(n_episodes)]
    done = np.zeros(n_episodes, dtype=bool)
    lengths = np.full(n_episodes, cap)
    feed_4d = mode in ("with4d", "with4d-mask4d") and use_4d_input and policy is not None and policy.geo is not None
    cache = TemporalCache(cache_k) if feed_4d else None
    mask = MaskMode.MASK4D if mode == "with4d-mask4d" else MaskMode.NONE
    taken = np.zeros((n_episodes, cap, 4))
    chunk = None
    for t in range(cap):
        if mode == "expert":
            act = np.stack([arena.expert_action(s) for s in states])
        elif mode == "random":
            act = np.random.default_rng([seed, ti, t]).uniform(-1.0, 1.0, (n_episodes, 4))
        else:
            images = arena.to_float(np.stack([arena.render_u8(s) for s in states]))
            f4d = process_timestep_batch(images, cache, policy.geo, policy.cfg) if feed_4d else None
            if t % exec_horizon == 0:
                noise = np.random.default_rng([seed, ti, t // exec_horizon]).standard_normal(
                    (n_episodes, policy.cfg.chunk, policy.cfg.action_dim))
                batch = Batch(images, np.stack([s.proprio() for s in states]), np.full(n_episodes, ti), f4d)
                chunk = policy.act(batch, "pruned" if mode == "pruned" else "with4d", mask, use_fusion, noise=noise)
            act = chunk[:, t % exec_horizon]
        for i in np.flatnonzero(~done):
            states[i] = arena.step(states[i], act[i])
            taken[i, t] = act[i]
            if arena.check_success(states[i], task)[0]:
                done[i] = True
                lengths[i] = t + 1
        if done.all():
            break
    scores = np.array([arena.check_success(s, task)[1] for s in states])
    return EvalResult(task, mode, done, lengths, scores, taken if keep_actions else None)


def evaluate(policy: Policy | None, n_episodes: int, mode: str = "with4d", tasks=arena.TASKS, **kw) -> dict:
    """Per-task :class:`EvalResult` (tasks run one after another, episodes in index order)."""
    return {task: evaluate_task(policy, task, n_episodes, mode, **kw) for task in tasks}


def eval_kwargs(cfg: TrainingConfig) -> dict:
    return {"cap": cfg.episode_cap, "exec_horizon": cfg.exec_horizon, "cache_k": cfg.cache_k,
            "use_fusion": cfg.use_fusion, "use_4d_input": cfg.use_4d_input}


def overall(results: dict) -> tuple[float, float]:
    succ = np.concatenate([r.successes for r in results.values()])
    lens = np.concatenate([r.lengths for r in results.values()])
    return float(succ.mean()), float(lens.mean())


# -- profiling ------------------------------------------------------------
def profile(policy: Policy, mode: str, warmup: int = 2, iters: int = 10, cache_k: int = 6, seed: int = 0) -> dict:
    """Per-decision latency and tracked memory of the policy forward path.

    A decision in ``with4d`` mode includes one geo4d timestep against a full
    cache of ``cache_k`` timesteps; rendering is excluded.
    """
    if mode not in ("with4d", "pruned"):
        raise ContractError(f"profile mode must be with4d or pruned, got {mode!r}")
    if iters < 1 or warmup < 0:
        raise ContractError("iters must be >= 1 and warmup >= 0")
    cfg = policy.cfg
    state = arena.reset(arena.TASKS[0], seed)
    images = arena.to_float(arena.render_u8(state))[None]
    proprio = state.proprio()[None]
    noise = np.random.default_rng(seed).standard_normal((1, cfg.chunk, cfg.action_dim))
    cache = TemporalCache(cache_k)
    if mode == "with4d":
        for _ in range(cache_k):
            process_timestep_batch(images, cache, policy.geo, cfg)

    def decide():
        f4d = process_timestep_batch(images, cache, policy.geo, cfg) if mode == "with4d" else None
        return policy.act(Batch(images, proprio, np.zeros(1, dtype=int), f4d), mode, noise=noise)

    for _ in range(warmup):
        decide()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        decide()
        times.append(time.perf_counter() - t0)
    with MemoryMeter() as meter:
        for p in policy.inference_params(mode).values():
            meter.track(p.data)
        if mode == "with4d":
            for p in policy.geo.values():
                meter.track(p.data)
            for e in cache.entries:
                meter.track(e.block)
        decide()
    return {"mode": mode, "median_latency_s": float(np.median(times)), "peak_bytes": int(meter.peak),
            "parameters": policy.parameter_count(mode), "iters": iters}


# -- ablation grids ---------------------------------------------------------
TABLE5_GRID = {
    "no-mask": {"p_none": 1.0, "p_mask2d": 0.0, "p_mask4d": 0.0, "lambda_2d": 0.0, "lambda_4d": 0.0},
    "mask4d-only": {"p_none": 0.75, "p_mask2d": 0.0, "p_mask4d": 0.25, "lambda_2d": 0.0, "lambda_4d": 0.0},
    "mask4d+recon": {"p_none": 0.75, "p_mask2d": 0.0, "p_mask4d": 0.25},
    "mask2d+mask4d+recon": {},
}
TABLE6_GRID = {**{f"K={k}": {"cache_policy": "fixed", "cache_k": k} for k in CACHE_K_CHOICES}, "random": {}}
FUSION_GRID = {
    "2D-only": {"use_4d_input": False, "use_fusion": False, "p_none": 1.0, "p_mask2d": 0.0, "p_mask4d": 0.0},
    "2D&4D": {"use_fusion": False},
    "2D&4D+FT": {},
}
GRIDS = {"table5": TABLE5_GRID, "table6": TABLE6_GRID, "fusion": FUSION_GRID}


def with_overrides(cfg: TrainingConfig, overrides: dict) -> TrainingConfig:
    return config_from_dict({**cfg.to_dict(), **overrides})


@dataclass
class AblationRow:
    name: str
    config: TrainingConfig
    results: dict  # mode -> {task: EvalResult}

    def sr(self, mode: str) -> float:
        return overall(self.results[mode])[0]


def run_grid(base: TrainingConfig, grid: dict, data: DemoSet, modes=("with4d", "pruned"), n_episodes=None,
             out_dir=None, eval_seed: int = 10_000, stage1_cache: dict | None = None,
             trained: dict | None = None) -> list[AblationRow]:
    """Train every config of ``grid`` (stage 1 shared when identical) and evaluate it.

    ``trained`` maps a config fingerprint to an already trained policy so that
    overlapping grids (the full config appears in several) train it once.
    """
    if not grid:
        raise ContractError("ablation grid is empty")
    stage1_cache = {} if stage1_cache is None else stage1_cache
    trained = {} if trained is None else trained
    n_episodes = base.eval_episodes if n_episodes is None else n_episodes
    rows = []
    for name, overrides in grid.items():
        cfg = with_overrides(base, overrides)
        fp = json.dumps(cfg.to_dict(), sort_keys=True)
        sub = os.path.join(out_dir, _slug(name)) if out_dir else None
        if fp not in trained:
            key = stage1_key(cfg)
            if key not in stage1_cache:
                log.info("stage 1 for %s", name)
                r = train(cfg, data, out_dir=sub, stop_at=cfg.stage1_steps)
                stage1_cache[key] = _snapshot(r, cfg)
            log.info("stage 2 for %s", name)
            trained[fp] = train(cfg, data, out_dir=sub, resume=_restore(stage1_cache[key], cfg)).policy
        policy = trained[fp]
        results = {m: evaluate(policy, n_episodes, m, seed=eval_seed, **eval_kwargs(cfg)) for m in modes}
        rows.append(AblationRow(name, cfg, results))
        log.info("%s: %s", name, {m: round(overall(r)[0], 3) for m, r in results.items()})
    return rows


def _snapshot(r: TrainResult, cfg):
    params = {k: p.data.copy() for k, p in r.policy.params.items()}
    opt = dataclasses.replace(r.optimizer, m={k: v.copy() for k, v in r.optimizer.m.items()},
                              v={k: v.copy() for k, v in r.optimizer.v.items()})
    return params, opt, r.step


def _restore(snap, cfg) -> Checkpoint:
    params, opt, step = snap
    policy = Policy(cfg.model, seed=cfg.seed)
    for k, arr in params.items():
        policy.params[k].data = arr.copy()
    opt = dataclasses.replace(opt, m={k: v.copy() for k, v in opt.m.items()},
                              v={k: v.copy() for k, v in opt.v.items()})
    return Checkpoint(cfg, step, policy, opt)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name)


def format_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[f"{c:.3f}" if isinstance(c, float) else str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def grid_table(rows: list[AblationRow], modes=("with4d", "pruned")):
    headers = ["config"] + [f"{t}/{m}" for m in modes for t in arena.TASKS] + [f"SR/{m}" for m in modes]
    body = []
    for r in rows:
        body.append([r.name] + [r.results[m][t].success_rate for m in modes for t in arena.TASKS]
                    + [r.sr(m) for m in modes])
    return headers, body


def held_out_traj_error(policy: Policy, data: DemoSet, cfg: TrainingConfig, k: int | None = None, batch: int = 256):
    """(mean L_traj, mean planar waypoint error) of the trajectory head over ``data``."""
    from .fusion import traj_head, traj_loss
    k = cfg.cache_k if k is None else k
    use_4d = cfg.use_4d_input and policy.geo is not None
    f4d_all = data.features_4d(k, policy.geo, policy.cfg) if use_4d else None
    losses, errs, n = 0.0, 0.0, 0
    with no_grad():
        for s in range(0, len(data), batch):
            idx = np.arange(s, min(s + batch, len(data)))
            b = data.batch(idx, f4d_all[idx] if use_4d else None)
            cond, _ = policy.condition(b, MaskMode.NONE, cfg.use_fusion)
            pred = traj_head(cond.z_f, policy.params, policy.cfg)
            losses += traj_loss(pred, b.traj).item() * len(idx)
            errs += np.linalg.norm(pred.data - b.traj, axis=-1).mean(axis=1).sum()
            n += len(idx)
    return losses / n, errs / n


__all__ = ["DemoSet", "sample_mask_mode", "sample_cache_K", "lr_at", "Checkpoint", "save_checkpoint",
           "load_checkpoint", "MetricsStream", "train_step", "train", "evaluate", "evaluate_task", "profile",
           "run_grid", "GRIDS"]
