"""A minutes-long end-to-end run through the CLI: data, two-stage training, eval in both modes."""
import json
import sys
import tempfile
from pathlib import Path

import yaml

from swiftvla import cli

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="svla-demo-"))
out.mkdir(parents=True, exist_ok=True)
cfg = out / "tiny.yaml"
cfg.write_text(yaml.safe_dump({"stage1_steps": 40, "stage2_steps": 40, "warmup_steps": 10, "batch_size": 8,
                               "episode_cap": 40}))
cli.main(["gen-data", "--episodes-per-task", "3", "--seed", "0", "--out", str(out / "demos.svld")])
cli.main(["train", "--config", str(cfg), "--data", str(out / "demos.svld"), "--out", str(out / "run")])
recs = [json.loads(line) for line in open(out / "run" / "metrics.jsonl")]
for r in recs[::10]:
    print(f"step {r['step']:3d} stage {r['stage']} " + " ".join(f"{k} {v:.4f}" for k, v in r["losses"].items()))
for mode in ("with4d", "pruned"):
    cli.main(["eval", "--ckpt", str(out / "run" / "final.svla"), "--mode", mode, "--episodes", "2",
              "--out", str(out / mode)])
    print(mode, "\n" + (out / mode / "eval.txt").read_text())
print("artifacts in", out)
