"""Pruned inference drops the 4D branch yet acts exactly like the full model with 4D masked out."""
import numpy as np

from swiftvla import ModelConfig, MaskMode, Policy, arena
from swiftvla import trainer as tr

pol = Policy(ModelConfig(), seed=0)
s = arena.reset("stack-two", seed=1)
views = arena.to_float(arena.render_u8(s))[None]
batch = tr.Batch(views, s.proprio()[None], np.array([arena.TASKS.index("stack-two")]),
                 np.random.default_rng(0).normal(size=(1, pol.cfg.n_4d, pol.cfg.d_geo)))
noise = np.random.default_rng(1).standard_normal((1, pol.cfg.chunk, pol.cfg.action_dim))
full = pol.act(batch, "with4d", MaskMode.MASK4D, noise=noise)
pruned = pol.act(tr.Batch(batch.images, batch.state, batch.instruction, None), "pruned", noise=noise)
print("first action, with 4D masked:", np.round(full[0, 0], 4))
print("first action, pruned model:  ", np.round(pruned[0, 0], 4))
print("bit-identical:", full.tobytes() == pruned.tobytes())

for mode in ("with4d", "pruned"):
    r = tr.profile(pol, mode, warmup=1, iters=5)
    print(f"{mode:7s} params {r['parameters']:7d}  median latency {r['median_latency_s'] * 1e3:6.1f} ms  "
          f"peak memory {r['peak_bytes'] / 2**20:5.1f} MiB")
