"""Walk the scripted expert through one episode of every task and show the front camera as text."""
import numpy as np

from swiftvla import arena

GLYPHS = {arena.BACKGROUND: ".", arena.GRIPPER_OPEN: "o", arena.GRIPPER_CLOSED: "x"}
GLYPHS.update({c: "RGBd"[i] for i, c in arena.COLORS.items()})
GLYPHS.update({c: "mcb"[i] for i, c in arena.ZONE_COLORS.items()})


def ascii_view(img: np.ndarray) -> str:
    return "\n".join("".join(GLYPHS.get(tuple(int(v) for v in px), "?") for px in row) for row in img)


for task in arena.TASKS:
    s = arena.reset(task, seed=3)
    print(f"== {task}: start (front camera; R/G/B blocks, d distractor, m/c/b zones, o gripper)")
    print(ascii_view(arena.render_u8(s)[2]))
    for t in range(arena.EPISODE_CAP):
        if arena.check_success(s)[0]:
            break
        s = arena.step(s, arena.expert_action(s))
    ok, score = arena.check_success(s)
    print(f"-> solved={ok} score={score} after {t} steps\n")
    print(ascii_view(arena.render_u8(s)[2]), "\n")
