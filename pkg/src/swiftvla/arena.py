"""Kinematic tabletop arena with three orthographic cameras and a scripted expert.

The workspace is the unit cube with the table at z = 0. Three tasks of
increasing horizon are available:

* ``move-to-zone``: carry one block into a marked zone while a grey
  distractor drifts across the table.
* ``stack-two``: stack two blocks onto a base block.
* ``sort-three``: carry three blocks into their colour-matched zones.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import VIEWS
from .numerics import ContractError

log = logging.getLogger(__name__)

IMAGE = 32
MAX_STEP = 0.05
GRASP_RADIUS = 0.03
ZONE_TOL = 0.04
CLEARANCE = 0.02  # gripper height above a block's top when grasping
HOME = (0.5, 0.5, 0.1)  # grasp height over a table block, so flat tasks need no vertical motion
BLOCK_HALF = (0.05, 0.05, 0.04)
ZONE_HALF = 0.06
DRIFT_SPEED = 0.004
EPISODE_CAP = 120

TASKS = ("move-to-zone", "stack-two", "sort-three")

# u8 palette; pixels are palette / 255
BACKGROUND = (225, 225, 225)
COLORS = {0: (220, 40, 40), 1: (40, 170, 60), 2: (50, 80, 220), 3: (110, 110, 110)}
ZONE_COLORS = {0: (230, 0, 230), 1: (0, 200, 210), 2: (140, 80, 20)}  # hues distinct from every block
ZONE_MARK = 0.04  # drawn half-height of a zone mat, so it shows up in the side-on cameras
GRIPPER_OPEN = (250, 200, 0)
GRIPPER_CLOSED = (20, 20, 20)


@dataclass
class Task:
    name: str
    instruction: int
    max_steps: int = EPISODE_CAP

    @classmethod
    def get(cls, name):
        if name not in TASKS:
            raise ContractError(f"unknown task {name!r}; expected one of {TASKS}")
        return cls(name, TASKS.index(name))


@dataclass
class Obj:
    pos: np.ndarray
    half: np.ndarray
    color: int
    graspable: bool = True
    velocity: np.ndarray | None = None

    @property
    def top(self):
        return self.pos[2] + self.half[2]


@dataclass
class Zone:
    pos: np.ndarray  # xy centre
    half: float
    color: int


@dataclass
class WorldState:
    task: str
    gripper: np.ndarray
    open_fraction: float
    objects: list
    zones: list
    attached: int | None = None
    attach_offset: np.ndarray | None = None
    grasped: set = field(default_factory=set)
    step_count: int = 0

    def copy(self):
        return copy.deepcopy(self)

    def proprio(self) -> np.ndarray:
        return np.array([*self.gripper, self.open_fraction])


# -- layout ---------------------------------------------------------------
# a coarse 3x3 grid without jitter keeps 50 demonstrations per task representative of the layout space
_CELLS = [(0.2 + 0.3 * i, 0.2 + 0.3 * j) for i in range(3) for j in range(3)]
JITTER = 0.0


def reset(task: str, seed: int) -> WorldState:
    """Random non-overlapping layout, one workspace cell per item; deterministic per (task, seed)."""
    Task.get(task)
    rng = np.random.default_rng([TASKS.index(task), seed])
    n_obj, n_zone, drift = {"move-to-zone": (1, 1, True), "stack-two": (3, 0, False),
                            "sort-three": (3, 3, False)}[task]
    cells = rng.permutation(len(_CELLS))[: n_obj + n_zone + int(drift)]
    jitter = rng.uniform(-JITTER, JITTER, size=(len(cells), 2))
    centres = [np.array(_CELLS[c]) + jitter[i] for i, c in enumerate(cells)]
    half = np.array(BLOCK_HALF)
    objects = [Obj(np.array([*centres[i], half[2]]), half.copy(), i) for i in range(n_obj)]
    zones = [Zone(centres[n_obj + i], ZONE_HALF, i) for i in range(n_zone)]
    if drift:
        dhalf = np.array([0.03, 0.03, 0.03])
        angle = rng.uniform(0, 2 * np.pi)
        vel = DRIFT_SPEED * np.array([np.cos(angle), np.sin(angle), 0.0])
        objects.append(Obj(np.array([*centres[-1], dhalf[2]]), dhalf, 3, graspable=False, velocity=vel))
    return WorldState(task, np.array(HOME, dtype=float), 1.0, objects, zones)


# -- dynamics -------------------------------------------------------------
def aabb_distance(point, obj: Obj) -> float:
    d = np.maximum(np.abs(point - obj.pos) - obj.half, 0.0)
    return float(np.sqrt(d @ d))


def support_height(state: WorldState, idx: int) -> float:
    """Top of the highest block under the centre of object ``idx`` (0 for the table).

    The drifting distractor never supports anything.
    """
    o = state.objects[idx]
    h = 0.0
    for j, other in enumerate(state.objects):
        if j == idx or j == state.attached or not other.graspable:
            continue
        if np.all(np.abs(o.pos[:2] - other.pos[:2]) <= other.half[:2]) and other.top <= o.pos[2] - o.half[2] + 1e-9:
            h = max(h, other.top)
    return h


def step(state: WorldState, action) -> WorldState:
    """Apply one action row (dx, dy, dz, gripper) in [-1, 1]^4 and return the new state."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    s = state.copy()
    s.step_count += 1
    lo = np.zeros(3)
    if s.attached is not None:
        lo = np.maximum(lo, s.objects[s.attached].half - s.attach_offset)
    s.gripper = np.clip(s.gripper + MAX_STEP * a[:3], lo, 1.0)
    if s.attached is not None:
        s.objects[s.attached].pos = s.gripper + s.attach_offset
    for o in s.objects:
        if o.velocity is not None:
            nxt = o.pos + o.velocity
            for ax in (0, 1):
                if not 0.1 <= nxt[ax] <= 0.9:
                    o.velocity[ax] = -o.velocity[ax]
            o.pos = o.pos + o.velocity
    cmd = a[3]
    if cmd > 0.5 and s.open_fraction > 0.5:
        s.open_fraction = 0.0
        best, best_d = None, GRASP_RADIUS
        for i, o in enumerate(s.objects):
            d = aabb_distance(s.gripper, o)
            if o.graspable and d <= best_d:
                best, best_d = i, d
        if best is not None:
            s.attached = best
            s.attach_offset = s.objects[best].pos - s.gripper
            s.grasped.add(best)
    elif cmd < -0.5 and s.open_fraction < 0.5:
        s.open_fraction = 1.0
        if s.attached is not None:
            i = s.attached
            s.attached, s.attach_offset = None, None
            s.objects[i].pos[2] = support_height(s, i) + s.objects[i].half[2]
    return s


# -- rendering ------------------------------------------------------------
ELEVATION = np.radians(30.0)  # every camera looks slightly down, so depth shows as image height
_CE, _SE = np.cos(ELEVATION), np.sin(ELEVATION)


def _project(view: str, p):
    """(horizontal, vertical, depth) for a point; larger depth is farther from the camera.

    Orthographic cameras tilted down by ``ELEVATION``: a point farther from
    the camera appears higher, so blocks in one grid column stay apart.
    """
    x, y, z = p
    if view == "left":
        u, d = y, 1.0 - x
    elif view == "right":
        u, d = 1.0 - y, x
    else:
        u, d = x, y
    return u, (z * _CE + d * _SE) / (_CE + _SE), d * _CE - z * _SE


def _extent(view, half):
    hx, hy, hz = half
    hu, hd = (hy, hx) if view in ("left", "right") else (hx, hy)
    return hu, (hz * _CE + hd * _SE) / (_CE + _SE)


def pixel_of(u: float, v: float) -> tuple[int, int]:
    """(row, col) of a point at horizontal ``u`` and height ``v``."""
    col = int(np.clip(np.floor(u * IMAGE), 0, IMAGE - 1))
    row = int(np.clip(np.floor((1.0 - v) * IMAGE), 0, IMAGE - 1))
    return row, col


def _fill(img, u, v, hu, hv, color):
    c0 = int(np.clip(np.floor((u - hu) * IMAGE), 0, IMAGE))
    c1 = int(np.clip(np.ceil((u + hu) * IMAGE), 0, IMAGE))
    r0 = int(np.clip(np.floor((1.0 - v - hv) * IMAGE), 0, IMAGE))
    r1 = int(np.clip(np.ceil((1.0 - v + hv) * IMAGE), 0, IMAGE))
    img[r0:r1, c0:c1] = color


def render_u8(state: WorldState) -> np.ndarray:
    """(3, 32, 32, 3) uint8 images in view order [left, right, front]."""
    out = np.empty((len(VIEWS), IMAGE, IMAGE, 3), dtype=np.uint8)
    for k, view in enumerate(VIEWS):
        img = out[k]
        img[:] = BACKGROUND
        items = []
        for z in state.zones:
            p = np.array([z.pos[0], z.pos[1], ZONE_MARK])
            items.append((p, np.array([z.half, z.half, ZONE_MARK]), ZONE_COLORS[z.color]))
        for o in state.objects:
            items.append((o.pos, o.half, COLORS[o.color]))
        items.sort(key=lambda it: -_project(view, it[0])[2])
        for p, half, color in items:
            u, v, _ = _project(view, p)
            hu, hv = _extent(view, half)
            _fill(img, u, v, hu, hv, color)
        u, v, _ = _project(view, state.gripper)
        r, c = pixel_of(u, v)
        img[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = GRIPPER_OPEN if state.open_fraction > 0.5 else GRIPPER_CLOSED
    return out


def to_float(images_u8: np.ndarray) -> np.ndarray:
    return images_u8.astype(np.float64) / 255.0


def render_views(state: WorldState):
    from .percept2d import ViewImage
    imgs = to_float(render_u8(state))
    return [ViewImage(v, imgs[k]) for k, v in enumerate(VIEWS)]


def project_front(p) -> np.ndarray:
    u, v, _ = _project("front", p)
    return np.array([u, v])


# -- success --------------------------------------------------------------
def _resting(state, i):
    o = state.objects[i]
    return state.attached != i and abs(o.pos[2] - o.half[2] - support_height(state, i)) < 1e-9


def in_zone(state: WorldState, i: int, zone: Zone) -> bool:
    o = state.objects[i]
    return (_resting(state, i) and o.pos[2] - o.half[2] < 1e-9
            and bool(np.all(np.abs(o.pos[:2] - zone.pos) <= zone.half + ZONE_TOL)))


def stacked_on(state: WorldState, top: int, bottom: int) -> bool:
    a, b = state.objects[top], state.objects[bottom]
    return (_resting(state, top) and state.attached != bottom
            and bool(np.all(np.abs(a.pos[:2] - b.pos[:2]) <= b.half[:2]))
            and abs(a.pos[2] - a.half[2] - b.top) < 1e-9)


def _stack_order():
    # base, first, second
    return 0, 1, 2


def check_success(state: WorldState, task: str | None = None) -> tuple[bool, float]:
    """(success, score). Stack-two scores 0.5 once a block has been grasped."""
    task = task or state.task
    if task == "move-to-zone":
        ok = in_zone(state, 0, state.zones[0])
        return ok, float(ok)
    if task == "stack-two":
        base, first, second = _stack_order()
        ok = stacked_on(state, first, base) and stacked_on(state, second, first)
        if ok:
            return True, 1.0
        return False, 0.5 if state.grasped & {first, second} else 0.0
    if task == "sort-three":
        ok = all(in_zone(state, i, state.zones[i]) for i in range(3))
        return ok, float(ok)
    raise ContractError(f"unknown task {task!r}")


# -- scripted expert ------------------------------------------------------
def _plan(state: WorldState):
    """Next (object index, destination xy, gripper z at release), or None when solved.

    Blocks are released from just above their support and drop onto it.
    """
    if state.task == "move-to-zone":
        if not in_zone(state, 0, state.zones[0]):
            return 0, state.zones[0].pos, 2 * state.objects[0].half[2] + CLEARANCE
        return None
    if state.task == "sort-three":
        for i in range(3):
            if not in_zone(state, i, state.zones[i]):
                return i, state.zones[i].pos, 2 * state.objects[i].half[2] + CLEARANCE
        return None
    base, first, second = _stack_order()
    for top, bottom in ((first, base), (second, first)):
        if not stacked_on(state, top, bottom):
            b = state.objects[bottom]
            return top, b.pos[:2].copy(), b.top + 2 * state.objects[top].half[2] + CLEARANCE
    return None


def _toward(pos, target):
    return np.clip((np.asarray(target) - pos) / MAX_STEP, -1.0, 1.0)


def expert_action(state: WorldState) -> np.ndarray:
    """Stateless waypoint controller: go straight to the next unsolved block, grasp it, carry it to its goal."""
    plan = _plan(state)
    g = state.gripper
    if plan is None:
        return np.array([0.0, 0.0, 0.0, -1.0 if state.open_fraction > 0.5 else 1.0])
    idx, dest, release_z = plan
    eps = 1e-9
    if state.attached is None:
        if state.open_fraction < 0.5:
            return np.array([0.0, 0.0, 0.0, -1.0])
        o = state.objects[idx]
        grasp = np.array([o.pos[0], o.pos[1], o.top + CLEARANCE])
        if np.max(np.abs(g - grasp)) > eps:
            return np.array([*_toward(g, grasp), -1.0])
        return np.array([0.0, 0.0, 0.0, 1.0])
    if state.attached != idx:
        return np.array([0.0, 0.0, 0.0, -1.0])
    target = np.array([dest[0], dest[1], release_z])
    if np.max(np.abs(g - target)) > eps:
        return np.array([*_toward(g, target), 1.0])
    return np.array([0.0, 0.0, 0.0, -1.0])


@dataclass
class Demonstration:
    task: str
    seed: int
    instruction: int
    images: np.ndarray  # (T, 3, 32, 32, 3) uint8
    states: np.ndarray  # (T, 4)
    actions: np.ndarray  # (T, 4) executed
    chunks: np.ndarray  # (T, H_a, 4)
    traj: np.ndarray  # (T, H_traj, 2)

    @property
    def length(self):
        return len(self.actions)


def _rollout_expert(task, seed, cap):
    s = reset(task, seed)
    images, states, actions, grippers = [], [], [], [s.gripper.copy()]
    for _ in range(cap):
        if check_success(s)[0]:
            break
        images.append(render_u8(s))
        states.append(s.proprio())
        a = expert_action(s)
        actions.append(a)
        s = step(s, a)
        grippers.append(s.gripper.copy())
    return s, images, states, actions, grippers


def scripted_expert(task: str, seed: int, chunk: int = 8, traj_horizon: int = 8,
                    cap: int = EPISODE_CAP, max_retries: int = 10) -> Demonstration:
    """Roll out the expert; on failure retry with the next seed (logged)."""
    Task.get(task)
    for attempt in range(max_retries):
        s, images, states, actions, grippers = _rollout_expert(task, seed, cap)
        if check_success(s)[0]:
            break
        log.warning("expert failed on %s seed %d, regenerating with seed %d", task, seed, seed + 1)
        seed += 1
    else:
        raise RuntimeError(f"expert could not solve {task} after {max_retries} seeds")
    T = len(actions)
    actions = np.array(actions)
    hold = np.zeros(4)
    hold[3] = actions[-1, 3]
    padded = np.concatenate([actions, np.repeat(hold[None], chunk, axis=0)])
    chunks = np.stack([padded[t:t + chunk] for t in range(T)])
    front = np.array([project_front(g) for g in grippers])
    fpad = np.concatenate([front, np.repeat(front[-1:], traj_horizon, axis=0)])
    traj = np.stack([fpad[t + 1:t + 1 + traj_horizon] for t in range(T)])
    return Demonstration(task, seed, TASKS.index(task), np.stack(images), np.array(states),
                         actions, chunks, traj)


# -- dataset files --------------------------------------------------------
DATASET_MAGIC = b"SVLD"
DATASET_VERSION = 1
_DEMO_FIELDS = ("images", "states", "actions", "chunks", "traj")


def generate_demos(tasks=TASKS, n_per_task: int = 50, seed: int = 0, chunk: int = 8,
                   traj_horizon: int = 8) -> list[Demonstration]:
    """``n_per_task`` expert demonstrations per task with seeds ``seed, seed+1, ...``."""
    return [scripted_expert(t, seed + i, chunk, traj_horizon) for t in tasks for i in range(n_per_task)]


def export_dataset(demos, path) -> None:
    from . import binio
    meta = {"format": "swiftvla-dataset",
            "episodes": [{"task": d.task, "seed": d.seed, "instruction": d.instruction, "length": d.length}
                         for d in demos]}
    blocks = [(f"ep{i}/{f}", getattr(d, f)) for i, d in enumerate(demos) for f in _DEMO_FIELDS]
    binio.write(path, DATASET_MAGIC, DATASET_VERSION, meta, blocks, typed=True)


def import_dataset(path) -> list[Demonstration]:
    from . import binio
    meta, blocks = binio.read(path, DATASET_MAGIC, DATASET_VERSION, typed=True)
    return [Demonstration(ep["task"], ep["seed"], ep["instruction"],
                          *(blocks[f"ep{i}/{f}"] for f in _DEMO_FIELDS))
            for i, ep in enumerate(meta["episodes"])]
