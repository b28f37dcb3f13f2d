"""Grid world, 2.5D raycasting camera and motion model.

The world is an N x N grid of 1 m cells.  A cell either is free (height 0) or
holds an obstacle of some height up to ``H_MAX``; obstacle faces are painted
with ``N_BANDS`` horizontal colour bands.  A camera at height ``h`` sees a cell
only if the obstacle reaches ``h``, and records the colour of the band at ``h``.
So both camera height and horizontal field of view change what is observed.

Coordinates: ``x`` indexes the first grid axis, ``y`` the second; heading 0
points along +x and grows counter-clockwise (TurnLeft adds 15 degrees).
"""

from __future__ import annotations

import enum
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix, vstack
from scipy.sparse.csgraph import breadth_first_order

H_MAX = 2.0
N_BANDS = 8
D_MAX = 10.0
WIDTH = 64
STEP_SIZE = 0.25
LATTICE_DIVS = 16
TURN_DEG = 15.0
N_HEADINGS = int(round(360 / TURN_DEG))
MIN_DEPTH = 1e-6
WORLD_FORMAT_VERSION = 1
BACKGROUND = (0.0, 0.0, 0.0)


class Action(enum.IntEnum):
    """Low-level actions, numbered in the order of the navigator's logits."""

    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


# oracle tie-break preference
ACTION_PREFERENCE = (Action.STOP, Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


class InvalidStateError(ValueError):
    pass


class UnreachableGoalError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraConfig:
    height: float = 1.5
    hfov: float = 90.0
    width: int = WIDTH
    d_max: float = D_MAX

    def __post_init__(self):
        if not 0.0 < self.height < H_MAX:
            raise ValueError(f"camera height must lie in (0, {H_MAX}), got {self.height}")
        if not 0.0 < self.hfov < 180.0:
            raise ValueError(f"hfov must lie in (0, 180), got {self.hfov}")
        if self.width < 8:
            raise ValueError(f"camera width must be >= 8, got {self.width}")
        if self.d_max <= 0:
            raise ValueError("d_max must be positive")

    @property
    def band(self) -> int:
        return min(int(self.height / (H_MAX / N_BANDS)), N_BANDS - 1)

    def ray_offsets(self) -> np.ndarray:
        """Ray angles relative to the heading, in degrees."""
        j = np.arange(self.width, dtype=np.float64)
        return self.hfov * (j / (self.width - 1) - 0.5)

    def to_dict(self) -> dict:
        return {"height": self.height, "hfov": self.hfov, "width": self.width, "d_max": self.d_max}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(**d)


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Landmark:
    cell: tuple[int, int]
    name: str
    color: tuple[float, float, float]


@dataclass
class Observation:
    rgb: np.ndarray  # (W, 3)
    depth: np.ndarray  # (W,)


@dataclass(eq=False)
class WorldSpec:
    """Obstacle heights ``(N, N)``, band textures ``(N, N, N_BANDS, 3)``, landmarks."""

    heights: np.ndarray
    textures: np.ndarray
    landmarks: list[Landmark] = field(default_factory=list)
    world_id: int = 0
    seed: int | None = None
    background: tuple[float, float, float] = BACKGROUND

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        self.textures = np.asarray(self.textures, dtype=np.float64)
        n = self.heights.shape[0]
        if self.heights.shape != (n, n):
            raise ValueError("heights must be a square grid")
        if self.textures.shape != (n, n, N_BANDS, 3):
            raise ValueError(f"textures must have shape {(n, n, N_BANDS, 3)}")
        self._cache: dict = {}

    @property
    def size(self) -> int:
        return self.heights.shape[0]

    def free(self, i: int, j: int) -> bool:
        n = self.size
        return 0 <= i < n and 0 <= j < n and self.heights[i, j] == 0.0

    def is_free_point(self, x: float, y: float) -> bool:
        return self.free(math.floor(x), math.floor(y))

    def check_state(self, state: AgentState) -> None:
        if not self.is_free_point(state.x, state.y):
            raise InvalidStateError(f"state ({state.x}, {state.y}) is not in a free cell")

    def blocking(self, cam_height: float) -> np.ndarray:
        key = ("block", cam_height)
        if key not in self._cache:
            self._cache[key] = self.heights >= cam_height
        return self._cache[key]

    def to_dict(self) -> dict:
        return {
            "format_version": WORLD_FORMAT_VERSION,
            "world_id": self.world_id,
            "seed": self.seed,
            "heights": self.heights.tolist(),
            "textures": self.textures.tolist(),
            "landmarks": [
                {"cell": list(lm.cell), "name": lm.name, "color": list(lm.color)}
                for lm in self.landmarks
            ],
            "background": list(self.background),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        if d.get("format_version") != WORLD_FORMAT_VERSION:
            raise ValueError(f"unsupported world format version {d.get('format_version')}")
        return cls(
            heights=np.array(d["heights"], dtype=np.float64),
            textures=np.array(d["textures"], dtype=np.float64),
            landmarks=[
                Landmark(tuple(lm["cell"]), lm["name"], tuple(lm["color"]))
                for lm in d["landmarks"]
            ],
            world_id=d["world_id"],
            seed=d["seed"],
            background=tuple(d["background"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "WorldSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# rendering


def render_batch(world: WorldSpec, xs, ys, headings, cam: CameraConfig):
    """Raycast many poses at once.

    Returns ``rgb`` of shape ``(n, W, 3)`` and ``depth`` of shape ``(n, W)``.
    Rays advance through the grid cell by cell (DDA); a cell stops a ray iff
    its obstacle height is at least the camera height.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    hs = np.asarray(headings, dtype=np.float64).reshape(-1)
    n = xs.size
    W = cam.width
    block = world.blocking(cam.height)

    ang = np.deg2rad(hs[:, None] + cam.ray_offsets()[None, :]).reshape(-1)
    ox = np.repeat(xs, W)
    oy = np.repeat(ys, W)
    dx = np.cos(ang)
    dy = np.sin(ang)
    cx = np.floor(ox).astype(np.int64)
    cy = np.floor(oy).astype(np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        step_x = np.sign(dx).astype(np.int64)
        step_y = np.sign(dy).astype(np.int64)
        tdx = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        tdy = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        tmx = np.where(dx > 0, (cx + 1 - ox) * tdx, np.where(dx < 0, (ox - cx) * tdx, np.inf))
        tmy = np.where(dy > 0, (cy + 1 - oy) * tdy, np.where(dy < 0, (oy - cy) * tdy, np.inf))

    hit_t = np.full(n * W, cam.d_max)
    hit_i = np.zeros(n * W, dtype=np.int64)
    hit_j = np.zeros(n * W, dtype=np.int64)
    hit = np.zeros(n * W, dtype=bool)
    alive = np.arange(n * W)
    while alive.size:
        use_x = tmx[alive] < tmy[alive]
        ax = alive[use_x]
        ay = alive[~use_x]
        t_entry = np.empty(alive.size)
        t_entry[use_x] = tmx[ax]
        t_entry[~use_x] = tmy[ay]
        cx[ax] += step_x[ax]
        tmx[ax] += tdx[ax]
        cy[ay] += step_y[ay]
        tmy[ay] += tdy[ay]

        in_range = t_entry < cam.d_max
        bx, by = cx[alive], cy[alive]
        blocked = block[bx, by] & in_range
        idx = alive[blocked]
        hit[idx] = True
        hit_t[idx] = t_entry[blocked]
        hit_i[idx] = bx[blocked]
        hit_j[idx] = by[blocked]
        alive = alive[in_range & ~blocked]

    depth = np.clip(hit_t, MIN_DEPTH, cam.d_max)
    rgb = np.empty((n * W, 3))
    rgb[:] = world.background
    rgb[hit] = world.textures[hit_i[hit], hit_j[hit], cam.band]
    return rgb.reshape(n, W, 3), depth.reshape(n, W)


def raycast(world: WorldSpec, state: AgentState, cam: CameraConfig) -> Observation:
    world.check_state(state)
    rgb, depth = render_batch(world, [state.x], [state.y], [state.heading], cam)
    return Observation(rgb[0], depth[0])


def render_states(world: WorldSpec, states, cam: CameraConfig):
    """Render a list of states; returns ``(rgb (n, W, 3), depth (n, W))``."""
    if not states:
        return np.zeros((0, cam.width, 3)), np.zeros((0, cam.width))
    for s in states:
        world.check_state(s)
    return render_batch(
        world, [s.x for s in states], [s.y for s in states], [s.heading for s in states], cam
    )


# ---------------------------------------------------------------------------
# motion


def displacement(heading: float) -> tuple[float, float]:
    """Forward displacement: the 0.25 m heading vector rounded to the 1/16 m lattice.

    Rounding keeps every reachable position an exact binary fraction, which
    lets the oracle search the true state space rather than an approximation.
    """
    rad = math.radians(heading)
    k = STEP_SIZE * LATTICE_DIVS
    return round(k * math.cos(rad)) / LATTICE_DIVS, round(k * math.sin(rad)) / LATTICE_DIVS


def step(world: WorldSpec, state: AgentState, action: Action) -> AgentState:
    action = Action(action)
    if action == Action.STOP:
        return state
    if action == Action.TURN_LEFT:
        return AgentState(state.x, state.y, (state.heading + TURN_DEG) % 360.0)
    if action == Action.TURN_RIGHT:
        return AgentState(state.x, state.y, (state.heading - TURN_DEG) % 360.0)
    ddx, ddy = displacement(state.heading)
    nx, ny = state.x + ddx, state.y + ddy
    if not world.is_free_point(nx, ny):
        return state
    return AgentState(nx, ny, state.heading)


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


# ---------------------------------------------------------------------------
# shortest-path oracle on the (position, heading) lattice


class CostToGo:
    """Exact minimum number of actions to come within ``threshold`` of ``goal``.

    States are lattice positions (spacing 1/16 m) times the 24 headings; a
    breadth-first search over reversed transitions from every goal-region
    state gives the cost of every state.
    """

    def __init__(self, world: WorldSpec, goal, threshold: float):
        self.world = world
        self.goal = (float(goal[0]), float(goal[1]))
        self.threshold = float(threshold)
        lat = _lattice(world)
        self.m = m = lat["m"]
        n_states = m * m * N_HEADINGS
        px = np.arange(m) / LATTICE_DIVS
        d2 = (px[:, None] - self.goal[0]) ** 2 + (px[None, :] - self.goal[1]) ** 2
        in_goal = lat["valid"] & (np.sqrt(d2) <= self.threshold)
        goal_states = (np.flatnonzero(in_goal)[:, None] * N_HEADINGS
                       + np.arange(N_HEADINGS)[None, :]).reshape(-1)
        src_row = csr_matrix(
            (np.ones(goal_states.size), (np.zeros(goal_states.size, dtype=np.int64), goal_states)),
            shape=(1, n_states + 1),
        )
        graph = vstack([lat["reverse"], src_row], format="csr")
        order, pred = breadth_first_order(graph, n_states, directed=True, return_predecessors=True)
        depth = _tree_depth(order, pred, n_states + 1)
        cost = np.full(n_states + 1, -1, dtype=np.int64)
        cost[order] = depth[order] - 1
        cost = cost[:-1]
        top = int(cost.max(initial=0))
        dtype = np.uint8 if top < 255 else np.uint16
        self.unreachable = int(np.iinfo(dtype).max)
        cost[cost < 0] = self.unreachable
        self.cost = cost.astype(dtype).reshape(m, m, N_HEADINGS)

    def _index(self, state: AgentState):
        i = state.x * LATTICE_DIVS
        j = state.y * LATTICE_DIVS
        h = state.heading / TURN_DEG
        ii, jj, hh = int(round(i)), int(round(j)), int(round(h))
        if (ii, jj, hh) != (i, j, h):
            raise InvalidStateError(f"state {state} is not on the motion lattice")
        return ii, jj, hh % N_HEADINGS

    def lookup(self, state: AgentState) -> int:
        """Cost of ``state``; ``self.unreachable`` if the goal cannot be reached."""
        i, j, h = self._index(state)
        if not (0 <= i < self.m and 0 <= j < self.m):
            return self.unreachable
        return int(self.cost[i, j, h])

    def action(self, state: AgentState) -> Action:
        if distance(state.position, self.goal) <= self.threshold:
            return Action.STOP
        if self.lookup(state) == self.unreachable:
            raise UnreachableGoalError(
                f"goal {self.goal} unreachable from ({state.x}, {state.y})")
        best, best_cost = None, self.unreachable
        for a in ACTION_PREFERENCE[1:]:
            c = self.lookup(step(self.world, state, a))
            if c < best_cost:
                best, best_cost = a, c
        return best

    def plan(self, state: AgentState, max_steps: int = 10_000) -> list[Action]:
        """Oracle actions from ``state`` through the final Stop."""
        actions = []
        for _ in range(max_steps):
            a = self.action(state)
            actions.append(a)
            if a == Action.STOP:
                return actions
            state = step(self.world, state, a)
        raise UnreachableGoalError("oracle plan exceeded max_steps")


def _tree_depth(order: np.ndarray, pred: np.ndarray, n: int) -> np.ndarray:
    """Depth of every node of a BFS tree (-1 if unreached), by pointer jumping."""
    root = order[0]
    reached = np.zeros(n, dtype=bool)
    reached[order] = True
    parent = np.where(pred >= 0, pred, np.arange(n))
    depth = np.where(reached & (np.arange(n) != root), 1, 0).astype(np.int64)
    while True:
        nxt = parent[parent]
        if np.array_equal(nxt, parent):
            break
        depth = depth + depth[parent]
        parent = nxt
    depth = depth + depth[parent] * (parent != np.arange(n))
    depth[~reached] = -1
    return depth


def _lattice(world: WorldSpec) -> dict:
    key = "lattice"
    if key in world._cache:
        return world._cache[key]
    n = world.size
    m = n * LATTICE_DIVS
    cells = np.arange(m) // LATTICE_DIVS
    free = world.heights == 0.0
    valid = free[cells[:, None], cells[None, :]]

    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    src, dst = [], []
    for h in range(N_HEADINGS):
        ddx, ddy = displacement(h * TURN_DEG)
        di, dj = int(ddx * LATTICE_DIVS), int(ddy * LATTICE_DIVS)
        ti, tj = ii + di, jj + dj
        inside = (ti >= 0) & (ti < m) & (tj >= 0) & (tj < m)
        ok = valid & inside
        ok[ok] = valid[ti[ok], tj[ok]]
        s_id = (ii[ok] * m + jj[ok]) * N_HEADINGS + h
        t_id = (ti[ok] * m + tj[ok]) * N_HEADINGS + h
        src.append(s_id)
        dst.append(t_id)
    vpos = np.flatnonzero(valid) * N_HEADINGS
    for h in range(N_HEADINGS):
        src.append(vpos + h)
        dst.append(vpos + (h + 1) % N_HEADINGS)
        src.append(vpos + h)
        dst.append(vpos + (h - 1) % N_HEADINGS)
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    n_states = m * m * N_HEADINGS
    # reversed transitions, plus an empty extra column for the BFS super-source
    reverse = csr_matrix((np.ones(src.size), (dst, src)), shape=(n_states, n_states + 1))
    out = {"m": m, "valid": valid, "reverse": reverse}
    world._cache[key] = out
    return out


_CTG_CACHE: "OrderedDict[tuple, CostToGo]" = OrderedDict()
CTG_CACHE_SIZE = 512


def cost_to_go(world: WorldSpec, goal, threshold: float) -> CostToGo:
    key = (id(world), float(goal[0]), float(goal[1]), float(threshold))
    ctg = _CTG_CACHE.get(key)
    if ctg is not None and ctg.world is world:
        _CTG_CACHE.move_to_end(key)
        return ctg
    ctg = CostToGo(world, goal, threshold)
    _CTG_CACHE[key] = ctg
    while len(_CTG_CACHE) > CTG_CACHE_SIZE:
        _CTG_CACHE.popitem(last=False)
    return ctg


def oracle_action(world: WorldSpec, state: AgentState, goal, threshold: float = 3.0) -> Action:
    """First action of a shortest action sequence reaching ``threshold`` of ``goal``.

    Ties are broken Stop < Forward < TurnLeft < TurnRight.
    """
    world.check_state(state)
    return cost_to_go(world, goal, threshold).action(state)


def oracle_rollout(world: WorldSpec, start: AgentState, goal, threshold: float = 3.0) -> list[Action]:
    """Actions of the oracle from ``start`` up to and including Stop."""
    world.check_state(start)
    return cost_to_go(world, goal, threshold).plan(start)
