"""Procedural worlds, templated instructions, episodes and dataset files."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import (
    H_MAX,
    N_BANDS,
    Action,
    AgentState,
    CameraConfig,
    Landmark,
    Observation,
    WorldSpec,
    cost_to_go,
    distance,
    render_states,
    step,
)

DATASET_FORMAT_VERSION = 1
MAX_INSTRUCTION_LEN = 32
MIN_PATH_ACTIONS = 20
MAX_PATH_ACTIONS = 80
LANDMARK_RADIUS = 1.0
OBSTACLE_HEIGHTS = (0.3, 0.6, 1.0, 2.0)

LANDMARK_COLORS = {
    "red": (0.90, 0.12, 0.10),
    "green": (0.15, 0.75, 0.15),
    "blue": (0.12, 0.25, 0.90),
    "yellow": (0.92, 0.85, 0.12),
    "purple": (0.55, 0.15, 0.75),
    "orange": (0.98, 0.55, 0.05),
    "cyan": (0.10, 0.80, 0.85),
    "pink": (0.95, 0.45, 0.70),
}

NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six",
                "seven", "eight", "nine", "ten", "eleven", "twelve")

VOCABULARY = (
    ("<pad>", "<unk>", "go", "walk", "forward", "straight", "turn", "left", "right",
     "around", "slightly", "stop", "at", "the", "to", "past", "marker", "then", "and",
     "meters", "near", "wall", "room", "door", "through", "until", "you", "reach",
     "continue", "keep", "a", "bit", "toward", "face", "end", "wait", "here")
    + NUMBER_WORDS[1:]
    + tuple(LANDMARK_COLORS)
    + ("hallway", "corner", "next", "after", "your", "side", "on", "meter")
)
WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}
PAD_ID = 0


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# worlds


def band_shade(color, band: int) -> np.ndarray:
    """Colour of texture band ``band``: brighter towards the top of an obstacle."""
    gain = 0.4 + 0.6 * band / (N_BANDS - 1)
    return np.clip(np.asarray(color, dtype=np.float64) * gain, 0.0, 1.0)


def _texture(color) -> np.ndarray:
    return np.stack([band_shade(color, k) for k in range(N_BANDS)])


def _divide(heights, rng, x0, x1, y0, y1, min_room):
    """Recursive division of the free block [x0, x1) x [y0, y1)."""
    w, h = x1 - x0, y1 - y0
    can_x = w >= 2 * min_room + 1
    can_y = h >= 2 * min_room + 1
    if not (can_x or can_y):
        return
    if can_x and can_y:
        split_x = w > h if w != h else bool(rng.integers(2))
    else:
        split_x = can_x
    wall_h = 2.0 if rng.random() < 0.75 else 1.0
    if split_x:
        wx = int(rng.integers(x0 + min_room, x1 - min_room))
        door = int(rng.integers(y0, y1 - 1))
        heights[wx, y0:y1] = wall_h
        heights[wx, door:door + 2] = 0.0
        _divide(heights, rng, x0, wx, y0, y1, min_room)
        _divide(heights, rng, wx + 1, x1, y0, y1, min_room)
    else:
        wy = int(rng.integers(y0 + min_room, y1 - min_room))
        door = int(rng.integers(x0, x1 - 1))
        heights[x0:x1, wy] = wall_h
        heights[door:door + 2, wy] = 0.0
        _divide(heights, rng, x0, x1, y0, wy, min_room)
        _divide(heights, rng, x0, x1, wy + 1, y1, min_room)


def free_components(heights: np.ndarray) -> int:
    """Number of 4-connected components of free cells (flood fill)."""
    free = heights == 0.0
    seen = np.zeros_like(free)
    n = heights.shape[0]
    count = 0
    for i, j in zip(*np.nonzero(free)):
        if seen[i, j]:
            continue
        count += 1
        queue = deque([(i, j)])
        seen[i, j] = True
        while queue:
            a, b = queue.popleft()
            for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                u, v = a + da, b + db
                if 0 <= u < n and 0 <= v < n and free[u, v] and not seen[u, v]:
                    seen[u, v] = True
                    queue.append((u, v))
    return count


def _free_neighbours(heights, i, j):
    n = heights.shape[0]
    out = []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        u, v = i + di, j + dj
        if 0 <= u < n and 0 <= v < n and heights[u, v] == 0.0:
            out.append((u, v))
    return out


def generate_world(seed: int, size: int = 12, world_id: int | None = None) -> WorldSpec:
    """Seeded floor plan: recursive division, a few extra openings, low furniture, landmarks."""
    if size < 8:
        raise ValueError("world size must be at least 8")
    rng = np.random.default_rng([seed, size, 7919])
    n = size
    heights = np.zeros((n, n))
    heights[0, :] = heights[-1, :] = heights[:, 0] = heights[:, -1] = H_MAX
    _divide(heights, rng, 1, n - 1, 1, n - 1, min_room=3)

    # extra openings create loops
    interior = [(i, j) for i in range(1, n - 1) for j in range(1, n - 1) if heights[i, j] > 0]
    rng.shuffle(interior)
    opened = 0
    for i, j in interior:
        if opened >= 2:
            break
        horiz = heights[i - 1, j] == 0 and heights[i + 1, j] == 0
        vert = heights[i, j - 1] == 0 and heights[i, j + 1] == 0
        if horiz != vert:
            heights[i, j] = 0.0
            opened += 1

    # low furniture, kept only if the floor stays connected
    free_cells = [tuple(c) for c in np.argwhere(heights == 0.0)]
    order = rng.permutation(len(free_cells))
    placed = 0
    target = int(rng.integers(2, 5))
    for k in order:
        if placed >= target:
            break
        i, j = free_cells[k]
        if len(_free_neighbours(heights, i, j)) < 4:
            continue
        heights[i, j] = float(rng.choice(OBSTACLE_HEIGHTS[:2]))
        if free_components(heights) != 1:
            heights[i, j] = 0.0
        else:
            placed += 1
    if free_components(heights) != 1:
        raise GenerationError(f"world seed {seed} produced disconnected free space")

    textures = np.zeros((n, n, N_BANDS, 3))
    for i, j in np.argwhere(heights > 0):
        if heights[i, j] < 1.0:
            base = np.array([0.55, 0.38, 0.22]) * rng.uniform(0.8, 1.1)
        else:
            grey = rng.uniform(0.45, 0.65)
            base = np.full(3, grey) + rng.uniform(-0.06, 0.06, 3)
        textures[i, j] = _texture(base)

    candidates = [
        (int(i), int(j)) for i, j in np.argwhere(heights == H_MAX)
        if _free_neighbours(heights, i, j)
    ]
    n_landmarks = int(rng.integers(4, 9))
    names = list(LANDMARK_COLORS)
    rng.shuffle(names)
    picks = rng.permutation(len(candidates))
    landmarks = []
    used: list[tuple[int, int]] = []
    for k in picks:
        if len(landmarks) >= n_landmarks:
            break
        cell = candidates[k]
        if any(abs(cell[0] - u[0]) + abs(cell[1] - u[1]) < 3 for u in used):
            continue
        name = names[len(landmarks)]
        color = LANDMARK_COLORS[name]
        textures[cell] = _texture(color)
        landmarks.append(Landmark(cell, name, color))
        used.append(cell)
    if len(landmarks) < 4:
        raise GenerationError(f"world seed {seed}: too few landmark sites")
    return WorldSpec(heights, textures, landmarks,
                     world_id=seed if world_id is None else world_id, seed=seed)


# ---------------------------------------------------------------------------
# instructions


def _point_to_cell(p, cell) -> float:
    cx = min(max(p[0], cell[0]), cell[0] + 1.0)
    cy = min(max(p[1], cell[1]), cell[1] + 1.0)
    return math.hypot(p[0] - cx, p[1] - cy)


def landmarks_along(world: WorldSpec, path, radius: float = LANDMARK_RADIUS) -> list[str]:
    """Names of landmarks within ``radius`` of the path, in order of first approach."""
    seen: list[str] = []
    for p in path:
        for lm in world.landmarks:
            if lm.name not in seen and _point_to_cell(p, lm.cell) <= radius:
                seen.append(lm.name)
    return seen


def replay(world: WorldSpec, start: AgentState, actions) -> list[AgentState]:
    """States visited before each action (the state after a final Stop is not repeated)."""
    states = [start]
    for a in actions[:-1] if actions and actions[-1] == Action.STOP else actions:
        states.append(step(world, states[-1], a))
    return states


def _turn_phrase(net_deg: float) -> list[str]:
    side = "left" if net_deg > 0 else "right"
    mag = abs(net_deg)
    if mag <= 30:
        return ["turn", "slightly", side]
    if mag < 135:
        return ["turn", side]
    return ["turn", "around"]


def instruction_words(world: WorldSpec, start: AgentState, actions, goal_landmark: str | None) -> list[str]:
    """Template: turns and forward runs in order, landmark mentions where first approached."""
    states = replay(world, start, actions)
    mentioned: list[str] = []
    words: list[str] = []
    acts = [Action(a) for a in actions if Action(a) != Action.STOP]
    i = 0
    while i < len(acts):
        j = i
        if acts[i] == Action.FORWARD:
            while j < len(acts) and acts[j] == Action.FORWARD:
                j += 1
            dist = sum(distance(states[k].position, states[k + 1].position) for k in range(i, j))
            seg = ["go", "forward"]
            metres = int(round(dist))
            if metres >= 1:
                seg += [NUMBER_WORDS[min(metres, len(NUMBER_WORDS) - 1)],
                        "meter" if metres == 1 else "meters"]
        else:
            while j < len(acts) and acts[j] != Action.FORWARD:
                j += 1
            net = sum(15.0 if a == Action.TURN_LEFT else -15.0 for a in acts[i:j])
            seg = _turn_phrase(net) if net else []
        for name in landmarks_along(world, [s.position for s in states[i:j + 1]]):
            if name not in mentioned:
                mentioned.append(name)
                seg += ["past", "the", name, "marker"]
        words += seg
        i = j
    if goal_landmark is not None:
        words += ["stop", "at", "the", goal_landmark, "marker"]
    else:
        words += ["and", "stop"]
    return words


def encode_words(words) -> list[int]:
    return [WORD_TO_ID.get(w, WORD_TO_ID["<unk>"]) for w in words]


def decode_tokens(tokens) -> list[str]:
    return [VOCABULARY[t] for t in tokens]


# ---------------------------------------------------------------------------
# episodes


@dataclass
class Episode:
    episode_id: int
    world_id: int
    start: AgentState
    goal: tuple[float, float]
    instruction: list[int]
    reference_path: list[tuple[float, float]]
    reference_actions: list[int]
    reference_length: float
    goal_landmark: str | None = None

    def states(self, world: WorldSpec) -> list[AgentState]:
        return replay(world, self.start, [Action(a) for a in self.reference_actions])

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "world_id": self.world_id,
            "start": [self.start.x, self.start.y, self.start.heading],
            "goal": list(self.goal),
            "instruction": list(self.instruction),
            "reference_path": [list(p) for p in self.reference_path],
            "reference_actions": list(self.reference_actions),
            "reference_length": self.reference_length,
            "goal_landmark": self.goal_landmark,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(
            episode_id=int(d["episode_id"]),
            world_id=int(d["world_id"]),
            start=AgentState(*d["start"]),
            goal=tuple(d["goal"]),
            instruction=list(d["instruction"]),
            reference_path=[tuple(p) for p in d["reference_path"]],
            reference_actions=list(d["reference_actions"]),
            reference_length=float(d["reference_length"]),
            goal_landmark=d.get("goal_landmark"),
        )


def path_length(path) -> float:
    return float(sum(distance(a, b) for a, b in zip(path[:-1], path[1:])))


def generate_episode(world: WorldSpec, seed: int, threshold: float = 3.0,
                     episode_id: int = 0, max_tries: int = 200) -> Episode:
    """Sample a start and a landmark goal whose oracle path has 20-80 actions."""
    rng = np.random.default_rng([seed, world.world_id, 104729])
    free = [tuple(int(v) for v in c) for c in np.argwhere(world.heights == 0.0)]
    sites = [(lm, nb) for lm in world.landmarks for nb in _free_neighbours(world.heights, *lm.cell)]
    for _ in range(max_tries):
        lm, cell = sites[int(rng.integers(len(sites)))]
        goal = (cell[0] + 0.5, cell[1] + 0.5)
        sc = free[int(rng.integers(len(free)))]
        start = AgentState(sc[0] + 0.5, sc[1] + 0.5, float(15 * int(rng.integers(24))))
        if distance(start.position, goal) <= threshold:
            continue
        ctg = cost_to_go(world, goal, threshold)
        cost = ctg.lookup(start)
        if not MIN_PATH_ACTIONS <= cost <= MAX_PATH_ACTIONS:
            continue
        actions = ctg.plan(start)
        states = replay(world, start, actions)
        words = instruction_words(world, start, actions, lm.name)
        if len(words) > MAX_INSTRUCTION_LEN:
            continue
        path = [s.position for s in states]
        return Episode(
            episode_id=episode_id,
            world_id=world.world_id,
            start=start,
            goal=goal,
            instruction=encode_words(words),
            reference_path=path,
            reference_actions=[int(a) for a in actions],
            reference_length=path_length(path),
            goal_landmark=lm.name,
        )
    raise GenerationError(f"no valid episode for world {world.world_id} seed {seed}")


# ---------------------------------------------------------------------------
# paired observations


@dataclass
class PairedFrame:
    state: AgentState
    reference: Observation
    target: Observation


def sample_states(episode: Episode, world: WorldSpec, k: int, rng: np.random.Generator) -> list[AgentState]:
    states = episode.states(world)
    if k > len(states):
        raise ValueError(f"k={k} exceeds the {len(states)} states of episode {episode.episode_id}")
    idx = rng.choice(len(states), size=k, replace=False)
    return [states[i] for i in idx]


def render_pairs(world: WorldSpec, states, ref_cam: CameraConfig, tgt_cam: CameraConfig) -> list[PairedFrame]:
    r_rgb, r_depth = render_states(world, states, ref_cam)
    t_rgb, t_depth = render_states(world, states, tgt_cam)
    return [
        PairedFrame(s, Observation(r_rgb[i], r_depth[i]), Observation(t_rgb[i], t_depth[i]))
        for i, s in enumerate(states)
    ]


def sample_paired_frames(world: WorldSpec, episode: Episode, ref_cam: CameraConfig,
                         tgt_cam: CameraConfig, k: int, seed) -> list[PairedFrame]:
    """``k`` distinct reference-rollout states rendered under both cameras."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return render_pairs(world, sample_states(episode, world, k, rng), ref_cam, tgt_cam)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    episodes: list[Episode] = field(default_factory=list)
    worlds: list[dict] = field(default_factory=list)  # {"world_id", "seed", "size"}
    threshold: float = 3.0
    vocabulary: tuple = VOCABULARY
    name: str = ""

    def __post_init__(self):
        self._world_cache: dict[int, WorldSpec] = {}

    def __len__(self):
        return len(self.episodes)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.header() == other.header()
                and [e.to_dict() for e in self.episodes] == [e.to_dict() for e in other.episodes])

    def world(self, world_id: int) -> WorldSpec:
        if world_id not in self._world_cache:
            ref = next((w for w in self.worlds if w["world_id"] == world_id), None)
            if ref is None:
                raise KeyError(f"dataset {self.name!r} has no world {world_id}")
            self._world_cache[world_id] = generate_world(ref["seed"], ref["size"], world_id)
        return self._world_cache[world_id]

    def header(self) -> dict:
        return {
            "format_version": DATASET_FORMAT_VERSION,
            "name": self.name,
            "threshold": self.threshold,
            "vocabulary": list(self.vocabulary),
            "worlds": [dict(w) for w in self.worlds],
        }


def save_dataset(dataset: Dataset, path) -> None:
    lines = [json.dumps(dataset.header(), separators=(",", ":"))]
    lines += [json.dumps(e.to_dict(), separators=(",", ":")) for e in dataset.episodes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines()]
    if not any(ln.strip() for ln in lines):
        return Dataset()
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:1: malformed header ({exc.msg})") from None
    version = header.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: dataset format version {version} unsupported "
            f"(reader is version {DATASET_FORMAT_VERSION})")
    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            episodes.append(Episode.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed episode ({exc})") from None
    return Dataset(
        episodes=episodes,
        worlds=header.get("worlds", []),
        threshold=header.get("threshold", 3.0),
        vocabulary=tuple(header.get("vocabulary", VOCABULARY)),
        name=header.get("name", ""),
    )


def _episodes_for(worlds: list[WorldSpec], count: int, seed: int, threshold: float,
                  first_id: int) -> list[Episode]:
    out = []
    for k in range(count):
        world = worlds[k % len(worlds)]
        ep_seed = seed * 100_003 + k
        for attempt in range(20):
            try:
                out.append(generate_episode(world, ep_seed + attempt * 7_919_111, threshold,
                                            episode_id=first_id + k))
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"could not sample episode {first_id + k}")
    return out


def generate_splits(seed: int = 0, n_train_worlds: int = 20, n_unseen_worlds: int = 5,
                    n_train: int = 200, n_val_seen: int = 50, n_val_unseen: int = 50,
                    size: int = 12, threshold: float = 3.0) -> dict[str, Dataset]:
    """Train / val_seen over shared worlds; val_unseen over disjoint world seeds."""

    def make_worlds(first_seed, count):
        worlds, s = [], first_seed
        while len(worlds) < count:
            try:
                worlds.append(generate_world(s, size))
            except GenerationError:
                pass
            s += 1
        return worlds

    train_worlds = make_worlds(seed * 10_000, n_train_worlds)
    unseen_worlds = make_worlds(seed * 10_000 + 5_000, n_unseen_worlds)
    refs = lambda ws: [{"world_id": w.world_id, "seed": w.seed, "size": w.size} for w in ws]

    def build(name, worlds, count, ep_seed, first_id):
        ds = Dataset(_episodes_for(worlds, count, ep_seed, threshold, first_id),
                     refs(worlds), threshold, VOCABULARY, name)
        ds._world_cache.update({w.world_id: w for w in worlds})
        return ds

    return {
        "train": build("train", train_worlds, n_train, seed * 3 + 1, 0),
        "val_seen": build("val_seen", train_worlds, n_val_seen, seed * 3 + 2, 100_000),
        "val_unseen": build("val_unseen", unseen_worlds, n_val_unseen, seed * 3 + 3, 200_000),
    }
