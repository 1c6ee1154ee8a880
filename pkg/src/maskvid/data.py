"""Deterministic synthetic world: bouncing colored squares with templated captions
and optional action-controlled agent motion, plus dataset persistence.

Shape dynamics run in fixed-point integer units (1/8 pixel) so wall bounces
conserve speed exactly and every platform renders identical frames. The agent
shape follows commanded (yaw_rate, speed) pairs instead of bouncing.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import formats
from .tokenizer import Codebook, TokenGrid, Video, encode_video, extract_patches

SUBPIXEL = 8  # fixed-point units per pixel

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 220, 50),
    "cyan": (40, 210, 210),
    "magenta": (210, 50, 200),
    "orange": (240, 150, 40),
    "purple": (140, 60, 200),
}

# compass words in +45 degree steps of atan2(vy, vx); y grows downward
DIRECTIONS = ("east", "southeast", "south", "southwest", "west", "northwest", "north", "northeast")
_DIRECTION_STEPS = {
    "east": (1, 0), "southeast": (1, 1), "south": (0, 1), "southwest": (-1, 1),
    "west": (-1, 0), "northwest": (-1, -1), "north": (0, -1), "northeast": (1, -1),
    "nowhere": (0, 0),
}


@dataclass(frozen=True)
class WorldConfig:
    frames: int = 8
    size: int = 64
    shape_side: int = 16
    shapes: int = 2
    agent: bool = False
    agent_speed: float = 0.25   # grid cells (of shape_side pixels) per frame
    agent_yaw: float = 0.15     # yaw magnitude, radians per frame; sign drawn per episode
    agent_color: str | None = None  # pin the agent to one palette color, unjittered
    min_speed: int = 8          # fixed-point units per frame
    max_speed: int = 24

    def __post_init__(self):
        if not 1 <= self.shapes <= 3:
            raise ValueError("worlds support 1 to 3 shapes")
        if self.shape_side >= self.size:
            raise ValueError(f"shape side {self.shape_side} does not fit frame {self.size}")
        if not 0 <= self.min_speed <= self.max_speed:
            raise ValueError("need 0 <= min_speed <= max_speed")
        if self.agent_color is not None and self.agent_color not in PALETTE:
            raise ValueError(f"agent_color must be one of {sorted(PALETTE)}")


@dataclass(frozen=True)
class Episode:
    video: Video
    caption: str
    actions: np.ndarray  # (N, 2) float32 (yaw_rate, speed)
    meta: dict


def direction_word(vx: float, vy: float) -> str:
    """8-way compass word from a velocity (y down); 'nowhere' for the zero vector."""
    if vx == 0 and vy == 0:
        return "nowhere"
    sector = int(round(math.atan2(vy, vx) / (math.pi / 4))) % 8
    return DIRECTIONS[sector]


def direction_signs(word: str) -> tuple[int, int]:
    """Canonical (sign vx, sign vy) for a compass word."""
    return _DIRECTION_STEPS[word]


def parse_caption(caption: str) -> list[tuple[str, str]]:
    """Invert the caption grammar into (color, direction) pairs."""
    pairs = []
    for clause in caption.split(" and "):
        words = clause.split()
        if len(words) != 5 or words[0] != "a" or words[2] != "square" or words[3] != "moving":
            raise ValueError(f"caption clause does not match grammar: {clause!r}")
        pairs.append((words[1], words[4]))
    return pairs


def _background(size: int) -> np.ndarray:
    """Static gentle gradient; makes every patch position distinct for the tokenizer."""
    xs = np.arange(size, dtype=np.int32)
    r = np.repeat((24 + xs // 2)[None, :], size, axis=0)
    g = np.repeat((24 + xs // 2)[:, None], size, axis=1)
    b = np.full((size, size), 40, dtype=np.int32)
    return np.stack([r, g, b], axis=2).astype(np.uint8)


def _reflect(pos: int, vel: int, limit: int) -> tuple[int, int]:
    """Elastic reflection of a 1D position into [0, limit]; |vel| is preserved."""
    pos += vel
    while pos < 0 or pos > limit:
        if pos < 0:
            pos = -pos
        else:
            pos = 2 * limit - pos
        vel = -vel
    return pos, vel


def _jitter_color(name: str, rng: random.Random) -> tuple[int, int, int]:
    base = PALETTE[name]
    return tuple(min(255, max(0, c + rng.randint(-12, 12))) for c in base)


def agent_trajectory(actions: np.ndarray, start: tuple[float, float], side: int,
                     size: int) -> list[tuple[float, float, float]]:
    """Integrate an action track from a start position; returns per-frame (x, y, heading).

    Heading 0 points north; positive yaw turns clockwise (toward east). This is
    the reference dynamics used both for rendering and for replay checks.
    """
    x, y = start
    heading = 0.0
    states = []
    for t in range(len(actions)):
        states.append((x, y, heading))
        heading = heading + float(actions[t, 0])
        step = float(actions[t, 1]) * side
        x = min(max(x + step * math.sin(heading), 0.0), float(size - side))
        y = min(max(y - step * math.cos(heading), 0.0), float(size - side))
    return states


def generate_episode(cfg: WorldConfig, seed: int) -> Episode:
    """Render one episode; fully deterministic given the seed.

    Non-agent squares move along one of the eight compass axes with a constant
    fixed-point speed and bounce elastically off walls. The agent square
    (always the first shape when enabled) starts centered heading north and
    follows its (yaw_rate, speed) track, clamped at walls.
    """
    rng = random.Random(seed)
    size, side, n = cfg.size, cfg.shape_side, cfg.frames
    limit = (size - side) * SUBPIXEL

    pool = [n for n in PALETTE if n != cfg.agent_color]
    names = rng.sample(pool, cfg.shapes)
    colors = [_jitter_color(name, rng) for name in names]
    if cfg.agent and cfg.agent_color is not None:
        names[0] = cfg.agent_color
        colors[0] = PALETTE[cfg.agent_color]

    agent_yaw = 0.0
    init_vels: list[tuple[int, int]] = []
    positions: list[list[int]] = []
    velocities: list[list[int]] = []
    for i in range(cfg.shapes):
        if cfg.agent and i == 0:
            agent_yaw = cfg.agent_yaw * rng.choice((-1, 1))
            init_vels.append((0, -1))  # facing north
            positions.append([0, 0])   # placeholder, agent uses float state
            velocities.append([0, 0])
        else:
            step = _DIRECTION_STEPS[DIRECTIONS[rng.randrange(8)]]
            speed = rng.randint(cfg.min_speed, cfg.max_speed)
            vel = [step[0] * speed, step[1] * speed]
            init_vels.append((vel[0], vel[1]))
            positions.append([rng.randint(0, limit), rng.randint(0, limit)])
            velocities.append(vel)

    actions = np.zeros((n, 2), dtype=np.float32)
    if cfg.agent:
        actions[:, 0] = agent_yaw
        actions[:, 1] = cfg.agent_speed
    start = ((size - side) / 2.0, (size - side) / 2.0)
    agent_states = agent_trajectory(actions, start, side, size) if cfg.agent else None

    background = _background(size)
    frames = np.empty((n, size, size, 3), dtype=np.uint8)
    for t in range(n):
        frame = background.copy()
        for i, color in enumerate(colors):
            if cfg.agent and i == 0:
                px = int(round(agent_states[t][0]))
                py = int(round(agent_states[t][1]))
            else:
                px = positions[i][0] // SUBPIXEL
                py = positions[i][1] // SUBPIXEL
            frame[py:py + side, px:px + side] = color
        frames[t] = frame
        for i in range(cfg.shapes):
            if cfg.agent and i == 0:
                continue
            positions[i][0], velocities[i][0] = _reflect(positions[i][0], velocities[i][0], limit)
            positions[i][1], velocities[i][1] = _reflect(positions[i][1], velocities[i][1], limit)

    words = [direction_word(vx, vy) for vx, vy in init_vels]
    clauses = [f"a {name} square moving {word}" for name, word in zip(names, words)][:2]
    caption = " and ".join(clauses)

    meta = {
        "seed": seed,
        "colors": [{"name": name, "rgb": list(c)} for name, c in zip(names, colors)],
        "init_velocities": [list(v) for v in init_vels],
        "directions": words,
        "agent": cfg.agent,
        "agent_yaw": agent_yaw,
        "agent_speed": cfg.agent_speed if cfg.agent else 0.0,
    }
    return Episode(Video(frames), caption, actions, meta)


def generate_episodes(cfg: WorldConfig, count: int, seed: int) -> list[Episode]:
    return [generate_episode(cfg, seed + i) for i in range(count)]


def caption_from_meta(meta: dict) -> str:
    """Rebuild the caption from recorded metadata; must match the generated one."""
    clauses = [
        f"a {color['name']} square moving {word}"
        for color, word in zip(meta["colors"], meta["directions"])
    ][:2]
    return " and ".join(clauses)


def extract_shape_track(video: Video, rgb: tuple[int, int, int], tol: int = 60) -> np.ndarray | None:
    """Per-frame centroid (x, y) of pixels within L1 distance ``tol`` of a color.

    Returns None if any frame has no matching pixels. Used as the trajectory
    oracle on decoded videos.
    """
    target = np.array(rgb, dtype=np.int32)
    centers = []
    for frame in video.pixels:
        match = np.abs(frame.astype(np.int32) - target).sum(axis=2) <= tol
        ys, xs = np.nonzero(match)
        if len(xs) == 0:
            return None
        centers.append((xs.mean(), ys.mean()))
    return np.array(centers, dtype=np.float64)


# ---------------------------------------------------------------------------
# persistence

def world_config_hash(cfg: WorldConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def save_episodes(episodes: list[Episode], directory: str | Path, cfg: WorldConfig) -> Path:
    """Write raw episodes (DVID video, caption text, DACT actions) plus an index file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"format": "maskvid-episodes", "version": 1,
             "world": asdict(cfg), "config_hash": world_config_hash(cfg), "episodes": []}
    for i, ep in enumerate(episodes):
        stem = f"ep{i:04d}"
        ep.video.save(directory / f"{stem}.dvid")
        (directory / f"{stem}.txt").write_text(ep.caption + "\n")
        formats.write_actions(directory / f"{stem}.dact", ep.actions)
        index["episodes"].append({
            "id": stem,
            "video": f"{stem}.dvid",
            "caption": ep.caption,
            "caption_file": f"{stem}.txt",
            "actions": f"{stem}.dact",
            "meta": ep.meta,
        })
    (directory / "episodes.json").write_text(json.dumps(index, indent=2))
    return directory / "episodes.json"


def load_episodes(directory: str | Path) -> tuple[list[Episode], WorldConfig]:
    directory = Path(directory)
    index = json.loads((directory / "episodes.json").read_text())
    if index.get("format") != "maskvid-episodes":
        raise ValueError(f"{directory}: not an episode directory")
    cfg = WorldConfig(**index["world"])
    episodes = []
    for entry in index["episodes"]:
        episodes.append(Episode(
            video=Video.load(directory / entry["video"]),
            caption=entry["caption"],
            actions=formats.read_actions(directory / entry["actions"]),
            meta=entry["meta"],
        ))
    return episodes, cfg


def dataset_patches(episodes: list[Episode], patch_size: int) -> np.ndarray:
    """All patch vectors across episodes, for codebook fitting."""
    return np.concatenate([extract_patches(ep.video, patch_size) for ep in episodes], axis=0)


def encode_dataset(episodes: list[Episode], codebook: Codebook, out_dir: str | Path,
                   config_hash: str = "") -> Path:
    """Tokenize episodes and write a self-contained dataset directory.

    Produces per episode: DVID video, DTOK tokens, caption text, DACT actions;
    plus the codebook and a manifest JSON tying them together. Returns the
    manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    codebook.save(out_dir / "codebook.dcbk")
    manifest = {
        "format": "maskvid-dataset",
        "version": 1,
        "codebook": "codebook.dcbk",
        "config_hash": config_hash,
        "episodes": [],
    }
    for i, ep in enumerate(episodes):
        stem = f"ep{i:04d}"
        grid = encode_video(ep.video, codebook)
        ep.video.save(out_dir / f"{stem}.dvid")
        grid.save(out_dir / f"{stem}.dtok")
        (out_dir / f"{stem}.txt").write_text(ep.caption + "\n")
        formats.write_actions(out_dir / f"{stem}.dact", ep.actions)
        manifest["episodes"].append({
            "id": stem,
            "video": f"{stem}.dvid",
            "tokens": f"{stem}.dtok",
            "caption": ep.caption,
            "actions": f"{stem}.dact",
            "has_actions": bool(ep.meta.get("agent", False)),
            "meta": ep.meta,
        })
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


@dataclass(frozen=True)
class DatasetEntry:
    episode_id: str
    tokens: TokenGrid
    caption: str
    actions: np.ndarray | None
    meta: dict


@dataclass(frozen=True)
class Dataset:
    entries: list[DatasetEntry]
    codebook: Codebook
    config_hash: str

    @property
    def vocab(self) -> int:
        return self.codebook.vocab


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load and validate a dataset manifest; every referenced file must parse."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "maskvid-dataset" or manifest.get("version") != 1:
        raise ValueError(f"{manifest_path}: not a dataset manifest")
    codebook = Codebook.load(root / manifest["codebook"])
    hh = None
    entries = []
    for entry in manifest["episodes"]:
        grid = TokenGrid.load(root / entry["tokens"])
        if grid.vocab != codebook.vocab:
            raise ValueError(
                f"{entry['id']}: token vocab {grid.vocab} does not match codebook {codebook.vocab}"
            )
        if hh is None:
            hh = (grid.frames, grid.th, grid.tw)
        elif (grid.frames, grid.th, grid.tw) != hh:
            raise ValueError(f"{entry['id']}: inconsistent token grid shape")
        actions = None
        if entry.get("has_actions"):
            actions = formats.read_actions(root / entry["actions"])
            if len(actions) != grid.frames:
                raise ValueError(f"{entry['id']}: action track length mismatch")
        entries.append(DatasetEntry(
            episode_id=entry["id"],
            tokens=grid,
            caption=entry["caption"],
            actions=actions,
            meta=entry.get("meta", {}),
        ))
    if not entries:
        raise ValueError(f"{manifest_path}: dataset has no episodes")
    return Dataset(entries, codebook, manifest.get("config_hash", ""))
