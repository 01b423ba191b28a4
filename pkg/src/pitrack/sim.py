"""Synthetic scenes: moving unit-vector sources and a noisy detector.

Ground truth is a set of trajectories on the unit sphere (random walks with
bounded angular speed, random birth and death). The detector stage maps each
active trajectory to an output slot and corrupts the picture the way a real
localization front-end does: angular noise, missed detections, false alarms
on empty slots, and occasional re-draws of the whole slot mapping, which
create identity switches for downstream trackers to fix.

Everything is driven by (master seed, scene index), so datasets are
reproducible and scenes independent of generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


class DatasetError(ValueError):
    """A dataset file is malformed or inconsistent."""


@dataclass
class SimConfig:
    frames: int = 200
    frame_period: float = 0.1
    slots: int = 10
    max_concurrent: int = 3
    birth_rate: float = 0.025
    mean_lifetime: float = 80.0
    max_angular_speed: float = 30.0  # deg/s
    noise_deg: float = 5.0
    miss_prob: float = 0.05
    false_alarm_prob: float = 0.02
    shuffle_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("birth_rate", "miss_prob", "false_alarm_prob", "shuffle_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.slots < self.max_concurrent:
            raise ValueError(
                f"slots ({self.slots}) must be >= max_concurrent ({self.max_concurrent})"
            )
        if self.frames < 1 or self.frame_period <= 0:
            raise ValueError("frames must be >= 1 and frame_period positive")


@dataclass
class Trajectory:
    traj_id: int
    birth: int
    death: int  # inclusive
    doas: np.ndarray  # (death - birth + 1, 3), unit rows

    def active_at(self, t: int) -> bool:
        return self.birth <= t <= self.death

    def doa_at(self, t: int) -> np.ndarray:
        return self.doas[t - self.birth]


@dataclass
class Scene:
    index: int
    frames: int
    frame_period: float
    trajectories: list
    detections: np.ndarray | None = None  # (frames, slots, 3)
    provenance: np.ndarray | None = None  # (frames, slots) trajectory id or -1

    def active_trajectories(self, t: int) -> list:
        return [tr for tr in self.trajectories if tr.active_at(t)]

    def targets(self):
        """Per frame: (trajectory ids, unit direction rows)."""
        out = []
        for t in range(self.frames):
            active = self.active_trajectories(t)
            ids = np.array([tr.traj_id for tr in active], dtype=np.int64)
            doas = (
                np.stack([tr.doa_at(t) for tr in active])
                if active else np.zeros((0, 3))
            )
            out.append((ids, doas))
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "index": self.index,
            "frames": self.frames,
            "frame_period": self.frame_period,
            "trajectories": [
                {
                    "id": tr.traj_id,
                    "birth": tr.birth,
                    "death": tr.death,
                    "doas": [[float(x) for x in row] for row in tr.doas],
                }
                for tr in self.trajectories
            ],
            "detections": None if self.detections is None else [
                [[float(x) for x in slot] for slot in frame] for frame in self.detections
            ],
            "provenance": None if self.provenance is None else [
                [int(x) for x in frame] for frame in self.provenance
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scene":
        if doc.get("format_version") != FORMAT_VERSION:
            raise DatasetError(f"unsupported scene format_version: {doc.get('format_version')!r}")
        trajectories = [
            Trajectory(
                traj_id=int(tr["id"]),
                birth=int(tr["birth"]),
                death=int(tr["death"]),
                doas=np.array(tr["doas"], dtype=np.float64).reshape(-1, 3),
            )
            for tr in doc["trajectories"]
        ]
        detections = doc.get("detections")
        provenance = doc.get("provenance")
        return cls(
            index=int(doc["index"]),
            frames=int(doc["frames"]),
            frame_period=float(doc["frame_period"]),
            trajectories=trajectories,
            detections=None if detections is None else np.array(detections, dtype=np.float64),
            provenance=None if provenance is None else np.array(provenance, dtype=np.int64),
        )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _random_unit(rng) -> np.ndarray:
    return _unit(rng.standard_normal(3))


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation of v about a unit axis."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return v * c + np.cross(axis, v) * s + axis * float(axis @ v) * (1.0 - c)


def _scene_rng(cfg: SimConfig, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index, stream])


def generate_scene(cfg: SimConfig, index: int = 0) -> Scene:
    """Ground-truth trajectories only; detections are filled separately.

    Births are Bernoulli per frame, suppressed while the concurrency cap is
    reached; lifetimes are geometric with the configured mean. Each source
    walks the sphere by rotating about a slowly drifting axis, keeping every
    per-frame step within max_angular_speed * frame_period.
    """
    rng = _scene_rng(cfg, index, 0)
    max_step_rad = math.radians(cfg.max_angular_speed * cfg.frame_period)
    trajectories: list[Trajectory] = []
    live: list[dict] = []
    next_id = 0
    for t in range(cfg.frames):
        live = [tr for tr in live if tr["death"] >= t]
        if len(live) < cfg.max_concurrent and rng.random() < cfg.birth_rate:
            life = int(rng.geometric(1.0 / max(cfg.mean_lifetime, 1.0)))
            doa = _random_unit(rng)
            axis = _random_unit(rng)
            speed = rng.uniform(0.2, 1.0) * max_step_rad
            tr = {
                "id": next_id,
                "birth": t,
                "death": min(t + life - 1, cfg.frames - 1),
                "doa": doa,
                "axis": axis,
                "speed": speed,
                "path": [doa.copy()],
            }
            next_id += 1
            live.append(tr)
            trajectories.append(tr)
        for tr in live:
            if tr["birth"] == t:
                continue  # first frame keeps the spawn direction
            axis = _unit(tr["axis"] + 0.15 * rng.standard_normal(3))
            tr["axis"] = axis
            tr["doa"] = _unit(_rotate_about(tr["doa"], axis, tr["speed"]))
            tr["path"].append(tr["doa"].copy())

    return Scene(
        index=index,
        frames=cfg.frames,
        frame_period=cfg.frame_period,
        trajectories=[
            Trajectory(
                traj_id=tr["id"], birth=tr["birth"], death=tr["death"],
                doas=np.stack(tr["path"]),
            )
            for tr in trajectories
        ],
    )


def simulate_detector(scene: Scene, cfg: SimConfig) -> Scene:
    """Fill detector outputs for a ground-truth scene, in place.

    Active trajectories hold a detector slot until the whole mapping is
    re-drawn (probability shuffle_prob per frame, an identity switch at the
    detector). Detections scatter around the true direction with the
    configured angular noise and a norm in [0.8, 1]; misses and empty slots
    emit low-norm vectors, false alarms emit active-looking ones.
    """
    rng = _scene_rng(cfg, scene.index, 1)
    n_slots = cfg.slots
    detections = np.zeros((scene.frames, n_slots, 3))
    provenance = np.full((scene.frames, n_slots), -1, dtype=np.int64)
    slot_of: dict[int, int] = {}

    for t in range(scene.frames):
        active = scene.active_trajectories(t)
        active_ids = [tr.traj_id for tr in active]
        slot_of = {i: s for i, s in slot_of.items() if i in active_ids}

        newcomers = [i for i in active_ids if i not in slot_of]
        free = [s for s in range(n_slots) if s not in slot_of.values()]
        for i in newcomers:
            pick = int(rng.integers(len(free)))
            slot_of[i] = free.pop(pick)

        if active_ids and rng.random() < cfg.shuffle_prob:
            shuffled = rng.permutation(n_slots)[: len(active_ids)]
            slot_of = {i: int(s) for i, s in zip(active_ids, shuffled)}

        taken = set(slot_of.values())
        for s in range(n_slots):
            if s in taken:
                continue
            if rng.random() < cfg.false_alarm_prob:
                detections[t, s] = _random_unit(rng) * rng.uniform(0.8, 1.0)
            else:
                detections[t, s] = 0.03 * rng.standard_normal(3)

        for tr in active:
            s = slot_of[tr.traj_id]
            if rng.random() < cfg.miss_prob:
                detections[t, s] = _random_unit(rng) * rng.uniform(0.0, 0.3)
                continue
            doa = tr.doa_at(t)
            angle = abs(rng.normal(0.0, math.radians(cfg.noise_deg)))
            tangent = rng.standard_normal(3)
            tangent -= doa * float(tangent @ doa)
            norm = np.linalg.norm(tangent)
            direction = doa if norm < 1e-12 else _unit(
                doa * math.cos(angle) + (tangent / norm) * math.sin(angle)
            )
            detections[t, s] = direction * rng.uniform(0.8, 1.0)
            provenance[t, s] = tr.traj_id

    scene.detections = detections
    scene.provenance = provenance
    return scene


def make_scene(cfg: SimConfig, index: int = 0) -> Scene:
    return simulate_detector(generate_scene(cfg, index), cfg)


def make_dataset(cfg: SimConfig, n_scenes: int, first_index: int = 0) -> list:
    return [make_scene(cfg, first_index + i) for i in range(n_scenes)]


def save_scenes(path, scenes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene.to_dict(), separators=(",", ":")))
            fh.write("\n")


def load_scenes(path) -> list:
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                scenes.append(Scene.from_dict(doc))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: line {lineno}: bad scene object ({exc})") from exc
    return scenes
