"""Tracking evaluation: angular error, identity switches, DET points.

Matching per frame is a gated minimum-cost assignment between active
predictions (norm at or above the activity threshold) and the ground truths
of that frame. Pairs further apart than the gate never match: their cost is
set prohibitively high and they are dropped after the assignment, which
makes false positives non-increasing and misses non-decreasing in the
activity threshold.

An identity switch is counted whenever a ground-truth trajectory's matched
slot differs from the slot at its previous matched frame; the first match of
a trajectory does not count.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .recurrent import accdoa_norms

GATE_BLOCK = 1.0e6  # sentinel cost for pairs outside the gate


def angular_error(a, b) -> float:
    """Great-circle angle between two direction vectors, in degrees."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angular error of a zero vector is undefined")
    dot = float(a @ b) / (na * nb)
    return math.degrees(math.acos(min(1.0, max(-1.0, dot))))


def _pairwise_angles(preds: np.ndarray, gts: np.ndarray) -> np.ndarray:
    p = preds / np.linalg.norm(preds, axis=1, keepdims=True)
    g = gts / np.linalg.norm(gts, axis=1, keepdims=True)
    dots = np.clip(p @ g.T, -1.0, 1.0)
    return np.degrees(np.arccos(dots))


@dataclass
class FrameMatch:
    """Outcome of matching one frame: slot per ground truth (-1 unmatched)."""

    slots: np.ndarray
    angles: np.ndarray  # matched pairs only, aligned with slots >= 0
    fp_count: int
    miss_count: int


def match_frame(preds, gts, gate_deg: float = 20.0, activity_threshold: float = 0.5) -> FrameMatch:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 3)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    n_gt = gts.shape[0]
    active_idx = np.flatnonzero(accdoa_norms(preds) >= activity_threshold)
    n_active = active_idx.size
    slots = np.full(n_gt, -1, dtype=np.int64)
    angles = np.full(n_gt, np.nan)
    if n_gt == 0 or n_active == 0:
        return FrameMatch(slots=slots, angles=angles, fp_count=n_active, miss_count=n_gt)

    ang = _pairwise_angles(preds[active_idx], gts)
    cost = np.where(ang <= gate_deg, ang, GATE_BLOCK)
    if n_gt <= n_active:
        picked = backend.lap_solve(np.ascontiguousarray(cost.T))  # per gt: active index
        pairs = [(int(picked[j]), j) for j in range(n_gt)]
    else:
        picked = backend.lap_solve(np.ascontiguousarray(cost))  # per active pred: gt index
        pairs = [(i, int(picked[i])) for i in range(n_active)]
    for i, j in pairs:
        if ang[i, j] <= gate_deg:
            slots[j] = active_idx[i]
            angles[j] = ang[i, j]
    matched = int((slots >= 0).sum())
    return FrameMatch(
        slots=slots,
        angles=angles,
        fp_count=n_active - matched,
        miss_count=n_gt - matched,
    )


def ids_count(matches_per_frame) -> int:
    """Identity switches given per-frame {trajectory id: slot} matchings."""
    last: dict[int, int] = {}
    switches = 0
    for frame in matches_per_frame:
        for traj, slot in frame.items():
            if traj in last and last[traj] != slot:
                switches += 1
            last[traj] = slot
    return switches


@dataclass
class TrackReport:
    scene_index: int
    frames: int
    frame_period: float
    active_gt_frames: int
    matched_pairs: int
    mean_error_deg: float
    median_error_deg: float
    ids: int
    ids_per_active_minute: float
    fp_count: int
    miss_count: int

    def to_row(self) -> list:
        return [
            self.scene_index, self.frames, self.active_gt_frames, self.matched_pairs,
            f"{self.mean_error_deg:.6f}", f"{self.median_error_deg:.6f}",
            self.ids, f"{self.ids_per_active_minute:.6f}", self.fp_count, self.miss_count,
        ]


REPORT_HEADER = [
    "scene", "frames", "active_gt_frames", "matched_pairs",
    "mean_error_deg", "median_error_deg",
    "ids", "ids_per_active_min", "fp", "miss",
]


def evaluate_scene(pred_frames, scene, gate_deg: float = 20.0,
                   activity_threshold: float = 0.5) -> TrackReport:
    """Score one scene's predictions against its ground truth.

    Rates use per-trajectory active time: active_gt_frames counts
    (frame, active trajectory) pairs, and the switch rate is per minute of
    that time.
    """
    targets = scene.targets()
    pred_frames = np.asarray(pred_frames, dtype=np.float64)
    errors: list[float] = []
    matches: list[dict] = []
    fp = miss = active_frames = 0
    for t in range(scene.frames):
        ids, doas = targets[t]
        m = match_frame(pred_frames[t], doas, gate_deg, activity_threshold)
        fp += m.fp_count
        miss += m.miss_count
        active_frames += ids.size
        frame_map = {}
        for j, traj in enumerate(ids):
            if m.slots[j] >= 0:
                frame_map[int(traj)] = int(m.slots[j])
                errors.append(float(m.angles[j]))
        matches.append(frame_map)
    switches = ids_count(matches)
    active_minutes = active_frames * scene.frame_period / 60.0
    return TrackReport(
        scene_index=scene.index,
        frames=scene.frames,
        frame_period=scene.frame_period,
        active_gt_frames=active_frames,
        matched_pairs=len(errors),
        mean_error_deg=float(np.mean(errors)) if errors else float("nan"),
        median_error_deg=float(np.median(errors)) if errors else float("nan"),
        ids=switches,
        ids_per_active_minute=switches / active_minutes if active_minutes > 0 else 0.0,
        fp_count=fp,
        miss_count=miss,
    )


def aggregate_reports(reports) -> dict:
    """Pooled counts across scenes; rates use pooled denominators."""
    total_active = sum(r.active_gt_frames for r in reports)
    total_ids = sum(r.ids for r in reports)
    total_minutes = sum(r.active_gt_frames * r.frame_period for r in reports) / 60.0
    weighted_err = [
        (r.mean_error_deg, r.matched_pairs) for r in reports if r.matched_pairs > 0
    ]
    matched = sum(n for _, n in weighted_err)
    mean_err = (
        sum(e * n for e, n in weighted_err) / matched if matched > 0 else float("nan")
    )
    return {
        "scenes": len(reports),
        "active_gt_frames": total_active,
        "matched_pairs": matched,
        "mean_error_deg": mean_err,
        "ids": total_ids,
        "ids_per_active_min": total_ids / total_minutes if total_minutes > 0 else 0.0,
        "fp": sum(r.fp_count for r in reports),
        "miss": sum(r.miss_count for r in reports),
        "miss_rate": sum(r.miss_count for r in reports) / total_active if total_active else 0.0,
    }


def write_report_csv(path, reports, aggregate) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        fh.write("# errors over matched pairs only; ids rate per active-trajectory minute;"
                 " miss rate per active gt frame; fp rate per frame\n")
        writer.writerow(REPORT_HEADER)
        for r in reports:
            writer.writerow(r.to_row())
        writer.writerow([
            "aggregate", "", aggregate["active_gt_frames"], aggregate["matched_pairs"],
            f"{aggregate['mean_error_deg']:.6f}", "",
            aggregate["ids"], f"{aggregate['ids_per_active_min']:.6f}",
            aggregate["fp"], aggregate["miss"],
        ])


def write_report_json(path, reports, aggregate) -> None:
    doc = {
        "aggregate": aggregate,
        "scenes": [r.__dict__ for r in reports],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")


@dataclass
class DetPoint:
    threshold: float
    fp_rate: float  # false positives per frame
    miss_rate: float  # misses per active gt frame
    degenerate: bool = False  # no active gt frames: miss rate reported as 0


def det_curve(pred_frames_list, scenes, thresholds, gate_deg: float = 20.0) -> list:
    """Miss rate against false-positive rate swept over the activity threshold."""
    thresholds = list(thresholds)
    if any(not (0.0 < th < 1.0) for th in thresholds):
        raise ValueError("thresholds must lie in (0, 1)")
    if sorted(thresholds) != thresholds:
        raise ValueError("thresholds must be sorted ascending")
    points = []
    all_targets = [scene.targets() for scene in scenes]
    for th in thresholds:
        fp = miss = frames = active = 0
        for preds, scene, targets in zip(pred_frames_list, scenes, all_targets):
            preds = np.asarray(preds, dtype=np.float64)
            for t in range(scene.frames):
                ids, doas = targets[t]
                m = match_frame(preds[t], doas, gate_deg, th)
                fp += m.fp_count
                miss += m.miss_count
                active += ids.size
            frames += scene.frames
        degenerate = active == 0
        points.append(DetPoint(
            threshold=th,
            fp_rate=fp / frames if frames else 0.0,
            miss_rate=0.0 if degenerate else miss / active,
            degenerate=degenerate,
        ))
    return points


def write_det_csv(path, points) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fp_per_frame", "miss_rate", "degenerate"])
        for p in points:
            writer.writerow([
                f"{p.threshold:.6f}", f"{p.fp_rate:.6f}", f"{p.miss_rate:.6f}",
                int(p.degenerate),
            ])
