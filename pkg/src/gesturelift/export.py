"""Joint-position export to CSV (``frame,joint,x,y,z``) and JSON.

Values are written as the shortest decimal string that round-trips the
float32 value, so re-reading a file gives bitwise-identical positions.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from gesturelift.errors import ParseError, StructuralError
from gesturelift.pose import DEFAULT_SKELETON, PoseSequence, SkeletonSpec, dirvec_to_joints

FORMATS = ("csv", "json")
AXES = ("x", "y", "z")


def _f32(v) -> str:
    return np.format_float_positional(np.float32(v), unique=True, trim="-")


def sequence_joints(seq: PoseSequence, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> np.ndarray:
    """float32 ``(T, joints, D)`` positions, the exact values that get exported."""
    return dirvec_to_joints(np.asarray(seq.dirs, np.float64), skeleton).astype(np.float32)


def _check(joints, skeleton):
    joints = np.asarray(joints, np.float32)
    if joints.ndim != 3 or joints.shape[1] != skeleton.n_joints or joints.shape[2] not in (2, 3):
        raise StructuralError(f"expected (T, {skeleton.n_joints}, 2|3) joints, got {joints.shape}")
    return joints


def joints_to_csv(joints, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> str:
    joints = _check(joints, skeleton)
    axes = AXES[:joints.shape[2]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("frame", "joint") + axes)
    for f, frame in enumerate(joints):
        for j, name in enumerate(skeleton.joint_names):
            w.writerow([f, name] + [_f32(v) for v in frame[j]])
    return buf.getvalue()


def csv_to_joints(text: str, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["frame", "joint"]:
        raise ParseError("missing frame,joint header")
    dim = len(rows[0]) - 2
    if dim not in (2, 3):
        raise ParseError(f"expected 2 or 3 coordinate columns, got {dim}")
    index = {name: j for j, name in enumerate(skeleton.joint_names)}
    body = rows[1:]
    if len(body) % skeleton.n_joints:
        raise ParseError(f"{len(body)} rows is not a whole number of {skeleton.n_joints}-joint frames")
    out = np.zeros((len(body) // skeleton.n_joints, skeleton.n_joints, dim), np.float32)
    for line, row in enumerate(body, start=2):
        try:
            f, j = int(row[0]), index[row[1]]
            out[f, j] = [np.float32(v) for v in row[2:2 + dim]]
        except (KeyError, ValueError, IndexError) as exc:
            raise ParseError(f"bad row on line {line}: {row!r}") from exc
    return out


def joints_to_json(joints, skeleton: SkeletonSpec = DEFAULT_SKELETON, fps=15.0) -> str:
    joints = _check(joints, skeleton)
    doc = {
        "fps": fps,
        "joints": list(skeleton.joint_names),
        "parents": list(skeleton.parent_index),
        "frames": [[[float(_f32(v)) for v in p] for p in frame] for frame in joints],
    }
    return json.dumps(doc, indent=1) + "\n"


def json_to_joints(text: str) -> np.ndarray:
    try:
        doc = json.loads(text)
        return np.asarray(doc["frames"], np.float32)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"not a pose export document: {exc}") from exc


def export_sequence(seq: PoseSequence, fmt="csv", skeleton: SkeletonSpec = DEFAULT_SKELETON) -> str:
    if fmt not in FORMATS:
        raise StructuralError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")
    joints = sequence_joints(seq, skeleton)
    if fmt == "csv":
        return joints_to_csv(joints, skeleton)
    return joints_to_json(joints, skeleton, seq.fps)
