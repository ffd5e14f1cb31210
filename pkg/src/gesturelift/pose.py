"""Upper-body skeleton, bone-direction pose representation and positional error.

A pose is stored as one direction vector per bone (child minus parent,
normalized).  The root position is never stored, so every pose is
root-centered and independent of bone length.  Bones whose length is
numerically zero are encoded as the all-zero vector ("zero sentinel").

Coordinates are ``(x, y, z)`` with ``z`` the depth axis; 2D data keeps
``(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gesturelift.errors import StructuralError

#: Vectors shorter than this are treated as degenerate bones.
ZERO_EPS = 1e-12
#: Index of the depth coordinate in 3D data.
DEPTH_AXIS = 2


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint tree.  Bone ``b`` ends at the ``b``-th non-root joint."""

    joint_names: tuple
    parent_index: tuple
    bone_lengths: tuple

    def __post_init__(self):
        n = len(self.joint_names)
        if len(self.parent_index) != n:
            raise StructuralError("parent_index must have one entry per joint")
        roots = [j for j, p in enumerate(self.parent_index) if p is None or p < 0]
        if len(roots) != 1:
            raise StructuralError(f"skeleton needs exactly one root, found {len(roots)}")
        if len(self.bone_lengths) != n - 1:
            raise StructuralError(f"expected {n - 1} bone lengths, got {len(self.bone_lengths)}")
        if any(not (length > 0) for length in self.bone_lengths):
            raise StructuralError("bone lengths must be positive")
        # every joint must reach the root without revisiting a joint
        for j in range(n):
            seen = set()
            k = j
            while k != roots[0]:
                if k in seen or not (0 <= self.parent_index[k] < n):
                    raise StructuralError("parent graph is not a tree")
                seen.add(k)
                k = self.parent_index[k]

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def n_bones(self) -> int:
        return len(self.joint_names) - 1

    @property
    def root(self) -> int:
        return next(j for j, p in enumerate(self.parent_index) if p is None or p < 0)

    @property
    def bone_joints(self) -> list:
        """Child joint index of every bone, in bone order."""
        return [j for j in range(self.n_joints) if j != self.root]

    def topological_order(self) -> list:
        """Joints ordered so that every parent precedes its children."""
        order, placed = [self.root], {self.root}
        while len(order) < self.n_joints:
            for j in range(self.n_joints):
                if j not in placed and self.parent_index[j] in placed:
                    order.append(j)
                    placed.add(j)
        return order

    def chain_matrix(self) -> np.ndarray:
        """``(n_joints, n_bones)`` matrix with ``1`` where a bone lies on the root path of a joint."""
        bone_of = {j: b for b, j in enumerate(self.bone_joints)}
        chain = np.zeros((self.n_joints, self.n_bones))
        for j in range(self.n_joints):
            k = j
            while k != self.root:
                chain[j, bone_of[k]] = 1.0
                k = self.parent_index[k]
        return chain


DEFAULT_SKELETON = SkeletonSpec(
    joint_names=(
        "spine_base",
        "spine_chest",
        "neck",
        "head",
        "l_shoulder",
        "r_shoulder",
        "l_elbow",
        "r_elbow",
        "l_wrist",
        "r_wrist",
    ),
    parent_index=(-1, 0, 1, 2, 2, 2, 4, 5, 6, 7),
    bone_lengths=(0.25, 0.12, 0.12, 0.18, 0.18, 0.28, 0.28, 0.26, 0.26),
)


@dataclass
class PoseSequence:
    """``dirs`` has shape ``(T, n_bones, D)`` with ``D`` in ``{2, 3}``."""

    dirs: np.ndarray
    fps: float = 15.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dirs = np.asarray(self.dirs)
        if self.dirs.ndim != 3 or self.dirs.shape[2] not in (2, 3):
            raise StructuralError(f"pose directions must be (T, bones, 2|3), got {self.dirs.shape}")
        if not self.fps > 0:
            raise StructuralError("fps must be positive")

    @property
    def dim(self) -> int:
        return self.dirs.shape[2]

    def __len__(self) -> int:
        return self.dirs.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    def norms_valid(self, tol=1e-6) -> bool:
        norms = np.linalg.norm(self.dirs, axis=-1)
        ok = (np.abs(norms - 1.0) <= tol) | np.all(self.dirs == 0, axis=-1)
        return bool(np.all(ok))


def normalize_dirs(v: np.ndarray) -> np.ndarray:
    """Scale vectors along the last axis to unit length; degenerate ones become zero."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm > ZERO_EPS, norm, 1.0)
    return np.where(norm > ZERO_EPS, v / safe, 0.0)


def joints_to_dirvec(joints, skeleton: SkeletonSpec = DEFAULT_SKELETON, fps=15.0) -> PoseSequence:
    """Convert ``(T, n_joints, D)`` joint positions to bone directions."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 3 or joints.shape[2] not in (2, 3):
        raise StructuralError(f"joint array must be (T, joints, 2|3), got {joints.shape}")
    if joints.shape[1] != skeleton.n_joints:
        raise StructuralError(
            f"skeleton has {skeleton.n_joints} joints, array has {joints.shape[1]}"
        )
    if not np.all(np.isfinite(joints)):
        raise StructuralError("joint positions contain NaN or Inf")
    child = skeleton.bone_joints
    parent = [skeleton.parent_index[j] for j in child]
    return PoseSequence(normalize_dirs(joints[:, child] - joints[:, parent]), fps=fps)


def dirvec_to_joints(seq, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> np.ndarray:
    """Rebuild root-centered joint positions from bone directions.

    Accepts a :class:`PoseSequence` or a raw ``(T, n_bones, D)`` array.
    """
    dirs = seq.dirs if isinstance(seq, PoseSequence) else np.asarray(seq)
    if dirs.ndim != 3 or dirs.shape[1] != skeleton.n_bones:
        raise StructuralError(f"expected (T, {skeleton.n_bones}, D) directions, got {dirs.shape}")
    lengths = np.asarray(skeleton.bone_lengths, dtype=dirs.dtype)
    out = np.zeros((dirs.shape[0], skeleton.n_joints, dirs.shape[2]), dtype=dirs.dtype)
    bone_of = {j: b for b, j in enumerate(skeleton.bone_joints)}
    for j in skeleton.topological_order()[1:]:
        b = bone_of[j]
        out[:, j] = out[:, skeleton.parent_index[j]] + lengths[b] * dirs[:, b]
    return out


def project_to_2d(seq: PoseSequence) -> PoseSequence:
    """Drop the depth coordinate and renormalize each bone direction."""
    if seq.dim != 3:
        raise StructuralError("project_to_2d expects a 3D pose sequence")
    return PoseSequence(normalize_dirs(seq.dirs[..., :DEPTH_AXIS]), fps=seq.fps)


def embed_zero_depth(seq: PoseSequence) -> PoseSequence:
    """Naive lift: append a zero depth coordinate and renormalize."""
    if seq.dim != 2:
        raise StructuralError("embed_zero_depth expects a 2D pose sequence")
    pad = np.zeros(seq.dirs.shape[:2] + (1,), dtype=seq.dirs.dtype)
    return PoseSequence(normalize_dirs(np.concatenate([seq.dirs, pad], axis=-1)), fps=seq.fps)


def mpjpe(a, b) -> float:
    """Mean over frames and joints of the Euclidean distance between ``a`` and ``b``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise StructuralError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def batch_mpjpe(pred_dirs, gt_dirs, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> float:
    """MPJPE between two stacks of ``(T, bones, D)`` direction sequences, in joint space."""
    pred = np.concatenate([dirvec_to_joints(np.asarray(d, np.float64), skeleton) for d in pred_dirs])
    gt = np.concatenate([dirvec_to_joints(np.asarray(d, np.float64), skeleton) for d in gt_dirs])
    return mpjpe(pred, gt)
