"""The fixed 13-joint upper-body skeleton used by every pipeline.

Joint order is frozen; all corpora, labels, and the visual backbone index
into it. Hand and face point sets drive the motion statistics; the edge
list drives the graph convolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES = (
    "nose", "eyeL", "eyeR", "mouthL", "mouthR",
    "shoulderL", "shoulderR", "elbowL", "elbowR",
    "wristL", "wristR", "handTipL", "handTipR",
)

NOSE, EYE_L, EYE_R, MOUTH_L, MOUTH_R = 0, 1, 2, 3, 4
SHOULDER_L, SHOULDER_R, ELBOW_L, ELBOW_R = 5, 6, 7, 8
WRIST_L, WRIST_R, HAND_TIP_L, HAND_TIP_R = 9, 10, 11, 12

HAND_POINTS = (WRIST_L, WRIST_R, HAND_TIP_L, HAND_TIP_R)
FACE_POINTS = (NOSE, EYE_L, EYE_R, MOUTH_L, MOUTH_R)

EDGES = (
    (NOSE, EYE_L), (NOSE, EYE_R), (NOSE, MOUTH_L), (NOSE, MOUTH_R),
    (MOUTH_L, MOUTH_R),
    (NOSE, SHOULDER_L), (NOSE, SHOULDER_R), (SHOULDER_L, SHOULDER_R),
    (SHOULDER_L, ELBOW_L), (ELBOW_L, WRIST_L), (WRIST_L, HAND_TIP_L),
    (SHOULDER_R, ELBOW_R), (ELBOW_R, WRIST_R), (WRIST_R, HAND_TIP_R),
)


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple = JOINT_NAMES
    hand_set: tuple = HAND_POINTS
    face_set: tuple = FACE_POINTS
    edges: tuple = EDGES

    def __post_init__(self):
        n = len(self.joint_names)
        if set(self.hand_set) & set(self.face_set):
            raise ValueError("hand and face point sets must be disjoint")
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) references a missing joint")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def adjacency(self, normalize: bool = True) -> np.ndarray:
        """Symmetric adjacency with self-loops; optionally degree-normalized."""
        n = self.n_joints
        a = np.eye(n)
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        if normalize:
            deg = a.sum(axis=1)
            a = a / np.sqrt(np.outer(deg, deg))
        return a


SKELETON = Skeleton()
