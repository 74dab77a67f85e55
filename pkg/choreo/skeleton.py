"""
Squelette BODY_25 (OpenPose), poses, mouvements et leurs traitements :
normalisation par boîte englobante, reconstruction des articulations
manquantes et lissage par spline cubique.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import ConfigError, DataError, DegeneratePoseError, MissingJointError
from .styles import StyleLabel

logger = logging.getLogger(__name__)

JOINT_COUNT = 25
ROOT_JOINT = 8
RECOVERED_CONFIDENCE = 0.5

JOINT_NAMES = (
    'Nose', 'Neck', 'RShoulder', 'RElbow', 'RWrist', 'LShoulder', 'LElbow', 'LWrist',
    'MidHip', 'RHip', 'RKnee', 'RAnkle', 'LHip', 'LKnee', 'LAnkle', 'REye', 'LEye',
    'REar', 'LEar', 'LBigToe', 'LSmallToe', 'LHeel', 'RBigToe', 'RSmallToe', 'RHeel',
)

# (parent, enfant), arbre enraciné à MidHip
BODY_25_EDGES = (
    (8, 1), (8, 9), (8, 12),
    (1, 0), (1, 2), (1, 5),
    (2, 3), (3, 4), (5, 6), (6, 7),
    (9, 10), (10, 11), (12, 13), (13, 14),
    (0, 15), (0, 16), (15, 17), (16, 18),
    (14, 19), (19, 20), (14, 21),
    (11, 22), (22, 23), (11, 24),
)

# Épaules -> poignets et hanches -> chevilles/pieds
LIMB_JOINTS = (2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 19, 20, 21, 22, 23, 24)


@dataclass(frozen=True)
class SkeletonTopology:
    joint_count: int
    edges: Tuple[Tuple[int, int], ...]
    names: Tuple[str, ...]
    root: int

    def __post_init__(self):
        if len(self.edges) != self.joint_count - 1:
            raise ConfigError(f"Un arbre de {self.joint_count} sommets a {self.joint_count - 1} arêtes")
        children = [child for _, child in self.edges]
        if len(set(children)) != len(children):
            raise ConfigError("Une articulation a plusieurs parents")
        if self.root in children:
            raise ConfigError("La racine ne peut pas avoir de parent")
        # connexité : chaque articulation remonte jusqu'à la racine
        parents = self.parents
        for joint in range(self.joint_count):
            seen = set()
            while joint != self.root:
                if joint in seen or parents[joint] is None:
                    raise ConfigError(f"Articulation {joint} non reliée à la racine")
                seen.add(joint)
                joint = parents[joint]

    @property
    def parents(self) -> List[Optional[int]]:
        parents: List[Optional[int]] = [None] * self.joint_count
        for parent, child in self.edges:
            parents[child] = parent
        return parents

    def parent(self, joint: int) -> Optional[int]:
        return self.parents[joint]

    def topological_order(self) -> List[int]:
        """Articulations de la racine vers les feuilles"""
        children: Dict[int, List[int]] = {j: [] for j in range(self.joint_count)}
        for parent, child in self.edges:
            children[parent].append(child)
        order, queue = [], [self.root]
        while queue:
            joint = queue.pop(0)
            order.append(joint)
            queue.extend(children[joint])
        return order

    def adjacency(self, self_loops: bool = True) -> np.ndarray:
        adjacency = np.eye(self.joint_count) if self_loops else np.zeros((self.joint_count, self.joint_count))
        for parent, child in self.edges:
            adjacency[parent, child] = adjacency[child, parent] = 1.0
        return adjacency


BODY_25 = SkeletonTopology(joint_count=JOINT_COUNT, edges=BODY_25_EDGES, names=JOINT_NAMES, root=ROOT_JOINT)


@dataclass
class Pose:
    joints: np.ndarray
    confidence: np.ndarray = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.confidence is None:
            self.confidence = np.ones(self.joints.shape[0])
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.joints.shape != (JOINT_COUNT, 2) or self.confidence.shape != (JOINT_COUNT,):
            raise DataError(f"Pose de forme {self.joints.shape} invalide, (25, 2) attendu")
        present = self.confidence > 0
        if not np.all(np.isfinite(self.joints[present])):
            raise DataError("Coordonnées non finies pour une articulation présente")

    @property
    def present(self) -> np.ndarray:
        return self.confidence > 0


@dataclass
class Motion:
    """Séquence de N poses ; joints (N, 25, 2), confidence (N, 25)"""

    joints: np.ndarray
    confidence: np.ndarray = None
    fps: int = 24
    style: Optional[StyleLabel] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[1:] != (JOINT_COUNT, 2) or self.joints.shape[0] < 1:
            raise DataError(f"Mouvement de forme {self.joints.shape} invalide, (N, 25, 2) attendu")
        if self.confidence is None:
            self.confidence = np.ones(self.joints.shape[:2])
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.confidence.shape != self.joints.shape[:2]:
            raise DataError(f"Confiances de forme {self.confidence.shape} pour {self.joints.shape}")
        if self.style is not None:
            self.style = StyleLabel.parse(self.style)

    def __len__(self) -> int:
        return self.joints.shape[0]

    @property
    def frames(self) -> List[Pose]:
        return [self.pose(t) for t in range(len(self))]

    def pose(self, t: int) -> Pose:
        return Pose(self.joints[t].copy(), self.confidence[t].copy())

    def copy(self, **changes) -> 'Motion':
        base = replace(self, joints=self.joints.copy(), confidence=self.confidence.copy(),
                       metadata=dict(self.metadata))
        return replace(base, **changes) if changes else base

    def slice(self, start: int, stop: int) -> 'Motion':
        return self.copy(joints=self.joints[start:stop].copy(), confidence=self.confidence[start:stop].copy())

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], fps: int = 24, style=None) -> 'Motion':
        return cls(np.stack([p.joints for p in poses]), np.stack([p.confidence for p in poses]), fps, style)


# ============================================================================
# NORMALISATION
# ============================================================================

def _bounding_box(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    low = points.min(axis=0)
    extent = points.max(axis=0) - low
    return low, extent, float(np.hypot(extent[0], extent[1]))


def _normalize_points(joints: np.ndarray, present: np.ndarray, reference: np.ndarray) -> np.ndarray:
    low, extent, diagonal = _bounding_box(reference)
    if diagonal <= 1e-12:
        raise DegeneratePoseError("degenerate pose : diagonale de la boîte englobante nulle")
    out = joints.copy()
    out[present] = (joints[present] - low - extent / 2.0) / diagonal + 0.5
    return out


def normalize_pose(pose: Pose) -> Pose:
    """
    Ramène la pose dans l'espace normalisé : centre de la boîte englobante en
    (0.5, 0.5) et diagonale unitaire. Les articulations absentes sont laissées
    telles quelles.
    """
    present = pose.present
    if present.sum() < 2:
        raise DegeneratePoseError("degenerate pose : moins de deux articulations présentes")
    joints = _normalize_points(pose.joints, present, pose.joints[present])
    return Pose(joints, pose.confidence.copy())


def normalize_motion(motion: Motion, per_sequence: bool = False) -> Motion:
    """Normalisation image par image (défaut) ou sur toute la séquence"""
    present = motion.confidence > 0
    if per_sequence:
        if present.sum() < 2:
            raise DegeneratePoseError("degenerate pose : séquence sans articulations")
        reference = motion.joints[present]
        joints = np.stack([
            _normalize_points(motion.joints[t], present[t], reference) for t in range(len(motion))
        ])
    else:
        joints = np.stack([normalize_pose(motion.pose(t)).joints for t in range(len(motion))])
    return motion.copy(joints=joints)


def denormalize_motion(motion: Motion, canvas: float = 512.0) -> Motion:
    """Projette l'espace normalisé [0, 1]² sur une toile carrée en pixels"""
    return motion.copy(joints=motion.joints * float(canvas))


# ============================================================================
# ARTICULATIONS MANQUANTES
# ============================================================================

def _nearest_frame(candidates: np.ndarray, t: int) -> Optional[int]:
    if candidates.size == 0:
        return None
    distances = np.abs(candidates - t)
    # argmin renvoie le premier minimum : à égalité, l'image antérieure
    return int(candidates[np.argmin(distances)])


def recover_missing_joints(motion: Motion, topology: SkeletonTopology = BODY_25) -> Motion:
    """
    Reconstruit chaque articulation manquante en lui appliquant le déplacement
    de son parent depuis l'image de référence la plus proche où l'enfant et le
    parent sont observés. Les articulations reconstruites reçoivent la
    confiance 0.5 ; les coordonnées observées ne sont pas modifiées.
    """
    observed = motion.confidence > 0
    never_seen = [topology.names[j] for j in range(topology.joint_count) if not observed[:, j].any()]
    if never_seen:
        raise MissingJointError(never_seen)
    if observed.all():
        return motion.copy()

    joints = motion.joints.copy()
    confidence = motion.confidence.copy()
    available = observed.copy()
    parents = topology.parents
    recovered = 0

    for joint in topology.topological_order():
        missing = np.flatnonzero(~observed[:, joint])
        if missing.size == 0:
            continue
        parent = parents[joint]
        for t in missing:
            reference = None
            if parent is not None and available[t, parent]:
                both = np.flatnonzero(observed[:, joint] & observed[:, parent])
                reference = _nearest_frame(both, t)
            if reference is not None:
                joints[t, joint] = joints[reference, joint] + (joints[t, parent] - joints[reference, parent])
            else:
                # racine ou parent absent : on maintient la dernière position observée
                nearest = _nearest_frame(np.flatnonzero(observed[:, joint]), t)
                joints[t, joint] = joints[nearest, joint]
            confidence[t, joint] = RECOVERED_CONFIDENCE
            available[t, joint] = True
            recovered += 1

    logger.debug(f"{recovered} articulations reconstruites sur {len(motion)} images")
    return motion.copy(joints=joints, confidence=confidence)


# ============================================================================
# LISSAGE
# ============================================================================

def smooth_motion(motion: Motion, knot_stride: int = 4) -> Motion:
    """
    Ajuste une spline cubique naturelle par articulation et par coordonnée sur
    les images {0, k, 2k, ..., N-1} puis la rééchantillonne sur les N images.
    """
    if knot_stride < 1:
        raise ConfigError(f"knot_stride doit être >= 1, reçu {knot_stride}")
    frames = len(motion)
    if frames < 2 * knot_stride:
        raise DataError(f"{frames} images insuffisantes pour knot_stride={knot_stride}")
    if knot_stride == 1:
        return motion.copy()
    knots = np.arange(0, frames, knot_stride)
    if knots[-1] != frames - 1:
        knots = np.append(knots, frames - 1)
    spline = CubicSpline(knots, motion.joints[knots], axis=0, bc_type='natural')
    joints = spline(np.arange(frames))
    joints[knots] = motion.joints[knots]
    return motion.copy(joints=joints)


# ============================================================================
# FORMAT JSON
# ============================================================================

def motion_to_dict(motion: Motion) -> dict:
    frames = np.concatenate([motion.joints, motion.confidence[..., None]], axis=2)
    return {
        'fps': int(motion.fps),
        'style': motion.style.name.lower() if motion.style is not None else None,
        'frames': frames.tolist(),
    }


def motion_from_dict(payload: dict) -> Motion:
    if not isinstance(payload, dict) or 'frames' not in payload:
        raise DataError("JSON de mouvement invalide : clé 'frames' absente")
    try:
        frames = np.asarray(payload['frames'], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"JSON de mouvement invalide : {e}") from e
    if frames.ndim != 3 or frames.shape[1:] != (JOINT_COUNT, 3):
        raise DataError(f"Images de forme {frames.shape}, [N][25][3] attendu")
    fps = payload.get('fps', 24)
    if isinstance(fps, bool) or not isinstance(fps, int) or fps < 1:
        raise DataError(f"fps invalide : {fps!r}")
    style = payload.get('style')
    return Motion(frames[..., :2], frames[..., 2], fps=fps, style=StyleLabel.parse(style) if style else None)


def save_motion(motion: Motion, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(motion_to_dict(motion)))
    return path


def load_motion(path: Union[str, Path]) -> Motion:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"Fichier de mouvement introuvable : {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"JSON mal formé dans {path} : {e}") from e
    return motion_from_dict(payload)
