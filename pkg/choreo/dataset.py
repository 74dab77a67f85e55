"""
Corpus de séquences de poses : ingestion, extraction de fenêtres de 64 images
et augmentation (bruit PG sur les membres, décalages temporels).

Le corpus réel n'est pas distribué ; make_synthetic_corpus produit trois
familles de mouvements paramétriques, chacune associée à une texture audio
distincte à 16 kHz.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .audio import SAMPLE_RATE, AudioClip, load_wav, save_wav
from .exceptions import ConfigError, DataError
from .latent import sample_paths
from .skeleton import (JOINT_COUNT, LIMB_JOINTS, Motion, load_motion, normalize_motion,
                       recover_missing_joints, save_motion)
from .styles import NUM_STYLES, StyleLabel

logger = logging.getLogger(__name__)

WINDOW_FRAMES = 64
MIN_CLIP_FRAMES = 64
SPLITS = ('train', 'eval')


# ============================================================================
# CORPUS
# ============================================================================

@dataclass
class CorpusClip:
    motion: Motion
    style: StyleLabel
    source_id: str
    split: str = 'train'
    audio: Optional[AudioClip] = None
    audio_path: Optional[Path] = None

    def __post_init__(self):
        self.style = StyleLabel.parse(self.style)
        if self.split not in SPLITS:
            raise DataError(f"Partition inconnue pour {self.source_id} : {self.split!r}")
        if len(self.motion) < MIN_CLIP_FRAMES:
            raise DataError(f"{self.source_id} : {len(self.motion)} images, au moins {MIN_CLIP_FRAMES} requises")
        if self.motion.fps != 24:
            raise DataError(f"{self.source_id} : {self.motion.fps} FPS, 24 attendus")

    def load_audio(self) -> Optional[AudioClip]:
        if self.audio is None and self.audio_path is not None:
            self.audio = load_wav(self.audio_path)
        return self.audio


@dataclass
class Corpus:
    clips: List[CorpusClip] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self) -> Iterator[CorpusClip]:
        return iter(self.clips)

    @property
    def split(self) -> str:
        splits = {clip.split for clip in self.clips}
        return splits.pop() if len(splits) == 1 else 'mixed'

    @property
    def styles(self) -> np.ndarray:
        return np.array([int(clip.style) for clip in self.clips], dtype=np.int64)

    def subset(self, split: str) -> 'Corpus':
        if split not in SPLITS:
            raise DataError(f"Partition inconnue : {split!r}")
        return Corpus([clip for clip in self.clips if clip.split == split])

    def style_counts(self) -> Dict[StyleLabel, int]:
        counts = np.bincount(self.styles, minlength=NUM_STYLES) if self.clips else np.zeros(NUM_STYLES, int)
        return OrderedDict((label, int(counts[label])) for label in StyleLabel)


def prepare_motion(motion: Motion, per_sequence: bool = False) -> Motion:
    """Articulations manquantes reconstruites puis normalisation dans la boîte unité"""
    return normalize_motion(recover_missing_joints(motion), per_sequence=per_sequence)


# ============================================================================
# AUGMENTATION
# ============================================================================

@dataclass(frozen=True)
class AugmentConfig:
    shift_stride: int = 32
    eval_shift_stride: int = 32
    eval_shift_stride_mj: int = 16
    gp_noise: bool = True
    amplitude: float = 0.02
    noise_sigma: float = 100.0
    limb_joints: Tuple[int, ...] = LIMB_JOINTS
    window: int = WINDOW_FRAMES

    def __post_init__(self):
        if min(self.shift_stride, self.eval_shift_stride, self.eval_shift_stride_mj) < 1:
            raise ConfigError("Les décalages temporels doivent être >= 1")
        if self.amplitude < 0:
            raise ConfigError(f"Amplitude de bruit négative : {self.amplitude}")
        if self.noise_sigma <= 0:
            raise ConfigError(f"Largeur de bande du bruit invalide : {self.noise_sigma}")
        if any(not 0 <= j < JOINT_COUNT for j in self.limb_joints):
            raise ConfigError(f"Articulations de membres invalides : {self.limb_joints}")
        if self.window < 16 or self.window % 16:
            raise ConfigError(f"La fenêtre doit être un multiple de 16, reçu {self.window}")

    def stride_for(self, style: StyleLabel, split: str) -> int:
        if split == 'train':
            return self.shift_stride
        return self.eval_shift_stride_mj if style == StyleLabel.MJ else self.eval_shift_stride


def window_count(length: int, window: int, stride: int) -> int:
    if length < window:
        return 0
    return (length - window) // stride + 1


def extract_windows(clip: Motion, N: int = WINDOW_FRAMES, stride: int = 32) -> List[Motion]:
    """Tranches exactes aux positions 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ConfigError(f"stride doit être >= 1, reçu {stride}")
    if len(clip) < N:
        raise DataError(f"Séquence de {len(clip)} images plus courte que la fenêtre ({N})")
    windows = []
    for offset in range(0, len(clip) - N + 1, stride):
        window = clip.slice(offset, offset + N)
        window.metadata['offset'] = offset
        windows.append(window)
    return windows


def gp_limb_noise(m: Motion, cfg: AugmentConfig, rng=None) -> Motion:
    """Ajoute aux articulations des bras et des jambes un bruit PG cohérent dans le temps"""
    if cfg.amplitude == 0:
        return m.copy()
    limbs = list(cfg.limb_joints)
    paths = sample_paths(len(m), cfg.noise_sigma, 2 * len(limbs), rng)     # (2L, N)
    noise = cfg.amplitude * paths.reshape(len(limbs), 2, len(m)).transpose(2, 0, 1)
    joints = m.joints.copy()
    joints[:, limbs, :] += noise
    return m.copy(joints=joints)


@dataclass
class WindowSet:
    """Échantillons de 64 images prêts pour l'entraînement ou l'évaluation"""

    motions: List[Motion]
    styles: np.ndarray
    sources: List[str]

    def __len__(self) -> int:
        return len(self.motions)

    def joints(self) -> np.ndarray:
        if not self.motions:
            return np.zeros((0, WINDOW_FRAMES, JOINT_COUNT, 2))
        return np.stack([m.joints for m in self.motions])

    def of_style(self, style) -> 'WindowSet':
        label = int(StyleLabel.parse(style))
        keep = [i for i, s in enumerate(self.styles) if s == label]
        return WindowSet([self.motions[i] for i in keep], self.styles[keep], [self.sources[i] for i in keep])


def augment_corpus(corpus: Corpus, cfg: AugmentConfig, seed=None, per_sequence: bool = False) -> WindowSet:
    """
    Partition train : décalages de shift_stride et bruit PG (si activé).
    Partition eval : décalages seuls (16 pour MJ, 32 sinon).
    """
    rng = np.random.default_rng(seed)
    motions, styles, sources = [], [], []
    for clip in corpus:
        prepared = prepare_motion(clip.motion, per_sequence=per_sequence)
        windows = extract_windows(prepared, cfg.window, cfg.stride_for(clip.style, clip.split))
        if clip.split == 'train' and cfg.gp_noise:
            windows = [gp_limb_noise(w, cfg, rng) for w in windows]
        for window in windows:
            window.style = clip.style
            motions.append(window)
            styles.append(int(clip.style))
            sources.append(clip.source_id)
    logger.info(f"Augmentation ({corpus.split}) : {len(corpus)} clips -> {len(motions)} fenêtres")
    return WindowSet(motions, np.asarray(styles, dtype=np.int64), sources)


# ============================================================================
# STATISTIQUES
# ============================================================================

@dataclass
class CorpusStatistics:
    """Nombre de clips et de fenêtres par style et par partition"""

    raw: Dict[str, Dict[StyleLabel, int]]
    augmented: Dict[str, Dict[StyleLabel, int]]

    def total(self, table: str, split: str) -> int:
        return sum(getattr(self, table)[split].values())

    def to_dict(self) -> dict:
        return {
            table: {
                split: dict({label.name.lower(): count for label, count in counts.items()},
                            total=sum(counts.values()))
                for split, counts in getattr(self, table).items()
            }
            for table in ('raw', 'augmented')
        }

    def render(self) -> str:
        styles = [label.display for label in StyleLabel]
        header = ['Setup'] + [f"{split}:{name}" for split in SPLITS for name in styles + ['Total']]
        rows = [header]
        for title, table in (('w/o augmentation', self.raw), ('w/ augmentation', self.augmented)):
            row = [title]
            for split in SPLITS:
                counts = [table[split][label] for label in StyleLabel]
                row += [str(c) for c in counts] + [str(sum(counts))]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return '\n'.join('  '.join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)


def statistics_from_lengths(lengths: Dict[Tuple[str, StyleLabel], Sequence[int]],
                            cfg: AugmentConfig) -> CorpusStatistics:
    """Comptes bruts et augmentés à partir des seules longueurs de clips"""
    raw = {split: OrderedDict((label, 0) for label in StyleLabel) for split in SPLITS}
    augmented = {split: OrderedDict((label, 0) for label in StyleLabel) for split in SPLITS}
    for (split, style), clip_lengths in lengths.items():
        label = StyleLabel.parse(style)
        stride = cfg.stride_for(label, split)
        raw[split][label] += len(clip_lengths)
        augmented[split][label] += sum(window_count(n, cfg.window, stride) for n in clip_lengths)
    return CorpusStatistics(raw, augmented)


def corpus_statistics(corpus: Corpus, cfg: AugmentConfig) -> CorpusStatistics:
    lengths: Dict[Tuple[str, StyleLabel], List[int]] = {}
    for clip in corpus:
        lengths.setdefault((clip.split, clip.style), []).append(len(clip.motion))
    return statistics_from_lengths(lengths, cfg)


# ============================================================================
# CORPUS SYNTHÉTIQUE
# ============================================================================

@dataclass(frozen=True)
class SyntheticConfig:
    train_per_style: int = 20
    eval_per_style: int = 10
    min_frames: int = 80
    max_frames: int = 128
    with_audio: bool = True

    def __post_init__(self):
        if self.min_frames < MIN_CLIP_FRAMES or self.max_frames < self.min_frames:
            raise ConfigError(f"Longueurs de clips invalides : {self.min_frames}-{self.max_frames}")


# Longueurs de segments du squelette synthétique (pixels)
_UPPER_ARM, _FOREARM, _THIGH, _SHIN = 50.0, 48.0, 70.0, 68.0


def _segment(origin: np.ndarray, angle: np.ndarray, length: float, side: float) -> np.ndarray:
    """Extrémité d'un segment ; angle 0 = vers le bas, pi/2 = à l'horizontale vers l'extérieur"""
    return origin + length * np.stack([side * np.sin(angle), np.cos(angle)], axis=-1)


def _pose_sequence(arms: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
                   legs: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
                   sway: np.ndarray, nod: np.ndarray) -> np.ndarray:
    """Assemble (N, 25, 2) depuis les angles des membres ; côté droit de l'image = gauche du danseur"""
    frames = sway.size
    joints = np.zeros((frames, JOINT_COUNT, 2))
    mid_hip = np.stack([sway, np.zeros(frames)], axis=-1)
    neck = mid_hip + np.stack([0.6 * sway, np.full(frames, -110.0)], axis=-1)
    joints[:, 8] = mid_hip
    joints[:, 1] = neck
    joints[:, 0] = neck + np.stack([8.0 * np.sin(nod), -40.0 * np.cos(nod)], axis=-1)
    for index, dx, dy in ((15, -6, -6), (16, 6, -6), (17, -13, -2), (18, 13, -2)):
        joints[:, index] = joints[:, 0] + (dx, dy)

    r_upper, r_fore, l_upper, l_fore = arms
    for side, shoulder, elbow, wrist, upper, fore in ((-1.0, 2, 3, 4, r_upper, r_fore),
                                                       (1.0, 5, 6, 7, l_upper, l_fore)):
        joints[:, shoulder] = neck + (side * 30.0, 0.0)
        joints[:, elbow] = _segment(joints[:, shoulder], upper, _UPPER_ARM, side)
        joints[:, wrist] = _segment(joints[:, elbow], upper + fore, _FOREARM, side)

    r_thigh, r_shin, l_thigh, l_shin = legs
    for side, hip, knee, ankle, big, small, heel, thigh, shin in (
            (-1.0, 9, 10, 11, 22, 23, 24, r_thigh, r_shin),
            (1.0, 12, 13, 14, 19, 20, 21, l_thigh, l_shin)):
        joints[:, hip] = mid_hip + (side * 18.0, 0.0)
        joints[:, knee] = _segment(joints[:, hip], thigh, _THIGH, side)
        joints[:, ankle] = _segment(joints[:, knee], thigh - shin, _SHIN, side)
        joints[:, big] = joints[:, ankle] + (side * 14.0, 10.0)
        joints[:, small] = joints[:, ankle] + (side * 7.0, 12.0)
        joints[:, heel] = joints[:, ankle] + (-side * 4.0, 6.0)
    return joints


def _family_motion(style: StyleLabel, frames: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(frames) / 24.0
    phase = rng.uniform(0, 2 * np.pi)
    jitter = rng.uniform(0.9, 1.1)
    still = np.zeros(frames)

    if style == StyleLabel.BALLET:
        # grands arcs de bras lents et synchrones, jambes presque immobiles
        arc = np.pi / 2 + jitter * 1.0 * np.sin(2 * np.pi * 0.35 * jitter * t + phase)
        arms = (arc, still + 0.2, arc, still + 0.2)
        legs = (still + 0.05, still, still + 0.05, still)
        sway, nod = still, 0.1 * np.sin(2 * np.pi * 0.35 * t + phase)
    elif style == StyleLabel.MJ:
        # pas secs et périodiques, bras près du corps
        step = np.clip(3.0 * np.sin(2 * np.pi * 2.0 * jitter * t + phase), 0.0, 1.0)
        counter = np.clip(-3.0 * np.sin(2 * np.pi * 2.0 * jitter * t + phase), 0.0, 1.0)
        arms = (still + 0.25, still + 0.3, still + 0.25, still + 0.3)
        legs = (0.7 * jitter * step, 1.0 * step, 0.7 * jitter * counter, 1.0 * counter)
        sway, nod = still, 0.25 * step
    else:
        # balancement des hanches, bras pliés rapides en opposition
        swing = np.sin(2 * np.pi * 1.5 * jitter * t + phase)
        arms = (0.9 + 0.5 * swing, still + 1.2, 0.9 - 0.5 * swing, still + 1.2)
        legs = (0.15 + 0.25 * swing, 0.3 * (1 + swing), 0.15 - 0.25 * swing, 0.3 * (1 - swing))
        sway, nod = 20.0 * jitter * swing, still

    joints = _pose_sequence(arms, legs, sway, nod)
    scale = rng.uniform(0.8, 1.2)
    offset = rng.uniform(150.0, 350.0, size=2)
    joints = joints * scale + offset
    return joints + rng.normal(0.0, 0.5, size=joints.shape)


def _family_audio(style: StyleLabel, seconds: float, rng: np.random.Generator) -> AudioClip:
    t = np.arange(int(round(seconds * SAMPLE_RATE))) / SAMPLE_RATE
    phase = rng.uniform(0, 2 * np.pi)
    if style == StyleLabel.BALLET:
        samples = 0.5 * np.sin(2 * np.pi * 440.0 * t + phase)
    elif style == StyleLabel.MJ:
        envelope = 0.5 + 0.5 * (np.sin(2 * np.pi * 2.0 * t + phase) > 0)
        samples = 0.35 * envelope * rng.uniform(-1.0, 1.0, size=t.size)
    else:
        samples = 0.5 * np.sin(2 * np.pi * 100.0 * t + phase)
    samples = samples + rng.normal(0.0, 0.01, size=t.size)
    return AudioClip(np.clip(samples, -1.0, 1.0), SAMPLE_RATE, source=style.name.lower())


def synthetic_audio(style, seconds: float, seed=None) -> AudioClip:
    return _family_audio(StyleLabel.parse(style), seconds, np.random.default_rng(seed))


def make_synthetic_corpus(seed=None, cfg: SyntheticConfig = SyntheticConfig()) -> Corpus:
    """Trois familles de mouvements (et d'audio) équilibrées, déterministes pour une graine donnée"""
    rng = np.random.default_rng(seed)
    clips = []
    for split, per_style in (('train', cfg.train_per_style), ('eval', cfg.eval_per_style)):
        for label in StyleLabel:
            for index in range(per_style):
                frames = int(rng.integers(cfg.min_frames // 16, cfg.max_frames // 16 + 1)) * 16
                joints = _family_motion(label, frames, rng)
                audio = _family_audio(label, frames / 24.0, rng) if cfg.with_audio else None
                source_id = f"{split}-{label.name.lower()}-{index:03d}"
                motion = Motion(joints, fps=24, style=label, metadata={'source': source_id})
                clips.append(CorpusClip(motion, label, source_id, split, audio))
    logger.info(f"Corpus synthétique : {len(clips)} clips (graine {seed})")
    return Corpus(clips)


# ============================================================================
# MANIFESTE
# ============================================================================

def write_manifest(corpus: Corpus, root: Union[str, Path]) -> Path:
    """Écrit mouvements (JSON), audio (WAV) et manifest.json sous root"""
    root = Path(root)
    entries = []
    for clip in corpus:
        motion_file = Path('motions') / f"{clip.source_id}.json"
        save_motion(clip.motion, root / motion_file)
        entry = {
            'motion_file': motion_file.as_posix(),
            'audio_file': None,
            'style': clip.style.name.lower(),
            'split': clip.split,
            'source_id': clip.source_id,
        }
        audio = clip.load_audio()
        if audio is not None:
            audio_file = Path('audio') / f"{clip.source_id}.wav"
            save_wav(audio, root / audio_file)
            entry['audio_file'] = audio_file.as_posix()
        entries.append(entry)
    manifest = root / 'manifest.json'
    with open(manifest, 'w', encoding='utf-8') as handle:
        json.dump({'clips': entries}, handle, indent=2)
    logger.info(f"Manifeste écrit : {manifest} ({len(entries)} clips)")
    return manifest


def load_manifest(path: Union[str, Path], split: Optional[str] = None) -> Corpus:
    from .serializers import ManifestSerializer

    path = Path(path)
    if not path.is_file():
        raise DataError(f"Manifeste introuvable : {path}")
    try:
        with open(path, encoding='utf-8') as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as e:
        raise DataError(f"Manifeste JSON invalide {path} : {e}") from e
    serializer = ManifestSerializer(data=payload)
    if not serializer.is_valid():
        raise DataError(f"Manifeste {path} invalide : {serializer.errors}")

    clips = []
    for entry in serializer.validated_data['clips']:
        if split is not None and entry['split'] != split:
            continue
        motion_path = path.parent / entry['motion_file']
        if not motion_path.is_file():
            raise DataError(f"Fichier de mouvement introuvable : {motion_path}")
        audio_path = path.parent / entry['audio_file'] if entry.get('audio_file') else None
        if audio_path is not None and not audio_path.is_file():
            raise DataError(f"Fichier audio introuvable : {audio_path}")
        motion = load_motion(motion_path)
        source_id = entry.get('source_id') or motion_path.stem
        clips.append(CorpusClip(motion, entry['style'], source_id, entry['split'], audio_path=audio_path))
    logger.info(f"Manifeste chargé : {path} ({len(clips)} clips)")
    return Corpus(clips)
