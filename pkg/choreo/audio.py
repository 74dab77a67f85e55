"""
Audio : ingestion des formes d'onde, compression mu-law et classifieur de
style musical (pile de convolutions 1D à pas, directement sur l'onde brute).

Le classifieur remplace l'oracle au moment de la génération : un clip long
est découpé en fenêtres de 2 s (pas de 1 s), chaque fenêtre reçoit une
étiquette, ce qui permet de changer de style au cours du temps.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.io import wavfile
from sklearn.model_selection import StratifiedKFold

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, DataError
from .layers import BatchNorm, Conv2d, Linear, Module
from .optim import Adam
from .styles import NUM_STYLES, StyleLabel
from .tensor import Tensor

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000

_clamp_stats = Counter()


# ============================================================================
# FORMES D'ONDE
# ============================================================================

def resample_linear(samples: np.ndarray, source_rate: int, target_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Rééchantillonnage par interpolation linéaire"""
    samples = np.asarray(samples, dtype=np.float64)
    if source_rate == target_rate or samples.size == 0:
        return samples.copy()
    duration = samples.size / source_rate
    target_size = max(int(round(duration * target_rate)), 1)
    source_times = np.arange(samples.size) / source_rate
    target_times = np.arange(target_size) / target_rate
    return np.interp(target_times, source_times, samples)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    source: str = ''

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"Audio mono attendu, forme {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"Échantillons non finis dans {self.source or 'le clip'}")
        if self.sample_rate != SAMPLE_RATE:
            logger.debug(f"Rééchantillonnage {self.sample_rate} Hz -> {SAMPLE_RATE} Hz")
            self.samples = resample_linear(self.samples, self.sample_rate)
            self.sample_rate = SAMPLE_RATE

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def segment(self, start: int, stop: int) -> 'AudioClip':
        return AudioClip(self.samples[start:stop], self.sample_rate, self.source)

    @classmethod
    def concatenate(cls, clips: Sequence['AudioClip']) -> 'AudioClip':
        return cls(np.concatenate([c.samples for c in clips]), SAMPLE_RATE, '+'.join(c.source for c in clips))


def load_wav(path: Union[str, Path]) -> AudioClip:
    """WAV PCM16 (ou flottant) -> clip mono à 16 kHz dans [-1, 1]"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Fichier audio introuvable : {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise DataError(f"WAV illisible {path} : {e}") from e
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, int(rate), source=path.name)


def save_wav(clip: AudioClip, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sample_rate, pcm)
    return path


def mu_law(x, mu: int = 255):
    """sign(x) * ln(1 + mu|x|) / ln(1 + mu) ; les valeurs |x| > 1 sont bornées"""
    values = np.asarray(x, dtype=np.float64)
    outside = np.abs(values) > 1.0
    if outside.any():
        count = int(outside.sum())
        _clamp_stats['samples'] += count
        logger.warning(f"mu-law : {count} échantillons hors de [-1, 1] bornés "
                       f"({_clamp_stats['samples']} au total)")
        values = np.clip(values, -1.0, 1.0)
    out = np.sign(values) * np.log1p(mu * np.abs(values)) / np.log1p(mu)
    return float(out) if out.ndim == 0 else out


def clamped_sample_count() -> int:
    return _clamp_stats['samples']


# ============================================================================
# CLASSIFIEUR
# ============================================================================

@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 500
    batch: int = 8
    lr: float = 0.01
    folds: int = 10
    window_seconds: float = 2.0
    hop_seconds: float = 1.0
    channels: Tuple[int, ...] = (8, 16, 16, 32, 32)
    kernels: Tuple[int, ...] = (32, 16, 8, 8, 4)
    strides: Tuple[int, ...] = (8, 4, 4, 2, 2)
    mu: int = 255

    def __post_init__(self):
        if not (len(self.channels) == len(self.kernels) == len(self.strides)):
            raise ConfigError("channels, kernels et strides doivent avoir la même longueur")
        if self.folds < 2:
            raise ConfigError(f"La validation croisée exige au moins 2 plis, reçu {self.folds}")
        if self.window_seconds <= 0 or self.hop_seconds <= 0:
            raise ConfigError("Fenêtre et pas d'analyse doivent être > 0")
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch et lr doivent être positifs")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * SAMPLE_RATE))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * SAMPLE_RATE))


def receptive_field(kernels: Sequence[int], strides: Sequence[int]) -> int:
    field_size, jump = 1, 1
    for kernel, stride in zip(kernels, strides):
        field_size += (kernel - 1) * jump
        jump *= stride
    return field_size


class StyleClassifier(Module):
    """Convolutions 1D à pas + normalisation + leaky-ReLU, moyenne globale, tête linéaire"""

    def __init__(self, cfg: ClassifierConfig, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.cfg = cfg
        self.convs = []
        self.norms = []
        previous = 1
        for channels, kernel, stride in zip(cfg.channels, cfg.kernels, cfg.strides):
            self.convs.append(Conv2d(previous, channels, kernel, stride_t=stride, rng=rng))
            self.norms.append(BatchNorm(channels))
            previous = channels
        self.head = Linear(previous, NUM_STYLES, rng=rng)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.cfg.kernels, self.cfg.strides)

    def forward(self, waveforms) -> Tensor:
        """(B, L) échantillons déjà compressés -> logits (B, 3)"""
        waveforms = np.asarray(waveforms, dtype=np.float64)
        if waveforms.ndim == 1:
            waveforms = waveforms[None]
        if waveforms.shape[1] < self.receptive_field:
            raise DataError(
                f"Clip de {waveforms.shape[1]} échantillons, champ récepteur {self.receptive_field}"
            )
        f = Tensor(waveforms[:, None, :, None])
        for conv, norm in zip(self.convs, self.norms):
            f = T.leaky_relu(norm(conv(f)), 0.2)
        pooled = T.mean(f, axis=(2, 3))
        return self.head(pooled)


def _windows(samples: np.ndarray, window: int, hop: int) -> List[Tuple[int, np.ndarray]]:
    if samples.size <= window:
        return [(0, samples)]
    offsets = range(0, samples.size - window + 1, hop)
    return [(offset, samples[offset:offset + window]) for offset in offsets]


@dataclass
class StylePrediction:
    label: StyleLabel
    probs: np.ndarray
    window_labels: List[StyleLabel] = field(default_factory=list)
    window_probs: Optional[np.ndarray] = None
    window_offsets: List[int] = field(default_factory=list)

    def styles_per_step(self, steps: int, frames_per_step: int = 16, fps: int = 24,
                        window_samples: int = 2 * SAMPLE_RATE) -> List[StyleLabel]:
        """Style de la fenêtre dont le centre est le plus proche de chaque pas latent"""
        if not self.window_labels:
            return [self.label] * steps
        centers = (np.asarray(self.window_offsets) + window_samples / 2.0) / SAMPLE_RATE
        styles = []
        for step in range(steps):
            moment = (step + 0.5) * frames_per_step / fps
            styles.append(self.window_labels[int(np.argmin(np.abs(centers - moment)))])
        return styles


def classify_style(clip: AudioClip, model: StyleClassifier) -> StylePrediction:
    """
    Classe chaque fenêtre du clip puis agrège : probabilités moyennes et
    étiquette majoritaire (égalité tranchée par les probabilités moyennes).
    """
    cfg = model.cfg
    if len(clip) < model.receptive_field:
        raise DataError(f"Clip trop court : {len(clip)} échantillons, {model.receptive_field} requis")
    companded = mu_law(clip.samples, cfg.mu)
    windows = _windows(companded, cfg.window_samples, cfg.hop_samples)
    with T.no_grad(), model.evaluating():
        if len({w.size for _, w in windows}) == 1:
            logits = model(np.stack([w for _, w in windows])).data
        else:
            logits = np.concatenate([model(w).data for _, w in windows])
    window_probs = T.softmax(logits, axis=1)
    window_labels = [StyleLabel(int(i)) for i in window_probs.argmax(axis=1)]
    probs = window_probs.mean(axis=0)
    votes = Counter(window_labels).most_common()
    leaders = [label for label, count in votes if count == votes[0][1]]
    label = max(leaders, key=lambda lbl: probs[int(lbl)])
    return StylePrediction(label, probs, window_labels, window_probs, [offset for offset, _ in windows])


# ============================================================================
# ENTRAÎNEMENT ET VALIDATION CROISÉE
# ============================================================================

@dataclass
class CrossValidationReport:
    folds: int
    fold_accuracies: List[float]
    best_fold: int
    seed: Optional[int]
    windows_per_fold: List[int] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracies))

    def to_dict(self) -> dict:
        return {
            'folds': self.folds,
            'fold_accuracies': [float(a) for a in self.fold_accuracies],
            'mean_accuracy': self.mean_accuracy,
            'std_accuracy': self.std_accuracy,
            'best_fold': self.best_fold,
            'seed': self.seed,
            'windows_per_fold': list(self.windows_per_fold),
        }


def _clip_windows(clips: Sequence[AudioClip], labels: Sequence[int], cfg: ClassifierConfig):
    inputs, targets = [], []
    for clip, label in zip(clips, labels):
        companded = mu_law(clip.samples, cfg.mu)
        if companded.size < cfg.window_samples:
            raise DataError(f"Clip {clip.source or '?'} plus court que la fenêtre d'analyse")
        for _, window in _windows(companded, cfg.window_samples, cfg.hop_samples):
            inputs.append(window)
            targets.append(label)
    return np.stack(inputs), np.asarray(targets, dtype=np.int64)


def fit_classifier(model: StyleClassifier, inputs: np.ndarray, targets: np.ndarray,
                   cfg: ClassifierConfig, rng: np.random.Generator) -> List[float]:
    """Adam (beta1=0.5), mini-lots mélangés ; renvoie la perte moyenne par époque"""
    optimizer = Adam(model.parameters(), lr=cfg.lr, beta1=0.5, beta2=0.999)
    model.train()
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(targets))
        losses = []
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            if batch.size < 2:
                continue
            optimizer.zero_grad()
            loss = T.cross_entropy(model(inputs[batch]), targets[batch])
            T.check_finite(loss.item(), 'perte du classifieur', {'epoch': epoch})
            T.backward(loss)
            optimizer.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)) if losses else float('nan'))
    return history


def accuracy(model: StyleClassifier, inputs: np.ndarray, targets: np.ndarray) -> float:
    with T.no_grad(), model.evaluating():
        predictions = model(inputs).data.argmax(axis=1)
    return float(np.mean(predictions == targets))


def train_classifier(clips: Sequence[AudioClip], labels: Sequence, cfg: ClassifierConfig,
                     seed: Optional[int] = None) -> Tuple[StyleClassifier, CrossValidationReport]:
    """
    Validation croisée stratifiée au niveau des clips (les fenêtres d'un même
    clip restent dans le même pli). Le modèle retenu est celui du pli de
    meilleure précision de validation.
    """
    labels = np.array([int(StyleLabel.parse(label)) for label in labels], dtype=np.int64)
    if len(clips) != labels.size:
        raise DataError(f"{len(clips)} clips pour {labels.size} étiquettes")
    counts = np.bincount(labels, minlength=NUM_STYLES)
    present = counts[counts > 0]
    if present.size < 2:
        raise DataError("Au moins deux styles sont nécessaires pour entraîner le classifieur")
    if present.min() < cfg.folds:
        underflow = [StyleLabel(i).display for i in range(NUM_STYLES) if 0 < counts[i] < cfg.folds]
        raise DataError(f"Moins de {cfg.folds} clips pour les styles : {underflow}")

    splitter = StratifiedKFold(n_splits=cfg.folds, shuffle=True, random_state=seed)
    seeds = np.random.SeedSequence(seed).spawn(cfg.folds)
    best_model, best_accuracy, best_fold = None, -1.0, -1
    fold_accuracies, windows_per_fold = [], []

    for fold, (train_idx, val_idx) in enumerate(splitter.split(np.zeros(labels.size), labels)):
        rng = np.random.default_rng(seeds[fold])
        train_x, train_y = _clip_windows([clips[i] for i in train_idx], labels[train_idx], cfg)
        val_x, val_y = _clip_windows([clips[i] for i in val_idx], labels[val_idx], cfg)
        model = StyleClassifier(cfg, rng)
        model.assign_names('clf')
        history = fit_classifier(model, train_x, train_y, cfg, rng)
        fold_accuracy = accuracy(model, val_x, val_y)
        fold_accuracies.append(fold_accuracy)
        windows_per_fold.append(int(val_y.size))
        logger.info(f"Pli {fold + 1}/{cfg.folds} : précision {fold_accuracy:.3f} "
                    f"(perte finale {history[-1]:.4f})")
        if fold_accuracy > best_accuracy:
            best_model, best_accuracy, best_fold = model, fold_accuracy, fold

    report = CrossValidationReport(cfg.folds, fold_accuracies, best_fold, seed, windows_per_fold)
    logger.info(f"Validation croisée : {report.mean_accuracy:.3f} ± {report.std_accuracy:.3f}")
    return best_model, report


# ============================================================================
# PERSISTANCE
# ============================================================================

_ARCH_KEYS = ('channels', 'kernels', 'strides')


def save_classifier(model: StyleClassifier, path: Union[str, Path]) -> Path:
    arrays: Dict[str, np.ndarray] = dict(model.state_dict(prefix='clf.'))
    for key in _ARCH_KEYS:
        arrays[f"meta.{key}"] = np.asarray(getattr(model.cfg, key), dtype=np.float64)
    arrays['meta.window_seconds'] = np.array(model.cfg.window_seconds)
    arrays['meta.hop_seconds'] = np.array(model.cfg.hop_seconds)
    arrays['meta.mu'] = np.array(float(model.cfg.mu))
    return save_checkpoint(path, arrays)


def load_classifier(path: Union[str, Path]) -> StyleClassifier:
    arrays = load_checkpoint(path)
    try:
        arch = {key: tuple(int(v) for v in arrays[f"meta.{key}"]) for key in _ARCH_KEYS}
        cfg = ClassifierConfig(
            window_seconds=float(arrays['meta.window_seconds']),
            hop_seconds=float(arrays['meta.hop_seconds']),
            mu=int(arrays['meta.mu']),
            **arch,
        )
    except KeyError as e:
        raise DataError(f"{path} n'est pas un checkpoint de classifieur : {e} absent") from e
    model = StyleClassifier(cfg)
    model.assign_names('clf')
    model.load_state_dict(arrays, prefix='clf.')
    return model.eval()

