"""
Évaluation quantitative : classifieur d'actions ST-GCN comme extracteur de
caractéristiques, distance de Fréchet (FID) sur ces caractéristiques et
protocoles GAN-train / GAN-test, répétés R fois.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import tensor as T
from .exceptions import ConfigError, DataError, NumericalError
from .graphnet import LEVEL_25, StGraphConv
from .layers import Conv2d, Linear, Module
from .optim import Adam
from .skeleton import JOINT_COUNT
from .styles import NUM_STYLES, StyleLabel
from .tensor import Tensor

logger = logging.getLogger(__name__)

METRICS = ('fid', 'gan_train', 'gan_test')


@dataclass(frozen=True)
class EvalConfig:
    repeats: int = 5
    feature_dim: int = 64
    epochs: int = 30
    lr: float = 0.01
    batch: int = 8
    eigen_clamp: float = 1e-10
    hidden_channels: Tuple[int, int] = (16, 32)

    def __post_init__(self):
        if self.repeats < 1 or self.feature_dim < 1 or self.epochs < 1 or self.batch < 2:
            raise ConfigError("repeats, feature_dim, epochs >= 1 et batch >= 2 requis")
        if self.lr <= 0 or self.eigen_clamp < 0:
            raise ConfigError("lr > 0 et eigen_clamp >= 0 requis")


# ============================================================================
# CLASSIFIEUR DE MOUVEMENTS / EXTRACTEUR
# ============================================================================

class MotionClassifier(Module):
    """
    Deux couches ST-GCN sur le squelette à 25 articulations séparées par une
    convolution temporelle à pas 2 ; moyenne globale puis tête linéaire.
    La sortie de la moyenne globale (dimension F) sert de caractéristique.
    """

    def __init__(self, cfg: EvalConfig, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        first, second = cfg.hidden_channels
        self.input = Conv2d(2, first, 1, rng=rng)
        self.gcn1 = StGraphConv(first, first, LEVEL_25, rng=rng)
        self.down = Conv2d(first, second, 4, stride_t=2, pad_t=1, rng=rng)
        self.gcn2 = StGraphConv(second, cfg.feature_dim, LEVEL_25, rng=rng)
        self.head = Linear(cfg.feature_dim, NUM_STYLES, rng=rng)

    def embed(self, motions) -> Tensor:
        f = self.input(T.as_tensor(motions))
        f = self.gcn2(self.down(self.gcn1(f)))
        return T.mean(f, axis=(2, 3))

    def forward(self, motions) -> Tensor:
        return self.head(self.embed(motions))


class FeatureExtractor:
    """Classifieur entraîné, figé, exposant les caractéristiques de l'avant-dernière couche"""

    def __init__(self, model: MotionClassifier):
        self.model = model.eval()

    def features(self, motions: np.ndarray, chunk: int = 64) -> np.ndarray:
        _check_motions(motions)
        with T.no_grad():
            return np.concatenate([self.model.embed(motions[i:i + chunk]).data
                                   for i in range(0, len(motions), chunk)])

    def predict(self, motions: np.ndarray, chunk: int = 64) -> np.ndarray:
        _check_motions(motions)
        with T.no_grad():
            return np.concatenate([self.model(motions[i:i + chunk]).data.argmax(axis=1)
                                   for i in range(0, len(motions), chunk)])

    def accuracy(self, motions: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(motions) == np.asarray(labels)))


def _check_motions(motions: np.ndarray):
    if motions.ndim != 4 or motions.shape[1] != 2 or motions.shape[3] != JOINT_COUNT:
        raise DataError(f"Mouvements de forme {motions.shape}, (B, 2, N, 25) attendu")
    if len(motions) == 0:
        raise DataError("Ensemble de mouvements vide")


def train_motion_classifier(motions: np.ndarray, labels: Sequence, cfg: EvalConfig,
                            seed=None) -> FeatureExtractor:
    _check_motions(motions)
    labels = np.asarray([int(StyleLabel.parse(label)) for label in labels], dtype=np.int64)
    if np.unique(labels).size < 2:
        raise DataError("L'ensemble d'entraînement ne contient qu'un seul style")
    rng = np.random.default_rng(seed)
    model = MotionClassifier(cfg, rng)
    model.assign_names('stgcn')
    optimizer = Adam(model.parameters(), lr=cfg.lr, beta1=0.5, beta2=0.999)
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            if batch.size < 2:
                continue
            optimizer.zero_grad()
            loss = T.cross_entropy(model(motions[batch]), labels[batch])
            T.check_finite(loss.item(), 'perte du classifieur de mouvements', {'epoch': epoch})
            T.backward(loss)
            optimizer.step()
    return FeatureExtractor(model)


# ============================================================================
# MÉTRIQUES
# ============================================================================

def _sqrt_psd(matrix: np.ndarray, clamp: float) -> np.ndarray:
    values, vectors = scipy.linalg.eigh((matrix + matrix.T) / 2.0)
    values = np.where(values > clamp, values, 0.0)
    return (vectors * np.sqrt(values)) @ vectors.T


def fid(feats_a: np.ndarray, feats_b: np.ndarray, eigen_clamp: float = 1e-10) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2), la trace de la racine
    étant calculée sur le produit symétrisé S_a^1/2 S_b S_a^1/2.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if feats_a.ndim != 2 or feats_b.ndim != 2 or feats_a.shape[1] != feats_b.shape[1]:
        raise DataError(f"Caractéristiques incompatibles : {feats_a.shape} et {feats_b.shape}")
    if len(feats_a) < 2 or len(feats_b) < 2:
        raise DataError("Au moins deux échantillons par ensemble sont nécessaires")
    if not (np.all(np.isfinite(feats_a)) and np.all(np.isfinite(feats_b))):
        raise NumericalError("Caractéristiques non finies")
    dim = feats_a.shape[1]
    if len(feats_a) <= dim or len(feats_b) <= dim:
        logger.warning(f"FID estimée avec {len(feats_a)} et {len(feats_b)} échantillons "
                       f"pour {dim} dimensions : covariances singulières")

    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(feats_a, rowvar=False))
    sigma_b = np.atleast_2d(np.cov(feats_b, rowvar=False))
    root_a = _sqrt_psd(sigma_a, eigen_clamp)
    product = root_a @ sigma_b @ root_a
    eigenvalues = scipy.linalg.eigvalsh((product + product.T) / 2.0)
    trace_sqrt = np.sqrt(np.clip(eigenvalues, 0.0, None)).sum()

    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * trace_sqrt)
    if not np.isfinite(value):
        raise NumericalError(f"FID non finie : {value}")
    return max(value, 0.0)


def per_style_accuracy(predictions: np.ndarray, labels: np.ndarray) -> Dict[StyleLabel, float]:
    out = {}
    for label in StyleLabel:
        mask = labels == int(label)
        if mask.any():
            out[label] = float(np.mean(predictions[mask] == labels[mask]))
    return out


def _accuracies(extractor: FeatureExtractor, motions: np.ndarray, labels: np.ndarray) -> dict:
    predictions = extractor.predict(motions)
    return {'all': float(np.mean(predictions == labels)), **per_style_accuracy(predictions, labels)}


def gan_train(gen_set: Tuple[np.ndarray, np.ndarray], real_eval_set: Tuple[np.ndarray, np.ndarray],
              cfg: EvalConfig, seed=None) -> dict:
    """Entraîne sur les mouvements générés, teste sur l'évaluation réelle"""
    extractor = train_motion_classifier(gen_set[0], gen_set[1], cfg, seed)
    return _accuracies(extractor, real_eval_set[0], np.asarray(real_eval_set[1]))


def gan_test(real_set: Tuple[np.ndarray, np.ndarray], gen_set: Tuple[np.ndarray, np.ndarray],
             cfg: EvalConfig, seed=None, extractor: Optional[FeatureExtractor] = None) -> dict:
    """Entraîne sur les mouvements réels, teste sur les mouvements générés"""
    extractor = extractor or train_motion_classifier(real_set[0], real_set[1], cfg, seed)
    return _accuracies(extractor, gen_set[0], np.asarray(gen_set[1]))


def fid_by_style(extractor: FeatureExtractor, set_a, set_b, eigen_clamp: float) -> dict:
    feats_a, feats_b = extractor.features(set_a[0]), extractor.features(set_b[0])
    labels_a, labels_b = np.asarray(set_a[1]), np.asarray(set_b[1])
    out = {'all': fid(feats_a, feats_b, eigen_clamp)}
    for label in StyleLabel:
        mask_a, mask_b = labels_a == int(label), labels_b == int(label)
        if mask_a.sum() >= 2 and mask_b.sum() >= 2:
            out[label] = fid(feats_a[mask_a], feats_b[mask_b], eigen_clamp)
    return out


# ============================================================================
# RAPPORT
# ============================================================================

def evaluation_round(gen_set, real_train_set, real_eval_set, cfg: EvalConfig, seed=None) -> dict:
    """
    Une répétition complète. L'extracteur est entraîné sur l'évaluation réelle,
    disjointe des données d'entraînement du générateur ; il sert aussi de
    classifieur GAN-test.
    """
    seeds = np.random.SeedSequence(seed).spawn(3)
    extractor = train_motion_classifier(real_eval_set[0], real_eval_set[1], cfg, seeds[0])
    ours = {
        'fid': fid_by_style(extractor, gen_set, real_eval_set, cfg.eigen_clamp),
        'gan_train': gan_train(gen_set, real_eval_set, cfg, seeds[1]),
        'gan_test': gan_test(real_eval_set, gen_set, cfg, extractor=extractor),
    }
    real = {
        'fid': fid_by_style(extractor, real_train_set, real_eval_set, cfg.eigen_clamp),
        'gan_train': gan_train(real_train_set, real_eval_set, cfg, seeds[2]),
        'gan_test': gan_test(real_eval_set, real_train_set, cfg, extractor=extractor),
    }
    return {'ours': _plain(ours), 'real': _plain(real)}


def _plain(results: dict) -> dict:
    """Clés StyleLabel -> noms en minuscules (JSON)"""
    return {
        metric: {(k.name.lower() if isinstance(k, StyleLabel) else k): float(v) for k, v in values.items()}
        for metric, values in results.items()
    }


@dataclass
class Stat:
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float]) -> 'Stat':
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(values.std())) if values.size else cls(float('nan'), float('nan'))

    def __str__(self):
        return f"{self.mean:.2f}±{self.std:.2f}"


@dataclass
class EvalReport:
    fid: Stat
    gan_train: Stat
    gan_test: Stat
    per_style: Dict[str, Dict[str, Stat]] = field(default_factory=dict)
    real: Dict[str, Stat] = field(default_factory=dict)
    real_per_style: Dict[str, Dict[str, Stat]] = field(default_factory=dict)
    repeats: int = 0
    seed: Optional[int] = None

    @classmethod
    def from_rounds(cls, rounds: List[dict], seed=None) -> 'EvalReport':
        if not rounds:
            raise DataError("Aucune répétition d'évaluation")

        def collect(source: str, metric: str, key: str) -> List[float]:
            return [r[source][metric][key] for r in rounds if key in r[source][metric]]

        styles = [label.name.lower() for label in StyleLabel]
        per_style = {s: {m: Stat.of(collect('ours', m, s)) for m in METRICS} for s in styles}
        real_per_style = {s: {m: Stat.of(collect('real', m, s)) for m in METRICS} for s in styles}
        return cls(
            fid=Stat.of(collect('ours', 'fid', 'all')),
            gan_train=Stat.of(collect('ours', 'gan_train', 'all')),
            gan_test=Stat.of(collect('ours', 'gan_test', 'all')),
            per_style=per_style,
            real={m: Stat.of(collect('real', m, 'all')) for m in METRICS},
            real_per_style=real_per_style,
            repeats=len(rounds),
            seed=seed,
        )

    def to_dict(self) -> dict:
        def stat(s: Stat) -> dict:
            return {'mean': s.mean, 'std': s.std}

        return {
            'fid': stat(self.fid),
            'gan_train': stat(self.gan_train),
            'gan_test': stat(self.gan_test),
            'per_style': {s: {m: stat(v) for m, v in metrics.items()} for s, metrics in self.per_style.items()},
            'real': {m: stat(v) for m, v in self.real.items()},
            'real_per_style': {s: {m: stat(v) for m, v in metrics.items()}
                               for s, metrics in self.real_per_style.items()},
            'repeats': self.repeats,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'EvalReport':
        def stat(value: dict) -> Stat:
            return Stat(float(value['mean']), float(value['std']))

        def by_style(values: dict) -> Dict[str, Dict[str, Stat]]:
            return {s: {m: stat(v) for m, v in metrics.items()} for s, metrics in values.items()}

        return cls(
            fid=stat(payload['fid']),
            gan_train=stat(payload['gan_train']),
            gan_test=stat(payload['gan_test']),
            per_style=by_style(payload.get('per_style', {})),
            real={m: stat(v) for m, v in payload.get('real', {}).items()},
            real_per_style=by_style(payload.get('real_per_style', {})),
            repeats=int(payload.get('repeats', 0)),
            seed=payload.get('seed'),
        )

    def render_table(self) -> str:
        """Tableau FID / GAN-Train / GAN-Test, colonnes Ours et Real, une ligne par style"""
        header = ['Style'] + [f"{title} {column}" for title in ('FID', 'GAN-Train', 'GAN-Test')
                              for column in ('Ours', 'Real')]
        rows = [header]
        for label in StyleLabel:
            key = label.name.lower()
            row = [label.display]
            for metric in METRICS:
                row += [str(self.per_style[key][metric]), str(self.real_per_style[key][metric])]
            rows.append(row)
        average = ['Average']
        for metric in METRICS:
            average += [str(getattr(self, metric)), str(self.real[metric])]
        rows.append(average)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return '\n'.join('  '.join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)
