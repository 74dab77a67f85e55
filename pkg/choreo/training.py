"""
Entraînement adversarial du générateur conditionné par le style.

Chaque pas : une mise à jour du discriminateur (SGD) sur un lot réel contre
des mouvements générés, puis une mise à jour du générateur (Adam) qui minimise
la perte adversariale plus lambda fois la perte de reconstruction L1.
"""

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import WindowSet
from .exceptions import ConfigError, DataError, NumericalError, ShapeError
from .graphnet import (Discriminator, Generator, ModelConfig, array_to_motions, build_discriminator,
                       build_generator, motions_to_array)
from .latent import FRAMES_PER_LATENT_STEP, GpConfig, gp_sample, sample_latent_noise
from .optim import SGD, Adam
from .skeleton import Motion, denormalize_motion, smooth_motion
from .styles import StyleLabel
from .tensor import Tensor

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7
METRIC_FIELDS = ('step', 'd_loss', 'g_loss', 'rec_loss', 'wall_ms')


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch: int = 8
    gen_lr: float = 0.002
    disc_lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_rec: float = 100.0
    checkpoint_every: int = 100
    saturating_gen_loss: bool = False
    steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 2:
            raise ConfigError(f"epochs >= 1 et batch >= 2 requis (reçu {self.epochs}, {self.batch})")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("Les taux d'apprentissage doivent être > 0")
        if self.lambda_rec < 0:
            raise ConfigError(f"lambda_rec doit être >= 0, reçu {self.lambda_rec}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every doit être >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps doit être >= 1")


# ============================================================================
# PERTES
# ============================================================================

def _motion_tensor(value) -> Tensor:
    if isinstance(value, Motion):
        return Tensor(np.transpose(value.joints, (2, 0, 1)))
    return T.as_tensor(value)


def loss_rec(gen, real) -> Tensor:
    """(1/N) sum_t sum_i |J - J'|_1 / 25, moyennée sur le lot"""
    gen, real = _motion_tensor(gen), _motion_tensor(real)
    if gen.shape != real.shape:
        raise ShapeError(f"loss_rec : formes {gen.shape} et {real.shape} différentes")
    coords_axis = gen.ndim - 3
    per_joint = T.tsum(T.tabs(T.sub(gen, real)), axis=coords_axis)
    return T.mean(per_joint)


def _bce_log(p: Tensor) -> Tensor:
    return T.log(T.clip(p, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))


def loss_cgan(d_real, d_fake, side: str, saturating: bool = False) -> Tensor:
    """
    Entropie croisée binaire. Côté 'disc' : -E[log D(x|y)] - E[log(1 - D(G(z|y)))].
    Côté 'gen' : -E[log D(G(z|y))], ou E[log(1 - D(G(z|y)))] si saturating.
    """
    d_fake = T.as_tensor(d_fake)
    if side == 'disc':
        d_real = T.as_tensor(d_real)
        return T.neg(T.add(T.mean(_bce_log(d_real)), T.mean(_bce_log(T.sub(1.0, d_fake)))))
    if side == 'gen':
        if saturating:
            return T.mean(_bce_log(T.sub(1.0, d_fake)))
        return T.neg(T.mean(_bce_log(d_fake)))
    raise ConfigError(f"Côté de perte inconnu : {side!r}")


# ============================================================================
# PAS D'ENTRAÎNEMENT
# ============================================================================

@dataclass
class TrainBatch:
    real: np.ndarray            # (B, 2, N, 25)
    styles: np.ndarray          # (B,)
    noise: np.ndarray           # (B, C, T, 1)

    def __post_init__(self):
        batch = self.real.shape[0]
        if self.styles.shape != (batch,) or self.noise.shape[0] != batch:
            raise DataError(f"Lot incohérent : {self.real.shape}, {self.styles.shape}, {self.noise.shape}")
        if self.noise.shape[2] * FRAMES_PER_LATENT_STEP != self.real.shape[2]:
            raise DataError(f"Latent T={self.noise.shape[2]} incompatible avec N={self.real.shape[2]}")

    @property
    def step_styles(self) -> np.ndarray:
        return np.repeat(self.styles[:, None], self.noise.shape[2], axis=1)


@dataclass
class Optimizers:
    gen: Adam
    disc: SGD


def generator_loss(batch: TrainBatch, G: Generator, D: Discriminator, cfg: TrainConfig
                   ) -> Tuple[Tensor, Tensor, Tensor]:
    """Perte totale du générateur L_cGAN + lambda * L_rec, ses deux termes"""
    fake = G.generate(batch.noise, batch.step_styles)
    adversarial = loss_cgan(None, D(fake, batch.styles), 'gen', cfg.saturating_gen_loss)
    reconstruction = loss_rec(fake, batch.real)
    total = T.add(adversarial, T.mul(reconstruction, cfg.lambda_rec))
    return total, adversarial, reconstruction


def train_step(batch: TrainBatch, G: Generator, D: Discriminator, opts: Optimizers,
               cfg: TrainConfig) -> Dict[str, float]:
    # Discriminateur : réel contre faux détaché
    with T.no_grad():
        fake = G.generate(batch.noise, batch.step_styles).data
    opts.disc.zero_grad()
    d_loss = loss_cgan(D(batch.real, batch.styles), D(fake, batch.styles), 'disc')
    T.check_finite(d_loss.item(), 'd_loss', {'d_loss': d_loss.item()})
    T.backward(d_loss)
    opts.disc.step()

    # Générateur : adversarial + reconstruction appariée par indice (même style)
    opts.gen.zero_grad()
    g_loss, _, rec_loss = generator_loss(batch, G, D, cfg)
    metrics = {'d_loss': d_loss.item(), 'g_loss': g_loss.item(), 'rec_loss': rec_loss.item()}
    T.check_finite(g_loss.item(), 'g_loss', dict(metrics))
    T.backward(g_loss)
    opts.gen.step()
    return metrics


def gradient_norms(*modules) -> Dict[str, float]:
    norms = {}
    for module in modules:
        for name, param in module.named_parameters():
            if param.grad is not None:
                norms[param.name or name] = float(np.linalg.norm(np.nan_to_num(param.grad)))
    return norms


# ============================================================================
# BOUCLE D'ENTRAÎNEMENT
# ============================================================================

@dataclass
class TrainingSummary:
    steps: int
    last_metrics: Dict[str, float]
    checkpoint: Optional[Path]
    metrics_path: Path
    history: List[Dict[str, float]] = field(default_factory=list)


class GanTrainer:
    """Propriétaire unique des réseaux, des optimiseurs et du journal de métriques"""

    def __init__(self, train_set: WindowSet, gp_cfg: GpConfig, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, out_dir: Union[str, Path], seed: Optional[int] = None):
        if len(train_set) < 2:
            raise DataError(f"Au moins deux fenêtres d'entraînement requises, reçu {len(train_set)}")
        if gp_cfg.C != model_cfg.latent_channels:
            raise ConfigError(f"GP à {gp_cfg.C} canaux pour un générateur à {model_cfg.latent_channels}")
        self.train_set = train_set
        self.real = motions_to_array(train_set.motions)
        self.latent_steps = self.real.shape[2] // FRAMES_PER_LATENT_STEP
        self.gp_cfg = dataclasses.replace(gp_cfg, T=self.latent_steps)
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.out_dir = Path(out_dir)
        self.seed = seed

        gen_seed, disc_seed = np.random.SeedSequence(seed).spawn(2)
        self.G = build_generator(model_cfg, np.random.default_rng(gen_seed))
        self.D = build_discriminator(model_cfg, np.random.default_rng(disc_seed), generator=self.G)
        self.opts = Optimizers(
            gen=Adam(self.G.parameters(), train_cfg.gen_lr, train_cfg.beta1, train_cfg.beta2),
            disc=SGD(self.D.parameters(), train_cfg.disc_lr),
        )
        self.step = 0

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / 'metrics.csv'

    def checkpoint_path(self, step: Optional[int] = None) -> Path:
        name = 'gan-final.ckpt' if step is None else f"gan-step{step:06d}.ckpt"
        return self.out_dir / name

    @property
    def steps_per_epoch(self) -> int:
        return max(len(self.train_set) // self.train_cfg.batch, 1)

    @property
    def total_steps(self) -> int:
        if self.train_cfg.steps is not None:
            return self.train_cfg.steps
        return self.train_cfg.epochs * self.steps_per_epoch

    # ---------------------------------------------------------------- état
    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = dict(self.G.state_dict(prefix='gen.'))
        arrays.update(self.D.state_dict(prefix='disc.'))
        arrays.update(self.opts.gen.state_dict('opt.gen'))
        arrays.update(self.opts.disc.state_dict('opt.disc'))
        arrays['meta.step'] = np.array(float(self.step))
        arrays.update(model_meta(self.model_cfg, self.gp_cfg))
        return arrays

    def save(self, path: Optional[Path] = None) -> Path:
        return save_checkpoint(path or self.checkpoint_path(self.step), self.state_arrays())

    def resume(self, path: Union[str, Path]) -> int:
        arrays = load_checkpoint(path)
        stored_cfg, _ = model_config_from_meta(arrays)
        if stored_cfg != self.model_cfg:
            raise ConfigError(f"Le checkpoint {path} a été produit par une autre architecture")
        self.G.load_state_dict(arrays, prefix='gen.')
        self.D.load_state_dict(arrays, prefix='disc.')
        self.opts.gen.load_state_dict(arrays, 'opt.gen')
        self.opts.disc.load_state_dict(arrays, 'opt.disc')
        self.step = int(arrays.get('meta.step', 0))
        logger.info(f"Reprise depuis {path} au pas {self.step}")
        return self.step

    # ---------------------------------------------------------------- boucle
    def batches(self, rng: np.random.Generator):
        # corpus plus petit que le lot : un lot unique par époque
        size = min(self.train_cfg.batch, len(self.train_set))
        while True:
            order = rng.permutation(len(self.train_set))
            for start in range(0, len(order) - size + 1, size):
                yield order[start:start + size]

    def make_batch(self, indices: np.ndarray, rng: np.random.Generator) -> TrainBatch:
        noise = sample_latent_noise(self.gp_cfg, indices.size, rng)
        return TrainBatch(self.real[indices], self.train_set.styles[indices], noise)

    def _dump_diagnostics(self, error: NumericalError) -> Path:
        path = self.out_dir / f"diagnostics-step{self.step:06d}.json"
        payload = {
            'step': self.step,
            'error': str(error),
            'losses': error.diagnostics,
            'grad_norms': gradient_norms(self.G, self.D),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(payload, handle, indent=2, default=float)
        logger.error(f"Valeur non finie au pas {self.step}, diagnostic écrit dans {path}")
        return path

    def run(self, steps: Optional[int] = None) -> TrainingSummary:
        target = self.total_steps if steps is None else self.step + steps
        entropy = None if self.seed is None else [self.seed, self.step]
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        new_file = not self.metrics_path.exists() or self.step == 0
        history = []
        self.G.train()
        self.D.train()

        with open(self.metrics_path, 'w' if new_file else 'a', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS)
            if new_file:
                writer.writeheader()
            for indices in self.batches(rng):
                if self.step >= target:
                    break
                started = time.perf_counter()
                batch = self.make_batch(indices, rng)
                try:
                    metrics = train_step(batch, self.G, self.D, self.opts, self.train_cfg)
                except NumericalError as e:
                    e.diagnostics['step'] = self.step + 1
                    self.step += 1
                    self._dump_diagnostics(e)
                    raise
                self.step += 1
                row = dict(step=self.step, wall_ms=round(1000.0 * (time.perf_counter() - started), 3), **metrics)
                writer.writerow(row)
                handle.flush()
                history.append(row)
                if self.step % self.train_cfg.checkpoint_every == 0:
                    self.save()
                if self.step % self.steps_per_epoch == 0:
                    logger.info(f"Époque {self.step // self.steps_per_epoch} (pas {self.step}) : "
                                f"d={metrics['d_loss']:.4f} g={metrics['g_loss']:.4f} "
                                f"rec={metrics['rec_loss']:.4f}")

        final = self.save(self.checkpoint_path())
        return TrainingSummary(self.step, history[-1] if history else {}, final, self.metrics_path, history)


# ============================================================================
# MÉTADONNÉES DE CHECKPOINT ET GÉNÉRATION
# ============================================================================

def model_meta(model_cfg: ModelConfig, gp_cfg: GpConfig) -> Dict[str, np.ndarray]:
    return {
        'meta.latent_channels': np.array(float(model_cfg.latent_channels)),
        'meta.channels': np.asarray(model_cfg.channels, dtype=np.float64),
        'meta.dropout': np.array(model_cfg.dropout),
        'meta.onehot': np.array(1.0 if model_cfg.class_encoding == 'onehot' else 0.0),
        'meta.temporal_kernel': np.array(float(model_cfg.temporal_kernel)),
        'meta.gp_sigma': np.array(float(gp_cfg.sigma)),
    }


def model_config_from_meta(arrays: Dict[str, np.ndarray]) -> Tuple[ModelConfig, GpConfig]:
    try:
        model_cfg = ModelConfig(
            latent_channels=int(arrays['meta.latent_channels']),
            channels=tuple(int(c) for c in arrays['meta.channels']),
            dropout=float(arrays['meta.dropout']),
            class_encoding='onehot' if float(arrays['meta.onehot']) else 'index',
            temporal_kernel=int(arrays['meta.temporal_kernel']),
        )
        gp_cfg = GpConfig(C=model_cfg.latent_channels, sigma=float(arrays['meta.gp_sigma']))
    except KeyError as e:
        raise DataError(f"Checkpoint sans métadonnées de modèle : {e} absent") from e
    return model_cfg, gp_cfg


def load_generator(path: Union[str, Path]) -> Tuple[Generator, GpConfig]:
    arrays = load_checkpoint(path)
    model_cfg, gp_cfg = model_config_from_meta(arrays)
    generator = build_generator(model_cfg, seed=0)
    generator.load_state_dict(arrays, prefix='gen.')
    return generator.eval(), gp_cfg


def synthesize(G: Generator, gp_cfg: GpConfig, styles: Sequence, seed=None) -> np.ndarray:
    """Une séquence par liste de styles par pas ; sortie normalisée (2, 16T, 25)"""
    labels = [StyleLabel.parse(s) for s in styles]
    if not labels:
        raise DataError("Au moins un pas latent est nécessaire")
    cfg = dataclasses.replace(gp_cfg, T=len(labels))
    noise = gp_sample(cfg, seed)[None]
    with T.no_grad(), G.evaluating():
        out = G.generate(noise, np.asarray([[int(s) for s in labels]]))
    return out.data[0]


def generate_motion(G: Generator, gp_cfg: GpConfig, styles: Sequence, seed=None, fps: int = 24,
                    canvas: float = 512.0, knot_stride: int = 4) -> Motion:
    """Latent -> générateur -> dénormalisation -> lissage par spline"""
    normalized = array_to_motions(synthesize(G, gp_cfg, styles, seed), fps=fps)[0]
    counts = np.bincount([int(StyleLabel.parse(s)) for s in styles])
    normalized.style = StyleLabel(int(np.argmax(counts)))
    normalized.metadata['styles'] = [StyleLabel.parse(s).name.lower() for s in styles]
    motion = denormalize_motion(normalized, canvas)
    return smooth_motion(motion, knot_stride) if knot_stride > 1 else motion


def synthesize_batch(G: Generator, gp_cfg: GpConfig, styles: Sequence, steps: int, seed=None,
                     chunk: int = 32) -> np.ndarray:
    """Un style constant par séquence ; sortie normalisée (B, 2, 16·steps, 25)"""
    labels = np.asarray([int(StyleLabel.parse(s)) for s in styles], dtype=np.int64)
    if labels.size == 0:
        raise DataError("Aucun style à générer")
    cfg = dataclasses.replace(gp_cfg, T=steps)
    rng = np.random.default_rng(seed)
    outputs = []
    with T.no_grad(), G.evaluating():
        for start in range(0, labels.size, chunk):
            batch = labels[start:start + chunk]
            noise = sample_latent_noise(cfg, batch.size, rng)
            outputs.append(G.generate(noise, np.repeat(batch[:, None], steps, axis=1)).data)
    return np.concatenate(outputs)
