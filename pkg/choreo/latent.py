"""
Vecteur latent du générateur : bruit temporellement cohérent tiré d'un
processus gaussien (noyau RBF, une largeur de bande par canal) concaténé à un
plongement dense et entraînable du style musical.
"""

import functools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, DataError, NumericalError
from .layers import Module
from .styles import NUM_STYLES, StyleLabel
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

FRAMES_PER_LATENT_STEP = 16
JITTER_START = 1e-10
JITTER_MAX = 1e-6

SeedLike = Union[int, None, np.random.Generator]


@dataclass(frozen=True)
class GpConfig:
    C: int = 512
    T: int = 4
    V: int = 1
    sigma: float = 200.0

    def __post_init__(self):
        if self.C < 1 or self.T < 1:
            raise ConfigError(f"GpConfig : C={self.C} et T={self.T} doivent être >= 1")
        if self.V != 1:
            raise ConfigError(f"GpConfig : V doit valoir 1, reçu {self.V}")
        if self.sigma <= 0:
            raise ConfigError(f"GpConfig : sigma doit être > 0, reçu {self.sigma}")

    def channel_bandwidth(self, c: int) -> float:
        """sigma_c = sigma * (c / C)"""
        return self.sigma * (c / self.C)


def rbf_kernel(length: int, bandwidth: float) -> np.ndarray:
    """kappa(t, t') = exp(-|t - t'|^2 / (2 sigma_c^2)) ; identité quand sigma_c -> 0"""
    if bandwidth < 1e-12:
        return np.eye(length)
    steps = np.arange(length, dtype=np.float64)
    distances = (steps[:, None] - steps[None, :]) ** 2
    return np.exp(-distances / (2.0 * bandwidth ** 2))


@functools.lru_cache(maxsize=4096)
def _cholesky_factor(length: int, bandwidth: float) -> np.ndarray:
    kernel = rbf_kernel(length, bandwidth)
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            factor = np.linalg.cholesky(kernel + jitter * np.eye(length))
            factor.setflags(write=False)
            return factor
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Échec de Cholesky pour T={length}, sigma_c={bandwidth} malgré un jitter de {JITTER_MAX}"
    )


def sample_paths(length: int, bandwidth: float, count: int, rng: SeedLike = None) -> np.ndarray:
    """count trajectoires indépendantes (count, length) d'un PG centré de noyau RBF"""
    rng = np.random.default_rng(rng)
    factor = _cholesky_factor(length, float(bandwidth))
    return rng.standard_normal((count, length)) @ factor.T


def gp_sample(cfg: GpConfig, seed: SeedLike = None) -> np.ndarray:
    """Un tirage (C, T, V) : le canal c suit un PG de largeur sigma_c = sigma*c/C"""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((cfg.C, cfg.T))
    out = np.empty((cfg.C, cfg.T, cfg.V))
    for c in range(cfg.C):
        factor = _cholesky_factor(cfg.T, float(cfg.channel_bandwidth(c)))
        out[c, :, 0] = factor @ noise[c]
    return out


def latent_length_for(frames: int) -> int:
    """Nombre de pas latents T tel que 16T = N"""
    if frames < FRAMES_PER_LATENT_STEP or frames % FRAMES_PER_LATENT_STEP:
        raise DataError(f"N={frames} images n'est pas un multiple positif de {FRAMES_PER_LATENT_STEP}")
    return frames // FRAMES_PER_LATENT_STEP


class StyleEmbedding(Module):
    """Table (num_styles, C) de plongements denses entraînables, init N(0, 1)"""

    def __init__(self, channels: int, num_styles: int = NUM_STYLES, rng: SeedLike = None):
        rng = np.random.default_rng(rng)
        self.table = Parameter(rng.standard_normal((num_styles, channels)))

    @property
    def channels(self) -> int:
        return self.table.shape[1]

    def rows(self, styles: Sequence) -> Tensor:
        indices = np.array([int(StyleLabel.parse(s)) for s in np.ravel(styles)], dtype=np.int64)
        if indices.size and indices.max() >= self.table.shape[0]:
            raise DataError(f"Style {indices.max()} absent de la table de plongement")
        return T.take(self.table, indices.reshape(np.shape(styles)), axis=0)


@dataclass
class LatentTensor:
    data: Tensor
    per_step_styles: List[StyleLabel]

    @property
    def shape(self):
        return self.data.shape


def assemble_latent(noise, styles: Sequence, embedding: StyleEmbedding) -> LatentTensor:
    """
    Concatène le bruit (C, T, 1) et les lignes de style (une par pas) en un
    tenseur (2C, T, 1). Les gradients remontent jusqu'à la table de plongement.
    """
    noise = T.as_tensor(noise)
    channels, length, vertices = noise.shape
    if len(styles) != length:
        raise DataError(f"{len(styles)} styles fournis pour T={length} pas latents")
    if channels != embedding.channels:
        raise DataError(f"Bruit à {channels} canaux, plongement à {embedding.channels}")
    labels = [StyleLabel.parse(s) for s in styles]
    rows = embedding.rows(labels)                                   # (T, C)
    style_part = T.reshape(T.transpose(rows, (1, 0)), (channels, length, vertices))
    return LatentTensor(T.concat([noise, style_part], axis=0), labels)


def assemble_latent_batch(noise: np.ndarray, styles: np.ndarray, embedding: StyleEmbedding) -> Tensor:
    """Version par lot : bruit (B, C, T, 1), styles (B, T) -> (B, 2C, T, 1)"""
    noise = T.as_tensor(noise)
    batch, channels, length, vertices = noise.shape
    styles = np.asarray(styles)
    if styles.shape != (batch, length):
        raise DataError(f"Styles de forme {styles.shape}, ({batch}, {length}) attendu")
    rows = embedding.rows(styles)                                   # (B, T, C)
    style_part = T.reshape(T.transpose(rows, (0, 2, 1)), (batch, channels, length, vertices))
    return T.concat([noise, style_part], axis=1)


def sample_latent_noise(cfg: GpConfig, batch: int, rng: SeedLike = None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return np.stack([gp_sample(cfg, rng) for _ in range(batch)])
