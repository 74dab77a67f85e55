"""
Générateur et discriminateur graphiques.

Le générateur part d'un graphe à un sommet et remonte la pyramide
1 -> 3 -> 11 -> 25 sommets ; chaque bloc double la dimension temporelle
(convolution transposée), agrège les sommets vers le niveau plus fin
(matrice A^omega masquée par distance géodésique) puis applique une
convolution spatio-temporelle sur graphe. Le discriminateur est le miroir
exact : convolutions à pas 2 et agrégation descendante B^phi.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import shortest_path

from . import tensor as T
from .exceptions import ConfigError, DataError, ShapeError
from .latent import FRAMES_PER_LATENT_STEP, StyleEmbedding, assemble_latent_batch
from .layers import BatchNorm, Conv2d, ConvTranspose2d, Dropout, Module, uniform_init
from .skeleton import BODY_25, JOINT_COUNT, JOINT_NAMES, Motion
from .styles import NUM_STYLES, StyleLabel
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


# ============================================================================
# PYRAMIDE DE GRAPHES
# ============================================================================

@dataclass(frozen=True)
class GraphLevel:
    name: str
    vertex_count: int
    edges: Tuple[Tuple[int, int], ...] = ()
    labels: Tuple[str, ...] = ()

    @property
    def adjacency(self) -> np.ndarray:
        """Matrice binaire symétrique avec boucles"""
        adjacency = np.eye(self.vertex_count)
        for a, b in self.edges:
            adjacency[a, b] = adjacency[b, a] = 1.0
        return adjacency

    def geodesic_distances(self) -> np.ndarray:
        distances = shortest_path(self.adjacency - np.eye(self.vertex_count), unweighted=True, directed=False)
        if not np.all(np.isfinite(distances)):
            raise ConfigError(f"Le graphe {self.name} n'est pas connexe")
        return distances

    def partitions(self) -> np.ndarray:
        """Adjacences normalisées D_k^-1/2 A_k D_k^-1/2 : k=0 le sommet lui-même, k=1 ses voisins"""
        self_part = np.eye(self.vertex_count)
        neighbours = self.adjacency - np.eye(self.vertex_count)
        degree = neighbours.sum(axis=1)
        inv_sqrt = np.zeros_like(degree)
        inv_sqrt[degree > 0] = degree[degree > 0] ** -0.5
        neighbour_part = inv_sqrt[:, None] * neighbours * inv_sqrt[None, :]
        return np.stack([self_part, neighbour_part])


LEVEL_1 = GraphLevel('root', 1, (), ('body',))
LEVEL_3 = GraphLevel('regions', 3, ((0, 1), (0, 2)), ('head+torso', 'left limbs', 'right limbs'))
LEVEL_11 = GraphLevel(
    'segments', 11,
    ((0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (1, 10), (10, 6), (10, 7), (6, 8), (7, 9)),
    ('head', 'torso', 'L upper-arm', 'R upper-arm', 'L forearm+hand', 'R forearm+hand',
     'L thigh', 'R thigh', 'L shin+foot', 'R shin+foot', 'hips'),
)
LEVEL_25 = GraphLevel('body25', JOINT_COUNT, BODY_25.edges, JOINT_NAMES)

PYRAMID = (LEVEL_1, LEVEL_3, LEVEL_11, LEVEL_25)

# Sommets fins correspondant à chaque sommet grossier
MEMBERSHIPS: Dict[Tuple[int, int], Dict[int, Tuple[int, ...]]] = {
    (1, 3): {0: (0,)},
    (3, 11): {0: (0, 1, 10), 1: (2, 4, 6, 8), 2: (3, 5, 7, 9)},
    (11, 25): {
        0: (0, 15, 16, 17, 18), 1: (1,), 2: (5, 6), 3: (2, 3), 4: (7,), 5: (4,),
        6: (12, 13), 7: (9, 10), 8: (14, 19, 20, 21), 9: (11, 22, 23, 24), 10: (8,),
    },
}


def level_by_size(vertex_count: int) -> GraphLevel:
    for level in PYRAMID:
        if level.vertex_count == vertex_count:
            return level
    raise ConfigError(f"Aucun niveau de pyramide à {vertex_count} sommets")


def aggregation_mask(coarse: GraphLevel, fine: GraphLevel, partitions: int = 2) -> np.ndarray:
    """
    Masque (K, V_fin, V_grossier) : mask[k, i, j] = 1 si la distance
    géodésique, dans le graphe fin, entre le sommet i et les sommets associés
    à j est au plus k.
    """
    key = (coarse.vertex_count, fine.vertex_count)
    if key not in MEMBERSHIPS:
        raise ConfigError(f"Transition {key} absente de la pyramide")
    distances = fine.geodesic_distances()
    mask = np.zeros((partitions, fine.vertex_count, coarse.vertex_count))
    for j, members in MEMBERSHIPS[key].items():
        nearest = distances[:, list(members)].min(axis=1)
        for k in range(partitions):
            mask[k, :, j] = nearest <= k
    return mask


class AggregationMatrix(Module):
    """Poids (K, V_out, V_in) entraînables uniquement sous le masque géodésique"""

    def __init__(self, mask: np.ndarray, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.mask = np.asarray(mask, dtype=np.float64)
        fan_in = self.mask.sum(axis=(0, 2)).max()
        self.weight = Parameter(uniform_init(rng, self.mask.shape, int(fan_in)) * self.mask)

    @property
    def v_out(self) -> int:
        return self.mask.shape[1]

    @property
    def v_in(self) -> int:
        return self.mask.shape[2]

    def matrix(self) -> Tensor:
        return T.tsum(T.mul(self.weight, self.mask), axis=0)

    @classmethod
    def upsampling(cls, coarse: GraphLevel, fine: GraphLevel, partitions: int = 2, rng=None):
        return cls(aggregation_mask(coarse, fine, partitions), rng)

    @classmethod
    def downsampling(cls, fine: GraphLevel, coarse: GraphLevel, partitions: int = 2, rng=None):
        return cls(np.transpose(aggregation_mask(coarse, fine, partitions), (0, 2, 1)), rng)


def _aggregate(f, matrix: AggregationMatrix) -> Tensor:
    f = T.as_tensor(f)
    if f.shape[-1] != matrix.v_in:
        raise ShapeError(f"Entrée {f.shape} incompatible avec une agrégation {matrix.mask.shape}")
    return T.tensordot(f, matrix.matrix(), axes=([f.ndim - 1], [1]))


def spatial_upsample(f, matrix: AggregationMatrix) -> Tensor:
    """f'_i = sum_{k,j} A[k,i,j] f_j en chaque (canal, temps)"""
    if matrix.v_out <= matrix.v_in:
        raise ShapeError(f"Suréchantillonnage {matrix.v_in} -> {matrix.v_out} invalide")
    return _aggregate(f, matrix)


def spatial_downsample(f, matrix: AggregationMatrix) -> Tensor:
    """f_i = sum_{k,j} B[k,i,j] f'_j"""
    if matrix.v_out >= matrix.v_in:
        raise ShapeError(f"Sous-échantillonnage {matrix.v_in} -> {matrix.v_out} invalide")
    return _aggregate(f, matrix)


class SpatialUpsample(Module):
    def __init__(self, coarse: GraphLevel, fine: GraphLevel, partitions: int = 2, rng=None):
        self.aggregation = AggregationMatrix.upsampling(coarse, fine, partitions, rng)

    def forward(self, f: Tensor) -> Tensor:
        return spatial_upsample(f, self.aggregation)


class SpatialDownsample(Module):
    def __init__(self, fine: GraphLevel, coarse: GraphLevel, partitions: int = 2, rng=None):
        self.aggregation = AggregationMatrix.downsampling(fine, coarse, partitions, rng)

    def forward(self, f: Tensor) -> Tensor:
        return spatial_downsample(f, self.aggregation)


# ============================================================================
# CONVOLUTION SPATIO-TEMPORELLE
# ============================================================================

class StGraphConv(Module):
    """
    Couche ST-GCN : propagation normalisée par partition puis convolution
    temporelle (k_t=9, pad 4), normalisation par lot, leaky-ReLU et dropout.
    Conserve (T, V), ne change que le nombre de canaux.
    """

    def __init__(self, in_channels: int, out_channels: int, level: GraphLevel, temporal_kernel: int = 9,
                 dropout: float = 0.0, rng: Optional[np.random.Generator] = None):
        if temporal_kernel % 2 == 0:
            raise ConfigError(f"Noyau temporel impair attendu, reçu {temporal_kernel}")
        rng = rng or np.random.default_rng()
        self.level = level
        self.out_channels = out_channels
        self.adjacency = level.partitions()
        self.partition_count = self.adjacency.shape[0]
        self.spatial_conv = Conv2d(in_channels, out_channels * self.partition_count, 1, rng=rng)
        self.temporal_conv = Conv2d(out_channels, out_channels, temporal_kernel,
                                    pad_t=temporal_kernel // 2, rng=rng)
        self.norm = BatchNorm(out_channels)
        self.dropout = Dropout(dropout, rng=rng)

    def spatial(self, f: Tensor) -> Tensor:
        """sum_k D_k^-1/2 A_k D_k^-1/2 f W_k"""
        f = T.as_tensor(f)
        if f.shape[-1] != self.level.vertex_count:
            raise ShapeError(f"Entrée {f.shape} pour un graphe à {self.level.vertex_count} sommets")
        mixed = self.spatial_conv(f)
        batch, _, length, vertices = mixed.shape
        split = T.reshape(mixed, (batch, self.partition_count, self.out_channels, length, vertices))
        return T.tensordot(split, self.adjacency, axes=([1, 4], [0, 1]))

    def forward(self, f: Tensor) -> Tensor:
        single = f.ndim == 3
        if single:
            f = T.reshape(f, (1,) + f.shape)
        out = self.spatial(f)
        out = self.temporal_conv(out)
        out = self.norm(out)
        out = T.leaky_relu(out, 0.2)
        out = self.dropout(out)
        return T.reshape(out, out.shape[1:]) if single else out


def st_graph_conv(f, layer: StGraphConv) -> Tensor:
    return layer(f)


# ============================================================================
# CONFIGURATION ET RÉSEAUX
# ============================================================================

@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 512
    channels: Tuple[int, ...] = (512, 256, 128, 128)
    dropout: float = 0.3
    class_encoding: str = 'index'
    temporal_kernel: int = 9
    partitions: int = 2
    num_styles: int = NUM_STYLES

    def __post_init__(self):
        if len(self.channels) != len(PYRAMID):
            raise ConfigError(f"{len(PYRAMID)} largeurs de blocs attendues, reçu {self.channels}")
        if self.latent_channels < 1 or min(self.channels) < 1:
            raise ConfigError("Les nombres de canaux doivent être >= 1")
        if self.class_encoding not in ('index', 'onehot'):
            raise ConfigError(f"Encodage de classe inconnu : {self.class_encoding}")
        if self.partitions != 2:
            raise ConfigError("Seules deux partitions (soi, voisins) sont prises en charge")

    @property
    def class_features(self) -> int:
        return 1 if self.class_encoding == 'index' else self.num_styles

    def stages(self) -> List[dict]:
        """Plan des blocs du générateur, du latent vers la pose"""
        plan = []
        previous = 2 * self.latent_channels
        for index, width in enumerate(self.channels):
            source = PYRAMID[index]
            target = PYRAMID[index + 1] if index + 1 < len(PYRAMID) else None
            plan.append({
                'in_channels': previous,
                'out_channels': width,
                'source': source,
                'target': target,
                'level': target or source,
            })
            previous = width
        return plan


class GeneratorBlock(Module):
    def __init__(self, stage: dict, cfg: ModelConfig, rng: np.random.Generator):
        self.temporal = ConvTranspose2d(stage['in_channels'], stage['out_channels'], 4, 2, 1, rng=rng)
        self.spatial = (
            SpatialUpsample(stage['source'], stage['target'], cfg.partitions, rng)
            if stage['target'] is not None else None
        )
        self.gcn = StGraphConv(stage['out_channels'], stage['out_channels'], stage['level'],
                               cfg.temporal_kernel, cfg.dropout, rng)

    def forward(self, f: Tensor) -> Tensor:
        f = self.temporal(f)
        if self.spatial is not None:
            f = self.spatial(f)
        return self.gcn(f)


class Generator(Module):
    """Latent (B, 2C, T, 1) -> mouvement (B, 2, 16T, 25) dans l'espace normalisé"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = StyleEmbedding(cfg.latent_channels, cfg.num_styles, rng)
        self.blocks = [GeneratorBlock(stage, cfg, rng) for stage in cfg.stages()]
        self.output = Conv2d(cfg.channels[-1], 2, 1, rng=rng)

    def forward(self, latent) -> Tensor:
        latent = T.as_tensor(latent)
        single = latent.ndim == 3
        if single:
            latent = T.reshape(latent, (1,) + latent.shape)
        _, channels, length, vertices = latent.shape
        if channels != 2 * self.cfg.latent_channels or vertices != 1:
            raise ShapeError(f"Latent {latent.shape}, (B, {2 * self.cfg.latent_channels}, T, 1) attendu")
        if length < 1:
            raise ShapeError("Le latent doit compter au moins un pas temporel")
        f = latent
        for block in self.blocks:
            f = block(f)
        out = self.output(f)
        return T.reshape(out, out.shape[1:]) if single else out

    def generate(self, noise: np.ndarray, styles: np.ndarray) -> Tensor:
        """Bruit (B, C, T, 1) et styles (B, T) -> (B, 2, 16T, 25)"""
        return self(assemble_latent_batch(noise, styles, self.embedding))

    def stage_signature(self) -> List[Tuple]:
        return [
            (block.temporal.weight.shape[0], block.temporal.weight.shape[1],
             block.gcn.level.vertex_count,
             (block.spatial.aggregation.v_in, block.spatial.aggregation.v_out) if block.spatial else None)
            for block in self.blocks
        ]


class DiscriminatorBlock(Module):
    def __init__(self, stage: dict, cfg: ModelConfig, rng: np.random.Generator):
        self.gcn = StGraphConv(stage['out_channels'], stage['out_channels'], stage['level'],
                               cfg.temporal_kernel, cfg.dropout, rng)
        self.spatial = (
            SpatialDownsample(stage['target'], stage['source'], cfg.partitions, rng)
            if stage['target'] is not None else None
        )
        self.temporal = Conv2d(stage['out_channels'], stage['in_channels'], 4, stride_t=2, pad_t=1, rng=rng)

    def forward(self, f: Tensor) -> Tensor:
        f = self.gcn(f)
        if self.spatial is not None:
            f = self.spatial(f)
        return self.temporal(f)


class Discriminator(Module):
    """(x, y, classe) par articulation -> probabilité réel/faux par échantillon"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.input = Conv2d(2 + cfg.class_features, cfg.channels[-1], 1, rng=rng)
        self.blocks = [DiscriminatorBlock(stage, cfg, rng) for stage in reversed(cfg.stages())]
        self.head = Conv2d(2 * cfg.latent_channels, 1, 1, rng=rng)

    def class_channels(self, styles: Sequence, frames: int) -> np.ndarray:
        labels = np.array([int(StyleLabel.parse(s)) for s in styles])
        if self.cfg.class_encoding == 'index':
            values = labels[:, None] / max(self.cfg.num_styles - 1, 1)
        else:
            values = np.eye(self.cfg.num_styles)[labels]
        return np.broadcast_to(values[:, :, None, None], (labels.size, values.shape[1], frames, JOINT_COUNT)).copy()

    def logits(self, motion, styles: Sequence) -> Tensor:
        motion = T.as_tensor(motion)
        if motion.ndim == 3:
            motion = T.reshape(motion, (1,) + motion.shape)
        batch, coords, frames, joints = motion.shape
        if coords != 2 or joints != JOINT_COUNT:
            raise ShapeError(f"Mouvement {motion.shape}, (B, 2, N, 25) attendu")
        if frames % FRAMES_PER_LATENT_STEP:
            raise DataError(f"N={frames} images n'est pas divisible par {FRAMES_PER_LATENT_STEP}")
        if len(styles) != batch:
            raise DataError(f"{len(styles)} styles pour un lot de {batch}")
        f = T.concat([motion, Tensor(self.class_channels(styles, frames))], axis=1)
        f = self.input(f)
        for block in self.blocks:
            f = block(f)
        out = self.head(f)                                   # (B, 1, T, 1)
        return T.mean(out, axis=(1, 2, 3))

    def forward(self, motion, styles: Sequence) -> Tensor:
        return T.sigmoid(self.logits(motion, styles))

    def stage_signature(self) -> List[Tuple]:
        return [
            (block.temporal.weight.shape[0], block.temporal.weight.shape[1],
             block.gcn.level.vertex_count,
             (block.spatial.aggregation.v_out, block.spatial.aggregation.v_in) if block.spatial else None)
            for block in self.blocks
        ]


def planned_signature(cfg: ModelConfig) -> List[Tuple]:
    return [
        (stage['in_channels'], stage['out_channels'], stage['level'].vertex_count,
         (stage['source'].vertex_count, stage['target'].vertex_count) if stage['target'] else None)
        for stage in cfg.stages()
    ]


def assert_mirrored(generator: Optional[Generator], discriminator: Discriminator):
    """Le discriminateur doit être le miroir canal/sommet exact du générateur"""
    signature = generator.stage_signature() if generator is not None else planned_signature(discriminator.cfg)
    expected = list(reversed(signature))
    actual = discriminator.stage_signature()
    if expected != actual:
        raise ConfigError(f"Discriminateur non symétrique du générateur : {actual} != {expected}")


def build_generator(cfg: ModelConfig, seed=None) -> Generator:
    generator = Generator(cfg, np.random.default_rng(seed))
    generator.assign_names('gen')
    logger.debug(f"Générateur construit : {generator.num_parameters()} paramètres")
    return generator


def build_discriminator(cfg: ModelConfig, seed=None, generator: Optional[Generator] = None) -> Discriminator:
    discriminator = Discriminator(cfg, np.random.default_rng(seed))
    discriminator.assign_names('disc')
    assert_mirrored(generator, discriminator)
    logger.debug(f"Discriminateur construit : {discriminator.num_parameters()} paramètres")
    return discriminator


# ============================================================================
# CONVERSIONS MOUVEMENT <-> TENSEUR
# ============================================================================

def motions_to_array(motions: Sequence[Motion]) -> np.ndarray:
    """Liste de mouvements (N, 25, 2) -> tableau (B, 2, N, 25)"""
    return np.stack([np.transpose(m.joints, (2, 0, 1)) for m in motions])


def array_to_motions(array: np.ndarray, styles: Sequence = None, fps: int = 24) -> List[Motion]:
    array = np.asarray(array)
    if array.ndim == 3:
        array = array[None]
    styles = list(styles) if styles is not None else [None] * array.shape[0]
    return [Motion(np.transpose(sample, (1, 2, 0)), fps=fps, style=style) for sample, style in zip(array, styles)]
