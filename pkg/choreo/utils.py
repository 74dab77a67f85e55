# choreo/utils.py

import contextlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from django.core.management.base import CommandError

from .audio import ClassifierConfig
from .dataset import AugmentConfig, SyntheticConfig
from .evaluation import EvalConfig
from .exceptions import ChoreoError, ConfigError
from .graphnet import ModelConfig
from .latent import GpConfig
from .models import TrainingRun
from .serializers import RunConfigSerializer, flatten_errors
from .training import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Configuration validée d'une exécution, sections converties en dataclasses"""

    seed: Optional[int]
    gp: GpConfig
    model: ModelConfig
    train: TrainConfig
    classifier: ClassifierConfig
    augment: AugmentConfig
    eval: EvalConfig
    knot_stride: int
    per_sequence: bool
    canvas: float
    paths: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict, repr=False)

    def path(self, key: str, override=None) -> Optional[Path]:
        value = override or self.paths.get(key)
        return Path(value) if value else None

    def with_seed(self, seed: Optional[int]) -> 'RunConfig':
        if seed is None:
            return self
        return parse_run_config({**self.data, 'seed': seed})


def parse_run_config(data: dict) -> RunConfig:
    """Valide un dictionnaire de configuration ; ConfigError avec chemins pointés"""
    serializer = RunConfigSerializer(data=data if data is not None else {})
    if not serializer.is_valid():
        raise ConfigError("Configuration invalide : " + "; ".join(flatten_errors(serializer.errors)))
    values = serializer.validated_data
    gp, model, train = values['gp'], values['model'], values['train']
    augment, skeleton = values['augment'], values['skeleton']
    noise = augment['gp_noise']
    # JSON pur pour la base et les tâches Celery
    plain = json.loads(json.dumps(values))

    return RunConfig(
        seed=values['seed'],
        gp=GpConfig(C=gp['C'], T=gp['T'], V=gp['V'], sigma=gp['sigma']),
        model=ModelConfig(
            latent_channels=gp['C'],
            channels=tuple(model['channels']),
            dropout=model['dropout'],
            class_encoding=model['class_encoding'],
            temporal_kernel=model['temporal_kernel'],
        ),
        train=TrainConfig(**train),
        classifier=ClassifierConfig(**{
            **values['classifier'],
            'channels': tuple(values['classifier']['channels']),
            'kernels': tuple(values['classifier']['kernels']),
            'strides': tuple(values['classifier']['strides']),
        }),
        augment=AugmentConfig(
            shift_stride=augment['shift_stride'],
            eval_shift_stride=augment['eval_shift_stride'],
            eval_shift_stride_mj=augment['eval_shift_stride_mj'],
            gp_noise=noise['enabled'],
            amplitude=noise['amplitude'],
            noise_sigma=noise['sigma'],
        ),
        eval=EvalConfig(**values['eval']),
        knot_stride=skeleton['knot_stride'],
        per_sequence=skeleton['per_sequence_normalization'],
        canvas=skeleton['canvas'],
        paths=dict(values['paths']),
        data=plain,
    )


def load_run_config(path: Union[str, Path, None] = None) -> RunConfig:
    """Lit le fichier --config ; sans fichier, les valeurs de CHOREO_SETTINGS s'appliquent"""
    if path is None:
        return parse_run_config({})
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"Fichier de configuration introuvable : {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Fichier de configuration JSON invalide {path} : {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} : un objet JSON est attendu à la racine")
    return parse_run_config(data)


def synthetic_config() -> SyntheticConfig:
    from django.conf import settings

    values = settings.CHOREO_SETTINGS['SYNTHETIC']
    return SyntheticConfig(
        train_per_style=values['TRAIN_PER_STYLE'],
        eval_per_style=values['EVAL_PER_STYLE'],
        min_frames=values['MIN_FRAMES'],
        max_frames=values['MAX_FRAMES'],
        with_audio=values['WITH_AUDIO'],
    )


def derive_seeds(seed: Optional[int], count: int) -> list:
    """Graines entières indépendantes (sérialisables en JSON) dérivées d'une graine racine"""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


def write_json(payload: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(payload, handle, indent=2)
    return path


@contextlib.contextmanager
def tracked_run(run_id):
    """Passe le TrainingRun en cours, puis en échec si le bloc lève"""
    run = TrainingRun.objects.get(id=run_id)
    run.mark_running()
    try:
        yield run
    except Exception as e:
        logger.error(f"Échec de l'entraînement {run.id} : {e}", exc_info=True)
        run.mark_failed(e)
        raise


def as_command_error(error: ChoreoError) -> CommandError:
    """Erreur du domaine -> CommandError avec le code de sortie associé"""
    return CommandError(str(error), returncode=getattr(error, 'exit_code', 1))
