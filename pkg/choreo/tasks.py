# choreo/tasks.py

import dataclasses
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from celery import chord, shared_task
from django.conf import settings

from .audio import save_classifier, train_classifier
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import augment_corpus, load_manifest
from .evaluation import EvalReport, evaluation_round
from .exceptions import DataError
from .graphnet import motions_to_array
from .latent import FRAMES_PER_LATENT_STEP
from .models import EvaluationRecord, TrainingRun
from .training import GanTrainer, load_generator, synthesize_batch
from .utils import parse_run_config, tracked_run, write_json

logger = logging.getLogger(__name__)

EVAL_SETS = ('gen', 'real_train', 'real_eval')


@shared_task
def train_classifier_task(run_id: str, config: dict, manifest: str, out: str) -> dict:
    """
    Tâche Celery : validation croisée du classifieur audio sur les clips
    d'entraînement du manifeste, puis sauvegarde du meilleur pli.
    """
    cfg = parse_run_config(config)
    with tracked_run(run_id) as run:
        corpus = load_manifest(manifest, split='train')
        clips, labels = [], []
        for clip in corpus:
            audio = clip.load_audio()
            if audio is None:
                raise DataError(f"Clip {clip.source_id} sans fichier audio")
            clips.append(audio)
            labels.append(clip.style)
        logger.info(f"Entraînement du classifieur audio ({len(clips)} clips, {cfg.classifier.folds} plis)...")

        model, report = train_classifier(clips, labels, cfg.classifier, seed=cfg.seed)
        out_dir = Path(out)
        checkpoint = save_classifier(model, out_dir / 'classifier.ckpt')
        payload = report.to_dict()
        write_json(payload, out_dir / 'cv_report.json')

        run.status = TrainingRun.Status.COMPLETED
        run.checkpoint_path = str(checkpoint)
        run.report = payload
        run.steps = cfg.classifier.epochs
        run.save()
        logger.info(f"Classifieur écrit dans {checkpoint}")
        return payload


@shared_task
def train_gan_task(run_id: str, config: dict, manifest: str, out: str, resume: Optional[str] = None) -> dict:
    """
    Tâche Celery : augmentation du corpus d'entraînement puis boucle
    adversariale. Les styles viennent du manifeste, pas du classifieur.
    """
    cfg = parse_run_config(config)
    with tracked_run(run_id) as run:
        corpus = load_manifest(manifest, split='train')
        windows = augment_corpus(corpus, cfg.augment, seed=cfg.seed, per_sequence=cfg.per_sequence)
        trainer = GanTrainer(windows, cfg.gp, cfg.model, cfg.train, out, seed=cfg.seed)
        if resume:
            trainer.resume(resume)
        run.metrics_path = str(trainer.metrics_path)
        run.save(update_fields=['metrics_path', 'updated_at'])

        summary = trainer.run()
        run.status = TrainingRun.Status.COMPLETED
        run.steps = summary.steps
        run.checkpoint_path = str(summary.checkpoint)
        run.report = {'last_metrics': summary.last_metrics, 'windows': len(windows)}
        run.save()
        logger.info(f"GAN entraîné : {summary.steps} pas, checkpoint {summary.checkpoint}")
        return {'steps': summary.steps, 'checkpoint': str(summary.checkpoint), 'last_metrics': summary.last_metrics}


# ============================================================================
# ÉVALUATION
# ============================================================================

def save_eval_sets(path, sets: dict) -> Path:
    """Les ensembles (mouvements, étiquettes) voyagent entre tâches dans un fichier checkpoint"""
    arrays = {}
    for name in EVAL_SETS:
        motions, labels = sets[name]
        arrays[f"{name}.motions"] = np.asarray(motions, dtype=np.float64)
        arrays[f"{name}.labels"] = np.asarray(labels, dtype=np.float64)
    return save_checkpoint(path, arrays)


def load_eval_sets(path) -> dict:
    arrays = load_checkpoint(path)
    return {
        name: (arrays[f"{name}.motions"], arrays[f"{name}.labels"].astype(np.int64))
        for name in EVAL_SETS
    }


@shared_task
def evaluation_round_task(sets_path: str, config: dict, seed: int) -> dict:
    """Une répétition : extracteur, FID, GAN-train et GAN-test"""
    cfg = parse_run_config(config)
    sets = load_eval_sets(sets_path)
    logger.info(f"Répétition d'évaluation (graine {seed})...")
    return evaluation_round(sets['gen'], sets['real_train'], sets['real_eval'], cfg.eval, seed=seed)


@shared_task
def finalize_evaluation_task(rounds: list, record_id: str, seed: Optional[int] = None) -> dict:
    report = EvalReport.from_rounds(rounds, seed=seed)
    payload = report.to_dict()
    record = EvaluationRecord.objects.get(id=record_id)
    record.report = payload
    record.repeats = report.repeats
    record.save()
    logger.info(f"Évaluation {record.id} terminée ({report.repeats} répétitions)")
    return payload


def dispatch_evaluation(sets_path: str, config: dict, seeds: list, record_id: str, background: bool = False):
    """
    Au premier plan, les répétitions s'exécutent dans le processus courant.
    En arrière-plan, elles forment un groupe Celery suivi de l'agrégation.
    """
    if background and not getattr(settings, 'CELERY_TASK_ALWAYS_EAGER', False):
        header = [evaluation_round_task.s(sets_path, config, s) for s in seeds]
        return chord(header)(finalize_evaluation_task.s(str(record_id), config.get('seed')))
    rounds = [evaluation_round_task(sets_path, config, s) for s in seeds]
    return finalize_evaluation_task(rounds, str(record_id), config.get('seed'))


def build_eval_sets(cfg, manifest, generator=None, generated=None) -> dict:
    """
    Ensembles réels (train sans bruit PG, eval) et ensemble généré, soit
    synthétisé depuis un checkpoint avec la répartition de styles de
    l'évaluation réelle, soit lu depuis un second manifeste.
    """
    corpus = load_manifest(manifest)
    clean = dataclasses.replace(cfg.augment, gp_noise=False)
    real_train = augment_corpus(corpus.subset('train'), clean, seed=cfg.seed, per_sequence=cfg.per_sequence)
    real_eval = augment_corpus(corpus.subset('eval'), clean, seed=cfg.seed, per_sequence=cfg.per_sequence)
    if not len(real_train) or not len(real_eval):
        raise DataError("Les partitions train et eval du manifeste doivent être non vides")

    if generator is not None:
        G, gp_cfg = load_generator(generator)
        steps = real_eval.motions[0].joints.shape[0] // FRAMES_PER_LATENT_STEP
        gen = (synthesize_batch(G, gp_cfg, real_eval.styles, steps, seed=cfg.seed), real_eval.styles)
    elif generated is not None:
        windows = augment_corpus(load_manifest(generated), clean, seed=cfg.seed, per_sequence=cfg.per_sequence)
        if not len(windows):
            raise DataError(f"Aucune fenêtre générée dans {generated}")
        gen = (motions_to_array(windows.motions), windows.styles)
    else:
        raise DataError("Un générateur ou un manifeste de mouvements générés est requis")

    logger.info(f"Ensembles d'évaluation : {len(gen[1])} générés, {len(real_train)} train, {len(real_eval)} eval")
    return {
        'gen': gen,
        'real_train': (motions_to_array(real_train.motions), real_train.styles),
        'real_eval': (motions_to_array(real_eval.motions), real_eval.styles),
    }
