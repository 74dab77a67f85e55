import json
from pathlib import Path

from ...exceptions import ConfigError
from ...models import TrainingRun
from ...tasks import train_classifier_task
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "Entraîne le classifieur de style audio par validation croisée stratifiée"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help="Manifeste du corpus (sinon paths.manifest)")
        parser.add_argument('--background', action='store_true', help="Exécuter via Celery (.delay)")

    def run(self, cfg, **options):
        manifest = cfg.path('manifest', options.get('manifest'))
        if manifest is None:
            raise ConfigError("paths.manifest : manifeste requis (--manifest ou fichier de configuration)")
        out = cfg.path('out', options.get('out')) or Path('runs') / 'classifier'

        run = TrainingRun.objects.create(kind=TrainingRun.Kind.CLASSIFIER, config=cfg.data, seed=cfg.seed)
        args = (str(run.id), cfg.data, str(manifest), str(out))
        if options['background']:
            result = train_classifier_task.delay(*args)
            self.stdout.write(f"Entraînement {run.id} lancé en arrière-plan (tâche {result.id})")
            return

        report = train_classifier_task(*args)
        self.stdout.write(json.dumps(report, indent=2))
        self.stdout.write(self.style.SUCCESS(
            f"Précision de validation croisée : {report['mean_accuracy']:.3f} ± {report['std_accuracy']:.3f}"
        ))
