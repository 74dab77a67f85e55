from pathlib import Path

from ...exceptions import ConfigError
from ...models import TrainingRun
from ...tasks import train_gan_task
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "Entraîne le générateur et le discriminateur sur la partition train du manifeste"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help="Manifeste du corpus (sinon paths.manifest)")
        parser.add_argument('--resume', help="Checkpoint à partir duquel reprendre")
        parser.add_argument('--background', action='store_true', help="Exécuter via Celery (.delay)")

    def run(self, cfg, **options):
        manifest = cfg.path('manifest', options.get('manifest'))
        if manifest is None:
            raise ConfigError("paths.manifest : manifeste requis (--manifest ou fichier de configuration)")
        out = cfg.path('out', options.get('out')) or Path('runs') / 'gan'

        run = TrainingRun.objects.create(kind=TrainingRun.Kind.GAN, config=cfg.data, seed=cfg.seed)
        args = (str(run.id), cfg.data, str(manifest), str(out), options.get('resume'))
        if options['background']:
            result = train_gan_task.delay(*args)
            self.stdout.write(f"Entraînement {run.id} lancé en arrière-plan (tâche {result.id})")
            return

        summary = train_gan_task(*args)
        self.stdout.write(self.style.SUCCESS(
            f"{summary['steps']} pas effectués, checkpoint final : {summary['checkpoint']}"
        ))
