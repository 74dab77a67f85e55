from pathlib import Path

from ...evaluation import EvalReport
from ...exceptions import ConfigError, DataError
from ...models import EvaluationRecord, TrainingRun
from ...serializers import EvalReportSerializer
from ...tasks import build_eval_sets, dispatch_evaluation, save_eval_sets
from ...utils import derive_seeds, write_json
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "FID, GAN-train et GAN-test (moyenne ± écart-type sur eval.repeats répétitions)"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help="Manifeste du corpus réel (sinon paths.manifest)")
        parser.add_argument('--generator', help="Checkpoint du générateur (sinon paths.generator)")
        parser.add_argument('--generated', help="Manifeste de mouvements déjà générés (sinon paths.generated)")
        parser.add_argument('--run', help="Identifiant du TrainingRun évalué")
        parser.add_argument('--background', action='store_true', help="Répétitions en groupe Celery")

    def run(self, cfg, **options):
        manifest = cfg.path('manifest', options.get('manifest'))
        if manifest is None:
            raise ConfigError("paths.manifest : manifeste réel requis")
        generator = cfg.path('generator', options.get('generator'))
        generated = cfg.path('generated', options.get('generated'))
        if generator is None and generated is None:
            raise ConfigError("paths.generator ou paths.generated : source des mouvements générés requise")
        out = cfg.path('out', options.get('out')) or Path('runs') / 'evaluation'

        run = None
        if options.get('run'):
            run = TrainingRun.objects.filter(id=options['run']).first()
            if run is None:
                raise ConfigError(f"run : entraînement {options['run']} inconnu")

        sets = build_eval_sets(cfg, manifest, generator=generator,
                               generated=None if generator is not None else generated)
        sets_path = save_eval_sets(Path(out) / 'eval_sets.ckpt', sets)
        record = EvaluationRecord.objects.create(run=run, seed=cfg.seed)
        seeds = derive_seeds(cfg.seed, cfg.eval.repeats)

        result = dispatch_evaluation(str(sets_path), cfg.data, seeds, str(record.id),
                                     background=options['background'])
        if not isinstance(result, dict):
            self.stdout.write(f"Évaluation {record.id} lancée en arrière-plan ({len(seeds)} répétitions)")
            return

        serializer = EvalReportSerializer(data=result)
        if not serializer.is_valid():
            raise DataError(f"Rapport hors schéma : {serializer.errors}")
        report_path = write_json(result, Path(out) / 'eval_report.json')
        self.stdout.write(EvalReport.from_dict(result).render_table())
        self.stdout.write(self.style.SUCCESS(f"Rapport écrit dans {report_path}"))
