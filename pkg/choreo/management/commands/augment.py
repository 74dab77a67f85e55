import json
from pathlib import Path

from ...dataset import corpus_statistics, load_manifest
from ...exceptions import ConfigError
from ...utils import write_json
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "Statistiques du corpus avant et après augmentation par décalage temporel"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help="Manifeste du corpus (sinon paths.manifest)")

    def run(self, cfg, **options):
        manifest = cfg.path('manifest', options.get('manifest'))
        if manifest is None:
            raise ConfigError("paths.manifest : manifeste requis (--manifest ou fichier de configuration)")
        stats = corpus_statistics(load_manifest(manifest), cfg.augment)
        out = cfg.path('out', options.get('out')) or Path('runs') / 'augment'
        write_json(stats.to_dict(), Path(out) / 'corpus_statistics.json')
        table = stats.render()
        (Path(out) / 'corpus_statistics.txt').write_text(table + '\n', encoding='utf-8')
        self.stdout.write(table)
        self.stdout.write(json.dumps({split: stats.total('augmented', split) for split in ('train', 'eval')}))
