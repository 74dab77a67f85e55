from pathlib import Path

from ...dataset import make_synthetic_corpus, write_manifest
from ...utils import synthetic_config
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "Écrit le corpus synthétique à trois styles (mouvements JSON, WAV, manifeste)"

    def run(self, cfg, **options):
        out = cfg.path('out', options.get('out')) or Path('fixtures')
        corpus = make_synthetic_corpus(seed=cfg.seed, cfg=synthetic_config())
        manifest = write_manifest(corpus, out)
        self.stdout.write(self.style.SUCCESS(f"{len(corpus)} clips écrits, manifeste : {manifest}"))
