import logging

from django.core.management.base import BaseCommand

from ..exceptions import ChoreoError
from ..utils import as_command_error, load_run_config

logger = logging.getLogger(__name__)


class ChoreoCommand(BaseCommand):
    """
    Commande de base : options communes (--config, --seed, --out) et
    conversion des erreurs du domaine en codes de sortie (2, 3, 4).
    """

    uses_config = True

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument('--config', help="Fichier RunConfig (JSON)")
            parser.add_argument('--seed', type=int, help="Graine (prioritaire sur celle du fichier)")
        parser.add_argument('--out', help="Destination des artefacts")

    def handle(self, *args, **options):
        try:
            if self.uses_config:
                cfg = load_run_config(options.get('config')).with_seed(options.get('seed'))
                return self.run(cfg, **options)
            return self.run(None, **options)
        except ChoreoError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} : {e}")
            raise as_command_error(e) from e

    def run(self, cfg, **options):
        raise NotImplementedError
