from pathlib import Path

from ...rendering import render_motion
from ...skeleton import load_motion
from ..base import ChoreoCommand


class Command(ChoreoCommand):
    help = "Dessine un mouvement JSON : un SVG par image et un GIF animé"

    uses_config = False

    def add_arguments(self, parser):
        parser.add_argument('motion', help="Fichier de mouvement JSON")
        super().add_arguments(parser)
        parser.add_argument('--size', type=int, default=256, help="Côté du canevas en pixels")
        parser.add_argument('--no-gif', action='store_true', help="Ne pas écrire le GIF animé")

    def run(self, cfg, **options):
        motion = load_motion(options['motion'])
        out = Path(options.get('out') or Path(options['motion']).with_suffix(''))
        result = render_motion(motion, out, size=options['size'], gif=not options['no_gif'])
        self.stdout.write(self.style.SUCCESS(f"{len(result.svg_paths)} images SVG écrites dans {out}"))
