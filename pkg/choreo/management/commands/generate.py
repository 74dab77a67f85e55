from pathlib import Path

from ...audio import classify_style, load_classifier, load_wav
from ...exceptions import ConfigError
from ...latent import FRAMES_PER_LATENT_STEP
from ...rendering import render_motion
from ...skeleton import save_motion
from ...styles import StyleLabel
from ...training import generate_motion, load_generator
from ..base import ChoreoCommand

STYLE_CHOICES = [label.name.lower() for label in StyleLabel]


class Command(ChoreoCommand):
    help = "Génère un mouvement à partir d'un fichier audio, d'un style ou d'une suite de styles par pas"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help="Checkpoint du générateur (sinon paths.generator)")
        parser.add_argument('--classifier', help="Checkpoint du classifieur audio (sinon paths.classifier)")
        source = parser.add_mutually_exclusive_group()
        source.add_argument('--audio', help="Fichier WAV dont le style conditionne la génération")
        source.add_argument('--style', choices=STYLE_CHOICES, help="Style constant")
        source.add_argument('--styles', help="Un style par pas latent de 16 images, ex. ballet,ballet,salsa,salsa")
        parser.add_argument('--length', type=int, help="Nombre d'images, multiple de 16 (64 par défaut)")
        parser.add_argument('--render', help="Dossier où écrire les images SVG et le GIF")

    def _steps(self, length, styles):
        if length is None:
            return len(styles) if styles else 64 // FRAMES_PER_LATENT_STEP
        if length < FRAMES_PER_LATENT_STEP or length % FRAMES_PER_LATENT_STEP:
            raise ConfigError(f"length : {length} n'est pas un multiple positif de {FRAMES_PER_LATENT_STEP}")
        return length // FRAMES_PER_LATENT_STEP

    def run(self, cfg, **options):
        explicit = [s.strip() for s in options['styles'].split(',') if s.strip()] if options.get('styles') else None
        steps = self._steps(options.get('length'), explicit)

        if explicit:
            styles = [StyleLabel.parse(s) for s in explicit]
            if len(styles) != steps:
                raise ConfigError(f"styles : {len(styles)} styles pour {steps} pas latents")
        elif options.get('style'):
            styles = [StyleLabel.parse(options['style'])] * steps
        elif options.get('audio'):
            classifier_path = cfg.path('classifier', options.get('classifier'))
            if classifier_path is None:
                raise ConfigError("paths.classifier : checkpoint du classifieur requis avec --audio")
            model = load_classifier(classifier_path)
            prediction = classify_style(load_wav(options['audio']), model)
            styles = prediction.styles_per_step(steps, FRAMES_PER_LATENT_STEP, 24, model.cfg.window_samples)
            self.stdout.write(f"Style détecté : {prediction.label.display} "
                              f"({', '.join(f'{p:.2f}' for p in prediction.probs)})")
        else:
            raise ConfigError("Une source de style est requise : --audio, --style ou --styles")

        checkpoint = cfg.path('generator', options.get('checkpoint'))
        if checkpoint is None:
            raise ConfigError("paths.generator : checkpoint du générateur requis")
        generator, gp_cfg = load_generator(checkpoint)
        motion = generate_motion(generator, gp_cfg, styles, seed=cfg.seed, canvas=cfg.canvas,
                                 knot_stride=cfg.knot_stride)

        out = cfg.path('motion_out', options.get('out')) or Path('generated') / 'motion.json'
        save_motion(motion, out)
        self.stdout.write(f"Styles par pas : {','.join(s.name.lower() for s in styles)}")
        if options.get('render'):
            render_motion(motion, options['render'])
        self.stdout.write(self.style.SUCCESS(f"{len(motion)} images écrites dans {out}"))
