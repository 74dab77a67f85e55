import csv
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from choreo import tensor as T
from choreo.dataset import (AugmentConfig, SyntheticConfig, WindowSet, augment_corpus,
                            make_synthetic_corpus)
from choreo.exceptions import ConfigError, DataError, NumericalError
from choreo.graphnet import ModelConfig, build_discriminator, build_generator, motions_to_array
from choreo.latent import GpConfig, sample_latent_noise
from choreo.optim import SGD, Adam
from choreo.styles import StyleLabel
from choreo.tensor import Parameter, Tensor
from choreo.training import (METRIC_FIELDS, GanTrainer, Optimizers, TrainBatch, TrainConfig, generate_motion,
                             generator_loss, gradient_norms, load_generator, loss_cgan, loss_rec, synthesize,
                             synthesize_batch, train_step)

TOY_MODEL = ModelConfig(latent_channels=4, channels=(8, 6, 4, 4), dropout=0.1, temporal_kernel=3)
TOY_GP = GpConfig(C=4, T=4, sigma=8.0)
TOY_TRAIN = TrainConfig(epochs=1, batch=2, checkpoint_every=2, steps=3)
STILL_MODEL = ModelConfig(latent_channels=4, channels=(8, 6, 4, 4), dropout=0.0, temporal_kernel=3)


def toy_windows(seed: int = 0):
    corpus = make_synthetic_corpus(seed=seed, cfg=SyntheticConfig(train_per_style=2, eval_per_style=1,
                                                                  min_frames=64, max_frames=96,
                                                                  with_audio=False))
    return augment_corpus(corpus.subset('train'), AugmentConfig(), seed=seed)


class LossTests(SimpleTestCase):
    def test_reconstruction(self):
        real = np.random.default_rng(0).uniform(size=(3, 2, 16, 25))
        self.assertEqual(loss_rec(real, real).item(), 0.0)
        self.assertAlmostEqual(loss_rec(real + 0.5, real).item(), 1.0, places=12)
        shifted = real.copy()
        shifted[:, 0] += 0.25
        self.assertAlmostEqual(loss_rec(shifted, real).item(), 0.25, places=12)

    def test_reconstruction_shape_mismatch(self):
        with self.assertRaises(DataError):
            loss_rec(np.zeros((1, 2, 16, 25)), np.zeros((1, 2, 32, 25)))

    def test_adversarial_reference_values(self):
        half = np.full(4, 0.5)
        self.assertAlmostEqual(loss_cgan(half, half, 'disc').item(), 2 * np.log(2), places=12)
        self.assertAlmostEqual(loss_cgan(None, half, 'gen').item(), np.log(2), places=12)
        self.assertAlmostEqual(loss_cgan(None, half, 'gen', saturating=True).item(), -np.log(2), places=12)

    def test_adversarial_is_clamped(self):
        value = loss_cgan(np.zeros(2), np.ones(2), 'disc').item()
        self.assertTrue(np.isfinite(value))
        self.assertAlmostEqual(value, -2 * np.log(1e-7), places=6)

    def test_unknown_side(self):
        with self.assertRaises(ConfigError):
            loss_cgan(None, np.full(2, 0.5), 'both')

    def test_loss_gradients(self):
        rng = np.random.default_rng(1)
        d_real = Tensor(rng.uniform(0.1, 0.9, 5), requires_grad=True)
        d_fake = Tensor(rng.uniform(0.1, 0.9, 5), requires_grad=True)
        gen = Tensor(rng.standard_normal((2, 2, 16, 25)), requires_grad=True)
        real = rng.standard_normal((2, 2, 16, 25))
        self.assertLess(T.gradcheck(lambda: loss_cgan(d_real, d_fake, 'disc'), [d_real, d_fake]), 1e-5)
        self.assertLess(T.gradcheck(lambda: loss_cgan(None, d_fake, 'gen'), [d_fake]), 1e-5)
        self.assertLess(T.gradcheck(lambda: loss_rec(gen, real), [gen]), 1e-5)


class OptimizerTests(SimpleTestCase):
    def test_sgd_step(self):
        param = Parameter(np.array([1.0, 2.0]))
        param.grad = np.array([0.5, -0.5])
        SGD([param], lr=0.1).step()
        np.testing.assert_allclose(param.data, [0.95, 2.05])

    def test_sgd_without_gradient(self):
        param = Parameter(np.array([1.0]))
        SGD([param], lr=0.1).step()
        np.testing.assert_array_equal(param.data, [1.0])

    def test_adam_first_step_moves_by_lr(self):
        param = Parameter(np.array([1.0, -1.0]))
        param.grad = np.array([2.0, -0.001])
        Adam([param], lr=0.01).step()
        np.testing.assert_allclose(param.data, [0.99, -0.99], atol=1e-6)

    def test_non_finite_gradient_leaves_parameters_untouched(self):
        first, second = Parameter(np.array([1.0])), Parameter(np.array([2.0]))
        first.grad, second.grad = np.array([1.0]), np.array([np.nan])
        for optimizer in (SGD([first, second], lr=0.1), Adam([first, second], lr=0.1)):
            with self.subTest(optimizer=type(optimizer).__name__):
                with self.assertRaises(NumericalError):
                    optimizer.step()
                np.testing.assert_array_equal(first.data, [1.0])
                self.assertEqual(optimizer.step_count, 0)

    def test_adam_state_round_trip(self):
        param = Parameter(np.array([0.5, 0.5]), name='w')
        optimizer = Adam([param], lr=0.01)
        for grad in ([1.0, 2.0], [0.5, -1.0]):
            param.grad = np.array(grad)
            optimizer.step()
        restored = Adam([Parameter(param.data.copy(), name='w')], lr=0.01)
        restored.load_state_dict(optimizer.state_dict('opt'), 'opt')
        self.assertEqual(restored.step_count, 2)
        np.testing.assert_array_equal(restored.moments[0]['m'], optimizer.moments[0]['m'])
        np.testing.assert_array_equal(restored.moments[0]['v'], optimizer.moments[0]['v'])

    def test_invalid_hyperparameters(self):
        with self.assertRaises(ConfigError):
            SGD([], lr=0.0)
        with self.assertRaises(ConfigError):
            Adam([], lr=0.1, beta1=1.0)


class ConfigTests(SimpleTestCase):
    def test_train_config_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(batch=1)
        with self.assertRaises(ConfigError):
            TrainConfig(lambda_rec=-1.0)
        with self.assertRaises(ConfigError):
            TrainConfig(steps=0)

    def test_batch_consistency(self):
        with self.assertRaises(DataError):
            TrainBatch(np.zeros((2, 2, 64, 25)), np.zeros(3, dtype=int), np.zeros((2, 4, 4, 1)))
        with self.assertRaises(DataError):
            TrainBatch(np.zeros((2, 2, 64, 25)), np.zeros(2, dtype=int), np.zeros((2, 4, 3, 1)))
        batch = TrainBatch(np.zeros((2, 2, 64, 25)), np.array([0, 2]), np.zeros((2, 4, 4, 1)))
        np.testing.assert_array_equal(batch.step_styles, [[0] * 4, [2] * 4])


def flat_gradient(module) -> np.ndarray:
    return np.concatenate([param.grad.ravel() for param in module.parameters()])


class TrainStepTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        windows = toy_windows()
        real = motions_to_array(windows.motions[:4])
        noise = sample_latent_noise(TOY_GP, 4, np.random.default_rng(0))
        cls.batch = TrainBatch(real, windows.styles[:4], noise)

    def networks(self):
        G = build_generator(STILL_MODEL, seed=0)
        return G, build_discriminator(STILL_MODEL, seed=1, generator=G)

    def generator_gradient(self, G, D, cfg: TrainConfig, term: int) -> np.ndarray:
        G.zero_grad()
        T.backward(generator_loss(self.batch, G, D, cfg)[term])
        return flat_gradient(G)

    def test_zero_lambda_leaves_adversarial_gradient(self):
        G, D = self.networks()
        cfg = TrainConfig(lambda_rec=0.0)
        total = self.generator_gradient(G, D, cfg, 0)
        adversarial = self.generator_gradient(G, D, cfg, 1)
        self.assertGreater(np.linalg.norm(adversarial), 0.0)
        np.testing.assert_allclose(total, adversarial, rtol=1e-10, atol=1e-14)

    def test_large_lambda_follows_reconstruction(self):
        G, D = self.networks()
        cfg = TrainConfig(lambda_rec=1e6)
        total = self.generator_gradient(G, D, cfg, 0)
        reconstruction = self.generator_gradient(G, D, cfg, 2)
        cosine = total @ reconstruction / (np.linalg.norm(total) * np.linalg.norm(reconstruction))
        self.assertGreater(cosine, 0.99)

    def test_one_update_per_network(self):
        G, D = self.networks()
        opts = Optimizers(gen=Adam(G.parameters(), 0.002, 0.5, 0.999), disc=SGD(D.parameters(), 2e-4))
        before_g = {name: p.data.copy() for name, p in G.named_parameters()}
        before_d = {name: p.data.copy() for name, p in D.named_parameters()}
        metrics = train_step(self.batch, G, D, opts, TrainConfig())
        self.assertEqual(set(metrics), {'d_loss', 'g_loss', 'rec_loss'})
        self.assertTrue(all(np.isfinite(value) for value in metrics.values()))
        # g_loss = adversarial (> 0, non saturant) + 100 * rec
        self.assertGreater(metrics['g_loss'], 100.0 * metrics['rec_loss'])
        self.assertEqual((opts.gen.step_count, opts.disc.step_count), (1, 1))
        self.assertTrue(any(not np.array_equal(p.data, before_g[n]) for n, p in G.named_parameters()))
        self.assertTrue(any(not np.array_equal(p.data, before_d[n]) for n, p in D.named_parameters()))


class GanTrainerTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.windows = toy_windows()

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def trainer(self, out=None, seed=7, train_cfg=TOY_TRAIN, model_cfg=TOY_MODEL) -> GanTrainer:
        return GanTrainer(self.windows, TOY_GP, model_cfg, train_cfg, out or self.out, seed=seed)

    def losses(self, summary):
        return [{key: row[key] for key in ('d_loss', 'g_loss', 'rec_loss')} for row in summary.history]

    def test_seeded_runs_are_identical(self):
        first = self.trainer(self.out / 'a').run()
        second = self.trainer(self.out / 'b').run()
        self.assertEqual(self.losses(first), self.losses(second))
        other = self.trainer(self.out / 'c', seed=8).run()
        self.assertNotEqual(self.losses(first), self.losses(other))

    def test_unseeded_runs_differ(self):
        first, second = self.trainer(self.out / 'a'), self.trainer(self.out / 'b')
        first.seed = second.seed = None
        self.assertNotEqual(self.losses(first.run(1)), self.losses(second.run(1)))

    def test_corpus_smaller_than_batch(self):
        trainer = self.trainer(train_cfg=TrainConfig(batch=len(self.windows) + 1, steps=1))
        self.assertEqual(trainer.steps_per_epoch, 1)
        summary = trainer.run()
        self.assertEqual(summary.steps, 1)
        self.assertTrue(np.isfinite(summary.last_metrics['g_loss']))

    def test_metrics_and_checkpoints(self):
        summary = self.trainer().run()
        self.assertEqual(summary.steps, 3)
        with open(summary.metrics_path, newline='', encoding='utf-8') as handle:
            reader = csv.DictReader(handle)
            rows = list(reader)
            self.assertEqual(tuple(reader.fieldnames), METRIC_FIELDS)
        self.assertEqual([int(row['step']) for row in rows], [1, 2, 3])
        self.assertTrue(all(np.isfinite(float(row['g_loss'])) for row in rows))
        self.assertTrue((self.out / 'gan-step000002.ckpt').is_file())
        self.assertEqual(summary.checkpoint, self.out / 'gan-final.ckpt')

    def test_total_steps_from_epochs(self):
        trainer = self.trainer(train_cfg=TrainConfig(epochs=2, batch=2))
        self.assertEqual(trainer.steps_per_epoch, len(self.windows) // 2)
        self.assertEqual(trainer.total_steps, 2 * (len(self.windows) // 2))
        self.assertEqual(trainer.latent_steps, 4)

    def test_checkpoint_reproduces_generator(self):
        trainer = self.trainer()
        summary = trainer.run()
        generator, gp_cfg = load_generator(summary.checkpoint)
        self.assertEqual(gp_cfg.sigma, TOY_GP.sigma)
        styles = ['ballet', 'mj', 'mj', 'salsa']
        np.testing.assert_array_equal(synthesize(generator, gp_cfg, styles, seed=3),
                                      synthesize(trainer.G, trainer.gp_cfg, styles, seed=3))

    def test_resume_continues_step_counter(self):
        summary = self.trainer().run()
        resumed = self.trainer()
        self.assertEqual(resumed.resume(summary.checkpoint), 3)
        np.testing.assert_array_equal(resumed.G.state_dict()['blocks.0.temporal.weight'],
                                      load_generator(summary.checkpoint)[0].state_dict()['blocks.0.temporal.weight'])
        self.assertEqual(resumed.opts.gen.step_count, 3)
        more = resumed.run(2)
        self.assertEqual(more.steps, 5)
        with open(self.out / 'metrics.csv', newline='', encoding='utf-8') as handle:
            steps = [int(row['step']) for row in csv.DictReader(handle)]
        self.assertEqual(steps, [1, 2, 3, 4, 5])

    def test_resume_rejects_other_architecture(self):
        summary = self.trainer().run()
        other = self.trainer(self.out / 'other', model_cfg=ModelConfig(
            latent_channels=4, channels=(8, 8, 4, 4), dropout=0.1, temporal_kernel=3))
        with self.assertRaises(ConfigError):
            other.resume(summary.checkpoint)

    def test_non_finite_loss_writes_diagnostics(self):
        trainer = self.trainer()
        trainer.G.output.weight.data[...] = np.nan
        with self.assertRaises(NumericalError):
            trainer.run(1)
        path = self.out / 'diagnostics-step000001.json'
        self.assertTrue(path.is_file())
        payload = json.loads(path.read_text())
        self.assertEqual(payload['step'], 1)
        self.assertIn('grad_norms', payload)

    def test_input_validation(self):
        with self.assertRaises(DataError):
            GanTrainer(WindowSet([], np.zeros(0, dtype=int), []), TOY_GP, TOY_MODEL, TOY_TRAIN, self.out)
        with self.assertRaises(ConfigError):
            GanTrainer(self.windows, GpConfig(C=8), TOY_MODEL, TOY_TRAIN, self.out)

    def test_gradient_norms(self):
        trainer = self.trainer()
        trainer.run(1)
        norms = gradient_norms(trainer.G)
        self.assertIn('gen.output.weight', norms)
        self.assertTrue(all(value >= 0 for value in norms.values()))


class GenerationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.generator = build_generator(TOY_MODEL, seed=0)

    def test_generate_motion(self):
        motion = generate_motion(self.generator, TOY_GP, ['mj', 'mj', 'salsa', 'mj'], seed=1)
        self.assertEqual(motion.joints.shape, (64, 25, 2))
        self.assertEqual(motion.style, StyleLabel.MJ)
        self.assertEqual(motion.metadata['styles'], ['mj', 'mj', 'salsa', 'mj'])
        again = generate_motion(self.generator, TOY_GP, ['mj', 'mj', 'salsa', 'mj'], seed=1)
        np.testing.assert_array_equal(motion.joints, again.joints)

    def test_synthesize_requires_styles(self):
        with self.assertRaises(DataError):
            synthesize(self.generator, TOY_GP, [])

    def test_batch_synthesis_in_chunks(self):
        out = synthesize_batch(self.generator, TOY_GP, ['ballet', 'mj', 'salsa'], steps=2, seed=0, chunk=2)
        self.assertEqual(out.shape, (3, 2, 32, 25))
        again = synthesize_batch(self.generator, TOY_GP, ['ballet', 'mj', 'salsa'], steps=2, seed=0, chunk=2)
        np.testing.assert_array_equal(out, again)
        with self.assertRaises(DataError):
            synthesize_batch(self.generator, TOY_GP, [], steps=2)


@tag('slow')
class ToyConvergenceTests(SimpleTestCase):
    """200 pas sur deux styles (ballet, mj) avec des réseaux minuscules"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        corpus = make_synthetic_corpus(seed=0, cfg=SyntheticConfig(train_per_style=4, eval_per_style=1,
                                                                   min_frames=64, max_frames=128,
                                                                   with_audio=False))
        windows = augment_corpus(corpus.subset('train'), AugmentConfig(), seed=0)
        ballet = windows.of_style('ballet')
        mj = windows.of_style('mj')
        cls.windows = WindowSet(ballet.motions + mj.motions, np.concatenate([ballet.styles, mj.styles]),
                                ballet.sources + mj.sources)
        cls.tmp = tempfile.TemporaryDirectory()
        cls.trainer = GanTrainer(cls.windows, TOY_GP, STILL_MODEL,
                                 TrainConfig(batch=4, steps=200, checkpoint_every=200), cls.tmp.name, seed=0)
        cls.summary = cls.trainer.run()

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_reconstruction_loss_decreases(self):
        rec = np.array([row['rec_loss'] for row in self.summary.history])
        self.assertEqual(rec.size, 200)
        moving = np.convolve(rec, np.ones(10) / 10.0, mode='valid')
        self.assertLess(moving[-1], moving[0])
        self.assertLess(moving[moving.size // 2:].max(), moving[0])

    def test_styles_are_separated(self):
        samples = {
            style: [synthesize(self.trainer.G, self.trainer.gp_cfg, [style] * 4, seed=seed) for seed in range(4)]
            for style in ('ballet', 'mj')
        }
        within = [loss_rec(a, b).item()
                  for group in samples.values() for i, a in enumerate(group) for b in group[i + 1:]]
        between = [loss_rec(a, b).item() for a in samples['ballet'] for b in samples['mj']]
        self.assertGreaterEqual(np.mean(between), 1.5 * np.mean(within))
