import itertools

import numpy as np
from django.test import SimpleTestCase, tag

from choreo.evaluation import (METRICS, EvalConfig, EvalReport, MotionClassifier, Stat, evaluation_round, fid,
                               fid_by_style, gan_test, gan_train, per_style_accuracy, train_motion_classifier)
from choreo.exceptions import ConfigError, DataError, NumericalError
from choreo.serializers import EvalReportSerializer
from choreo.styles import StyleLabel

TINY = EvalConfig(repeats=1, feature_dim=4, epochs=2, batch=4, hidden_channels=(4, 4))
STYLES = ('ballet', 'mj', 'salsa')


def style_sets(per_style: int = 2, frames: int = 16, seed: int = 0):
    """Mouvements dont l'amplitude dépend du style"""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), per_style)
    motions = rng.normal(0.0, 0.1, size=(labels.size, 2, frames, 25)) + labels[:, None, None, None] * 0.3
    return motions, labels


def fake_round(shift: float) -> dict:
    def metrics(fid_value, accuracy):
        values = {'all': fid_value}
        values.update({style: fid_value + i for i, style in enumerate(STYLES)})
        accuracies = {'all': accuracy}
        accuracies.update({style: accuracy for style in STYLES})
        return {'fid': values, 'gan_train': dict(accuracies), 'gan_test': dict(accuracies)}

    return {'ours': metrics(10.0 + shift, 0.5 + shift / 10), 'real': metrics(1.0, 0.9)}


class FidTests(SimpleTestCase):
    def test_identical_sets(self):
        feats = np.random.default_rng(0).standard_normal((200, 6))
        self.assertAlmostEqual(fid(feats, feats), 0.0, places=6)

    def test_pure_translation(self):
        feats = np.random.default_rng(1).standard_normal((300, 5))
        shift = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        self.assertAlmostEqual(fid(feats, feats + shift), float(shift @ shift), places=6)

    def test_scaled_set(self):
        feats = np.random.default_rng(2).standard_normal((300, 4)) + 0.3
        # sigma_b = 4 sigma_a, racine du produit = 2 sigma_a
        mu = feats.mean(axis=0)
        expected = float(mu @ mu + np.trace(np.cov(feats, rowvar=False)))
        self.assertAlmostEqual(fid(feats, 2.0 * feats), expected, places=6)

    def test_mean_shift_estimate(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((10000, 4))
        b = rng.standard_normal((10000, 4)) + np.array([1.0, 0.0, 0.0, 0.0])
        self.assertAlmostEqual(fid(a, b), 1.0, delta=0.1)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((100, 3)) @ rng.standard_normal((3, 3))
        b = rng.standard_normal((80, 3)) @ rng.standard_normal((3, 3)) + 1.0
        self.assertAlmostEqual(fid(a, b), fid(b, a), places=6)

    def test_invalid_inputs(self):
        with self.assertRaises(DataError):
            fid(np.zeros((5, 3)), np.zeros((5, 4)))
        with self.assertRaises(DataError):
            fid(np.zeros((1, 3)), np.zeros((5, 3)))
        with self.assertRaises(NumericalError):
            fid(np.full((5, 2), np.nan), np.zeros((5, 2)))

    def test_singular_covariance_warning(self):
        rng = np.random.default_rng(5)
        with self.assertLogs('choreo.evaluation', level='WARNING'):
            value = fid(rng.standard_normal((4, 8)), rng.standard_normal((4, 8)))
        self.assertGreaterEqual(value, 0.0)


class ClassifierTests(SimpleTestCase):
    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            EvalConfig(batch=1)
        with self.assertRaises(ConfigError):
            EvalConfig(eigen_clamp=-1.0)

    def test_feature_shape(self):
        model = MotionClassifier(TINY, np.random.default_rng(0))
        motions, _ = style_sets()
        self.assertEqual(model.embed(motions).shape, (6, 4))
        self.assertEqual(model(motions).shape, (6, 3))

    def test_training_and_features(self):
        motions, labels = style_sets()
        extractor = train_motion_classifier(motions, labels, TINY, seed=0)
        self.assertEqual(extractor.features(motions, chunk=4).shape, (6, 4))
        self.assertEqual(extractor.predict(motions).shape, (6,))
        self.assertTrue(0.0 <= extractor.accuracy(motions, labels) <= 1.0)
        np.testing.assert_array_equal(extractor.features(motions), extractor.features(motions))

    def test_training_rejects_single_style(self):
        motions, _ = style_sets()
        with self.assertRaises(DataError):
            train_motion_classifier(motions, np.zeros(6, dtype=int), TINY)

    def test_shape_checks(self):
        extractor = train_motion_classifier(*style_sets(), TINY, seed=0)
        with self.assertRaises(DataError):
            extractor.features(np.zeros((2, 3, 16, 25)))
        with self.assertRaises(DataError):
            extractor.predict(np.zeros((0, 2, 16, 25)))

    def test_per_style_accuracy(self):
        labels = np.array([0, 0, 1, 1])
        predictions = np.array([0, 1, 1, 1])
        self.assertEqual(per_style_accuracy(predictions, labels), {StyleLabel.BALLET: 0.5, StyleLabel.MJ: 1.0})

    def test_fid_by_style_keys(self):
        motions, labels = style_sets()
        extractor = train_motion_classifier(motions, labels, TINY, seed=0)
        other = style_sets(seed=1)
        values = fid_by_style(extractor, (motions, labels), other, TINY.eigen_clamp)
        self.assertEqual(set(values), {'all', StyleLabel.BALLET, StyleLabel.MJ, StyleLabel.SALSA})
        single = fid_by_style(extractor, (motions[:3], labels[:3]), other, TINY.eigen_clamp)
        self.assertEqual(set(single), {'all', StyleLabel.BALLET})


class ReportTests(SimpleTestCase):
    def test_stat(self):
        stat = Stat.of([1.0, 2.0])
        self.assertEqual((stat.mean, stat.std), (1.5, 0.5))
        self.assertEqual(str(stat), '1.50±0.50')

    def test_from_rounds(self):
        report = EvalReport.from_rounds([fake_round(0.0), fake_round(2.0)], seed=3)
        self.assertEqual(report.repeats, 2)
        self.assertEqual(report.fid, Stat(11.0, 1.0))
        self.assertEqual(report.per_style['salsa']['fid'], Stat(13.0, 1.0))
        self.assertEqual(report.real['gan_test'], Stat(0.9, 0.0))
        self.assertAlmostEqual(report.gan_train.mean, 0.6)

    def test_payload_is_valid_and_reversible(self):
        report = EvalReport.from_rounds([fake_round(0.0), fake_round(1.0)], seed=None)
        payload = report.to_dict()
        serializer = EvalReportSerializer(data=payload)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(EvalReport.from_dict(payload), report)

    def test_invalid_payload(self):
        payload = EvalReport.from_rounds([fake_round(0.0)]).to_dict()
        payload['gan_test']['mean'] = 1.5
        self.assertFalse(EvalReportSerializer(data=payload).is_valid())

    def test_table(self):
        table = EvalReport.from_rounds([fake_round(0.0), fake_round(2.0)]).render_table().splitlines()
        self.assertEqual(len(table), 5)
        self.assertTrue(table[0].startswith('Style'))
        self.assertIn('FID Ours', table[0])
        self.assertTrue(table[1].startswith('Ballet'))
        self.assertTrue(table[-1].startswith('Average'))
        self.assertIn('11.00±1.00', table[-1])

    def test_no_rounds(self):
        with self.assertRaises(DataError):
            EvalReport.from_rounds([])


class EvaluationRoundTests(SimpleTestCase):
    def test_round_structure(self):
        gen, real_train, real_eval = style_sets(seed=0), style_sets(seed=1), style_sets(seed=2)
        result = evaluation_round(gen, real_train, real_eval, TINY, seed=0)
        self.assertEqual(set(result), {'ours', 'real'})
        for source in ('ours', 'real'):
            self.assertEqual(set(result[source]), set(METRICS))
            for metric in METRICS:
                self.assertEqual(set(result[source][metric]), {'all', *STYLES})
            self.assertGreaterEqual(result[source]['fid']['all'], 0.0)
        again = evaluation_round(gen, real_train, real_eval, TINY, seed=0)
        self.assertEqual(result, again)

        report = EvalReport.from_rounds([result, again], seed=0)
        self.assertTrue(EvalReportSerializer(data=report.to_dict()).is_valid())
        self.assertEqual(report.fid.std, 0.0)


@tag('slow')
class SeparableStylesTests(SimpleTestCase):
    cfg = EvalConfig(feature_dim=8, epochs=20, batch=8, lr=0.01, hidden_channels=(8, 8))

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train_set = style_sets(per_style=20, frames=32, seed=0)
        cls.eval_set = style_sets(per_style=10, frames=32, seed=1)
        cls.extractor = train_motion_classifier(*cls.train_set, cls.cfg, seed=0)
        cls.ceiling = cls.extractor.accuracy(*cls.eval_set)

    def test_extractor_learns_separable_styles(self):
        self.assertGreaterEqual(self.ceiling, 0.9)

    def test_gan_train_on_real_data_reaches_ceiling(self):
        result = gan_train(self.train_set, self.eval_set, self.cfg, seed=0)
        self.assertAlmostEqual(result['all'], self.ceiling)

    def test_gan_test_on_held_out_real_data(self):
        result = gan_test(self.train_set, self.eval_set, self.cfg, extractor=self.extractor)
        self.assertAlmostEqual(result['all'], self.ceiling)
        self.assertEqual(set(result), {'all', StyleLabel.BALLET, StyleLabel.MJ, StyleLabel.SALSA})

    def test_relabeled_styles_fall_to_chance(self):
        motions, labels = self.train_set
        # moyenne sur les six réaffectations des étiquettes de style
        accuracies = [
            gan_train((motions, np.asarray(mapping)[labels]), self.eval_set, self.cfg, seed=0)['all']
            for mapping in itertools.permutations(range(3))
        ]
        self.assertAlmostEqual(float(np.mean(accuracies)), 1.0 / 3.0, delta=0.1)
        self.assertGreaterEqual(accuracies[0], 0.9)

    def test_frozen_poses_are_at_chance(self):
        motions, _ = self.eval_set
        frozen = np.repeat(motions[:1, :, :1, :], 30, axis=0).repeat(motions.shape[2], axis=2)
        labels = np.repeat(np.arange(3), 10)
        result = gan_test(self.train_set, (frozen, labels), self.cfg, extractor=self.extractor)
        self.assertAlmostEqual(result['all'], 1.0 / 3.0)
