import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from choreo.dataset import (AugmentConfig, Corpus, CorpusClip, SyntheticConfig, augment_corpus,
                            corpus_statistics, extract_windows, gp_limb_noise, load_manifest,
                            make_synthetic_corpus, statistics_from_lengths, window_count, write_manifest)
from choreo.exceptions import ConfigError, DataError
from choreo.skeleton import JOINT_COUNT, LIMB_JOINTS, Motion
from choreo.styles import StyleLabel

SMALL = SyntheticConfig(train_per_style=2, eval_per_style=1, min_frames=80, max_frames=96, with_audio=False)


def ramp_motion(frames: int) -> Motion:
    """joints[t] = t partout : l'indice de l'image se lit dans les coordonnées"""
    joints = np.broadcast_to(np.arange(frames, dtype=np.float64)[:, None, None], (frames, JOINT_COUNT, 2))
    return Motion(joints.copy())


class WindowTests(SimpleTestCase):
    def test_window_count(self):
        self.assertEqual(window_count(63, 64, 32), 0)
        self.assertEqual(window_count(64, 64, 32), 1)
        self.assertEqual(window_count(128, 64, 32), 3)
        self.assertEqual(window_count(100, 64, 16), 3)

    def test_windows_are_exact_slices(self):
        windows = extract_windows(ramp_motion(128), 64, 32)
        self.assertEqual(len(windows), 3)
        for index, window in enumerate(windows):
            self.assertEqual(len(window), 64)
            self.assertEqual(window.metadata['offset'], 32 * index)
            np.testing.assert_array_equal(window.joints[:, 0, 0], np.arange(32 * index, 32 * index + 64))

    def test_window_errors(self):
        with self.assertRaises(DataError):
            extract_windows(ramp_motion(40), 64, 32)
        with self.assertRaises(ConfigError):
            extract_windows(ramp_motion(128), 64, 0)

    def test_stride_per_split_and_style(self):
        cfg = AugmentConfig()
        self.assertEqual(cfg.stride_for(StyleLabel.MJ, 'train'), 32)
        self.assertEqual(cfg.stride_for(StyleLabel.MJ, 'eval'), 16)
        self.assertEqual(cfg.stride_for(StyleLabel.SALSA, 'eval'), 32)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            AugmentConfig(window=40)
        with self.assertRaises(ConfigError):
            AugmentConfig(amplitude=-1.0)


class LimbNoiseTests(SimpleTestCase):
    def test_only_limbs_move(self):
        motion = ramp_motion(64)
        noisy = gp_limb_noise(motion, AugmentConfig(amplitude=0.05), rng=0)
        others = [j for j in range(JOINT_COUNT) if j not in LIMB_JOINTS]
        np.testing.assert_array_equal(noisy.joints[:, others], motion.joints[:, others])
        self.assertTrue(np.all(np.abs(noisy.joints[:, list(LIMB_JOINTS)] - motion.joints[:, list(LIMB_JOINTS)]) > 0))
        np.testing.assert_array_equal(ramp_motion(64).joints, motion.joints)

    def test_noise_is_smooth(self):
        motion = Motion(np.zeros((64, JOINT_COUNT, 2)))
        noise = gp_limb_noise(motion, AugmentConfig(amplitude=1.0, noise_sigma=100.0), rng=1).joints
        steps = np.abs(np.diff(noise[:, LIMB_JOINTS[0], 0]))
        self.assertLess(steps.max(), 0.1)

    def test_zero_amplitude(self):
        motion = ramp_motion(64)
        np.testing.assert_array_equal(gp_limb_noise(motion, AugmentConfig(amplitude=0.0)).joints, motion.joints)


class CorpusTests(SimpleTestCase):
    def test_clip_validation(self):
        with self.assertRaises(DataError):
            CorpusClip(ramp_motion(32), 'mj', 'short')
        with self.assertRaises(DataError):
            CorpusClip(Motion(np.zeros((64, JOINT_COUNT, 2)), fps=30), 'mj', 'fps')
        with self.assertRaises(DataError):
            CorpusClip(ramp_motion(64), 'mj', 'split', split='test')

    def test_synthetic_corpus_is_balanced(self):
        corpus = make_synthetic_corpus(seed=0, cfg=SyntheticConfig(with_audio=False))
        train, evaluation = corpus.subset('train'), corpus.subset('eval')
        self.assertEqual(len(train), 60)
        self.assertEqual(len(evaluation), 30)
        self.assertEqual(set(train.style_counts().values()), {20})
        self.assertEqual(set(evaluation.style_counts().values()), {10})
        self.assertEqual(train.split, 'train')
        self.assertEqual(corpus.split, 'mixed')
        for clip in corpus:
            self.assertEqual(len(clip.motion) % 16, 0)
            self.assertTrue(80 <= len(clip.motion) <= 128)

    def test_synthetic_corpus_is_deterministic(self):
        first = make_synthetic_corpus(seed=4, cfg=SMALL)
        second = make_synthetic_corpus(seed=4, cfg=SMALL)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.motion.joints, b.motion.joints)
        other = make_synthetic_corpus(seed=5, cfg=SMALL)
        self.assertFalse(np.array_equal(first.clips[0].motion.joints[:64], other.clips[0].motion.joints[:64]))

    def test_augment_counts_match_statistics(self):
        corpus = make_synthetic_corpus(seed=1, cfg=SMALL)
        cfg = AugmentConfig()
        stats = corpus_statistics(corpus, cfg)
        windows = augment_corpus(corpus, cfg, seed=0)
        self.assertEqual(len(windows), stats.total('augmented', 'train') + stats.total('augmented', 'eval'))
        self.assertEqual(windows.joints().shape, (len(windows), 64, JOINT_COUNT, 2))
        self.assertEqual(len(windows.of_style('mj')), int(np.sum(windows.styles == StyleLabel.MJ)))
        self.assertTrue(all(m.style == StyleLabel(s) for m, s in zip(windows.motions, windows.styles)))

    def test_eval_windows_are_not_noised(self):
        corpus = make_synthetic_corpus(seed=2, cfg=SMALL).subset('eval')
        first = augment_corpus(corpus, AugmentConfig(), seed=0)
        second = augment_corpus(corpus, AugmentConfig(), seed=1)
        np.testing.assert_array_equal(first.joints(), second.joints())

    def test_train_windows_depend_on_seed(self):
        corpus = make_synthetic_corpus(seed=2, cfg=SMALL).subset('train')
        first = augment_corpus(corpus, AugmentConfig(), seed=0)
        again = augment_corpus(corpus, AugmentConfig(), seed=0)
        other = augment_corpus(corpus, AugmentConfig(), seed=1)
        np.testing.assert_array_equal(first.joints(), again.joints())
        self.assertFalse(np.array_equal(first.joints(), other.joints()))


class StatisticsTests(SimpleTestCase):
    def test_counts_from_lengths(self):
        stats = statistics_from_lengths({
            ('train', 'mj'): [64, 128],
            ('eval', 'mj'): [128],
            ('eval', 'ballet'): [100],
        }, AugmentConfig())
        self.assertEqual(stats.raw['train'][StyleLabel.MJ], 2)
        self.assertEqual(stats.augmented['train'][StyleLabel.MJ], 4)
        self.assertEqual(stats.augmented['eval'][StyleLabel.MJ], 5)
        self.assertEqual(stats.augmented['eval'][StyleLabel.BALLET], 2)
        self.assertEqual(stats.total('augmented', 'eval'), 7)

        payload = stats.to_dict()
        self.assertEqual(payload['raw']['eval'], {'ballet': 1, 'mj': 1, 'salsa': 0, 'total': 2})
        self.assertEqual(payload['augmented']['train']['total'], 4)

        table = stats.render()
        self.assertIn('w/o augmentation', table)
        self.assertIn('w/ augmentation', table)


class ManifestTests(SimpleTestCase):
    def test_round_trip(self):
        corpus = make_synthetic_corpus(seed=3, cfg=SyntheticConfig(train_per_style=1, eval_per_style=1,
                                                                   min_frames=64, max_frames=64))
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_manifest(corpus, tmp)
            loaded = load_manifest(manifest)
            self.assertEqual(len(loaded), len(corpus))
            for original, restored in zip(corpus, loaded):
                self.assertEqual(restored.source_id, original.source_id)
                self.assertEqual(restored.style, original.style)
                self.assertEqual(restored.split, original.split)
                np.testing.assert_array_equal(restored.motion.joints, original.motion.joints)
                audio = restored.load_audio()
                self.assertEqual(len(audio), len(original.audio))
            self.assertEqual(len(load_manifest(manifest, split='eval')), 3)

    def write(self, root: Path, payload) -> Path:
        path = root / 'manifest.json'
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
        return path

    def test_invalid_manifests(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            with self.assertRaises(DataError):
                load_manifest(root / 'absent.json')
            with self.assertRaises(DataError):
                load_manifest(self.write(root, '{"clips": ['))
            with self.assertRaises(DataError):
                load_manifest(self.write(root, {'clips': []}))
            entry = {'motion_file': 'motions/a.json', 'style': 'mj', 'split': 'test'}
            with self.assertRaises(DataError):
                load_manifest(self.write(root, {'clips': [entry]}))
            with self.assertRaisesMessage(DataError, 'introuvable'):
                load_manifest(self.write(root, {'clips': [dict(entry, split='train')]}))
            with self.assertRaises(DataError):
                load_manifest(self.write(root, {'clips': [dict(entry, split='train', style='tango')]}))

    def test_empty_corpus_statistics(self):
        stats = corpus_statistics(Corpus(), AugmentConfig())
        self.assertEqual(stats.total('raw', 'train'), 0)
