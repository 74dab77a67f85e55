import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from choreo.exceptions import ConfigError, DataError, DegeneratePoseError, MissingJointError
from choreo.skeleton import (BODY_25, JOINT_COUNT, RECOVERED_CONFIDENCE, ROOT_JOINT, Motion, Pose,
                             SkeletonTopology, denormalize_motion, load_motion, motion_from_dict,
                             normalize_motion, normalize_pose, recover_missing_joints, save_motion,
                             smooth_motion)
from choreo.styles import StyleLabel


def random_pose(seed=0) -> Pose:
    return Pose(np.random.default_rng(seed).uniform(50.0, 400.0, size=(JOINT_COUNT, 2)))


def linear_motion(frames=32) -> Motion:
    t = np.arange(frames, dtype=np.float64)[:, None, None]
    base = np.random.default_rng(1).uniform(0.0, 100.0, size=(1, JOINT_COUNT, 2))
    return Motion(base + t * np.array([1.5, -0.5]), fps=24, style='salsa')


class TopologyTests(SimpleTestCase):
    def test_body25_tree(self):
        self.assertEqual(len(BODY_25.edges), 24)
        parents = BODY_25.parents
        self.assertIsNone(parents[ROOT_JOINT])
        self.assertEqual(sum(p is None for p in parents), 1)
        order = BODY_25.topological_order()
        self.assertEqual(order[0], ROOT_JOINT)
        self.assertEqual(sorted(order), list(range(JOINT_COUNT)))
        for joint in order[1:]:
            self.assertLess(order.index(parents[joint]), order.index(joint))

    def test_adjacency_is_symmetric_with_self_loops(self):
        adjacency = BODY_25.adjacency()
        np.testing.assert_array_equal(adjacency, adjacency.T)
        np.testing.assert_array_equal(np.diag(adjacency), np.ones(JOINT_COUNT))
        self.assertEqual(int(adjacency.sum()), JOINT_COUNT + 2 * 24)

    def test_rejects_cycles_and_double_parents(self):
        with self.assertRaises(ConfigError):
            SkeletonTopology(3, ((0, 1), (2, 1)), ('a', 'b', 'c'), 0)
        with self.assertRaises(ConfigError):
            SkeletonTopology(3, ((0, 1), (1, 0)), ('a', 'b', 'c'), 0)


class NormalizationTests(SimpleTestCase):
    def test_similarity_invariance(self):
        pose = random_pose()
        reference = normalize_pose(pose).joints
        for scale, shift in [(2.0, (10.0, -3.0)), (0.1, (0.0, 0.0)), (37.5, (-200.0, 1000.0))]:
            moved = Pose(pose.joints * scale + np.array(shift))
            with self.subTest(scale=scale):
                np.testing.assert_allclose(normalize_pose(moved).joints, reference, atol=1e-9)

    def test_unit_diagonal_centered_box(self):
        joints = normalize_pose(random_pose(3)).joints
        low, high = joints.min(axis=0), joints.max(axis=0)
        np.testing.assert_allclose((low + high) / 2.0, [0.5, 0.5], atol=1e-12)
        self.assertAlmostEqual(float(np.hypot(*(high - low))), 1.0, places=12)

    def test_idempotence(self):
        once = normalize_pose(random_pose(4))
        np.testing.assert_allclose(normalize_pose(once).joints, once.joints, atol=1e-12)

    def test_degenerate_pose(self):
        with self.assertRaises(DegeneratePoseError) as ctx:
            normalize_pose(Pose(np.full((JOINT_COUNT, 2), 7.0)))
        self.assertIn('degenerate pose', str(ctx.exception))

    def test_missing_joints_are_ignored(self):
        pose = random_pose(5)
        confidence = np.ones(JOINT_COUNT)
        confidence[3] = 0.0
        pose.joints[3] = [1e6, 1e6]
        normalized = normalize_pose(Pose(pose.joints, confidence))
        self.assertTrue(np.all(normalized.joints[confidence > 0] <= 1.0 + 1e-12))

    def test_per_sequence_keeps_relative_motion(self):
        motion = linear_motion()
        per_frame = normalize_motion(motion)
        per_sequence = normalize_motion(motion, per_sequence=True)
        # image par image, la translation disparaît
        np.testing.assert_allclose(per_frame.joints[0], per_frame.joints[-1], atol=1e-9)
        self.assertGreater(np.abs(per_sequence.joints[0] - per_sequence.joints[-1]).max(), 1e-3)

    def test_denormalize_scales_to_canvas(self):
        motion = normalize_motion(linear_motion())
        np.testing.assert_allclose(denormalize_motion(motion, 512).joints, motion.joints * 512)


class RecoveryTests(SimpleTestCase):
    def test_child_follows_parent_displacement(self):
        motion = linear_motion(8)
        wrist, elbow = 4, 3
        self.assertEqual(BODY_25.parent(wrist), elbow)
        expected = motion.joints[5, wrist].copy()
        confidence = motion.confidence.copy()
        confidence[5, wrist] = 0.0
        joints = motion.joints.copy()
        joints[5, wrist] = np.nan
        recovered = recover_missing_joints(Motion(joints, confidence))
        # translation uniforme : le déplacement du parent reproduit la vraie position
        np.testing.assert_allclose(recovered.joints[5, wrist], expected, atol=1e-9)
        self.assertEqual(recovered.confidence[5, wrist], RECOVERED_CONFIDENCE)
        np.testing.assert_array_equal(recovered.joints[4], motion.joints[4])

    def test_reference_frame_requires_observed_parent(self):
        joints = np.random.default_rng(3).uniform(0.0, 100.0, size=(6, JOINT_COUNT, 2))
        wrist, elbow = 4, 3
        confidence = np.ones((6, JOINT_COUNT))
        confidence[4, elbow] = 0.0
        confidence[5, wrist] = 0.0
        recovered = recover_missing_joints(Motion(joints, confidence))
        # image 4 : coude reconstruit, la référence du poignet est l'image 3
        expected = joints[3, wrist] + (joints[5, elbow] - joints[3, elbow])
        np.testing.assert_allclose(recovered.joints[5, wrist], expected, atol=1e-9)
        self.assertEqual(recovered.confidence[4, elbow], RECOVERED_CONFIDENCE)

    def test_root_holds_nearest_observation(self):
        motion = linear_motion(6)
        confidence = motion.confidence.copy()
        confidence[2:4, ROOT_JOINT] = 0.0
        recovered = recover_missing_joints(Motion(motion.joints, confidence))
        np.testing.assert_allclose(recovered.joints[2, ROOT_JOINT], motion.joints[1, ROOT_JOINT])
        np.testing.assert_allclose(recovered.joints[3, ROOT_JOINT], motion.joints[4, ROOT_JOINT])

    def test_never_observed_joint(self):
        motion = linear_motion(4)
        confidence = motion.confidence.copy()
        confidence[:, 11] = 0.0
        with self.assertRaises(MissingJointError) as ctx:
            recover_missing_joints(Motion(motion.joints, confidence))
        self.assertEqual(len(ctx.exception.joints), 1)


class SmoothingTests(SimpleTestCase):
    def test_knots_are_interpolated(self):
        rng = np.random.default_rng(6)
        motion = Motion(rng.uniform(0, 1, size=(33, JOINT_COUNT, 2)))
        smoothed = smooth_motion(motion, knot_stride=4)
        knots = np.arange(0, 33, 4)
        np.testing.assert_allclose(smoothed.joints[knots], motion.joints[knots], atol=1e-12)

    def test_linear_motion_is_unchanged(self):
        motion = linear_motion(30)
        np.testing.assert_allclose(smooth_motion(motion, 4).joints, motion.joints, atol=1e-9)

    def test_invalid_stride(self):
        with self.assertRaises(ConfigError):
            smooth_motion(linear_motion(), knot_stride=0)
        with self.assertRaises(DataError):
            smooth_motion(linear_motion(6), knot_stride=4)


class MotionFormatTests(SimpleTestCase):
    def test_save_and_load(self):
        motion = linear_motion(16)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_motion(motion, Path(tmp) / 'clip.json')
            loaded = load_motion(path)
        np.testing.assert_allclose(loaded.joints, motion.joints)
        self.assertEqual(loaded.style, StyleLabel.SALSA)
        self.assertEqual(loaded.fps, 24)

    def test_malformed_payloads(self):
        with self.assertRaises(DataError):
            motion_from_dict({'fps': 24})
        with self.assertRaises(DataError):
            motion_from_dict({'frames': [[[0.0, 0.0]]]})
        frames = np.ones((2, JOINT_COUNT, 3)).tolist()
        for fps in (True, 0, 24.5, '24'):
            with self.subTest(fps=fps), self.assertRaises(DataError):
                motion_from_dict({'frames': frames, 'fps': fps})
        self.assertEqual(motion_from_dict({'frames': frames, 'fps': 30}).fps, 30)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'broken.json'
            path.write_text('{"frames": [')
            with self.assertRaises(DataError):
                load_motion(path)

    def test_motion_shape_validation(self):
        with self.assertRaises(DataError):
            Motion(np.zeros((4, 24, 2)))
