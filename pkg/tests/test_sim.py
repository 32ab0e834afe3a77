"""Tests for synthetic scene generation, corruption, and evaluation."""

import math

import numpy as np
import pytest

from nvflow.deformable import ParticleState, build_correspondence
from nvflow.fileio import sha256_file
from nvflow.flow import ActionableFlow
from nvflow.geometry import SE3Pose, rotation_from_axis_angle
from nvflow.rigid import ObjectPoseTrajectory, flow_to_pose_trajectory
from nvflow.sim import (
    NoiseConfig,
    ObjectSpec,
    RopeSpec,
    SceneBundle,
    SceneConfig,
    Waypoint,
    corrupt_flow,
    evaluate_deformable,
    evaluate_rigid,
    generate_scene,
)


@pytest.fixture(scope="module")
def plain_rope_bundle():
    return generate_scene(SceneConfig.rope_demo())


@pytest.fixture(scope="module")
def mirrored_rope_bundle():
    return generate_scene(SceneConfig.rope_demo(mirrored=True))


def small_rigid_config(frames=5, **overrides):
    defaults = dict(
        scene="rigid",
        frames=frames,
        object=ObjectSpec(surface_samples=24),
        distractor_points=10,
    )
    defaults.update(overrides)
    return SceneConfig(**defaults)


class TestRigidScenes:
    def test_static_script_produces_static_flow(self):
        spot = (0.45, 0.0, ObjectSpec().rest_height)
        config = small_rigid_config(
            waypoints=(Waypoint(0.0, spot), Waypoint(1.0, spot)),
            distractor_points=0)
        bundle = generate_scene(config)
        flow = bundle.gt_flow.positions
        assert np.allclose(flow, flow[0], atol=1e-12)
        for pose in bundle.gt_poses.poses:
            assert np.allclose(pose.rotation, np.eye(3), atol=1e-12)
            assert np.allclose(pose.translation, 0.0, atol=1e-12)

    def test_vertical_lift_is_linear_in_camera_frame(self):
        rest = ObjectSpec().rest_height
        config = small_rigid_config(
            frames=41,
            waypoints=(Waypoint(0.0, (0.45, 0.0, rest)),
                       Waypoint(1.0, (0.45, 0.0, rest + 0.1))),
            distractor_points=0)
        bundle = generate_scene(config)
        translations = np.stack([p.translation for p in bundle.gt_poses.poses])
        expected = np.linspace(0.0, 1.0, 41)[:, None] * np.array([0.0, 0.0, -0.1])
        np.testing.assert_allclose(translations, expected, atol=1e-9)
        centroids = bundle.gt_flow.positions.mean(axis=1)
        steps = np.diff(centroids, axis=0)
        np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape),
                                   atol=1e-12)
        assert np.linalg.norm(centroids[-1] - centroids[0]) == pytest.approx(
            0.1, abs=1e-9)

    def test_zero_noise_flow_closes_to_ground_truth_poses(self):
        config = small_rigid_config(frames=9,
                                    object=ObjectSpec(surface_samples=60),
                                    distractor_points=0)
        bundle = generate_scene(config)
        estimated = flow_to_pose_trajectory(bundle.gt_flow)
        assert len(estimated) == len(bundle.gt_poses)
        for est, gt in zip(estimated.poses, bundle.gt_poses.poses):
            assert np.linalg.norm(est.rotation - gt.rotation) < 1e-9
            assert np.linalg.norm(est.translation - gt.translation) < 1e-9

    def test_membership_separates_object_from_distractors(self):
        config = small_rigid_config()
        bundle = generate_scene(config)
        n_obj = config.object.surface_samples
        assert bundle.membership["object"] == list(range(n_obj))
        assert len(bundle.membership["distractors"]) == config.distractor_points
        assert bundle.tracks.count == n_obj + config.distractor_points
        assert bundle.pixels.shape == (config.frames, bundle.tracks.count, 2)

    def test_masks_cover_the_object(self):
        bundle = generate_scene(small_rigid_config(distractor_points=0))
        for t in range(bundle.config.frames):
            assert bundle.masks.masks[t].any()

    def test_object_leaving_view_is_an_error(self):
        rest = ObjectSpec().rest_height
        config = small_rigid_config(
            waypoints=(Waypoint(0.0, (0.45, 0.0, rest)),
                       Waypoint(1.0, (5.0, 0.0, rest))),
            distractor_points=0)
        with pytest.raises(ValueError, match="leaves view"):
            generate_scene(config)

    def test_seed_override(self):
        config = small_rigid_config(distractor_points=0)
        bundle = generate_scene(config, seed=5)
        assert bundle.seed == 5


class TestRopeScenes:
    def test_straight_to_straight_script_is_motionless(self):
        spec = RopeSpec(script=((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)))
        config = SceneConfig(scene="rope", rope=spec, frames=6,
                             distractor_points=0)
        bundle = generate_scene(config)
        flow = bundle.gt_flow.positions
        for t in range(1, config.frames):
            assert np.array_equal(flow[t], flow[0])

    def test_pinned_endpoint_never_moves(self, plain_rope_bundle):
        flow = plain_rope_bundle.gt_flow.positions
        for t in range(1, flow.shape[0]):
            assert np.array_equal(flow[t, -1], flow[0, -1])
        model = plain_rope_bundle.dynamics
        assert model.pinned == (model.n_particles - 1,)
        assert model.attachment == (0,)

    def test_chain_length_is_preserved_within_two_percent(
            self, mirrored_rope_bundle):
        flow = mirrored_rope_bundle.gt_flow.positions
        lengths = np.linalg.norm(np.diff(flow, axis=1), axis=-1).sum(axis=1)
        drift = np.abs(lengths - lengths[0]) / lengths[0]
        assert drift.max() <= 0.02

    def test_initial_state_matches_first_flow_frame(self, plain_rope_bundle):
        spec = plain_rope_bundle.config.rope
        assert spec.flow_keypoints == spec.particles
        np.testing.assert_allclose(plain_rope_bundle.initial_state.positions,
                                   plain_rope_bundle.gt_flow.positions[0],
                                   atol=1e-12)
        assert np.all(plain_rope_bundle.initial_state.velocities == 0.0)

    def test_self_intersecting_script_is_an_error(self):
        spec = RopeSpec(script=((0.0, 2.0 * math.pi, 0.0), (1.0, 0.0, 0.0)))
        config = SceneConfig(scene="rope", rope=spec, frames=4,
                             distractor_points=0)
        with pytest.raises(ValueError, match="self-intersecting spline"):
            generate_scene(config)

    def test_mirrored_audit_exposes_the_shape_matching_trap(
            self, mirrored_rope_bundle):
        audit = mirrored_rope_bundle.audit
        assert audit["spurious_chamfer_cost"] < 1e-6
        assert audit["spurious_flow_cost"] > 0.1

    def test_plain_audit_shows_no_cheap_wrong_shape(self, plain_rope_bundle):
        audit = plain_rope_bundle.audit
        assert audit["spurious_chamfer_cost"] > 1e-4


class TestCorruptFlow:
    @staticmethod
    def smooth_flow(frames=8, keypoints=20, seed=0):
        gen = np.random.default_rng(seed)
        base = gen.uniform(-0.2, 0.2, size=(1, keypoints, 3))
        drift = 0.002 * np.arange(frames)[:, None, None]
        return ActionableFlow(base + drift, label="probe")

    def test_identity_without_noise_or_dropout(self):
        flow = self.smooth_flow()
        out = corrupt_flow(flow, sigma=0.0, dropout=0.0, seed=3)
        assert np.array_equal(out.positions, flow.positions)
        assert out.label == flow.label

    def test_deterministic_per_seed(self):
        flow = self.smooth_flow()
        a = corrupt_flow(flow, sigma=0.01, dropout=0.3, seed=4)
        b = corrupt_flow(flow, sigma=0.01, dropout=0.3, seed=4)
        assert np.array_equal(a.positions, b.positions)

    def test_dropout_keeps_a_plausible_survivor_count(self):
        flow = self.smooth_flow(keypoints=200)
        out = corrupt_flow(flow, dropout=0.5, seed=1)
        # binomial(200, 0.5) stays within 5 sigma of its mean
        assert abs(out.keypoints - 100) <= 5 * math.sqrt(200 * 0.25)
        assert out.keypoints < 200

    def test_noise_is_drawn_before_dropout(self):
        flow = self.smooth_flow(keypoints=30)
        full = corrupt_flow(flow, sigma=0.01, dropout=0.0, seed=7)
        dropped = corrupt_flow(flow, sigma=0.01, dropout=0.4, seed=7)
        kept = []
        for j in range(dropped.keypoints):
            matches = [i for i in range(full.keypoints)
                       if np.array_equal(dropped.positions[:, j],
                                         full.positions[:, i])]
            assert len(matches) == 1, "kept column must appear in uncut flow"
            kept.append(matches[0])
        assert kept == sorted(kept)

    def test_noise_scale_is_honest(self):
        keypoints = 50000
        positions = np.zeros((2, keypoints, 3))
        flow = ActionableFlow(positions)
        sigma = 0.01
        out = corrupt_flow(flow, sigma=sigma, seed=11)
        noise = out.positions - positions
        n = noise.size
        chi2 = float(np.sum((noise / sigma) ** 2))
        assert abs(chi2 - n) < 5.0 * math.sqrt(2.0 * n)
        assert abs(noise.std() - sigma) / sigma < 0.05

    def test_too_aggressive_dropout_raises(self):
        flow = self.smooth_flow(keypoints=4)
        with pytest.raises(ValueError, match="fewer than 3"):
            corrupt_flow(flow, dropout=0.999, seed=0)

    def test_parameter_validation(self):
        flow = self.smooth_flow()
        with pytest.raises(ValueError, match="sigma"):
            corrupt_flow(flow, sigma=-0.1)
        with pytest.raises(ValueError, match="dropout"):
            corrupt_flow(flow, dropout=1.5)


class TestEvaluateRigid:
    @staticmethod
    def identity_trajectory(frames=5):
        return ObjectPoseTrajectory(tuple(SE3Pose.identity()
                                          for _ in range(frames)),
                                    frame="camera")

    def test_identical_trajectories_score_perfectly(self):
        gt = self.identity_trajectory()
        metrics = evaluate_rigid(gt, gt)
        assert np.all(metrics.rotation_error_deg <= 1e-7)
        assert np.all(metrics.translation_error_mm == 0.0)
        assert metrics.success

    def test_ten_millimetre_final_offset_fails(self):
        gt = self.identity_trajectory()
        poses = list(gt.poses)
        poses[-1] = SE3Pose(np.eye(3), np.array([0.01, 0.0, 0.0]))
        metrics = evaluate_rigid(ObjectPoseTrajectory(tuple(poses), "camera"), gt)
        assert metrics.translation_error_mm[-1] == pytest.approx(10.0, rel=1e-9)
        assert not metrics.success

    def test_one_degree_final_rotation_reports_one_degree(self):
        gt = self.identity_trajectory()
        poses = list(gt.poses)
        rot = rotation_from_axis_angle(np.array([0.0, 0.0, math.radians(1.0)]))
        poses[-1] = SE3Pose(rot, np.zeros(3))
        metrics = evaluate_rigid(ObjectPoseTrajectory(tuple(poses), "camera"), gt)
        assert metrics.rotation_error_deg[-1] == pytest.approx(1.0, abs=1e-9)
        assert metrics.success  # 1 degree is inside the 2 degree default

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError, match="lengths differ"):
            evaluate_rigid(self.identity_trajectory(4),
                           self.identity_trajectory(5))

    def test_metrics_document(self):
        metrics = evaluate_rigid(self.identity_trajectory(),
                                 self.identity_trajectory())
        doc = metrics.to_doc()
        assert doc["success"] is True
        assert len(doc["rotation_error_deg"]) == 5


class TestEvaluateDeformable:
    @staticmethod
    def line_flow(frames=3, keypoints=6):
        positions = np.zeros((frames, keypoints, 3))
        positions[:, :, 0] = np.linspace(0.0, 0.5, keypoints)
        return ActionableFlow(positions)

    def test_exact_final_state_scores_zero(self):
        flow = self.line_flow()
        final = ParticleState.at_rest(flow.positions[-1])
        metrics = evaluate_deformable(final, flow, np.arange(6))
        assert metrics.final_correspondence_rmse_mm == 0.0
        assert metrics.final_chamfer_mm == 0.0
        assert metrics.success

    def test_uniform_offset_reports_exact_rmse(self):
        flow = self.line_flow()
        final = ParticleState.at_rest(flow.positions[-1]
                                      + np.array([0.0, 0.01, 0.0]))
        metrics = evaluate_deformable(final, flow, np.arange(6))
        assert metrics.final_correspondence_rmse_mm == pytest.approx(10.0,
                                                                     rel=1e-9)
        assert metrics.final_chamfer_mm <= metrics.final_correspondence_rmse_mm + 1e-9
        assert metrics.success  # default tolerance is 50 mm

    def test_tolerance_controls_success(self):
        flow = self.line_flow()
        final = ParticleState.at_rest(flow.positions[-1]
                                      + np.array([0.0, 0.01, 0.0]))
        metrics = evaluate_deformable(final, flow, np.arange(6), rmse_tol_mm=5.0)
        assert not metrics.success

    def test_correspondence_object_and_default(self):
        flow = self.line_flow()
        final = ParticleState.at_rest(flow.positions[-1])
        corr = build_correspondence(flow, final.positions)
        via_object = evaluate_deformable(final, flow, corr)
        via_default = evaluate_deformable(final, flow)
        assert via_object.final_correspondence_rmse_mm == \
            via_default.final_correspondence_rmse_mm


class TestBundleIO:
    def test_same_seed_gives_bit_identical_bundles(self, tmp_path):
        config = small_rigid_config()
        first = generate_scene(config)
        second = generate_scene(config)
        dir_a = tmp_path / "a"
        dir_b = tmp_path / "b"
        first.write(dir_a)
        second.write(dir_b)
        manifest_a = (dir_a / "manifest.json").read_bytes()
        manifest_b = (dir_b / "manifest.json").read_bytes()
        assert manifest_a == manifest_b
        import json
        for rel, digest in json.loads(manifest_a)["files"].items():
            assert sha256_file(dir_b / rel) == digest, rel

    def test_different_seed_changes_the_manifest(self, tmp_path):
        config = small_rigid_config()
        base = generate_scene(config)
        other = generate_scene(config, seed=config.seed + 1)
        dir_a = tmp_path / "a"
        dir_b = tmp_path / "b"
        base.write(dir_a)
        other.write(dir_b)
        assert (dir_a / "manifest.json").read_bytes() != \
            (dir_b / "manifest.json").read_bytes()

    def test_rope_bundle_round_trip(self, tmp_path):
        spec = RopeSpec(particles=8, flow_keypoints=8)
        config = SceneConfig(scene="rope", rope=spec, frames=6,
                             distractor_points=5,
                             noise=NoiseConfig(track_sigma=0.0005,
                                               depth_sigma=0.01,
                                               dropout_prob=0.05,
                                               depth_scale=1.25))
        bundle = generate_scene(config)
        bundle.write(tmp_path / "scene")
        back = SceneBundle.read(tmp_path / "scene")
        assert back.seed == bundle.seed
        assert back.config.to_doc() == bundle.config.to_doc()
        assert np.array_equal(back.tracks.positions, bundle.tracks.positions)
        assert np.array_equal(back.tracks.visible, bundle.tracks.visible)
        assert np.array_equal(back.pixels, bundle.pixels)
        np.testing.assert_allclose(back.gt_flow.positions,
                                   bundle.gt_flow.positions, atol=1e-5)
        assert back.gt_flow.label == bundle.gt_flow.label
        assert np.array_equal(back.masks.masks, bundle.masks.masks)
        for a, b in zip(back.depth, bundle.depth):
            np.testing.assert_allclose(a.values, b.values, atol=6e-4)
        np.testing.assert_allclose(back.depth_ref.values,
                                   bundle.depth_ref.values, atol=6e-4)
        assert back.membership == bundle.membership
        assert back.audit == bundle.audit
        assert np.array_equal(back.dynamics.edges, bundle.dynamics.edges)
        assert np.array_equal(back.dynamics.rest_lengths,
                              bundle.dynamics.rest_lengths)
        assert back.dynamics.attachment == bundle.dynamics.attachment
        assert back.dynamics.pinned == bundle.dynamics.pinned
        assert np.array_equal(back.initial_state.positions,
                              bundle.initial_state.positions)
        assert back.gt_poses is None

    def test_rigid_bundle_round_trip_keeps_poses(self, tmp_path):
        bundle = generate_scene(small_rigid_config(distractor_points=0))
        bundle.write(tmp_path / "scene")
        back = SceneBundle.read(tmp_path / "scene")
        assert len(back.gt_poses) == len(bundle.gt_poses)
        for a, b in zip(back.gt_poses.poses, bundle.gt_poses.poses):
            assert np.allclose(a.rotation, b.rotation, atol=1e-12)
            assert np.allclose(a.translation, b.translation, atol=1e-12)
        assert back.dynamics is None
        assert back.initial_state is None


class TestNoiseHonesty:
    def test_track_jitter_matches_declared_sigma(self):
        sigma = 0.0005
        config = SceneConfig(scene="rigid", frames=21,
                             object=ObjectSpec(surface_samples=400),
                             distractor_points=0,
                             noise=NoiseConfig(track_sigma=sigma))
        bundle = generate_scene(config)
        observed = bundle.tracks.positions
        truth = bundle.gt_flow.positions
        noise = observed - truth
        n = noise.size
        chi2 = float(np.sum((noise / sigma) ** 2))
        z = (chi2 - n) / math.sqrt(2.0 * n)
        assert abs(z) < 5.0, f"chi-square z-score {z:.2f}"
        assert abs(noise.std() - sigma) / sigma < 0.02

    def test_dropout_rate_matches_declared_probability(self):
        config = SceneConfig(scene="rigid", frames=21,
                             object=ObjectSpec(surface_samples=400),
                             distractor_points=0,
                             noise=NoiseConfig(dropout_prob=0.1))
        bundle = generate_scene(config)
        rate = 1.0 - bundle.tracks.visible.mean()
        n = bundle.tracks.visible.size
        assert abs(rate - 0.1) < 5.0 * math.sqrt(0.1 * 0.9 / n)


class TestConfigs:
    def test_rigid_demo_profile(self):
        config = SceneConfig.rigid_demo(seed=3)
        assert config.scene == "rigid"
        assert config.seed == 3
        assert config.object.surface_samples == 240
        assert config.noise == NoiseConfig()

    def test_rope_demo_profiles(self):
        plain = SceneConfig.rope_demo()
        assert plain.rope.pinned
        assert plain.frames == 24
        mirrored = SceneConfig.rope_demo(mirrored=True)
        assert not mirrored.rope.pinned
        assert mirrored.frames == 40
        assert mirrored.rope.script[-1][0] == 1.0

    def test_config_save_load_round_trip(self, tmp_path):
        config = SceneConfig.rope_demo(mirrored=True, seed=9)
        path = tmp_path / "config.json"
        config.save(path)
        back = SceneConfig.load(path)
        assert back.to_doc() == config.to_doc()

    def test_scene_config_validation(self):
        with pytest.raises(ValueError, match="scene"):
            SceneConfig(scene="fluid")
        with pytest.raises(ValueError, match="frames"):
            SceneConfig(frames=1)
        with pytest.raises(ValueError, match="geometry"):
            SceneConfig(width=8)
        rest = ObjectSpec().rest_height
        with pytest.raises(ValueError, match="waypoint"):
            SceneConfig(waypoints=(Waypoint(0.0, (0.4, 0.0, rest)),
                                   Waypoint(0.5, (0.4, 0.0, rest))))

    def test_rope_spec_validation(self):
        with pytest.raises(ValueError, match="time 0"):
            RopeSpec(script=((0.2, 0.0, 0.0), (1.0, 0.0, 0.0)))
        with pytest.raises(ValueError, match="increase"):
            RopeSpec(script=((0.0, 0.0, 0.0), (0.5, 1.0, 0.0),
                             (0.5, 0.0, 0.0), (1.0, 0.0, 0.0)))
        with pytest.raises(ValueError, match="keyframes"):
            RopeSpec(script=((0.0, 0.0, 0.0, 0.1), (1.0, 0.0, 0.0)))
        with pytest.raises(ValueError, match="particles"):
            RopeSpec(particles=3)
        with pytest.raises(ValueError, match="keypoints"):
            RopeSpec(particles=10, flow_keypoints=11)

    def test_waypoint_validation(self):
        with pytest.raises(ValueError, match="time"):
            Waypoint(1.5, (0.0, 0.0, 0.0))
        with pytest.raises(ValueError, match="position"):
            Waypoint(0.5, (0.0, 0.0))

    def test_object_spec_validation(self):
        with pytest.raises(ValueError, match="shape"):
            ObjectSpec(shape="torus")
        with pytest.raises(ValueError, match="dimensions"):
            ObjectSpec(shape="cylinder", size=(0.1, 0.2, 0.3))
        with pytest.raises(ValueError, match="surface samples"):
            ObjectSpec(surface_samples=3)
        assert ObjectSpec(shape="cylinder", size=(0.03, 0.08)).rest_height == 0.04


class TestDispatch:
    def test_generate_scene_routes_by_kind(self, plain_rope_bundle):
        rigid = generate_scene(small_rigid_config(distractor_points=0))
        assert rigid.gt_poses is not None
        assert rigid.dynamics is None
        assert plain_rope_bundle.gt_poses is None
        assert plain_rope_bundle.dynamics is not None

    def test_mismatched_kind_raises(self):
        from nvflow.sim import generate_rigid_scene, generate_rope_scene
        rope_config = SceneConfig.rope_demo()
        with pytest.raises(ValueError, match="scene"):
            generate_rigid_scene(rope_config)
        with pytest.raises(ValueError, match="scene"):
            generate_rope_scene(small_rigid_config())
