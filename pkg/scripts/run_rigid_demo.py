"""Pick-lift-place demo: synthetic scene to executed joint trajectory.

Runs the full rigid pipeline in process for a range of seeds and prints a
per-seed summary line plus an aggregate. Equivalent to::

    nvflow run --seed S --out-dir out/seed_S

but without writing artifacts, so it is convenient for quick sweeps.
"""

import argparse
import json
import time
from importlib.resources import files

from nvflow.flow import TrackSet, calibrate_depth, distill_flow
from nvflow.kinematics import IKOptions, forward_kinematics, robot_from_doc, solve_ik
from nvflow.rigid import (
    GraspApproach,
    ObjectPoseTrajectory,
    compose_ee_trajectory,
    flow_to_pose_trajectory,
    propose_grasp,
)
from nvflow.sim import DEFAULT_SENSOR_NOISE, SceneConfig, evaluate_rigid, generate_scene
from nvflow.trajopt import TrajOptProblem, obstacles_from_doc, optimize_trajectory


def run_seed(seed: int, model, obstacles, steps_per_frame: int):
    config = SceneConfig.rigid_demo(noise=DEFAULT_SENSOR_NOISE)
    bundle = generate_scene(config, seed=seed)
    scaled, scale = calibrate_depth(list(bundle.depth), bundle.depth_ref)
    tracks = TrackSet(bundle.tracks.positions * scale, bundle.tracks.visible)
    flow = distill_flow(tracks, bundle.masks, config.intrinsics,
                        label=bundle.gt_flow.label)
    poses = flow_to_pose_trajectory(flow)
    grasp = propose_grasp(flow.positions[0], GraspApproach.ALONG_MINUS_Z)[0].grasp_pose
    ee_targets = compose_ee_trajectory(poses, grasp)
    q_start = solve_ik(model, ee_targets[0], options=IKOptions(seed=seed))
    q_end = solve_ik(model, ee_targets[-1], seed_config=q_start,
                     options=IKOptions(seed=seed))
    steps = (len(ee_targets) - 1) * steps_per_frame + 1
    result = optimize_trajectory(TrajOptProblem(
        model=model, q_start=q_start, q_end=q_end, steps=steps,
        obstacles=obstacles))
    grasp_inv = grasp.inverse()
    executed = []
    for t in range(len(ee_targets)):
        ee, _ = forward_kinematics(model, result.trajectory.configs[t * steps_per_frame])
        executed.append(ee.compose(grasp_inv))
    metrics = evaluate_rigid(ObjectPoseTrajectory(tuple(executed)), bundle.gt_poses)
    return flow, metrics, result


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=10, help="number of seeds")
    parser.add_argument("--steps-per-frame", type=int, default=4)
    args = parser.parse_args()

    fixtures = files("nvflow").joinpath("fixtures")
    model = robot_from_doc(json.loads(
        fixtures.joinpath("arm7.json").read_text()))
    obstacles = obstacles_from_doc(json.loads(
        fixtures.joinpath("obstacles_demo.json").read_text())["obstacles"])

    successes = 0
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        flow, metrics, result = run_seed(seed, model, obstacles,
                                         args.steps_per_frame)
        successes += metrics.success
        print(f"seed {seed:2d}: keypoints {flow.keypoints:3d}  "
              f"final rot {metrics.rotation_error_deg[-1]:6.3f} deg  "
              f"final trans {metrics.translation_error_mm[-1]:5.2f} mm  "
              f"min_clearance {result.min_clearance:.4f} m  "
              f"converged {result.converged}  success {metrics.success}")
    elapsed = time.perf_counter() - t0
    print(f"{successes}/{args.seeds} successful, {elapsed:.1f} s total "
          f"({elapsed / args.seeds:.1f} s per seed)")


if __name__ == "__main__":
    main()
