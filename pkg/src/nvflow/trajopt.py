"""Joint-trajectory optimization as damped nonlinear least squares.

The objective is a stack of residual blocks whose squared sum is

    C = C_smooth + C_rest + C_limits + C_collision

with per-block weights applied once, inside the residuals.  Start and end
configurations are hard constraints handled by variable elimination: only the
interior configurations are decision variables, so the endpoints come back
bit-identical.  Collision terms hinge on the swept signed distance between
robot collision spheres and analytic obstacles, sampled along each segment.

The Levenberg-Marquardt solver here is generic and also serves the tests as
a plain curve fitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .kinematics import (JointTrajectory, RobotModel, load_robot, robot_from_doc,
                         sphere_centers_batch, sphere_radii)

__all__ = [
    "LMOptions",
    "LMResult",
    "NonFiniteResidualError",
    "levenberg_marquardt",
    "SphereObstacle",
    "BoxObstacle",
    "HalfspaceObstacle",
    "Obstacle",
    "obstacles_from_doc",
    "obstacles_to_doc",
    "signed_distance",
    "cost_smooth",
    "cost_rest",
    "penalty_limits",
    "penalty_collision",
    "init_trajectory",
    "TrajOptWeights",
    "TrajOptProblem",
    "TrajOptResult",
    "optimize_trajectory",
    "problem_from_doc",
    "result_to_doc",
]


# -- Levenberg-Marquardt -------------------------------------------------------

class NonFiniteResidualError(RuntimeError):
    """A residual evaluation produced NaN/inf; ``x`` is the last valid iterate."""

    def __init__(self, x: np.ndarray):
        super().__init__("non-finite residual during iteration")
        self.x = np.array(x)


@dataclass(frozen=True)
class LMOptions:
    max_iters: int = 100
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1   # tenfold decrease keeps near-linear problems at ~3 steps
    grad_tol: float = 1e-8     # infinity norm of J^T r
    step_tol: float = 1e-10    # euclidean norm of the accepted step
    fd_step: float = 1e-6      # forward-difference step when no Jacobian is given
    lambda_max: float = 1e12


@dataclass(frozen=True)
class LMResult:
    x: np.ndarray
    cost: float                # sum of squared residuals at x
    iterations: int            # accepted steps
    converged: bool
    cost_history: tuple[float, ...]  # cost after each accepted step, incl. start


def _fd_jacobian(residual_fn, x: np.ndarray, r0: np.ndarray, h: float) -> np.ndarray:
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        xk = x.copy()
        xk[k] += h
        jac[:, k] = (residual_fn(xk) - r0) / h
    return jac


def levenberg_marquardt(residual_fn: Callable[[np.ndarray], np.ndarray],
                        x0: np.ndarray,
                        jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
                        options: LMOptions = LMOptions()) -> LMResult:
    """Minimize ||residual_fn(x)||^2 with diagonal-scaled damping.

    Each candidate step solves (J^T J + lambda diag(J^T J)) d = -J^T r and is
    accepted only if the cost decreases, so the final cost never exceeds the
    initial one.  Convergence is declared when the gradient infinity norm
    falls below ``grad_tol`` or an accepted step is shorter than ``step_tol``.
    Without an analytic ``jacobian``, forward differences with step
    ``fd_step`` are used.

    Raises:
        NonFiniteResidualError: a residual evaluation returned NaN/inf; the
            error carries the last valid iterate.
    """
    x = np.array(x0, dtype=float).ravel()
    r = np.asarray(residual_fn(x), dtype=float)
    if not np.isfinite(r).all():
        raise NonFiniteResidualError(x)
    cost = float(r @ r)
    history = [cost]
    lam = options.lambda0
    accepted_steps = 0
    converged = False

    for _ in range(options.max_iters):
        jac = jacobian(x) if jacobian is not None else _fd_jacobian(
            residual_fn, x, r, options.fd_step)
        grad = jac.T @ r
        if np.linalg.norm(grad, ord=np.inf) < options.grad_tol:
            converged = True
            break
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-12)

        accepted = False
        step_norm = 0.0
        while lam <= options.lambda_max:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jtj + lam * np.diag(diag), -grad, rcond=None)[0]
            x_new = x + step
            r_new = np.asarray(residual_fn(x_new), dtype=float)
            if not np.isfinite(r_new).all():
                raise NonFiniteResidualError(x)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                step_norm = float(np.linalg.norm(step))
                x, r, cost = x_new, r_new, cost_new
                history.append(cost)
                accepted_steps += 1
                lam = max(lam * options.lambda_down, 1e-12)
                accepted = True
                break
            lam *= options.lambda_up
        if not accepted:
            break  # no descent direction at any damping: stalled
        if step_norm < options.step_tol:
            converged = True
            break

    return LMResult(x=x, cost=cost, iterations=accepted_steps,
                    converged=converged, cost_history=tuple(history))


# -- obstacles -----------------------------------------------------------------

def _vec(v) -> np.ndarray:
    out = np.array(v, dtype=float)
    if out.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SphereObstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        if self.radius <= 0.0:
            raise ValueError("obstacle radius must be positive")

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance from (..., 3) points to the surface; negative inside."""
        return np.linalg.norm(points - self.center, axis=-1) - self.radius


@dataclass(frozen=True)
class BoxObstacle:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "half_extents", _vec(self.half_extents))
        rot = np.array(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise ValueError("box rotation must be (3, 3)")
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        if (self.half_extents <= 0.0).any():
            raise ValueError("box half extents must be positive")

    def distance(self, points: np.ndarray) -> np.ndarray:
        local = (points - self.center) @ self.rotation  # R^T (p - c), batched
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class HalfspaceObstacle:
    """Occupies the side opposite ``normal``; free space lies along +normal."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _vec(self.point))
        n = np.array(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise ValueError("halfspace normal must be non-zero")
        n /= norm
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return (points - self.point) @ self.normal


Obstacle = Union[SphereObstacle, BoxObstacle, HalfspaceObstacle]


def obstacles_from_doc(docs: Sequence[dict]) -> tuple[Obstacle, ...]:
    out: list[Obstacle] = []
    for doc in docs:
        kind = doc.get("type")
        if kind == "sphere":
            out.append(SphereObstacle(center=doc["center"], radius=float(doc["radius"])))
        elif kind == "box":
            rotation = np.asarray(doc["rotation"], dtype=float).reshape(3, 3) \
                if "rotation" in doc else np.eye(3)
            out.append(BoxObstacle(center=doc["center"],
                                   half_extents=doc["half_extents"], rotation=rotation))
        elif kind == "halfspace":
            out.append(HalfspaceObstacle(point=doc["point"], normal=doc["normal"]))
        else:
            raise ValueError(f"unknown obstacle type {kind!r}")
    return tuple(out)


def obstacles_to_doc(obstacles: Sequence[Obstacle]) -> list[dict]:
    docs = []
    for obs in obstacles:
        if isinstance(obs, SphereObstacle):
            docs.append({"type": "sphere", "center": list(map(float, obs.center)),
                         "radius": obs.radius})
        elif isinstance(obs, BoxObstacle):
            docs.append({"type": "box", "center": list(map(float, obs.center)),
                         "half_extents": list(map(float, obs.half_extents)),
                         "rotation": [float(x) for x in obs.rotation.ravel()]})
        elif isinstance(obs, HalfspaceObstacle):
            docs.append({"type": "halfspace", "point": list(map(float, obs.point)),
                         "normal": list(map(float, obs.normal))})
        else:
            raise TypeError(f"unknown obstacle {obs!r}")
    return docs


# -- residual blocks -----------------------------------------------------------

def cost_smooth(configs: np.ndarray, w_smooth: float) -> np.ndarray:
    """Residuals sqrt(w) (q_t - q_{t-1}) as a (T-1, dof) block."""
    q = np.asarray(configs, dtype=float)
    return np.sqrt(w_smooth) * np.diff(q, axis=0)


def cost_rest(configs: np.ndarray, q_rest: np.ndarray, w_rest: float) -> np.ndarray:
    """Residuals sqrt(w) (q_t - q_rest) as a (T, dof) block."""
    q = np.asarray(configs, dtype=float)
    return np.sqrt(w_rest) * (q - np.asarray(q_rest, dtype=float))


def penalty_limits(configs: np.ndarray, model: RobotModel, w_limits: float,
                   dt: float) -> np.ndarray:
    """Hinge residuals for position and velocity limits, flattened.

    Layout: upper-bound hinges (T, dof), lower-bound hinges (T, dof), then
    velocity hinges sqrt(w) max(0, |q_{t+1} - q_t| - v_max dt) of shape
    (T-1, dof).
    """
    q = np.asarray(configs, dtype=float)
    root = np.sqrt(w_limits)
    upper = root * np.maximum(q - model.q_max, 0.0)
    lower = root * np.maximum(model.q_min - q, 0.0)
    vel = root * np.maximum(np.abs(np.diff(q, axis=0)) - model.velocity_limits * dt, 0.0)
    return np.concatenate([upper.ravel(), lower.ravel(), vel.ravel()])


def _segment_min_distances(model: RobotModel, configs: np.ndarray,
                           obstacles: Sequence[Obstacle],
                           swept_samples: int) -> np.ndarray:
    """Min signed distance per (segment, obstacle) over swept samples, (T-1, n_obs)."""
    q = np.asarray(configs, dtype=float)
    segments = q.shape[0] - 1
    if not obstacles or not model.collision_spheres or segments == 0:
        return np.full((segments, len(obstacles)), np.inf)
    s = np.linspace(0.0, 1.0, swept_samples)
    # (T-1, S, dof) -> flat batch
    swept = q[:-1, None, :] + s[None, :, None] * np.diff(q, axis=0)[:, None, :]
    centers = sphere_centers_batch(model, swept.reshape(-1, q.shape[1]))
    radii = sphere_radii(model)
    out = np.empty((segments, len(obstacles)))
    for i, obs in enumerate(obstacles):
        d = obs.distance(centers) - radii           # (B, n_spheres)
        out[:, i] = d.reshape(segments, -1).min(axis=1)
    return out


def signed_distance(model: RobotModel, q_a: np.ndarray, q_b: np.ndarray,
                    obstacle: Obstacle, swept_samples: int = 5) -> float:
    """Swept signed distance for the segment q_a -> q_b against one obstacle.

    Joint-space interpolation is sampled at ``swept_samples`` points (the two
    endpoints included); the minimum over samples and collision spheres is
    returned.  Negative values mean penetration; a robot without collision
    spheres is infinitely far from everything.
    """
    if swept_samples < 2:
        raise ValueError("swept_samples must be at least 2 to cover both endpoints")
    configs = np.stack([np.asarray(q_a, dtype=float), np.asarray(q_b, dtype=float)])
    return float(_segment_min_distances(model, configs, (obstacle,), swept_samples)[0, 0])


def penalty_collision(configs: np.ndarray, model: RobotModel,
                      obstacles: Sequence[Obstacle], w_collision: float,
                      eps_safe: float, swept_samples: int = 5,
                      pad: float = 0.0) -> np.ndarray:
    """Hinge residuals sqrt(w) max(0, eps_safe + pad - d) per (segment, obstacle).

    A quadratic hinge balances against the other cost terms slightly inside
    its boundary, so ``pad`` moves the penalized boundary outward; the
    settled trajectory then clears ``eps_safe`` itself.
    """
    dmin = _segment_min_distances(model, configs, obstacles, swept_samples)
    hinge = np.maximum(eps_safe + pad - dmin, 0.0)
    hinge[~np.isfinite(dmin)] = 0.0
    return np.sqrt(w_collision) * hinge.ravel()


def init_trajectory(q_start: np.ndarray, q_end: np.ndarray, steps: int) -> np.ndarray:
    """Straight-line joint-space initialization with exact endpoints."""
    if steps < 2:
        raise ValueError("a trajectory needs at least 2 steps")
    a = np.asarray(q_start, dtype=float)
    b = np.asarray(q_end, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    tau = np.linspace(0.0, 1.0, steps)[:, None]
    out = a + tau * (b - a)
    out[0] = a
    out[-1] = b
    return out


# -- the trajectory problem ----------------------------------------------------

@dataclass(frozen=True)
class TrajOptWeights:
    smooth: float = 10.0
    rest: float = 0.1
    limits: float = 100.0
    collision: float = 15.0


@dataclass(frozen=True)
class TrajOptProblem:
    model: RobotModel
    q_start: np.ndarray
    q_end: np.ndarray
    steps: int
    q_rest: np.ndarray | None = None    # defaults to the mid-range configuration
    weights: TrajOptWeights = TrajOptWeights()
    eps_safe: float = 0.02              # meters of required clearance
    collision_pad: float = 0.005        # extra penalized margin beyond eps_safe
    swept_samples: int = 5
    dt: float = 0.1                     # seconds per step, for velocity hinges
    obstacles: tuple[Obstacle, ...] = ()
    lm: LMOptions = LMOptions()


@dataclass(frozen=True)
class TrajOptResult:
    trajectory: JointTrajectory
    final_cost: float
    term_costs: dict
    iterations: int
    converged: bool
    min_clearance: float     # from a dense sweep at 2x swept_samples


def _term_costs(problem: TrajOptProblem, configs: np.ndarray) -> dict:
    w = problem.weights
    q = configs
    rest = problem.q_rest if problem.q_rest is not None else \
        0.5 * (problem.model.q_min + problem.model.q_max)
    root_l = np.sqrt(w.limits)
    upper = root_l * np.maximum(q - problem.model.q_max, 0.0)
    lower = root_l * np.maximum(problem.model.q_min - q, 0.0)
    vel = root_l * np.maximum(
        np.abs(np.diff(q, axis=0)) - problem.model.velocity_limits * problem.dt, 0.0)
    coll = penalty_collision(q, problem.model, problem.obstacles, w.collision,
                             problem.eps_safe, problem.swept_samples,
                             pad=problem.collision_pad)
    return {
        "smooth": float(np.sum(cost_smooth(q, w.smooth) ** 2)),
        "rest": float(np.sum(cost_rest(q, rest, w.rest) ** 2)),
        "limits": float(np.sum(upper ** 2) + np.sum(lower ** 2)),
        "velocity": float(np.sum(vel ** 2)),
        "collision": float(np.sum(coll ** 2)),
    }


def optimize_trajectory(problem: TrajOptProblem) -> TrajOptResult:
    """Optimize interior configurations between hard start/end constraints.

    The stacked residual is [smooth, rest, limit hinges, collision hinges];
    endpoints are eliminated from the decision vector and returned
    bit-identical to the inputs.  Collision hinges penalize distances below
    ``eps_safe + collision_pad`` so the settled trajectory clears
    ``eps_safe`` itself.  The reported ``min_clearance`` comes from a final
    sweep at twice the optimization sampling; ``converged`` is false when
    the solver stalled or the clearance still violates ``eps_safe`` (beyond
    a 1e-4 slack).
    """
    model = problem.model
    dof = model.dof
    q_start = np.asarray(problem.q_start, dtype=float)
    q_end = np.asarray(problem.q_end, dtype=float)
    if q_start.shape != (dof,) or q_end.shape != (dof,):
        raise ValueError(f"endpoint configurations must be ({dof},)")
    if (q_start < model.q_min).any() or (q_start > model.q_max).any() \
            or (q_end < model.q_min).any() or (q_end > model.q_max).any():
        raise ValueError("start or end configuration violates joint limits")
    steps = problem.steps
    if steps < 2:
        raise ValueError("steps must be at least 2")
    q_rest = np.asarray(problem.q_rest, dtype=float) if problem.q_rest is not None \
        else 0.5 * (model.q_min + model.q_max)
    w = problem.weights

    def assemble(x: np.ndarray) -> np.ndarray:
        full = np.empty((steps, dof))
        full[0] = q_start
        full[-1] = q_end
        if steps > 2:
            full[1:-1] = x.reshape(steps - 2, dof)
        return full

    def residuals_of(full: np.ndarray) -> np.ndarray:
        return np.concatenate([
            cost_smooth(full, w.smooth).ravel(),
            cost_rest(full, q_rest, w.rest).ravel(),
            penalty_limits(full, model, w.limits, problem.dt),
            penalty_collision(full, model, problem.obstacles, w.collision,
                              problem.eps_safe, problem.swept_samples,
                              pad=problem.collision_pad),
        ])

    def min_clearance_of(full: np.ndarray) -> float:
        dense = _segment_min_distances(model, full, problem.obstacles,
                                       2 * problem.swept_samples)
        return float(dense.min()) if dense.size else np.inf

    if steps == 2:
        full = assemble(np.zeros(0))
        cost = float(np.sum(residuals_of(full) ** 2))
        clearance = min_clearance_of(full)
        return TrajOptResult(
            trajectory=JointTrajectory(full, problem.dt), final_cost=cost,
            term_costs=_term_costs(problem, full), iterations=0,
            converged=clearance >= problem.eps_safe - 1e-4,
            min_clearance=clearance)

    x0 = init_trajectory(q_start, q_end, steps)[1:-1].ravel()
    residual_fn = lambda x: residuals_of(assemble(x))
    jac_fn = _make_jacobian(problem, q_rest, assemble)
    lm = levenberg_marquardt(residual_fn, x0, jacobian=jac_fn, options=problem.lm)

    full = assemble(lm.x)
    clearance = min_clearance_of(full)
    return TrajOptResult(
        trajectory=JointTrajectory(full, problem.dt),
        final_cost=lm.cost,
        term_costs=_term_costs(problem, full),
        iterations=lm.iterations,
        converged=lm.converged and clearance >= problem.eps_safe - 1e-4,
        min_clearance=clearance,
    )


def _make_jacobian(problem: TrajOptProblem, q_rest: np.ndarray,
                   assemble) -> Callable[[np.ndarray], np.ndarray]:
    """Jacobian of the stacked residual w.r.t. interior configurations.

    The smooth/rest/limit blocks are linear or hinge-linear and filled
    analytically; collision rows use segment-local forward differences (each
    segment depends on two frames only), batched through one FK call.
    """
    model = problem.model
    dof = model.dof
    steps = problem.steps
    w = problem.weights
    n_obs = len(problem.obstacles)
    n_vars = (steps - 2) * dof
    n_sm = (steps - 1) * dof
    n_rest = steps * dof
    n_lim = steps * dof          # upper; same again for lower
    n_vel = (steps - 1) * dof
    n_coll = (steps - 1) * n_obs
    off_rest = n_sm
    off_hi = off_rest + n_rest
    off_lo = off_hi + n_lim
    off_vel = off_lo + n_lim
    off_coll = off_vel + n_vel
    n_res = off_coll + n_coll
    root_s, root_l, root_c = np.sqrt(w.smooth), np.sqrt(w.limits), np.sqrt(w.collision)
    root_r = np.sqrt(w.rest)
    h = problem.lm.fd_step
    s_grid = np.linspace(0.0, 1.0, problem.swept_samples)
    radii = sphere_radii(model)

    def var(frame: int, joint: int) -> int:
        return (frame - 1) * dof + joint

    def jac(x: np.ndarray) -> np.ndarray:
        full = assemble(x)
        out = np.zeros((n_res, n_vars))
        # smooth rows: r = root_s (q_t - q_{t-1}), t = 1..steps-1
        for t in range(1, steps):
            for j in range(dof):
                row = (t - 1) * dof + j
                if 1 <= t <= steps - 2:
                    out[row, var(t, j)] = root_s
                if 1 <= t - 1:
                    out[row, var(t - 1, j)] = -root_s
        # rest rows
        for t in range(1, steps - 1):
            for j in range(dof):
                out[off_rest + t * dof + j, var(t, j)] = root_r
        # limit hinges
        for t in range(1, steps - 1):
            for j in range(dof):
                if full[t, j] > model.q_max[j]:
                    out[off_hi + t * dof + j, var(t, j)] = root_l
                if full[t, j] < model.q_min[j]:
                    out[off_lo + t * dof + j, var(t, j)] = -root_l
        # velocity hinges: r_t = root_l max(0, |q_{t+1} - q_t| - cap), t = 0..steps-2
        caps = model.velocity_limits * problem.dt
        for t in range(steps - 1):
            delta = full[t + 1] - full[t]
            for j in range(dof):
                if abs(delta[j]) > caps[j]:
                    row = off_vel + t * dof + j
                    sign = np.sign(delta[j])
                    if 1 <= t + 1 <= steps - 2:
                        out[row, var(t + 1, j)] = root_l * sign
                    if 1 <= t <= steps - 2:
                        out[row, var(t, j)] = -root_l * sign
        # collision rows by segment-local forward differences
        if n_obs and model.collision_spheres:
            base = _segment_min_distances(model, full, problem.obstacles,
                                          problem.swept_samples)
            boundary = problem.eps_safe + problem.collision_pad
            base_r = root_c * np.maximum(boundary - base, 0.0)  # (T-1, n_obs)
            perturbations = []  # (segment, frame, joint)
            swept_blocks = []
            for t in range(steps - 1):
                for frame in (t, t + 1):
                    if not 1 <= frame <= steps - 2:
                        continue
                    for j in range(dof):
                        qa, qb = full[t].copy(), full[t + 1].copy()
                        (qa if frame == t else qb)[j] += h
                        swept_blocks.append(qa + s_grid[:, None] * (qb - qa))
                        perturbations.append((t, frame, j))
            if perturbations:
                batch = np.concatenate(swept_blocks, axis=0)
                centers = sphere_centers_batch(model, batch)
                n_pert = len(perturbations)
                n_s = len(s_grid)
                dmin = np.empty((n_pert, n_obs))
                for i, obs in enumerate(problem.obstacles):
                    d = obs.distance(centers) - radii
                    dmin[:, i] = d.reshape(n_pert, n_s, -1).min(axis=(1, 2))
                pert_r = root_c * np.maximum(boundary - dmin, 0.0)
                for idx, (t, frame, j) in enumerate(perturbations):
                    col = var(frame, j)
                    rows = slice(off_coll + t * n_obs, off_coll + (t + 1) * n_obs)
                    out[rows, col] = (pert_r[idx] - base_r[t]) / h
        return out

    return jac


# -- problem/result documents ---------------------------------------------------

def problem_from_doc(doc: dict, base_dir=None) -> TrajOptProblem:
    """Build a problem from its JSON document.

    ``robot`` may be an inline robot document or a path (resolved against
    ``base_dir`` when relative).  Optional keys: q_rest, weights, eps_safe,
    collision_pad, swept_samples, dt, obstacles, max_iters.
    """
    robot = doc["robot"]
    if isinstance(robot, str):
        robot_path = Path(robot)
        if base_dir is not None and not robot_path.is_absolute():
            robot_path = Path(base_dir) / robot_path
        model = load_robot(robot_path)
    else:
        model = robot_from_doc(robot)
    weights_doc = doc.get("weights", {})
    weights = TrajOptWeights(
        smooth=float(weights_doc.get("smooth", 10.0)),
        rest=float(weights_doc.get("rest", 0.1)),
        limits=float(weights_doc.get("limits", 100.0)),
        collision=float(weights_doc.get("collision", 15.0)),
    )
    lm = LMOptions(max_iters=int(doc.get("max_iters", 100)))
    return TrajOptProblem(
        model=model,
        q_start=np.asarray(doc["q_start"], dtype=float),
        q_end=np.asarray(doc["q_end"], dtype=float),
        steps=int(doc["steps"]),
        q_rest=np.asarray(doc["q_rest"], dtype=float) if "q_rest" in doc else None,
        weights=weights,
        eps_safe=float(doc.get("eps_safe", 0.02)),
        collision_pad=float(doc.get("collision_pad", 0.005)),
        swept_samples=int(doc.get("swept_samples", 5)),
        dt=float(doc.get("dt", 0.1)),
        obstacles=obstacles_from_doc(doc.get("obstacles", [])),
        lm=lm,
    )


def result_to_doc(result: TrajOptResult) -> dict:
    return {
        "trajectory": [[float(v) for v in row] for row in result.trajectory.configs],
        "dt": result.trajectory.dt,
        "final_cost": result.final_cost,
        "term_costs": {k: float(v) for k, v in result.term_costs.items()},
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "min_clearance": None if not np.isfinite(result.min_clearance)
        else float(result.min_clearance),
    }
