"""Deformable-object tracking: mass-spring dynamics and sampling-based MPC.

A deformable object is a particle set with spring edges; a gripper drags a
subset of "attached" particles by a bounded 3-d delta per frame.  Planning is
receding-horizon: at every frame a cross-entropy method (CEM) searches action
sequences whose simulated rollouts stay close to the keypoint flow, and only
the first action is executed.

The per-frame tracking objective is the summed squared distance between
particles and their corresponded flow keypoints; a correspondence-free
symmetric Chamfer objective against the final flow frame is provided as the
baseline it is compared against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import ActionableFlow

__all__ = [
    "DegenerateEdgeError",
    "ParticleState",
    "MassSpringModel",
    "Correspondence",
    "MPCConfig",
    "RolloutResult",
    "mass_spring_step",
    "flow_cost",
    "chamfer_cost",
    "build_correspondence",
    "plan_actions",
    "mpc_rollout",
    "load_dynamics",
    "save_dynamics",
]


class DegenerateEdgeError(RuntimeError):
    """Two particles joined by a spring (near-)coincide; forces are undefined."""


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ParticleState:
    positions: np.ndarray    # (N, 3) meters
    velocities: np.ndarray   # (N, 3) m/s

    def __post_init__(self) -> None:
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if vel.shape != pos.shape:
            raise ValueError(f"velocities shape {vel.shape} does not match positions")
        if not (np.isfinite(pos).all() and np.isfinite(vel).all()):
            raise ValueError("particle state contains non-finite values")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @classmethod
    def at_rest(cls, positions: np.ndarray) -> "ParticleState":
        pos = np.asarray(positions, dtype=float)
        return cls(pos, np.zeros_like(pos))

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class MassSpringModel:
    """Particle-spring dynamics integrated with semi-implicit Euler substeps.

    Spring force on particle i from edge (i, j) is k (|d| - L0) d_hat with
    d = p_j - p_i, plus a linear velocity drag -c v per particle.  Attached
    particles ignore forces and move kinematically by the commanded delta,
    spread uniformly over substeps.  Pinned particles are clamped in place
    (a fixture holding part of the object).
    """

    n_particles: int
    edges: np.ndarray           # (E, 2) int particle indices
    rest_lengths: np.ndarray    # (E,) meters
    stiffness: float = 500.0    # N/m
    damping: float = 1.0        # N s/m
    mass: float = 0.01          # kg per particle
    dt: float = 1.0 / 16.0      # seconds per control step
    substeps: int = 20
    gravity: bool = False       # adds -9.81 m/s^2 along z when set
    ground_height: float = -1.0  # z is clamped to stay >= this
    attachment: tuple[int, ...] = ()
    pinned: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        edges = _frozen(self.edges, dtype=int)
        rest = _frozen(self.rest_lengths)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (E, 2), got {edges.shape}")
        if rest.shape != (edges.shape[0],):
            raise ValueError("one rest length per edge is required")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n_particles):
            raise ValueError("edge indices out of range")
        if edges.size and (edges[:, 0] == edges[:, 1]).any():
            raise ValueError("self-edges are not allowed")
        if (rest <= 0.0).any():
            raise ValueError("rest lengths must be positive")
        if self.stiffness < 0.0 or self.damping < 0.0:
            raise ValueError("stiffness and damping must be non-negative")
        if self.mass <= 0.0 or self.dt <= 0.0 or self.substeps < 1:
            raise ValueError("mass and dt must be positive, substeps >= 1")
        attachment = tuple(int(i) for i in self.attachment)
        pinned = tuple(int(i) for i in self.pinned)
        if any(not 0 <= i < self.n_particles for i in attachment + pinned):
            raise ValueError("attachment or pinned indices out of range")
        if set(attachment) & set(pinned):
            raise ValueError("a particle cannot be both attached and pinned")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "rest_lengths", rest)
        object.__setattr__(self, "attachment", attachment)
        object.__setattr__(self, "pinned", pinned)

    def incidence(self) -> np.ndarray:
        """Dense (N, E) incidence matrix: -1 at the edge tail, +1 at its head."""
        inc = np.zeros((self.n_particles, self.edges.shape[0]))
        inc[self.edges[:, 0], np.arange(self.edges.shape[0])] = -1.0
        inc[self.edges[:, 1], np.arange(self.edges.shape[0])] = 1.0
        return inc


def save_dynamics(model: MassSpringModel, path) -> None:
    doc = {
        "n_particles": model.n_particles,
        "edges": [[int(i), int(j)] for i, j in model.edges],
        "rest_lengths": [float(x) for x in model.rest_lengths],
        "stiffness": model.stiffness,
        "damping": model.damping,
        "mass": model.mass,
        "dt": model.dt,
        "substeps": model.substeps,
        "gravity": model.gravity,
        "ground_height": model.ground_height,
        "attachment": list(model.attachment),
        "pinned": list(model.pinned),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_dynamics(path) -> MassSpringModel:
    doc = json.loads(Path(path).read_text())
    return MassSpringModel(
        n_particles=int(doc["n_particles"]),
        edges=np.asarray(doc["edges"], dtype=int).reshape(-1, 2),
        rest_lengths=np.asarray(doc["rest_lengths"], dtype=float),
        stiffness=float(doc.get("stiffness", 500.0)),
        damping=float(doc.get("damping", 1.0)),
        mass=float(doc.get("mass", 0.01)),
        dt=float(doc.get("dt", 1.0 / 16.0)),
        substeps=int(doc.get("substeps", 20)),
        gravity=bool(doc.get("gravity", False)),
        ground_height=float(doc.get("ground_height", -1.0)),
        attachment=tuple(doc.get("attachment", ())),
        pinned=tuple(doc.get("pinned", ())),
    )


def _step_batch(model: MassSpringModel, positions: np.ndarray, velocities: np.ndarray,
                deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of states one control step; arrays are (B, N, 3), (B, 3)."""
    h = model.dt / model.substeps
    inc = model.incidence()
    attached = list(model.attachment)
    pinned = list(model.pinned)
    pos = positions.copy()
    vel = velocities.copy()
    kinematic_vel = deltas / model.dt  # (B, 3)
    for _ in range(model.substeps):
        if model.edges.size:
            d = np.einsum("ne,bnc->bec", inc, pos)
            lengths = np.linalg.norm(d, axis=-1)
            if lengths.min() < 1e-9:
                raise DegenerateEdgeError(
                    "degenerate edge: spring endpoints coincide")
            stretch = model.stiffness * (lengths - model.rest_lengths)
            edge_force = (stretch / lengths)[..., None] * d
            force = np.einsum("ne,bec->bnc", -inc, edge_force)
        else:
            force = np.zeros_like(pos)
        force -= model.damping * vel
        if model.gravity:
            force[..., 2] -= 9.81 * model.mass
        vel = vel + (h / model.mass) * force
        if attached:
            vel[:, attached, :] = kinematic_vel[:, None, :]
        if pinned:
            vel[:, pinned, :] = 0.0
        pos = pos + h * vel
        below = pos[..., 2] < model.ground_height
        if below.any():
            pos[..., 2] = np.maximum(pos[..., 2], model.ground_height)
            vel[..., 2] = np.where(below, np.maximum(vel[..., 2], 0.0), vel[..., 2])
    return pos, vel


def mass_spring_step(model: MassSpringModel, state: ParticleState,
                     delta: np.ndarray) -> ParticleState:
    """One control step: attached particles translate by ``delta``, rest simulate.

    Raises:
        DegenerateEdgeError: when spring endpoints (near-)coincide.
    """
    d = np.asarray(delta, dtype=float)
    if d.shape != (3,):
        raise ValueError(f"action delta must be (3,), got {d.shape}")
    if state.count != model.n_particles:
        raise ValueError(f"state has {state.count} particles, model expects "
                         f"{model.n_particles}")
    pos, vel = _step_batch(model, state.positions[None], state.velocities[None], d[None])
    return ParticleState(pos[0], vel[0])


# -- costs and correspondence ---------------------------------------------------

def flow_cost(state: ParticleState, flow_frame: np.ndarray,
              correspondence: np.ndarray) -> float:
    """Summed squared distance from particles to their corresponded keypoints."""
    target = np.asarray(flow_frame, dtype=float)
    idx = np.asarray(correspondence, dtype=int)
    if idx.shape != (state.count,):
        raise ValueError(f"correspondence must map all {state.count} particles, "
                         f"got shape {idx.shape}")
    if target.ndim != 2 or target.shape[1] != 3:
        raise ValueError(f"flow frame must be (K, 3), got {target.shape}")
    if idx.min() < 0 or idx.max() >= target.shape[0]:
        raise ValueError("correspondence index out of range")
    diff = state.positions - target[idx]
    return float(np.sum(diff ** 2))


def chamfer_cost(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Symmetric Chamfer: mean min squared distance, both directions, summed."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != 3 or b.shape[1] != 3:
        raise ValueError("point sets must be (N, 3) and (M, 3)")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


@dataclass(frozen=True)
class Correspondence:
    indices: np.ndarray      # (N,) keypoint index per particle
    total_distance: float    # sum of assignment distances at build time

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", _frozen(self.indices, dtype=int))


def build_correspondence(flow: ActionableFlow, particles: np.ndarray) -> Correspondence:
    """Assign each particle its nearest first-frame keypoint (ties: lowest index)."""
    pts = np.asarray(particles, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"particles must be (N, 3), got {pts.shape}")
    first = flow.positions[0]
    d = np.linalg.norm(pts[:, None, :] - first[None, :, :], axis=-1)
    indices = d.argmin(axis=1)  # argmin returns the lowest index on ties
    return Correspondence(indices, float(d[np.arange(len(pts)), indices].sum()))


# -- planning --------------------------------------------------------------------

@dataclass(frozen=True)
class MPCConfig:
    horizon: int = 5              # flow frames per planning window
    optimizer: str = "cem"        # "cem" or "random_shooting" (debug baseline)
    population: int = 64
    elites: int = 8
    iterations: int = 5
    init_std: float = 0.02        # meters, initial action noise
    min_std: float = 1e-4
    action_cap: float = 0.05      # max |delta| per control step, meters
    substeps_per_frame: int = 1   # >1 interpolates targets between flow frames
    seed: int = 0

    def __post_init__(self) -> None:
        if self.optimizer not in ("cem", "random_shooting"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.horizon < 1 or self.iterations < 1:
            raise ValueError("horizon and iterations must be positive")
        if self.substeps_per_frame < 1:
            raise ValueError("substeps_per_frame must be at least 1")
        if self.action_cap <= 0.0 or self.init_std <= 0.0 or self.min_std <= 0.0:
            raise ValueError("action_cap, init_std and min_std must be positive")


def _cap_actions(seqs: np.ndarray, cap: float) -> np.ndarray:
    norms = np.linalg.norm(seqs, axis=-1, keepdims=True)
    scale = np.minimum(1.0, cap / np.maximum(norms, 1e-12))
    return seqs * scale


def _batch_costs(model: MassSpringModel, state: ParticleState, seqs: np.ndarray,
                 targets: np.ndarray, final_goal: np.ndarray | None) -> np.ndarray:
    """Cumulative tracking cost of action sequences (B, H, 3) -> (B,)."""
    batch = seqs.shape[0]
    pos = np.broadcast_to(state.positions, (batch,) + state.positions.shape).copy()
    vel = np.broadcast_to(state.velocities, (batch,) + state.velocities.shape).copy()
    costs = np.zeros(batch)
    for j in range(seqs.shape[1]):
        pos, vel = _step_batch(model, pos, vel, seqs[:, j])
        if final_goal is None:
            diff = pos - targets[j]
            costs += np.sum(diff ** 2, axis=(1, 2))
        else:
            d2 = np.sum((pos[:, :, None, :] - final_goal[None, None, :, :]) ** 2, axis=-1)
            costs += d2.min(axis=2).mean(axis=1) + d2.min(axis=1).mean(axis=1)
    return costs


def _step_targets(flow: ActionableFlow, correspondence: Correspondence, t: int,
                  horizon_frames: int, substeps_per_frame: int) -> np.ndarray:
    """Per-dynamics-step particle targets, linearly interpolated between frames."""
    tracked = flow.positions[:, correspondence.indices, :]  # (T, N, 3)
    if substeps_per_frame == 1:
        return tracked[t:t + horizon_frames]
    steps = horizon_frames * substeps_per_frame
    out = np.zeros((steps,) + tracked.shape[1:])
    for k in range(steps):
        frac = t - 1 + (k + 1) / substeps_per_frame
        lo = min(int(math.floor(frac)), flow.frames - 1)
        hi = min(lo + 1, flow.frames - 1)
        tau = frac - lo
        out[k] = (1.0 - tau) * tracked[lo] + tau * tracked[hi]
    return out


def plan_actions(model: MassSpringModel, state: ParticleState, flow: ActionableFlow,
                 t: int, config: MPCConfig, correspondence: Correspondence,
                 cost_mode: str = "flow") -> np.ndarray:
    """Plan a gripper action sequence toward flow frames t, t+1, ...

    Returns a (H' * substeps_per_frame, 3) sequence with H' = min(horizon,
    frames - t); the rollout executes only the first frame's worth of it.  The
    zero sequence is injected into every population, so the returned plan
    never costs more than doing nothing.  ``cost_mode="chamfer_final"`` scores
    rollouts against the final flow frame with the symmetric Chamfer distance
    instead of corresponded tracking.

    Deterministic: each sample draws from its own stream keyed on (seed, frame
    index, iteration, sample index), so results do not depend on evaluation
    order or parallelism.
    """
    if not 1 <= t < flow.frames:
        raise ValueError(f"frame index t must be in [1, {flow.frames - 1}], got {t}")
    if cost_mode not in ("flow", "chamfer_final"):
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    horizon_frames = min(config.horizon, flow.frames - t)
    steps = horizon_frames * config.substeps_per_frame
    if cost_mode == "flow":
        targets = _step_targets(flow, correspondence, t, horizon_frames,
                                config.substeps_per_frame)
        final_goal = None
    else:
        targets = np.zeros((steps, 1, 3))
        final_goal = flow.positions[-1]

    mean = np.zeros((steps, 3))
    std = np.full((steps, 3), config.init_std)
    best_seq = np.zeros((steps, 3))
    best_cost = np.inf

    for iteration in range(config.iterations):
        samples = np.empty((config.population, steps, 3))
        for k in range(config.population):
            rng = np.random.default_rng([config.seed, t, iteration, k])
            samples[k] = mean + std * rng.standard_normal((steps, 3))
        samples = _cap_actions(samples, config.action_cap)
        samples[0] = 0.0                          # the do-nothing plan
        samples[1] = _cap_actions(mean[None], config.action_cap)[0]
        costs = _batch_costs(model, state, samples, targets, final_goal)
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best_seq = samples[order[0]].copy()
        if config.optimizer == "cem":
            elite = samples[order[:config.elites]]
            mean = elite.mean(axis=0)
            std = np.maximum(elite.std(axis=0), config.min_std)
        # random_shooting keeps sampling around zero with the initial std

    final = _cap_actions(mean[None], config.action_cap)[0]
    final_cost = float(_batch_costs(model, state, final[None], targets, final_goal)[0])
    if final_cost <= best_cost:
        return final
    return best_seq


@dataclass(frozen=True)
class RolloutResult:
    states: tuple[ParticleState, ...]   # length T (one state per flow frame)
    actions: np.ndarray                 # ((T-1) * substeps_per_frame, 3) deltas
    costs: np.ndarray                   # (T,) corresponded flow cost per frame

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", _frozen(self.actions))
        object.__setattr__(self, "costs", _frozen(self.costs))


def mpc_rollout(model: MassSpringModel, initial: ParticleState, flow: ActionableFlow,
                config: MPCConfig, correspondence: Correspondence | None = None,
                cost_mode: str = "flow") -> RolloutResult:
    """Receding-horizon rollout across all flow frames.

    At each frame the planner is re-run from the current state and only the
    first frame's worth of actions is executed.  The recorded per-frame cost
    is always the corresponded flow cost, so rollouts under different planning
    objectives stay comparable.
    """
    if correspondence is None:
        correspondence = build_correspondence(flow, initial.positions)
    spf = config.substeps_per_frame
    states = [initial]
    actions = np.zeros(((flow.frames - 1) * spf, 3))
    costs = np.zeros(flow.frames)
    costs[0] = flow_cost(initial, flow.positions[0], correspondence.indices)
    state = initial
    for t in range(1, flow.frames):
        plan = plan_actions(model, state, flow, t, config, correspondence, cost_mode)
        for s in range(spf):
            actions[(t - 1) * spf + s] = plan[s]
            state = mass_spring_step(model, state, plan[s])
        states.append(state)
        costs[t] = flow_cost(state, flow.positions[t], correspondence.indices)
    return RolloutResult(tuple(states), actions, costs)
