"""Synthetic 7-DoF tasks and the token oracles that drive them.

A task is a smooth spline trajectory through random waypoints; the plan is
the trajectory quantized onto the token grid step by step, so replaying the
plan's own tokens reproduces it exactly. The verify oracle is a
plan-tracking feedback policy (it re-targets the plan from the current
pose, so one-off action errors are corrected on the next slice); the draft
oracle corrupts the verify oracle's tokens with per-position noise whose
offset distribution is heavy-tailed, producing both small misses that a
relaxed threshold accepts and occasional large ones.

The gripper channel is a three-level impulse: 0 holds the current state,
+/-1 sets it. Offsets never reach half the action range, so draft noise
cannot flip the gripper; only the plan's toggle steps do.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .codec import (
    DEFAULT_KEY,
    GRIPPER_DOF,
    N_DOF,
    ActionSlice,
    NormKey,
    TokenSlice,
    action_to_token,
    token_to_action,
)

KINDS = ("reach", "pick_place", "long_horizon")
_KIND_IDS = {k: i + 1 for i, k in enumerate(KINDS)}

# waypoint counts per kind; long_horizon paths must average at least twice
# the reach slice count
_N_WAYPOINTS = {"reach": (4, 5), "pick_place": (7, 9), "long_horizon": (12, 15)}
_N_TOGGLES = {"reach": 0, "pick_place": 2, "long_horizon": 4}
# long segments keep spline curvature low enough for accurate one-step
# constant-velocity prediction; wide rotation hops keep per-step motion high
_SEG_STEPS = (18, 24)
_POS_RANGE = 0.75
_ROT_RANGE = 3.75

DEFAULT_TOLERANCE = 0.05
# fraction of plan path length a trial may deviate and still count as clean;
# sized so the relaxed-threshold operating points of interest straddle it
DEVIATION_BUDGET_FRAC = 0.15
GRIPPER_FLIP_LEVEL = 0.5


class TaskError(ValueError):
    """Raised for unknown task kinds or malformed specs."""


class EnvStateError(RuntimeError):
    """Raised when a finished environment is asked to act."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    seed: int
    goal: tuple[float, float, float]
    waypoints: tuple[tuple[float, ...], ...]
    max_steps: int
    success_tolerance: float


@dataclass(frozen=True)
class EnvState:
    pose: tuple[float, ...]
    t: int
    deviation: float
    done: bool
    succeeded: bool


@dataclass(frozen=True)
class DraftNoiseModel:
    """Per-position corruption of draft tokens.

    Each of the seven positions errs independently with probability
    ``q_err``; an erring position is offset by a signed token distance drawn
    from a zipf-like categorical over 1..max_offset (weight k**-zipf_s).
    A drawn error always lands on a token different from the truth: if
    clamping at the vocabulary edge would cancel it, the offset is mirrored.
    """

    q_err: float = 0.48
    max_offset: int = 60
    zipf_s: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.q_err <= 1.0:
            raise TaskError(f"q_err must be in [0, 1], got {self.q_err}")
        if self.max_offset < 1:
            raise TaskError(f"max_offset must be >= 1, got {self.max_offset}")

    @functools.cached_property
    def offset_probs(self) -> np.ndarray:
        w = np.arange(1, self.max_offset + 1, dtype=float) ** (-self.zipf_s)
        return w / w.sum()


@dataclass(frozen=True)
class Plan:
    """Token-quantized ground-truth trajectory derived from a TaskSpec."""

    poses: np.ndarray  # (T+1, 7); gripper channel holds the latched state
    actions: np.ndarray  # (T, 7) decoded token values, gripper = impulse
    tokens: np.ndarray  # (T, 7) int token ids
    path_length: float  # L1 arc length over the six motion channels
    deviation_budget: float

    @property
    def steps(self) -> int:
        return self.actions.shape[0]


def make_task(kind: str, seed: int, key: NormKey = DEFAULT_KEY) -> TaskSpec:
    """Deterministically generate a task of the given kind."""
    if kind not in KINDS:
        raise TaskError(f"unknown task kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng([_KIND_IDS[kind], seed & 0x7FFFFFFF])
    lo_n, hi_n = _N_WAYPOINTS[kind]
    n_way = int(rng.integers(lo_n, hi_n + 1))

    pos = rng.uniform(-_POS_RANGE, _POS_RANGE, size=(n_way, 3))
    rot = rng.uniform(-_ROT_RANGE, _ROT_RANGE, size=(n_way, 3))
    pos[0] = rng.uniform(-0.1, 0.1, size=3)
    rot[0] = 0.0
    # keep the goal clearly away from the start
    while np.linalg.norm(pos[-1] - pos[0]) < 0.5:
        pos[-1] = rng.uniform(-_POS_RANGE, _POS_RANGE, size=3)

    grip = np.full(n_way, -1.0)
    n_toggles = _N_TOGGLES[kind]
    if n_toggles:
        idx = rng.choice(np.arange(1, n_way), size=n_toggles, replace=False)
        state = -1.0
        for i in sorted(idx):
            state = -state
            grip[i:] = state

    waypoints = tuple(
        tuple(map(float, np.concatenate([pos[i], rot[i], [grip[i]]])))
        for i in range(n_way)
    )
    seg_steps = _segment_steps(kind, seed, n_way)
    plan_steps = sum(seg_steps)

    spec = TaskSpec(
        kind=kind,
        seed=seed,
        goal=(0.0, 0.0, 0.0),  # filled below from the quantized plan
        waypoints=waypoints,
        max_steps=2 * plan_steps,
        success_tolerance=DEFAULT_TOLERANCE,
    )
    plan = _build_plan_for(spec, seg_steps, key)
    goal = tuple(float(x) for x in plan.poses[-1, :3])
    return replace(spec, goal=goal)


def _segment_steps(kind: str, seed: int, n_way: int) -> tuple[int, ...]:
    # child generator: the main stream's draw count varies (goal respacing),
    # so step counts must be reproducible from the spec alone
    rng = np.random.default_rng([_KIND_IDS[kind], seed & 0x7FFFFFFF, 2])
    return tuple(
        int(s) for s in rng.integers(_SEG_STEPS[0], _SEG_STEPS[1] + 1, size=n_way - 1)
    )


@functools.lru_cache(maxsize=512)
def build_plan(spec: TaskSpec, key: NormKey = DEFAULT_KEY) -> Plan:
    """Quantized ground-truth plan for a spec (cached; specs are frozen)."""
    seg_steps = _segment_steps(spec.kind, spec.seed, len(spec.waypoints))
    return _build_plan_for(spec, seg_steps, key)


def _build_plan_for(spec: TaskSpec, seg_steps: tuple[int, ...], key: NormKey) -> Plan:
    way = np.asarray(spec.waypoints, dtype=float)
    t_way = np.concatenate([[0], np.cumsum(seg_steps)]).astype(float)
    total = int(t_way[-1])
    ts = np.arange(total + 1, dtype=float)

    motion = CubicSpline(t_way, way[:, :GRIPPER_DOF], axis=0, bc_type="clamped")(ts)
    # target gripper state at time t: the state of the last waypoint reached
    way_idx = np.searchsorted(t_way, ts, side="right") - 1
    grip_state = way[way_idx, GRIPPER_DOF]

    poses = np.empty((total + 1, N_DOF))
    actions = np.empty((total, N_DOF))
    tokens = np.empty((total, N_DOF), dtype=int)
    poses[0, :GRIPPER_DOF] = motion[0]
    poses[0, GRIPPER_DOF] = grip_state[0]
    for t in range(total):
        for dof in range(GRIPPER_DOF):
            desired = motion[t + 1, dof] - poses[t, dof]
            desired = min(max(desired, key.lo[dof]), key.hi[dof])
            tok = action_to_token(desired, dof, key)
            val = token_to_action(tok, dof, key)
            tokens[t, dof] = tok
            actions[t, dof] = val
            poses[t + 1, dof] = poses[t, dof] + val
        impulse = grip_state[t + 1] if grip_state[t + 1] != poses[t, GRIPPER_DOF] else 0.0
        tok = action_to_token(impulse, GRIPPER_DOF, key)
        tokens[t, GRIPPER_DOF] = tok
        actions[t, GRIPPER_DOF] = token_to_action(tok, GRIPPER_DOF, key)
        poses[t + 1, GRIPPER_DOF] = (
            grip_state[t + 1] if abs(actions[t, GRIPPER_DOF]) > GRIPPER_FLIP_LEVEL
            else poses[t, GRIPPER_DOF]
        )

    path_length = float(np.abs(actions[:, :GRIPPER_DOF]).sum())
    return Plan(
        poses=poses,
        actions=actions,
        tokens=tokens,
        path_length=path_length,
        deviation_budget=DEVIATION_BUDGET_FRAC * path_length,
    )


def oracle_policy(state: EnvState, spec: TaskSpec, key: NormKey = DEFAULT_KEY) -> TokenSlice:
    """True (greedy) tokens for the next slice: track the plan from the
    current pose, clamped to the action range."""
    if state.done:
        raise EnvStateError("environment is done; no further actions")
    plan = build_plan(spec, key)
    target = plan.poses[min(state.t + 1, plan.steps)]
    ids = []
    for dof in range(GRIPPER_DOF):
        desired = target[dof] - state.pose[dof]
        desired = min(max(desired, key.lo[dof]), key.hi[dof])
        ids.append(action_to_token(desired, dof, key))
    impulse = target[GRIPPER_DOF] if target[GRIPPER_DOF] != state.pose[GRIPPER_DOF] else 0.0
    ids.append(action_to_token(impulse, GRIPPER_DOF, key))
    return TokenSlice(tuple(ids))


def draft_policy(
    state: EnvState,
    spec: TaskSpec,
    noise: DraftNoiseModel,
    key: NormKey = DEFAULT_KEY,
) -> TokenSlice:
    """Noisy copy of the oracle's tokens for the current step.

    Deterministic per (noise seed, task seed, step), so repeated drafting
    within one slice sees the same corruption.
    """
    truth = oracle_policy(state, spec, key)
    rng = np.random.default_rng(
        [noise.seed & 0x7FFFFFFF, spec.seed & 0x7FFFFFFF, state.t, 0x5EED]
    )
    errs = rng.random(N_DOF) < noise.q_err
    magnitudes = rng.choice(
        np.arange(1, noise.max_offset + 1), size=N_DOF, p=noise.offset_probs
    )
    signs = rng.choice(np.array([-1, 1]), size=N_DOF)
    vmax = key.vocab_size - 1
    ids = []
    for dof, tok in enumerate(truth.ids):
        if not errs[dof]:
            ids.append(tok)
            continue
        off = int(signs[dof] * magnitudes[dof])
        corrupted = min(max(tok + off, 0), vmax)
        if corrupted == tok:  # clamp swallowed the offset; mirror it
            corrupted = min(max(tok - off, 0), vmax)
        ids.append(corrupted)
    return TokenSlice(tuple(ids))


def step(
    state: EnvState, actions: ActionSlice, spec: TaskSpec, key: NormKey = DEFAULT_KEY
) -> EnvState:
    """Integrate one slice of actions and update termination flags."""
    if state.done:
        raise EnvStateError("environment is done; no further steps")
    for v in actions.values:
        if not math.isfinite(v):
            # non-finite command aborts the episode as a failure
            return replace(state, done=True, succeeded=False)
    plan = build_plan(spec, key)
    pose = list(state.pose)
    for dof in range(GRIPPER_DOF):
        pose[dof] += actions.values[dof]
    g_cmd = actions.values[GRIPPER_DOF]
    if abs(g_cmd) > GRIPPER_FLIP_LEVEL:
        pose[GRIPPER_DOF] = math.copysign(1.0, g_cmd)

    t = state.t + 1
    ref = plan.poses[min(t, plan.steps)]
    gap = float(sum(abs(pose[d] - ref[d]) for d in range(GRIPPER_DOF)))
    if pose[GRIPPER_DOF] != ref[GRIPPER_DOF]:
        gap += 2.0
    deviation = state.deviation + gap

    done = False
    succeeded = False
    if t >= plan.steps:
        dist = math.sqrt(sum((pose[d] - spec.goal[d]) ** 2 for d in range(3)))
        if dist <= spec.success_tolerance:
            done = True
            succeeded = deviation <= plan.deviation_budget
    if not done and t >= spec.max_steps:
        done = True
        succeeded = False
    return EnvState(
        pose=tuple(pose), t=t, deviation=deviation, done=done, succeeded=succeeded
    )


class SimEnv:
    """Stateful wrapper tying a task, its plan, and episode metadata together."""

    def __init__(
        self,
        spec: TaskSpec,
        key: NormKey = DEFAULT_KEY,
        *,
        suite: str = "",
        robot: str = "sim7dof",
        trial: int = 0,
    ) -> None:
        self.spec = spec
        self.key = key
        self.suite = suite or spec.kind
        self.kind = spec.kind
        self.robot = robot
        self.trial = trial
        self.seed = spec.seed
        self.plan = build_plan(spec, key)
        self.plan_steps = self.plan.steps
        self.state = self._initial_state()

    def _initial_state(self) -> EnvState:
        return EnvState(
            pose=tuple(float(x) for x in self.plan.poses[0]),
            t=0,
            deviation=0.0,
            done=False,
            succeeded=False,
        )

    def reset(self) -> EnvState:
        self.state = self._initial_state()
        return self.state

    def step(self, actions: ActionSlice) -> EnvState:
        self.state = step(self.state, actions, self.spec, self.key)
        return self.state


class PlanVerifier:
    """Verify oracle bound to a live environment: plan-tracking truths."""

    def __init__(self, env: SimEnv) -> None:
        self.env = env

    def verify(self, prefix, drafted):
        truth = oracle_policy(self.env.state, self.env.spec, self.env.key)
        start = len(prefix)
        return truth.ids[start : start + len(drafted)]


class NoisyDrafter:
    """Draft oracle bound to a live environment: corrupted plan tokens."""

    def __init__(self, env: SimEnv, noise: DraftNoiseModel) -> None:
        self.env = env
        self.noise = noise

    def draft(self, prefix, depth):
        tokens = draft_policy(self.env.state, self.env.spec, self.noise, self.env.key)
        start = len(prefix)
        return tokens.ids[start : start + depth]
