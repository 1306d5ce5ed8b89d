"""Dynamic acceptance-threshold control driven by kinematic variability.

The threshold r bounds the token-id distance a draft token may miss by and
still be accepted. A per-episode controller moves r between configured
bounds in response to step-to-step changes in kinematic variability; the
controller's gain parameters come from a pre-sampled calibration table
keyed by (task, robot).

Two update modes exist:

* ``literal`` applies the published update exactly as printed:
  ``dr = (r_max - r_min) * exp((-dK / kvar_ref) ** phi)``, which is always
  positive, and freezes r at r_min once it falls to or below r_min. The
  positive-only delta makes the freeze unreachable from above; the mode is
  kept for fidelity testing.
* ``rectified`` (default) makes the response direction follow the intent
  that rising variability must tighten acceptance:
  ``dr = -sign(dK) * tau * (r_max - r_min) * (1 - exp(-|dK / kvar_ref| ** phi))``
  clamped to [r_min, r_max]. Magnitude grows with |dK|, so a larger
  variability jump never yields a weaker correction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .codec import DEFAULT_KEY, NormKey, token_to_action

if TYPE_CHECKING:  # pragma: no cover
    from .trace import EpisodeTrace

DEFAULT_R_MAX = 15.0
DEFAULT_R_MIN = 5.0
MODES = ("literal", "rectified")

# candidate (tau, phi) pairs; large tau exploits the state-dependent
# variability scale (big deltas near r_max, small ones near r_min) to bias
# the threshold walk downward
DEFAULT_GRID: tuple[tuple[float, float], ...] = tuple(
    (tau, phi) for tau in (0.5, 1.0, 2.0, 4.0) for phi in (0.7, 1.0, 1.5)
)


class ThresholdConfigError(ValueError):
    """Raised for unknown table keys, bad bounds, or empty calibration input."""


@dataclass(frozen=True)
class ThresholdState:
    """Controller state for one episode.

    r is real-valued; acceptance applies floor(r) since token distances are
    integers. ``frozen`` marks the literal-mode terminal condition.
    ``last_delta`` is the most recent raw update before clamping, and
    ``degenerate_events`` counts updates dropped for non-finite arithmetic.
    """

    r: float = DEFAULT_R_MAX
    r_max: float = DEFAULT_R_MAX
    r_min: float = DEFAULT_R_MIN
    tau: float = 1.0
    phi: float = 1.0
    kvar_ref: float = 1.0
    prev_kvar: float = 0.0
    frozen: bool = False
    last_delta: float = 0.0
    degenerate_events: int = 0

    def __post_init__(self) -> None:
        if not (self.r_max > self.r_min >= 0):
            raise ThresholdConfigError(
                f"need r_max > r_min >= 0, got r_max={self.r_max}, r_min={self.r_min}"
            )
        if not (math.isfinite(self.kvar_ref) and self.kvar_ref > 0):
            raise ThresholdConfigError(f"kvar_ref must be > 0, got {self.kvar_ref!r}")


def adjust(state: ThresholdState, kvar_step: float, mode: str = "rectified") -> ThresholdState:
    """Advance the controller one step given the step's kinematic variability."""
    if mode not in MODES:
        raise ThresholdConfigError(f"unknown adjustment mode {mode!r}")
    if not (math.isfinite(kvar_step) and kvar_step >= 0):
        raise ThresholdConfigError(f"kvar_step must be finite and >= 0, got {kvar_step!r}")

    delta_k = kvar_step - state.prev_kvar
    if delta_k == 0.0:
        return replace(state, prev_kvar=kvar_step, last_delta=0.0)

    if mode == "literal":
        if state.frozen:
            return replace(state, prev_kvar=kvar_step, last_delta=0.0)
        try:
            inner = math.pow(-delta_k / state.kvar_ref, state.phi)
            dr = (state.r_max - state.r_min) * math.exp(inner)
        except (ValueError, OverflowError):
            return replace(
                state,
                prev_kvar=kvar_step,
                last_delta=0.0,
                degenerate_events=state.degenerate_events + 1,
            )
        if not math.isfinite(dr):
            return replace(
                state,
                prev_kvar=kvar_step,
                last_delta=0.0,
                degenerate_events=state.degenerate_events + 1,
            )
        new_r = state.r + dr
        if new_r <= state.r_min:
            return replace(
                state, r=state.r_min, prev_kvar=kvar_step, frozen=True, last_delta=dr
            )
        return replace(
            state, r=min(new_r, state.r_max), prev_kvar=kvar_step, last_delta=dr
        )

    # rectified
    magnitude = (
        state.tau
        * (state.r_max - state.r_min)
        * (1.0 - math.exp(-abs(delta_k / state.kvar_ref) ** state.phi))
    )
    dr = -math.copysign(magnitude, delta_k)
    new_r = min(max(state.r + dr, state.r_min), state.r_max)
    return replace(state, r=new_r, prev_kvar=kvar_step, last_delta=dr)


@dataclass(frozen=True)
class CalibrationRow:
    tau: float
    phi: float
    r_max: float
    r_min: float
    kvar_ref: float
    success_rate: float
    avg_steps: float


class CalibrationTable:
    """Pre-sampled controller parameters keyed by (task, robot)."""

    HEADER = ("task", "robot", "tau", "phi", "r_max", "r_min", "kvar_ref", "sr", "steps")

    def __init__(self, rows: dict[tuple[str, str], CalibrationRow] | None = None) -> None:
        self.rows: dict[tuple[str, str], CalibrationRow] = dict(rows or {})

    def put(self, task: str, robot: str, row: CalibrationRow) -> None:
        if row.kvar_ref <= 0:
            raise ThresholdConfigError("kvar_ref must be strictly positive")
        self.rows[(task, robot)] = row

    def dumps(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for (task, robot), row in sorted(self.rows.items()):
            writer.writerow(
                [
                    task,
                    robot,
                    repr(row.tau),
                    repr(row.phi),
                    repr(row.r_max),
                    repr(row.r_min),
                    repr(row.kvar_ref),
                    repr(row.success_rate),
                    repr(row.avg_steps),
                ]
            )
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "CalibrationTable":
        reader = csv.reader(io.StringIO(text))
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ThresholdConfigError("empty calibration table") from None
        if header != cls.HEADER:
            raise ThresholdConfigError(f"unexpected table header {header!r}")
        table = cls()
        for rec in reader:
            if not rec:
                continue
            task, robot = rec[0], rec[1]
            tau, phi, r_max, r_min, kvar_ref, sr, steps = map(float, rec[2:9])
            table.put(
                task,
                robot,
                CalibrationRow(tau, phi, r_max, r_min, kvar_ref, sr, steps),
            )
        return table

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationTable":
        return cls.loads(Path(path).read_text())


def lookup(table: CalibrationTable, task: str, robot: str) -> ThresholdState:
    """Build the initial controller state for a (task, robot) pair.

    The threshold starts wide open at r_max. Unknown keys are an error;
    there is no silent default row.
    """
    try:
        row = table.rows[(task, robot)]
    except KeyError:
        known = sorted(table.rows)
        raise ThresholdConfigError(
            f"no calibration row for ({task!r}, {robot!r}); known keys: {known}"
        ) from None
    return ThresholdState(
        r=row.r_max,
        r_max=row.r_max,
        r_min=row.r_min,
        tau=row.tau,
        phi=row.phi,
        kvar_ref=row.kvar_ref,
    )


def _replay_objective(
    traces: Sequence["EpisodeTrace"],
    tau: float,
    phi: float,
    r_max: float,
    r_min: float,
    kvar_ref: float,
    key: NormKey,
    mode: str,
    step_penalty: float,
) -> float:
    """Score one (tau, phi) candidate by replaying recorded draft/true pairs.

    The candidate controller is run over each trace; at every slice the
    recorded token pairs are re-judged under the replayed threshold. The
    score trades accepted-error action mass (a proxy for task success)
    against re-inference pressure (rejections per slice, a proxy for extra
    decode rounds).
    """
    total_mass = 0.0
    total_rejections = 0
    total_slices = 0
    for trace in traces:
        state = ThresholdState(
            r=r_max, r_max=r_max, r_min=r_min, tau=tau, phi=phi, kvar_ref=kvar_ref
        )
        for rec in trace.slices:
            applied = math.floor(state.r)
            mass = 0.0
            for pos, (draft_id, true_id) in enumerate(zip(rec.draft_ids, rec.true_ids)):
                if draft_id is None or true_id is None:
                    continue
                dist = abs(draft_id - true_id)
                if dist == 0:
                    continue
                if dist <= applied:
                    mass += abs(
                        token_to_action(true_id, pos, key)
                        - token_to_action(draft_id, pos, key)
                    )
                else:
                    total_rejections += 1
            total_mass += mass
            total_slices += 1
            state = adjust(state, mass, mode)
    if total_slices == 0:
        raise ThresholdConfigError("calibration traces contain no slices")
    mean_mass = total_mass / total_slices
    mean_rounds = 1.0 + total_rejections / total_slices
    success_proxy = 1.0 / (1.0 + mean_mass)
    return success_proxy - step_penalty * mean_rounds


def calibrate(
    pre_sample_traces: Iterable["EpisodeTrace"],
    grid: Sequence[tuple[float, float]],
    *,
    r_max: float = DEFAULT_R_MAX,
    r_min: float = DEFAULT_R_MIN,
    key: NormKey = DEFAULT_KEY,
    mode: str = "rectified",
    step_penalty: float = 0.01,
) -> CalibrationTable:
    """Select (tau, phi) per (task, robot) key from pre-sample traces.

    The reference variability of each key is the mean per-step variability
    observed in its traces and must be strictly positive: pre-sampling has
    to run with relaxed acceptance so that accepted errors actually occur.
    """
    candidates = list(grid)
    if not candidates:
        raise ThresholdConfigError("calibration grid is empty")
    groups: dict[tuple[str, str], list[EpisodeTrace]] = {}
    for trace in pre_sample_traces:
        groups.setdefault((trace.suite, trace.robot), []).append(trace)
    if not groups:
        raise ThresholdConfigError("no pre-sample traces supplied")

    table = CalibrationTable()
    for (task, robot), traces in sorted(groups.items()):
        steps = [rec.kvar_step for t in traces for rec in t.slices]
        if not steps:
            raise ThresholdConfigError(f"traces for ({task}, {robot}) contain no slices")
        kvar_ref = sum(steps) / len(steps)
        if kvar_ref <= 0:
            raise ThresholdConfigError(
                f"pre-sample for ({task}, {robot}) has zero variability; "
                "pre-sample with relaxed acceptance (fixed_relaxed mode)"
            )
        best = None
        best_score = -math.inf
        for tau, phi in candidates:
            score = _replay_objective(
                traces, tau, phi, r_max, r_min, kvar_ref, key, mode, step_penalty
            )
            if score > best_score:
                best_score = score
                best = (tau, phi)
        assert best is not None
        sr = sum(1.0 for t in traces if t.success) / len(traces)
        avg_steps = sum(t.steps for t in traces) / len(traces)
        table.put(
            task,
            robot,
            CalibrationRow(
                tau=best[0],
                phi=best[1],
                r_max=r_max,
                r_min=r_min,
                kvar_ref=kvar_ref,
                success_rate=sr,
                avg_steps=avg_steps,
            ),
        )
    return table
