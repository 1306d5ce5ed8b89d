"""Speculative decoding engine for 7-token action slices.

One slice is decoded by chain-drafting up to ``depth`` tokens at a time and
verifying each batch with a single oracle call. Draft tokens within the
acceptance threshold r of the verifier's token are kept; on the first
rejection the engine either

* fills the remaining positions from the Kalman-filter bank instead of
  re-inference (compensation, at most one verify call per slice), or
* resamples classically: keep the verifier's correction and start a new
  draft round after it.

Compensation is followed by a cooldown of n slices during which rejections
fall back to classic resampling, keeping the filter's inputs dominated by
verified actions. Compensation is only taken when the first rejection lands
in the first draft round, so a compensated slice never pays more than one
verify call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from . import threshold as threshold_mod
from .codec import (
    GRIPPER_DOF,
    N_DOF,
    ActionSlice,
    NormKey,
    TokenSlice,
    action_to_token,
    decode_slice,
    snap_gripper_token,
    token_distance,
    token_to_action,
)
from .kinematics import KfBank, KfParams, KinVar, accumulate_kvar, kin_variability
from .threshold import ThresholdState
from .trace import EpisodeTrace, SliceRecord

EXACT = "exact"
RELAXED = "relaxed"
REJECTED = "rejected"

SRC_DRAFT = "draft"
SRC_VERIFY = "verify_corrected"
SRC_KF = "kf"

MODES = ("naive", "fixed_relaxed", "kerv")


class EngineError(RuntimeError):
    """Raised for oracle contract violations or invalid engine parameters."""


class MissingContextError(EngineError):
    """Raised when compensation is requested with an empty action cache."""


class DraftOracle(Protocol):
    def draft(self, prefix: Sequence[int], depth: int) -> Sequence[int]:
        """Propose ``depth`` tokens for the positions following ``prefix``."""
        ...


class VerifyOracle(Protocol):
    def verify(self, prefix: Sequence[int], drafted: Sequence[int]) -> Sequence[int]:
        """Return the true token at each drafted position, in one call."""
        ...


@dataclass(frozen=True)
class AcceptanceOutcome:
    position: int
    draft_id: int
    true_id: int
    status: str


def relaxed_accept(
    draft_id: int, true_id: int, r: float, position: int = 0
) -> AcceptanceOutcome:
    """Judge one draft token against the verifier's token.

    Exact match always accepts; a nonzero miss is accepted while the token
    distance stays within floor(r); anything farther is rejected.
    """
    dist = token_distance(draft_id, true_id)
    if dist == 0:
        status = EXACT
    elif dist <= r:
        status = RELAXED
    else:
        status = REJECTED
    return AcceptanceOutcome(position=position, draft_id=draft_id, true_id=true_id, status=status)


@dataclass
class SliceResult:
    tokens: TokenSlice
    actions: ActionSlice
    first_error_position: int
    sources: tuple[str, ...]
    outcomes: list[AcceptanceOutcome]
    verify_calls: int
    draft_calls: int
    comp_fired: bool
    draft_ids: tuple[int | None, ...]
    true_ids: tuple[int | None, ...]


def decode_slice_sd(
    draft: DraftOracle,
    verify: VerifyOracle,
    *,
    r: float,
    depth: int,
    compensation_enabled: bool,
    bank: KfBank | None,
    key: NormKey,
    kf_pl: int = 1,
    p_source: str = "verify",
) -> SliceResult:
    """Decode one full 7-token slice through the draft/verify loop."""
    if not 1 <= depth <= N_DOF:
        raise EngineError(f"draft depth must be in [1, {N_DOF}], got {depth}")
    if r < 0:
        raise EngineError(f"acceptance threshold must be >= 0, got {r}")
    if p_source not in ("verify", "kf"):
        raise EngineError(f"p_source must be 'verify' or 'kf', got {p_source!r}")
    if compensation_enabled and (bank is None or not bank.has_context):
        raise MissingContextError("no action context: compensation needs a primed bank")

    tokens: list[int] = []
    sources: list[str] = []
    outcomes: list[AcceptanceOutcome] = []
    draft_ids: list[int | None] = [None] * N_DOF
    true_ids: list[int | None] = [None] * N_DOF
    first_error = N_DOF
    verify_calls = 0
    draft_calls = 0
    comp_fired = False

    while len(tokens) < N_DOF:
        base = len(tokens)
        want = min(depth, N_DOF - base)
        drafted = list(draft.draft(tuple(tokens), want))
        draft_calls += 1
        if len(drafted) != want:
            raise EngineError(f"draft oracle returned {len(drafted)} tokens, wanted {want}")
        truths = list(verify.verify(tuple(tokens), drafted))
        verify_calls += 1
        if len(truths) != want:
            raise EngineError(f"verify oracle returned {len(truths)} tokens, wanted {want}")

        for i, (d_tok, t_tok) in enumerate(zip(drafted, truths)):
            pos = base + i
            draft_ids[pos] = d_tok
            true_ids[pos] = t_tok
            outcome = relaxed_accept(d_tok, t_tok, r, position=pos)
            outcomes.append(outcome)
            if outcome.status != REJECTED:
                tokens.append(d_tok)
                sources.append(SRC_DRAFT)
                continue

            if first_error == N_DOF:
                first_error = pos
            # compensation replaces re-inference only when the miss shows up
            # in the first round; a compensated slice must cost one verify
            can_compensate = (
                compensation_enabled and verify_calls == 1 and pos < N_DOF - 1
            )
            if can_compensate:
                assert bank is not None
                predicted = bank.predict(kf_pl)[-1].values
                if p_source == "verify":
                    tokens.append(t_tok)
                    sources.append(SRC_VERIFY)
                else:
                    tokens.append(_tokenize_prediction(predicted[pos], pos, key))
                    sources.append(SRC_KF)
                for dof in range(pos + 1, N_DOF):
                    tokens.append(_tokenize_prediction(predicted[dof], dof, key))
                    sources.append(SRC_KF)
                comp_fired = True
            else:
                tokens.append(t_tok)
                sources.append(SRC_VERIFY)
            break
        if comp_fired:
            break

    final_tokens = TokenSlice(tuple(tokens))
    actions = decode_slice(final_tokens, key)
    if bank is not None:
        bank.push_slice(actions)
    return SliceResult(
        tokens=final_tokens,
        actions=actions,
        first_error_position=first_error,
        sources=tuple(sources),
        outcomes=outcomes,
        verify_calls=verify_calls,
        draft_calls=draft_calls,
        comp_fired=comp_fired,
        draft_ids=tuple(draft_ids),
        true_ids=tuple(true_ids),
    )


def _tokenize_prediction(value: float, dof: int, key: NormKey) -> int:
    if dof == GRIPPER_DOF:
        return snap_gripper_token(value, key)
    return action_to_token(value, dof, key)


def accepted_error_kvar(outcomes: Sequence[AcceptanceOutcome], key: NormKey) -> float:
    """Per-step kinematic variability from relaxed-accepted tokens.

    Rejected tokens were replaced and exact tokens carry no error, so only
    relaxed acceptances contribute; both comparison slices hold zeros at
    every other position.
    """
    correct = [0.0] * N_DOF
    erroneous = [0.0] * N_DOF
    for o in outcomes:
        if o.status == RELAXED:
            correct[o.position] = token_to_action(o.true_id, o.position, key)
            erroneous[o.position] = token_to_action(o.draft_id, o.position, key)
    return kin_variability(ActionSlice(tuple(correct)), ActionSlice(tuple(erroneous)))


@dataclass
class EngineConfig:
    """Per-episode decoding configuration.

    mode selects the acceptance policy: ``naive`` is strict speculative
    decoding (r = 0, no compensation), ``fixed_relaxed`` uses a static
    threshold with classic resampling, ``kerv`` runs the adaptive threshold
    controller plus Kalman compensation.
    """

    mode: str = "kerv"
    depth: int = 4
    fixed_r: float = 9.0
    cooldown_n: int = 4
    p_source: str = "verify"
    kf_pl: int = 1
    ac: int = 10
    kf_params: KfParams = field(default_factory=KfParams)
    key: NormKey = field(default_factory=NormKey)
    threshold_state: ThresholdState | None = None
    threshold_mode: str = "rectified"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise EngineError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "kerv" and self.threshold_state is None:
            raise EngineError("kerv mode needs a threshold state (see threshold.lookup)")
        if self.cooldown_n < 0:
            raise EngineError(f"cooldown must be >= 0, got {self.cooldown_n}")


def run_episode(env, draft: DraftOracle, verify: VerifyOracle, cfg: EngineConfig) -> EpisodeTrace:
    """Decode slices until the environment terminates; record everything.

    The environment must be freshly reset and expose ``state`` (with
    ``done``/``succeeded``/``t``/``deviation``), ``step(actions)``, and
    metadata attributes (``suite``, ``kind``, ``robot``, ``trial``,
    ``seed``, ``plan_steps``).
    """
    bank = KfBank(cfg.kf_params, ac=cfg.ac)
    kv = KinVar()
    tstate = cfg.threshold_state
    cooldown = 0
    comp_events = 0
    records: list[SliceRecord] = []

    while not env.state.done:
        if cfg.mode == "naive":
            r_now = 0.0
        elif cfg.mode == "fixed_relaxed":
            r_now = float(cfg.fixed_r)
        else:
            assert tstate is not None
            r_now = tstate.r
        allow_comp = cfg.mode == "kerv" and cooldown == 0 and bank.has_context

        result = decode_slice_sd(
            draft,
            verify,
            r=math.floor(r_now),
            depth=cfg.depth,
            compensation_enabled=allow_comp,
            bank=bank,
            key=cfg.key,
            kf_pl=cfg.kf_pl,
            p_source=cfg.p_source,
        )
        step_index = env.state.t
        env.step(result.actions)

        kstep = accepted_error_kvar(result.outcomes, cfg.key)
        kv = accumulate_kvar(kv, kstep)
        if cfg.mode == "kerv":
            assert tstate is not None
            tstate = threshold_mod.adjust(tstate, kstep, cfg.threshold_mode)

        if result.comp_fired:
            comp_events += 1
            cooldown = cfg.cooldown_n
        elif cooldown > 0:
            cooldown -= 1

        statuses: list[str | None] = [None] * N_DOF
        for o in result.outcomes:
            statuses[o.position] = o.status
        records.append(
            SliceRecord(
                step=step_index,
                draft_ids=result.draft_ids,
                true_ids=result.true_ids,
                statuses=tuple(statuses),
                tokens=result.tokens.ids,
                sources=result.sources,
                first_error_pos=result.first_error_position,
                r=r_now,
                kvar_step=kv.per_step,
                kvar_cum=kv.cumulative,
                verify_calls=result.verify_calls,
                draft_calls=result.draft_calls,
                comp_fired=result.comp_fired,
                cooldown_remaining=cooldown,
            )
        )

    return EpisodeTrace(
        suite=getattr(env, "suite", ""),
        kind=getattr(env, "kind", ""),
        mode=cfg.mode,
        robot=getattr(env, "robot", ""),
        trial=getattr(env, "trial", 0),
        seed=getattr(env, "seed", 0),
        slices=records,
        success=env.state.succeeded,
        steps=env.state.t,
        deviation=env.state.deviation,
        plan_steps=getattr(env, "plan_steps", 0),
        comp_events=comp_events,
    )
