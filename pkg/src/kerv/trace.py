"""Episode traces: one record per decoded slice, serialized as JSON lines.

A trace file starts with an ``episode`` metadata line, carries one slice
record per line, and ends with a ``summary`` line. Slice records hold
everything needed to replay acceptance decisions and cost accounting
offline: per-position draft/true ids (null where a position was never
drafted or verified), acceptance statuses, final tokens, value sources,
and the step's threshold, variability, and call counters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable


class TraceError(ValueError):
    """Raised when a trace stream is malformed."""


@dataclass(frozen=True)
class SliceRecord:
    step: int
    draft_ids: tuple[int | None, ...]
    true_ids: tuple[int | None, ...]
    statuses: tuple[str | None, ...]
    tokens: tuple[int, ...]
    sources: tuple[str, ...]
    first_error_pos: int
    r: float
    kvar_step: float
    kvar_cum: float
    verify_calls: int
    draft_calls: int
    comp_fired: bool
    cooldown_remaining: int


@dataclass
class EpisodeTrace:
    suite: str
    kind: str
    mode: str
    robot: str
    trial: int
    seed: int
    slices: list[SliceRecord] = field(default_factory=list)
    success: bool = False
    steps: int = 0
    deviation: float = 0.0
    plan_steps: int = 0
    comp_events: int = 0

    def meta(self) -> dict:
        return {
            "suite": self.suite,
            "kind": self.kind,
            "mode": self.mode,
            "robot": self.robot,
            "trial": self.trial,
            "seed": self.seed,
        }

    def summary(self) -> dict:
        return {
            "success": self.success,
            "steps": self.steps,
            "deviation": self.deviation,
            "plan_steps": self.plan_steps,
            "comp_events": self.comp_events,
        }

    def dumps(self) -> str:
        lines = [json.dumps({"episode": self.meta()}, sort_keys=True)]
        for rec in self.slices:
            lines.append(json.dumps(asdict(rec), sort_keys=True))
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def _record_from_dict(d: dict) -> SliceRecord:
    def opt_tuple(xs):
        return tuple(None if x is None else x for x in xs)

    return SliceRecord(
        step=d["step"],
        draft_ids=opt_tuple(d["draft_ids"]),
        true_ids=opt_tuple(d["true_ids"]),
        statuses=opt_tuple(d["statuses"]),
        tokens=tuple(d["tokens"]),
        sources=tuple(d["sources"]),
        first_error_pos=d["first_error_pos"],
        r=d["r"],
        kvar_step=d["kvar_step"],
        kvar_cum=d["kvar_cum"],
        verify_calls=d["verify_calls"],
        draft_calls=d["draft_calls"],
        comp_fired=d["comp_fired"],
        cooldown_remaining=d["cooldown_remaining"],
    )


def loads(text: str) -> EpisodeTrace:
    trace: EpisodeTrace | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        if "episode" in obj:
            m = obj["episode"]
            trace = EpisodeTrace(
                suite=m["suite"],
                kind=m["kind"],
                mode=m["mode"],
                robot=m["robot"],
                trial=m["trial"],
                seed=m["seed"],
            )
        elif "summary" in obj:
            if trace is None:
                raise TraceError(f"line {lineno}: summary before episode header")
            s = obj["summary"]
            trace.success = s["success"]
            trace.steps = s["steps"]
            trace.deviation = s["deviation"]
            trace.plan_steps = s["plan_steps"]
            trace.comp_events = s["comp_events"]
        else:
            if trace is None:
                raise TraceError(f"line {lineno}: slice record before episode header")
            trace.slices.append(_record_from_dict(obj))
    if trace is None:
        raise TraceError("empty trace stream")
    return trace


def load(path: str | Path) -> EpisodeTrace:
    return loads(Path(path).read_text())


def load_dir(path: str | Path) -> list[EpisodeTrace]:
    """Load every ``*.jsonl`` trace under a directory, sorted by filename."""
    traces = []
    for p in sorted(Path(path).glob("*.jsonl")):
        traces.append(load(p))
    return traces


def iter_slices(traces: Iterable[EpisodeTrace]) -> Iterable[SliceRecord]:
    for t in traces:
        yield from t.slices
