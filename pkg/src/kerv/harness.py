"""Suite runner, metrics, latency cost model, and result emission.

Episode latency is modeled, not measured: each slice contributes its verify
and draft calls at configured per-call costs, plus a filter-predict and a
host round-trip charge when compensation fired, plus the per-slice
threshold-adjustment charge. Wall-clock numbers are measured as well but
are written to a separate sidecar so the main report stays byte-identical
across reruns with the same seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import threshold as threshold_mod
from .codec import N_DOF
from .config import ConfigError, CostModel, RunConfig, SuiteConfig
from .simenv import DraftNoiseModel, NoisyDrafter, PlanVerifier, SimEnv, make_task
from .specdec import EngineConfig, run_episode
from .threshold import CalibrationTable
from .trace import EpisodeTrace

MODE_ORDER = ("naive", "fixed_relaxed", "kerv")


def modeled_latency(trace: EpisodeTrace, cm: CostModel) -> float:
    """Total modeled time units for one episode."""
    total = 0.0
    for rec in trace.slices:
        total += rec.verify_calls * cm.verify_cost
        total += rec.draft_calls * cm.draft_cost
        if rec.comp_fired:
            total += cm.kf_cost + cm.transfer_cost
        total += cm.adjust_cost
    return total


def afep(traces: Iterable[EpisodeTrace]) -> float:
    """Average first error position, 1-based, over slices with a rejection."""
    firsts = [
        rec.first_error_pos + 1
        for t in traces
        for rec in t.slices
        if rec.first_error_pos < N_DOF
    ]
    if not firsts:
        return 0.0
    return sum(firsts) / len(firsts)


def mean_r(traces: Sequence[EpisodeTrace]) -> float:
    rs = [rec.r for t in traces for rec in t.slices]
    return sum(rs) / len(rs) if rs else 0.0


def success_rate(traces: Sequence[EpisodeTrace]) -> float:
    if not traces:
        return 0.0
    return sum(1.0 for t in traces if t.success) / len(traces)


def mean_steps(traces: Sequence[EpisodeTrace]) -> float:
    if not traces:
        return 0.0
    return sum(t.steps for t in traces) / len(traces)


@dataclass(frozen=True)
class ReportRow:
    suite: str
    mode: str
    sr: float
    modeled_speedup: float
    wallclock_speedup: float
    afep: float
    avg_steps: float
    avg_r: float
    comp_events: int


@dataclass
class SuiteReport:
    rows: list[ReportRow]

    def render(self, *, include_wallclock: bool = False) -> str:
        """Plain columnar text; wall-clock column is optional because it is
        not reproducible across runs."""
        cols = ["suite", "mode", "sr", "modeled_speedup"]
        if include_wallclock:
            cols.append("wallclock_speedup")
        cols += ["afep", "avg_steps", "avg_r", "comp_events"]
        lines = [" ".join(f"{c:>18}" for c in cols)]
        for r in self.rows:
            vals = [r.suite, r.mode, f"{r.sr:.4f}", f"{r.modeled_speedup:.4f}"]
            if include_wallclock:
                vals.append(f"{r.wallclock_speedup:.4f}")
            vals += [
                f"{r.afep:.4f}",
                f"{r.avg_steps:.2f}",
                f"{r.avg_r:.3f}",
                str(r.comp_events),
            ]
            lines.append(" ".join(f"{v:>18}" for v in vals))
        return "\n".join(lines) + "\n"


def run_one_episode(
    cfg: RunConfig,
    suite_cfg: SuiteConfig,
    mode: str,
    trial: int,
    table: CalibrationTable | None,
) -> EpisodeTrace:
    seed = suite_cfg.seed_base + cfg.seed_offset + trial
    spec = make_task(suite_cfg.kind, seed, cfg.key)
    env = SimEnv(spec, cfg.key, suite=suite_cfg.name, robot=cfg.robot, trial=trial)
    noise = DraftNoiseModel(
        q_err=cfg.noise.q_err,
        max_offset=cfg.noise.max_offset,
        zipf_s=cfg.noise.zipf_s,
        seed=cfg.noise.seed,
    )
    draft = NoisyDrafter(env, noise)
    verify = PlanVerifier(env)
    tstate = None
    if mode == "kerv":
        if table is None:
            raise ConfigError("kerv mode needs a calibration table")
        tstate = threshold_mod.lookup(table, suite_cfg.name, cfg.robot)
    engine_cfg = EngineConfig(
        mode=mode,
        depth=cfg.depth,
        fixed_r=cfg.fixed_r,
        cooldown_n=cfg.comp_n,
        p_source=cfg.p_source,
        kf_pl=cfg.pl,
        ac=cfg.ac,
        kf_params=cfg.kf_params,
        key=cfg.key,
        threshold_state=tstate,
        threshold_mode=cfg.threshold_mode,
    )
    return run_episode(env, draft, verify, engine_cfg)


def run_suite(
    cfg: RunConfig,
    *,
    modes: Sequence[str] | None = None,
    suites: Sequence[str] | None = None,
    trials: int | None = None,
    table: CalibrationTable | None = None,
) -> tuple[SuiteReport, dict[tuple[str, str], list[EpisodeTrace]]]:
    """Run every (suite, mode, trial) episode and aggregate metrics.

    The strict-acceptance baseline is always executed for each suite (even
    when not among the requested modes) because speedups are defined
    against it. Returns the report plus all traces keyed by (suite, mode).
    """
    requested = tuple(modes) if modes is not None else cfg.modes
    for m in requested:
        if m not in MODE_ORDER:
            raise ConfigError(f"unknown mode {m!r}")
    suite_cfgs = list(cfg.suites)
    if suites is not None:
        names = {s.name for s in cfg.suites}
        missing = [s for s in suites if s not in names]
        if missing:
            raise ConfigError(f"unknown suites requested: {missing}")
        suite_cfgs = [s for s in cfg.suites if s.name in set(suites)]

    if "kerv" in requested and table is None:
        if not cfg.table_path:
            raise ConfigError(
                "kerv mode needs a calibration table: set threshold.table or pass one"
            )
        table = CalibrationTable.load(cfg.table_path)

    run_modes = tuple(
        m for m in MODE_ORDER if m == "naive" or m in requested
    )
    all_traces: dict[tuple[str, str], list[EpisodeTrace]] = {}
    wall: dict[tuple[str, str], float] = {}
    for suite_cfg in suite_cfgs:
        n = suite_cfg.trials if trials is None else trials
        for mode in run_modes:
            t0 = time.perf_counter()
            all_traces[(suite_cfg.name, mode)] = [
                run_one_episode(cfg, suite_cfg, mode, trial, table) for trial in range(n)
            ]
            wall[(suite_cfg.name, mode)] = time.perf_counter() - t0

    rows: list[ReportRow] = []
    for suite_cfg in suite_cfgs:
        base = all_traces[(suite_cfg.name, "naive")]
        if not base:
            continue  # zero-trial suite contributes no rows
        base_latency = sum(modeled_latency(t, cfg.cost) for t in base)
        base_wall = wall[(suite_cfg.name, "naive")]
        for mode in MODE_ORDER:
            if mode not in requested:
                continue
            traces = all_traces[(suite_cfg.name, mode)]
            latency = sum(modeled_latency(t, cfg.cost) for t in traces)
            rows.append(
                ReportRow(
                    suite=suite_cfg.name,
                    mode=mode,
                    sr=success_rate(traces),
                    modeled_speedup=base_latency / latency if latency else 0.0,
                    wallclock_speedup=(
                        base_wall / wall[(suite_cfg.name, mode)]
                        if wall[(suite_cfg.name, mode)]
                        else 0.0
                    ),
                    afep=afep(traces),
                    avg_steps=mean_steps(traces),
                    avg_r=mean_r(traces),
                    comp_events=sum(t.comp_events for t in traces),
                )
            )
    report = SuiteReport(rows=rows)
    # keep only requested modes in the returned traces unless the baseline
    # was requested too; callers doing cost checks still see everything
    return report, all_traces


def emit_results(
    report: SuiteReport,
    traces: dict[tuple[str, str], list[EpisodeTrace]],
    out_dir: str | Path,
) -> None:
    """Write the report table, per-episode trace streams, and plot data.

    ``report.txt`` and everything under ``traces/`` and ``plotdata/`` are
    deterministic for fixed seeds; measured timings go to ``wallclock.txt``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "traces").mkdir(exist_ok=True)
        (out / "plotdata").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write results under {out}: {exc}") from exc

    (out / "report.txt").write_text(report.render())
    wall_lines = [f"{'suite':>18} {'mode':>18} {'wallclock_speedup':>18}"]
    for r in report.rows:
        wall_lines.append(f"{r.suite:>18} {r.mode:>18} {r.wallclock_speedup:>18.4f}")
    (out / "wallclock.txt").write_text("\n".join(wall_lines) + "\n")

    for (suite, mode), ts in sorted(traces.items()):
        for t in ts:
            t.save(out / "traces" / f"{suite}_{mode}_{t.trial:04d}.jsonl")

    for (suite, mode), ts in sorted(traces.items()):
        r_lines = ["trial step r"]
        k_lines = ["trial step kvar_step kvar_cum"]
        hist = [0] * N_DOF
        for t in ts:
            for rec in t.slices:
                r_lines.append(f"{t.trial} {rec.step} {rec.r!r}")
                k_lines.append(f"{t.trial} {rec.step} {rec.kvar_step!r} {rec.kvar_cum!r}")
                if rec.first_error_pos < N_DOF:
                    hist[rec.first_error_pos] += 1
        h_lines = ["first_error_pos count"]
        h_lines += [f"{pos + 1} {count}" for pos, count in enumerate(hist)]
        stem = f"{suite}_{mode}"
        (out / "plotdata" / f"r_vs_step_{stem}.txt").write_text("\n".join(r_lines) + "\n")
        (out / "plotdata" / f"kvar_vs_step_{stem}.txt").write_text("\n".join(k_lines) + "\n")
        (out / "plotdata" / f"afep_hist_{stem}.txt").write_text("\n".join(h_lines) + "\n")


SWEEP_PARAMS = ("n", "ac", "pl", "r")


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    suite: str
    sr: float
    modeled_speedup: float
    afep: float
    avg_steps: float
    comp_events: int


def sweep(
    cfg: RunConfig,
    param: str,
    values: Sequence[float],
    *,
    suites: Sequence[str] | None = None,
    trials: int | None = None,
    table: CalibrationTable | None = None,
) -> list[SweepRow]:
    """Hyperparameter sweep: n / ac / pl vary the adaptive mode, r varies the
    static relaxed threshold."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    from dataclasses import replace

    rows: list[SweepRow] = []
    for value in values:
        if param == "n":
            run_cfg = replace(cfg, comp_n=int(value))
            mode = "kerv"
        elif param == "ac":
            run_cfg = replace(cfg, ac=int(value))
            mode = "kerv"
        elif param == "pl":
            run_cfg = replace(cfg, pl=int(value))
            mode = "kerv"
        else:
            run_cfg = replace(cfg, fixed_r=float(value))
            mode = "fixed_relaxed"
        report, _ = run_suite(
            run_cfg, modes=(mode,), suites=suites, trials=trials, table=table
        )
        for r in report.rows:
            rows.append(
                SweepRow(
                    param=param,
                    value=float(value),
                    suite=r.suite,
                    sr=r.sr,
                    modeled_speedup=r.modeled_speedup,
                    afep=r.afep,
                    avg_steps=r.avg_steps,
                    comp_events=r.comp_events,
                )
            )
    return rows


def render_sweep(rows: Sequence[SweepRow]) -> str:
    cols = ("param", "value", "suite", "sr", "modeled_speedup", "afep", "avg_steps", "comp_events")
    lines = [" ".join(f"{c:>16}" for c in cols)]
    for r in rows:
        vals = (
            r.param,
            f"{r.value:g}",
            r.suite,
            f"{r.sr:.4f}",
            f"{r.modeled_speedup:.4f}",
            f"{r.afep:.4f}",
            f"{r.avg_steps:.2f}",
            str(r.comp_events),
        )
        lines.append(" ".join(f"{v:>16}" for v in vals))
    return "\n".join(lines) + "\n"
