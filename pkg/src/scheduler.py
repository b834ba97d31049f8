from __future__ import annotations

import logging
import math
import multiprocessing as mp
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import psutil

from src.errors import ClockError, CoreBindingError, PlanError, SchedulerBusyError
from src.modem import SymbolSchedule

log = logging.getLogger(__name__)

NANO_PER_SECOND = 1_000_000_000
DEFAULT_MAX_CARRIER_HZ = 50_000.0


class WorkerState(str, Enum):
    BUSY = "BUSY"
    IDLE = "IDLE"


class RunMode(str, Enum):
    REAL = "REAL"
    TRACE_ONLY = "TRACE_ONLY"


@dataclass(frozen=True)
class WorkloadPlan:
    cores: int
    freq: float
    duration: float  # ms
    per_core_freq: Optional[tuple[float, ...]] = None
    duty: float = 0.5
    core_ids: Optional[tuple[int, ...]] = None
    max_freq: float = DEFAULT_MAX_CARRIER_HZ

    def __post_init__(self) -> None:
        if self.cores < 1:
            raise PlanError("cores must be >= 1")
        if self.duration <= 0:
            raise PlanError("duration must be positive")
        if not 0.0 <= self.duty <= 1.0:
            raise PlanError("duty must lie in [0, 1]")
        if self.per_core_freq is not None:
            object.__setattr__(self, "per_core_freq", tuple(float(f) for f in self.per_core_freq))
            if len(self.per_core_freq) != self.cores:
                raise PlanError("per_core_freq needs one entry per core")
        if self.core_ids is not None:
            object.__setattr__(self, "core_ids", tuple(int(c) for c in self.core_ids))
            if len(self.core_ids) != self.cores or len(set(self.core_ids)) != self.cores:
                raise PlanError("core_ids must name one distinct core per worker")
        for f in self.frequencies:
            if not f > 0:
                raise PlanError(f"carrier frequency must be positive, got {f}")
            if f > self.max_freq:
                raise PlanError(f"carrier {f:g} Hz above the maximum toggle rate {self.max_freq:g} Hz")

    @property
    def frequencies(self) -> tuple[float, ...]:
        return self.per_core_freq if self.per_core_freq is not None else (float(self.freq),) * self.cores

    @property
    def lockstep(self) -> bool:
        """True when every core shares one period and can rendezvous at the same edges."""
        return len(set(self.frequencies)) == 1

    def half_period_ns(self, core: int = 0) -> int:
        return round(0.5 * NANO_PER_SECOND / self.frequencies[core])

    def cycle_ns(self, core: int = 0) -> int:
        return round(NANO_PER_SECOND / self.frequencies[core])

    def busy_ns(self, core: int = 0) -> int:
        return round(self.duty * 2 * self.half_period_ns(core))

    def n_cycles(self, core: int = 0) -> int:
        return math.floor(self.duration * self.frequencies[core] / 1000.0 + 1e-9)

    @property
    def half_cycle_ns(self) -> int:
        return self.half_period_ns(0)

    @property
    def duration_ns(self) -> int:
        return round(self.duration * 1_000_000)


def plan_transmission(
    cores: int,
    freq: float,
    duration: float,
    *,
    per_core_freq: Optional[Sequence[float]] = None,
    duty: float = 0.5,
    core_ids: Optional[Sequence[int]] = None,
    max_freq: float = DEFAULT_MAX_CARRIER_HZ,
) -> WorkloadPlan:
    plan = WorkloadPlan(
        cores=cores,
        freq=freq,
        duration=duration,
        per_core_freq=tuple(per_core_freq) if per_core_freq is not None else None,
        duty=duty,
        core_ids=tuple(core_ids) if core_ids is not None else None,
        max_freq=max_freq,
    )
    log.debug("plan: %d cores at %s Hz for %g ms, half cycle %d ns", cores, plan.frequencies, duration, plan.half_cycle_ns)
    return plan


Event = tuple[int, WorkerState]


@dataclass
class WorkloadTrace:
    """Per-core transition events (timestamp ns, state)."""

    events: list[list[Event]]
    core_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        for i, core in enumerate(self.events):
            for (t_prev, s_prev), (t, s) in zip(core, core[1:]):
                if t <= t_prev:
                    raise ClockError(f"core {i}: timestamp {t} after {t_prev}")
                if s == s_prev:
                    raise ClockError(f"core {i}: two {s.value} events in a row at {t}")

    @property
    def n_cores(self) -> int:
        return len(self.events)

    @property
    def is_empty(self) -> bool:
        return not any(self.events)

    def times(self, core: int) -> np.ndarray:
        return np.array([t for t, _ in self.events[core]], dtype=np.int64)

    def busy_starts(self, core: int) -> np.ndarray:
        return np.array([t for t, s in self.events[core] if s is WorkerState.BUSY], dtype=np.int64)

    @property
    def end_ns(self) -> int:
        return max((core[-1][0] for core in self.events if core), default=0)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"core": i, "t_ns": t, "state": s.value}
            for i, core in enumerate(self.events)
            for t, s in core
        ]
        return pd.DataFrame(rows, columns=["core", "t_ns", "state"])


def _clean_events(raw: Sequence[Event]) -> list[Event]:
    # a BUSY/IDLE pair stamped at the same instant carries no span
    out: list[Event] = []
    for t, s in raw:
        if out and t == out[-1][0] and s != out[-1][1]:
            out.pop()
            continue
        if out and t < out[-1][0]:
            raise ClockError(f"clock went backwards: {t} < {out[-1][0]}")
        out.append((t, s))
    return out


def ideal_trace(plan: WorkloadPlan, *, offset_ns: int = 0) -> WorkloadTrace:
    events: list[list[Event]] = []
    for i in range(plan.cores):
        n = plan.n_cycles(i)
        period = 2 * plan.half_period_ns(i)
        busy = plan.busy_ns(i)
        if n == 0 or busy == 0:
            events.append([])
        elif busy >= period:
            events.append([(offset_ns, WorkerState.BUSY), (offset_ns + n * period, WorkerState.IDLE)])
        else:
            core: list[Event] = []
            for start in offset_ns + np.arange(n, dtype=np.int64) * period:
                core.append((int(start), WorkerState.BUSY))
                core.append((int(start) + busy, WorkerState.IDLE))
            events.append(core)
    return WorkloadTrace(events, plan.core_ids or ())


@dataclass(frozen=True)
class CoreTiming:
    core: int
    edges: int
    busy_ns: float  # median
    idle_ns: float  # median
    nominal_busy_ns: int
    nominal_idle_ns: int
    duty: float
    duty_error: float
    jitter_p50_ns: float
    jitter_p95_ns: float
    jitter_p99_ns: float
    ok: bool


@dataclass(frozen=True)
class TimingReport:
    cores: tuple[CoreTiming, ...]
    skew_ns: Optional[float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "passed", bool(self.cores) and all(c.ok for c in self.cores))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.__dict__ for c in self.cores])


def _within(measured: float, nominal: int, tolerance: float) -> bool:
    return not math.isnan(measured) and abs(measured - nominal) <= tolerance * nominal


def _core_timing(core: int, events: Sequence[Event], plan: WorkloadPlan, tolerance: float) -> CoreTiming:
    nominal_busy = plan.busy_ns(core)
    nominal_idle = 2 * plan.half_period_ns(core) - nominal_busy
    times = np.array([t for t, _ in events], dtype=np.int64)
    spans = np.diff(times)
    first_busy = bool(events) and events[0][1] is WorkerState.BUSY
    busy = spans[0::2] if first_busy else spans[1::2]
    idle = spans[1::2] if first_busy else spans[0::2]

    busy_med = float(np.median(busy)) if busy.size else math.nan
    idle_med = float(np.median(idle)) if idle.size else math.nan
    deviations = np.concatenate([np.abs(busy - nominal_busy), np.abs(idle - nominal_idle)]).astype(float)
    p50, p95, p99 = np.percentile(deviations, [50, 95, 99]) if deviations.size else (math.nan,) * 3

    if nominal_busy == 0:
        ok = not events
        duty = 0.0 if not events else math.nan
    elif nominal_idle <= 0:
        ok = busy.size == 1 and _within(busy_med, plan.n_cycles(core) * 2 * plan.half_period_ns(core), tolerance)
        duty = 1.0 if ok else math.nan
    else:
        ok = _within(busy_med, nominal_busy, tolerance) and _within(idle_med, nominal_idle, tolerance)
        duty = busy_med / (busy_med + idle_med) if busy.size and idle.size else math.nan
    return CoreTiming(
        core=core,
        edges=len(events),
        busy_ns=busy_med,
        idle_ns=idle_med,
        nominal_busy_ns=nominal_busy,
        nominal_idle_ns=nominal_idle,
        duty=duty,
        duty_error=duty - plan.duty,
        jitter_p50_ns=float(p50),
        jitter_p95_ns=float(p95),
        jitter_p99_ns=float(p99),
        ok=bool(ok),
    )


def validate_trace(trace: WorkloadTrace, plan: WorkloadPlan, tolerance: float = 0.10) -> TimingReport:
    cores = tuple(
        _core_timing(i, trace.events[i] if i < trace.n_cores else [], plan, tolerance)
        for i in range(plan.cores)
    )

    skew: Optional[float] = None
    if plan.lockstep and trace.n_cores > 1:
        starts = [trace.busy_starts(i) for i in range(trace.n_cores)]
        k = min(s.size for s in starts)
        if k:
            stacked = np.vstack([s[:k] for s in starts])
            skew = float((stacked.max(axis=0) - stacked.min(axis=0)).max())

    report = TimingReport(cores=cores, skew_ns=skew, tolerance=tolerance)
    log.debug("timing report: passed=%s skew=%s", report.passed, skew)
    return report


# --- REAL mode -------------------------------------------------------------

_LOCKSTEP = 0
_CLOCKED = 1
_EXIT = 2

_run_lock = threading.Lock()


def _spin_until(deadline: int) -> None:
    clock = time.monotonic_ns
    while clock() < deadline:
        pass


class _Control:
    """Shared memory and rendezvous points for one worker pool."""

    def __init__(self, ctx, n: int) -> None:
        self.go = ctx.Barrier(n + 1)
        self.lo = ctx.Barrier(n + 1)
        self.hi = ctx.Barrier(n + 1)
        self.mode = ctx.RawValue("i", _LOCKSTEP)
        self.phase = ctx.RawValue("b", 0)
        self.segment_done = ctx.RawValue("b", 0)
        self.t0 = ctx.RawValue("q", 0)
        self.enabled = ctx.RawArray("b", n)
        self.period = ctx.RawArray("q", n)
        self.busy = ctx.RawArray("q", n)
        self.cycles = ctx.RawArray("q", n)

    def abort(self) -> None:
        for barrier in (self.go, self.lo, self.hi):
            barrier.abort()


def _worker(index: int, core_id: int, ctl: _Control, ready, results) -> None:
    try:
        psutil.Process().cpu_affinity([core_id])
    except (psutil.Error, OSError, AttributeError, ValueError) as exc:
        ready.put((index, str(exc) or type(exc).__name__))
        return
    ready.put((index, None))

    clock = time.monotonic_ns
    events: list[Event] = []
    try:
        while True:
            ctl.go.wait()
            mode = ctl.mode.value
            if mode == _EXIT:
                break
            if mode == _LOCKSTEP:
                active = bool(ctl.enabled[index])
                while True:
                    ctl.lo.wait()
                    if ctl.segment_done.value:
                        break
                    if active:
                        events.append((clock(), WorkerState.BUSY))
                        while ctl.phase.value:
                            pass
                        events.append((clock(), WorkerState.IDLE))
                    ctl.hi.wait()
            else:
                t0, period, busy = ctl.t0.value, ctl.period[index], ctl.busy[index]
                for k in range(ctl.cycles[index]):
                    start = t0 + k * period
                    while clock() < start:
                        os.sched_yield()
                    events.append((clock(), WorkerState.BUSY))
                    end = start + busy
                    while clock() < end:
                        pass
                    events.append((clock(), WorkerState.IDLE))
    except threading.BrokenBarrierError:
        pass
    results.put((index, events))


@dataclass(frozen=True)
class _Segment:
    plan: Optional[WorkloadPlan]  # None for a pause
    columns: tuple[int, ...]
    offset_ns: int
    duration_ns: int


class CorePool:
    """Worker processes pinned one per logical core, reused across segments."""

    def __init__(self, core_ids: Sequence[int], *, bind_timeout: float = 10.0, sync_timeout: float = 10.0) -> None:
        self.core_ids = tuple(core_ids)
        self.bind_timeout = bind_timeout
        self.sync_timeout = sync_timeout
        self._ctx = mp.get_context()
        self._ctl: Optional[_Control] = None
        self._procs: list = []
        self._results = None

    def __enter__(self) -> "CorePool":
        n = len(self.core_ids)
        ctx = self._ctx
        self._ctl = _Control(ctx, n)
        ready = ctx.Queue()
        self._results = ctx.Queue()
        for i, core in enumerate(self.core_ids):
            p = ctx.Process(target=_worker, args=(i, core, self._ctl, ready, self._results), daemon=True)
            p.start()
            self._procs.append(p)

        failures: dict[int, str] = {}
        bound: set[int] = set()
        for _ in range(n):
            try:
                index, error = ready.get(timeout=self.bind_timeout)
            except queue.Empty:
                failures.update({c: "no response" for c in self.core_ids if c not in failures and c not in bound})
                break
            if error is not None:
                failures[self.core_ids[index]] = error
            else:
                bound.add(self.core_ids[index])
                log.info("worker %d bound to core %d", index, self.core_ids[index])
        if failures:
            self._shutdown()
            raise CoreBindingError(failures)
        return self

    def __exit__(self, *exc) -> None:
        self._shutdown()

    def _shutdown(self) -> None:
        # a dead sleeper never acknowledges a notify, so abort only a healthy pool
        crashed = bool(self._dead_cores())
        if self._ctl is not None and not crashed:
            self._ctl.abort()
        for p in self._procs:
            if crashed and p.is_alive():
                p.terminate()
            p.join(timeout=1.0)
            if p.is_alive():
                p.terminate()
        self._procs = []

    def _dead_cores(self) -> list[int]:
        return [c for c, p in zip(self.core_ids, self._procs) if not p.is_alive()]

    def _wait(self, barrier, *, check: bool = False) -> None:
        if check and self._dead_cores():
            raise ClockError(f"workers on cores {self._dead_cores()} exited mid-transmission")
        try:
            barrier.wait(self.sync_timeout)
        except threading.BrokenBarrierError as exc:
            raise ClockError(f"worker rendezvous broke; dead cores: {self._dead_cores()}") from exc

    def _lockstep(self, seg: _Segment, t0: int) -> None:
        ctl = self._ctl
        plan = seg.plan
        period = 2 * plan.half_period_ns()
        busy = plan.busy_ns()
        ctl.mode.value = _LOCKSTEP
        ctl.segment_done.value = 0
        ctl.phase.value = 0
        for i in range(len(self.core_ids)):
            ctl.enabled[i] = 1 if i in seg.columns else 0
        self._wait(ctl.go, check=True)

        n = plan.n_cycles()
        if busy >= period:
            n, period, busy = 1, n * period, n * period
        for k in range(n if busy else 0):
            start = t0 + k * period
            _spin_until(start)
            ctl.phase.value = 1
            self._wait(ctl.lo)
            _spin_until(start + busy)
            ctl.phase.value = 0
            self._wait(ctl.hi)
        ctl.segment_done.value = 1
        self._wait(ctl.lo)

    def _clocked(self, seg: _Segment, t0: int) -> None:
        ctl = self._ctl
        plan = seg.plan
        ctl.mode.value = _CLOCKED
        ctl.t0.value = t0
        for i in range(len(self.core_ids)):
            ctl.cycles[i] = 0
        for j, col in enumerate(seg.columns):
            ctl.period[col] = 2 * plan.half_period_ns(j)
            ctl.busy[col] = plan.busy_ns(j)
            ctl.cycles[col] = plan.n_cycles(j) if plan.busy_ns(j) else 0
        self._wait(ctl.go, check=True)

    def play(self, segments: Sequence[_Segment], *, lead_ns: int = 5_000_000) -> WorkloadTrace:
        t_base = time.monotonic_ns() + lead_ns
        for seg in segments:
            t0 = t_base + seg.offset_ns
            if seg.plan is not None:
                if seg.plan.lockstep:
                    self._lockstep(seg, t0)
                else:
                    self._clocked(seg, t0)
            _spin_until(t0 + seg.duration_ns)

        self._ctl.mode.value = _EXIT
        self._wait(self._ctl.go, check=True)
        collected: dict[int, list[Event]] = {}
        for _ in self.core_ids:
            try:
                index, events = self._results.get(timeout=self.sync_timeout)
            except queue.Empty as exc:
                missing = len(self.core_ids) - len(collected)
                raise ClockError(f"{missing} workers never reported a trace; dead cores: {self._dead_cores()}") from exc
            collected[index] = _clean_events(events)
        return WorkloadTrace([collected[i] for i in range(len(self.core_ids))], self.core_ids)


def available_cores() -> list[int]:
    try:
        return sorted(psutil.Process().cpu_affinity())
    except (AttributeError, psutil.Error):
        return list(range(psutil.cpu_count(logical=True) or 1))


def _resolve_cores(wanted: int, core_ids: Optional[Sequence[int]]) -> tuple[int, ...]:
    if core_ids is not None:
        if len(core_ids) != wanted:
            raise PlanError(f"{len(core_ids)} core ids given for {wanted} workers")
        return tuple(core_ids)
    cores = available_cores()
    if len(cores) < wanted:
        missing = {c: "not schedulable" for c in range(len(cores), wanted)}
        raise CoreBindingError(missing, f"need {wanted} cores, host exposes {len(cores)}")
    return tuple(cores[:wanted])


def _run_real(segments: Sequence[_Segment], width: int, core_ids: Optional[Sequence[int]]) -> WorkloadTrace:
    if not _run_lock.acquire(blocking=False):
        raise SchedulerBusyError("another transmission is already running")
    try:
        cores = _resolve_cores(width, core_ids)
        with CorePool(cores) as pool:
            return pool.play(segments)
    finally:
        _run_lock.release()


def run_workload(plan: WorkloadPlan, mode: RunMode = RunMode.TRACE_ONLY) -> WorkloadTrace:
    if RunMode(mode) is RunMode.TRACE_ONLY:
        return ideal_trace(plan)
    seg = _Segment(plan, tuple(range(plan.cores)), 0, plan.duration_ns)
    trace = _run_real([seg], plan.cores, plan.core_ids)
    t0 = min((core[0][0] for core in trace.events if core), default=0)
    log.info("ran %d cores for %g ms, first edge at %d ns", plan.cores, plan.duration, t0)
    return trace


def slot_plans(
    schedule: SymbolSchedule, *, max_freq: float = DEFAULT_MAX_CARRIER_HZ
) -> list[tuple[Optional[WorkloadPlan], tuple[int, ...]]]:
    """One plan per slot over its active columns; silent slots map to (None, ())."""
    out: list[tuple[Optional[WorkloadPlan], tuple[int, ...]]] = []
    mask = schedule.active_mask
    for i in range(len(schedule)):
        cols = tuple(int(c) for c in np.flatnonzero(mask[i]))
        if not cols:
            out.append((None, ()))
            continue
        freqs = schedule.freqs[i, list(cols)]
        duty = float(schedule.duties[i, cols[0]])
        same = bool(np.all(freqs == freqs[0]))
        plan = WorkloadPlan(
            cores=len(cols),
            freq=float(freqs[0]),
            duration=float(schedule.durations_ms[i]),
            per_core_freq=None if same else tuple(float(f) for f in freqs),
            duty=duty,
            max_freq=max_freq,
        )
        out.append((plan, cols))
    return out


def run_schedule(
    schedule: SymbolSchedule,
    mode: RunMode = RunMode.TRACE_ONLY,
    *,
    max_freq: float = DEFAULT_MAX_CARRIER_HZ,
    core_ids: Optional[Sequence[int]] = None,
) -> WorkloadTrace:
    """Transmit a whole schedule, re-planning at every slot boundary."""
    segments: list[_Segment] = []
    offset = 0
    for (plan, cols), dur_ms in zip(slot_plans(schedule, max_freq=max_freq), schedule.durations_ms):
        dur_ns = round(float(dur_ms) * 1_000_000)
        segments.append(_Segment(plan, cols, offset, dur_ns))
        offset += dur_ns

    if RunMode(mode) is RunMode.REAL:
        return _run_real(segments, schedule.cores, core_ids)

    events: list[list[Event]] = [[] for _ in range(schedule.cores)]
    for seg in segments:
        if seg.plan is None:
            continue
        part = ideal_trace(seg.plan, offset_ns=seg.offset_ns)
        for j, col in enumerate(seg.columns):
            core = events[col]
            for t, s in part.events[j]:
                # back-to-back BUSY spans across a slot boundary merge
                if core and s is WorkerState.BUSY and core[-1] == (t, WorkerState.IDLE):
                    core.pop()
                    continue
                core.append((t, s))
    return WorkloadTrace(events, tuple(core_ids) if core_ids is not None else ())
