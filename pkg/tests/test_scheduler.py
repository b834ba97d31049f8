import numpy as np
import psutil
import pytest

from src.errors import ClockError, CoreBindingError, PlanError, SchedulerBusyError
from src.modem import FskConfig, OfdmConfig, fsk_modulate, ofdm_modulate
import src.scheduler as scheduler
from src.scheduler import (
    CorePool,
    RunMode,
    WorkerState,
    WorkloadTrace,
    available_cores,
    ideal_trace,
    plan_transmission,
    run_schedule,
    run_workload,
    slot_plans,
    validate_trace,
)


def test_plan_half_cycle_and_cycle():
    plan = plan_transmission(4, 8500, 100)
    assert plan.half_cycle_ns == 58_824
    assert plan.cycle_ns() == 117_647


def test_plan_one_hertz():
    assert plan_transmission(1, 1, 2000).half_cycle_ns == 500_000_000


@pytest.mark.parametrize("args", [(4, 0, 100), (0, 8500, 100), (1, 8500, 0), (1, 60_000, 100)])
def test_plan_rejects_bad_input(args):
    with pytest.raises(PlanError):
        plan_transmission(*args)


def test_plan_max_freq_override():
    assert plan_transmission(1, 60_000, 10, max_freq=100_000).frequencies == (60_000.0,)


def test_plan_is_deterministic():
    assert plan_transmission(2, 8500, 100) == plan_transmission(2, 8500, 100)


def test_trace_only_exact_spacing():
    trace = run_workload(plan_transmission(2, 100, 50), RunMode.TRACE_ONLY)
    for core in range(2):
        times = trace.times(core)
        assert times.size == 10
        np.testing.assert_array_equal(np.diff(times), 5_000_000)
        assert trace.events[core][0][1] is WorkerState.BUSY


def test_trace_only_per_core_frequencies():
    plan = plan_transmission(4, 8000, 20, per_core_freq=[8000, 8200, 8400, 8600])
    trace = run_workload(plan)
    spacings = [int(np.median(np.diff(trace.times(i)))) for i in range(4)]
    assert spacings == [62_500, 60_976, 59_524, 58_140]
    assert not plan.lockstep


def test_ideal_trace_cycle_count_and_sync():
    plan = plan_transmission(3, 8500, 1000)
    trace = ideal_trace(plan)
    for i in range(3):
        assert trace.busy_starts(i).size == 8500
    np.testing.assert_array_equal(trace.busy_starts(0), trace.busy_starts(2))


def test_ideal_trace_passes_validation():
    plan = plan_transmission(2, 8500, 100)
    report = validate_trace(ideal_trace(plan), plan)
    assert report.passed
    assert report.skew_ns == 0
    for core in report.cores:
        assert core.jitter_p99_ns == 0
        assert core.duty == pytest.approx(0.5, abs=1e-4)


def test_delayed_edges_fail_validation():
    plan = plan_transmission(1, 8500, 100)
    step = round(1.2 * plan.half_cycle_ns)
    events = [(k * step, WorkerState.BUSY if k % 2 == 0 else WorkerState.IDLE) for k in range(200)]
    report = validate_trace(WorkloadTrace([events]), plan, tolerance=0.10)
    assert not report.passed
    assert not report.cores[0].ok


def test_duty_cycle_in_trace():
    plan = plan_transmission(1, 1000, 10, duty=0.75)
    trace = ideal_trace(plan)
    busy = np.diff(trace.times(0))[0::2]
    assert (busy == 750_000).all()
    report = validate_trace(trace, plan)
    assert report.passed
    assert report.cores[0].duty == pytest.approx(0.75)


def test_trace_rejects_broken_ordering():
    with pytest.raises(ClockError):
        WorkloadTrace([[(10, WorkerState.BUSY), (5, WorkerState.IDLE)]])
    with pytest.raises(ClockError):
        WorkloadTrace([[(1, WorkerState.BUSY), (2, WorkerState.BUSY)]])


def test_trace_frame_columns():
    frame = ideal_trace(plan_transmission(2, 100, 20)).to_frame()
    assert list(frame.columns) == ["core", "t_ns", "state"]
    assert len(frame) == 8


def test_slot_plans_for_ofdm():
    sched = ofdm_modulate("1010" "0000", OfdmConfig((8000, 8200, 8400, 8600)))
    plans = slot_plans(sched)
    plan, cols = plans[0]
    assert cols == (0, 2)
    assert plan.frequencies == (8000.0, 8400.0)
    assert plans[1] == (None, ())


def test_run_schedule_trace_only():
    cfg = FskConfig(100, 200, symbol_time=50, cores=2)
    trace = run_schedule(fsk_modulate("01", cfg))
    starts = trace.busy_starts(0)
    # 5 cycles at 100 Hz, then 10 at 200 Hz starting at 50 ms
    assert starts.size == 15
    assert starts[5] == 50_000_000
    np.testing.assert_array_equal(np.diff(starts[5:]), 5_000_000)


def test_run_schedule_silent_slots_are_pauses():
    sched = ofdm_modulate("1000" "0000" "1000", OfdmConfig((100, 200, 300, 400), symbol_time=50))
    trace = run_schedule(sched)
    starts = trace.busy_starts(0)
    assert starts.size == 10
    assert starts[5] == 100_000_000
    assert trace.busy_starts(1).size == 0


@pytest.mark.hardware
def test_real_single_core_edge_spacing():
    plan = plan_transmission(1, 8500, 1000)
    trace = run_workload(plan, RunMode.REAL)
    report = validate_trace(trace, plan, tolerance=0.10)
    median = np.median(np.diff(trace.times(0)))
    assert abs(median - 58_824) <= 0.1 * 58_824
    assert report.passed


# --- REAL mode plumbing


def test_overlapping_real_runs_are_refused():
    assert scheduler._run_lock.acquire(blocking=False)
    try:
        with pytest.raises(SchedulerBusyError):
            run_workload(plan_transmission(1, 1000, 10), RunMode.REAL)
    finally:
        scheduler._run_lock.release()


def test_unknown_cores_are_listed_in_the_binding_error():
    plan = plan_transmission(2, 1000, 10, core_ids=[10**6, 10**6 + 1])
    with pytest.raises(CoreBindingError) as info:
        run_workload(plan, RunMode.REAL)
    assert set(info.value.failures) == {10**6, 10**6 + 1}
    assert scheduler._run_lock.acquire(blocking=False)
    scheduler._run_lock.release()


def test_too_few_cores_is_a_binding_error(monkeypatch):
    monkeypatch.setattr(scheduler, "available_cores", lambda: [0])
    with pytest.raises(CoreBindingError) as info:
        scheduler._resolve_cores(3, None)
    assert set(info.value.failures) == {1, 2}
    assert scheduler._resolve_cores(1, None) == (0,)
    with pytest.raises(PlanError):
        scheduler._resolve_cores(2, [0])


@pytest.mark.skipif(not hasattr(psutil.Process(), "cpu_affinity"), reason="no CPU affinity on this platform")
def test_dead_worker_is_a_clock_error():
    plan = plan_transmission(1, 1000, 20)
    segment = scheduler._Segment(plan, (0,), 0, plan.duration_ns)
    with CorePool([available_cores()[0]], sync_timeout=0.5) as pool:
        worker = pool._procs[0]
        worker.terminate()
        worker.join(timeout=5.0)
        with pytest.raises(ClockError):
            pool.play([segment])


def _needs_cores(n):
    return pytest.mark.skipif(len(available_cores()) < n, reason=f"needs {n} schedulable cores")


@pytest.mark.hardware
@_needs_cores(4)
def test_real_lockstep_cores_share_edges():
    plan = plan_transmission(4, 1000, 500)
    trace = run_workload(plan, RunMode.REAL)
    report = validate_trace(trace, plan, tolerance=0.15)
    assert report.passed
    assert report.skew_ns is not None and report.skew_ns < plan.half_cycle_ns


@pytest.mark.hardware
@_needs_cores(2)
def test_real_per_core_clocks_keep_their_own_period():
    plan = plan_transmission(2, 1000, 500, per_core_freq=[1000, 1500])
    assert not plan.lockstep
    trace = run_workload(plan, RunMode.REAL)
    for core, period in ((0, 1_000_000), (1, 666_667)):
        spacing = np.median(np.diff(trace.busy_starts(core)))
        assert abs(spacing - period) <= 0.1 * period
    assert validate_trace(trace, plan, tolerance=0.15).passed
