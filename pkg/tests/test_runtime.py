import threading

import numpy as np
import pytest

from gptpu import QuantFlags, op
from gptpu.errors import BufferAliasError, InvalidInputError, InvalidShapeError, TaskFailedError, UsageError
from gptpu.runtime import (
    IqEntry,
    Runtime,
    SchedulerState,
    Trace,
    TraceInstr,
    TraceTask,
    alloc_dimension,
    schedule,
    simulate_makespan,
)
from gptpu.tensorizer import lower


def test_alloc_dimension():
    assert alloc_dimension(2, 3).as_tuple() == (2, 3)
    assert alloc_dimension(1, 1).size == 1
    with pytest.raises(InvalidInputError):
        alloc_dimension(0, 5)


def test_create_buffer(runtime):
    b = runtime.create_buffer(alloc_dimension(2, 2), [[1, 2], [3, 4]])
    assert not b.writable and b.numpy()[1, 0] == 3
    with pytest.raises(InvalidInputError):
        runtime.create_buffer(alloc_dimension(2, 2), [1, 2, 3])
    out = runtime.create_buffer(alloc_dimension(2, 2))
    assert out.writable and not out.written
    with pytest.raises(UsageError):
        out.read()


def test_add_task_matches_oracle(runtime, rng):
    a, b = rng.uniform(0, 1, (128, 128)), rng.uniform(0, 1, (128, 128))
    out = runtime.empty(128, 128)
    ba, bb = runtime.buffer(a), runtime.buffer(b)
    h = runtime.enqueue(lambda: runtime.invoke_operator("add", None, [ba, bb], out))
    runtime.wait(h)
    assert h.state == "done"
    assert np.abs(out.numpy() - (a + b)).max() <= 2 / 255 + 2 / 255


def test_invoke_outside_task(runtime):
    with pytest.raises(UsageError):
        runtime.invoke_operator("add", None, [np.ones((2, 2)), np.ones((2, 2))])


def test_two_invokes_in_one_task_are_ordered(runtime):
    x = runtime.buffer(np.full((4, 4), 2.0))
    mid, out = runtime.empty(4, 4), runtime.empty(4, 4)

    def task():
        runtime.invoke_operator("add", None, [x, x], mid)
        runtime.invoke_operator("mul", None, [mid, x], out)

    runtime.wait(runtime.enqueue(task))
    np.testing.assert_allclose(out.numpy(), 8.0, atol=0.1)


def test_independent_tasks_and_sync(runtime, rng):
    outs = []
    for _ in range(2):
        a = runtime.buffer(rng.uniform(0, 4, (64, 64)))
        o = runtime.empty(64, 64)
        outs.append(o)
        runtime.enqueue(lambda a=a, o=o: runtime.invoke_operator("gemm", None, [a, a], o))
    assert runtime.sync() == []
    assert all(o.written for o in outs)


def test_hundred_noop_tasks_distinct_ids(runtime):
    ids = {runtime.enqueue(lambda: None).task_id for _ in range(100)}
    runtime.sync()
    assert len(ids) == 100


def test_sync_empty_and_wait_unknown():
    with Runtime() as rt:
        assert rt.sync() == []
        with pytest.raises(InvalidInputError):
            rt.wait(12345)


def test_wait_then_read(runtime):
    out = runtime.empty(2, 2)
    x = runtime.buffer(np.eye(2))
    h = runtime.enqueue(lambda: runtime.invoke_operator("relu", None, [x], out))
    runtime.wait(h.task_id)
    np.testing.assert_allclose(out.numpy(), np.eye(2), atol=1 / 255)


def test_states_only_move_forward(runtime):
    h = runtime.enqueue(lambda: None)
    runtime.wait(h)
    with pytest.raises(UsageError):
        h._advance("running")


def test_failed_task_does_not_stop_others():
    with Runtime(devices=2) as rt:
        x = rt.buffer(np.ones((2, 2)))
        good_out = rt.empty(2, 2)
        hb = rt.enqueue(lambda: rt.invoke_operator("fft", None, [x], rt.empty(2, 2)))
        hg = rt.enqueue(lambda: rt.invoke_operator("relu", None, [x], good_out))
        with pytest.raises(TaskFailedError):
            rt.wait(hb)
        rt.wait(hg)
        assert hb.state == "failed" and hg.state == "done"
        with pytest.raises(TaskFailedError):
            rt.sync()
        assert len(rt.sync(raise_on_failure=False)) == 1


def test_declared_ranges_clamp_inputs_without_saturation():
    with Runtime(strict=True) as rt:
        x = rt.buffer(np.full((2, 2), 5.0))
        out = rt.empty(2, 2)
        h = rt.enqueue(lambda: rt.invoke_operator("add", {"ranges": ((0, 1), (0, 1))}, [x, x], out))
        rt.wait(h)
        assert rt.clamped_inputs == 8 and rt.saturation_events == 0
        np.testing.assert_allclose(out.numpy(), 2.0, atol=2 / 255)


def test_output_must_be_writable_and_shaped(runtime):
    x = runtime.buffer(np.ones((2, 2)))
    h = runtime.enqueue(lambda: runtime.invoke_operator("add", None, [x, x], x))
    with pytest.raises(TaskFailedError) as e:
        runtime.wait(h)
    assert isinstance(e.value.__cause__, UsageError)
    h = runtime.enqueue(lambda: runtime.invoke_operator("add", None, [x, x], runtime.empty(3, 3)))
    with pytest.raises(TaskFailedError) as e:
        runtime.wait(h)
    assert isinstance(e.value.__cause__, InvalidShapeError)


def test_alias_of_pending_output_rejected(runtime):
    gate = threading.Event()
    out = runtime.empty(2, 2)
    h = runtime.enqueue(lambda o: gate.wait(), out)
    with pytest.raises(BufferAliasError):
        runtime.enqueue(lambda o: None, out)
    gate.set()
    runtime.wait(h)
    runtime.wait(runtime.enqueue(lambda o: None, out))


def test_wait_inside_task_is_usage_error(runtime):
    h = runtime.enqueue(lambda: runtime.wait(0))
    with pytest.raises(TaskFailedError):
        runtime.wait(h)


def test_affinity_loads_shared_block_once():
    with Runtime(devices=4) as rt:
        a, b = rt.buffer(np.random.default_rng(0).uniform(0, 1, (512, 128))), rt.buffer(np.eye(128))
        out = rt.empty(512, 128)
        rt.wait(rt.enqueue(lambda: rt.invoke_operator("gemm", None, [a, b], out)))
        log = rt.exec_log
        assert len(log) == 4 and len({r.device for r in log}) == 1
        prog = lower(op("gemm"), [a.read(), b.read()])
        key = prog.instructions[0].shared_key
        assert all(ins.shared_key == key for ins in prog.instructions)
        assert rt.load_count(log[0].device, key) == 1


def test_fcfs_spreads_independent_instructions():
    prog = lower(op("add"), [np.ones((256, 512)), np.ones((256, 512))])
    iq = [IqEntry(0, i, ins) for i, ins in enumerate(prog.instructions)]
    assert schedule(iq, 8) == list(range(8))


def test_single_device_is_fifo():
    prog = lower(op("relu"), [np.arange(4 * 128 * 128.0).reshape(512, 128)])
    iq = [IqEntry(0, i, ins) for i, ins in enumerate(prog.instructions)]
    schedule(iq, 1)
    starts = [e.sim_start for e in iq]
    assert starts == sorted(starts) and starts[0] < starts[-1]


def test_affinity_pins_even_when_busy():
    st = SchedulerState(2)
    key = (0, QuantFlags(), "k")
    assert st.pick(key) == 0
    st.ready_us[0] = 1e9
    assert st.pick(key) == 0
    assert st.pick(None) == 1


def _independent_trace(n, kind="add"):
    tasks = [TraceTask(i, 0, [[TraceInstr(kind, ((f"in{i}", 16384), (f"w{i}", 16384)), None)]]) for i in range(n)]
    return Trace(tasks, list(range(n)))


@pytest.mark.parametrize("d", [2, 4, 8])
def test_makespan_scales_near_linearly(d):
    tr = _independent_trace(256)
    ratio = simulate_makespan(tr, 1).makespan_us / simulate_makespan(tr, d).makespan_us
    assert ratio >= 0.9 * d


def test_trace_release_respects_joins():
    # task 1 was enqueued after task 0 was joined, so it cannot overlap it
    ins = [[TraceInstr("add", (("x", 100),), None)]]
    tr = Trace([TraceTask(0, 0, ins), TraceTask(1, 1, ins)], [0, 1])
    res = simulate_makespan(tr, 2)
    one = simulate_makespan(Trace([TraceTask(0, 0, ins)], [0]), 2).makespan_us
    assert res.makespan_us > one


def test_every_instruction_executes_once(rng):
    with Runtime(devices=3) as rt:
        outs = []
        for _ in range(5):
            a = rt.buffer(rng.uniform(0, 1, (300, 300)))
            o = rt.empty(300, 300)
            outs.append(o)
            rt.enqueue(lambda a=a, o=o: rt.invoke_operator("sub", None, [a, a], o))
        rt.sync()
        seqs = [r.seq for r in rt.exec_log]
        assert len(seqs) == len(set(seqs)) == 5 * 9
        assert rt.instruction_counts() == {"sub": 45}
        assert sum(rt.trace().instruction_counts().values()) == 45


def test_oracle_replay_mode_is_exact(rng):
    a, b = rng.uniform(-3, 3, (200, 150)), rng.uniform(-3, 3, (150, 90))
    with Runtime(mode="oracle-replay", devices=2) as rt:
        got = rt.run("gemm", [a, b]).data
    assert np.abs(got - a @ b).max() <= 1e-9 * np.abs(a @ b).max()


def test_run_convenience_and_close():
    rt = Runtime()
    assert rt.run("max", [[[1.0, 5.0], [3.0, 2.0]]]).data[0, 0] == pytest.approx(5.0, abs=5 / 255)
    rt.close()
    with pytest.raises(UsageError):
        rt.enqueue(lambda: None)


def test_strict_saturation_fails_the_task(monkeypatch):
    import dataclasses

    import gptpu.runtime as rtmod

    real_lower = rtmod.lower

    def too_fine(*args, **kw):
        prog = real_lower(*args, **kw)
        ins = tuple(dataclasses.replace(i, out_quant=(1000.0, 0)) for i in prog.instructions)
        return dataclasses.replace(prog, instructions=ins)

    monkeypatch.setattr(rtmod, "lower", too_fine)
    for strict in (True, False):
        with Runtime(strict=strict) as rt:
            x = rt.buffer(np.ones((2, 2)))
            h = rt.enqueue(lambda: rt.invoke_operator("add", None, [x, x], rt.empty(2, 2)))
            if strict:
                with pytest.raises(TaskFailedError):
                    rt.wait(h)
            else:
                rt.wait(h)
                assert rt.saturation_events == 4
