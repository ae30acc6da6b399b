"""Host task API and the two-level operation/instruction scheduler.

Applications enqueue *tasks*: plain Python callables that call
:meth:`Runtime.invoke_operator` one or more times. Operators inside a task run
in program order; different tasks may interleave. Each operator call is
recorded in the operation queue (OPQ), lowered by the Tensorizer, and its
instructions enter the instruction queue (IQ), where :func:`schedule` assigns
them to devices.

Scheduling rule: instructions that share a model operand, quantization flags
and task id stay on one device so the model is transferred once; everything
else goes first-come-first-serve to the device that frees up first (lowest
index on ties). Device choice is made on the simulated clock, which keeps
placement deterministic no matter how Python threads interleave.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
from collections import Counter, OrderedDict
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .config import RuntimeConfig
from .device import Device, DeviceProfile
from .errors import (
    BufferAliasError,
    InvalidInputError,
    InvalidShapeError,
    TaskFailedError,
    UsageError,
)
from .ops import OpDescriptor, op
from .oracle import oracle_execute
from .tensor import HostTensor, TensorShape
from .tensorizer import InstructionProgram, QuantFlags, TileInstruction, lower, run_on_device

TASK_STATES = ("pending", "running", "done", "failed")


# -- buffers -----------------------------------------------------------------


def alloc_dimension(rows: int, cols: int) -> TensorShape:
    return TensorShape(rows, cols)


class Buffer:
    """A registered host buffer.

    Buffers created without data are outputs: writable once per operator by
    the aggregation step, readable after that.
    """

    def __init__(self, buffer_id: int, shape: TensorShape, data: Optional[HostTensor] = None):
        self.id = buffer_id
        self.shape = shape
        self.writable = data is None
        self._data = data
        self._lock = threading.Lock()

    @property
    def written(self) -> bool:
        return self._data is not None

    def read(self) -> HostTensor:
        with self._lock:
            if self._data is None:
                raise UsageError(f"buffer {self.id} has not been written yet")
            return self._data

    def numpy(self) -> np.ndarray:
        return self.read().numpy()

    def _write(self, t: HostTensor) -> None:
        if t.shape != self.shape:
            raise InvalidShapeError(f"buffer {self.id} is {self.shape}, result is {t.shape}")
        with self._lock:
            self._data = t

    def __repr__(self):
        return f"Buffer({self.id}, {self.shape}, {'out' if self.writable else 'in'})"


def _check_data(dim: TensorShape, data) -> HostTensor:
    if isinstance(data, HostTensor):
        t = data
    else:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 2 and arr.shape != dim.as_tuple():
            raise InvalidInputError(f"data of shape {arr.shape} does not match {dim}")
        t = HostTensor(arr, dim)
    if t.shape != dim:
        raise InvalidInputError(f"data of shape {t.shape} does not match {dim}")
    return t


# -- queue records -----------------------------------------------------------


@dataclass(frozen=True)
class OpqEntry:
    task_id: int
    op: OpDescriptor
    inputs: tuple
    output: int
    flags: QuantFlags

    @property
    def kind(self) -> str:
        return self.op.kind


@dataclass(eq=False)
class IqEntry:
    task_id: int
    seq: int
    instruction: TileInstruction
    affinity: Optional[tuple] = None
    device: Optional[int] = None
    sim_start: float = 0.0
    sim_finish: float = 0.0

    @property
    def kind(self) -> str:
        return self.instruction.op.kind

    @property
    def coords(self) -> tuple:
        return self.instruction.coords

    @property
    def operand_sizes(self) -> tuple:
        return tuple((o.key, o.block.nbytes) for o in self.instruction.operands)


class TaskHandle:
    """Completion state of one enqueued task; states only move forward."""

    def __init__(self, task_id: int):
        self.task_id = task_id
        self._state = "pending"
        self.error: Optional[BaseException] = None
        self.result: Any = None
        self._event = threading.Event()
        self._lock = threading.Lock()

    @property
    def state(self) -> str:
        return self._state

    def _advance(self, new: str) -> None:
        with self._lock:
            if TASK_STATES.index(new) <= TASK_STATES.index(self._state) or self._state in ("done", "failed"):
                raise UsageError(f"task {self.task_id}: illegal transition {self._state} -> {new}")
            self._state = new
        if new in ("done", "failed"):
            self._event.set()

    def done(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: Optional[float] = None) -> bool:
        return self._event.wait(timeout)

    def __repr__(self):
        return f"TaskHandle({self.task_id}, {self._state})"


# -- scheduling --------------------------------------------------------------


class SchedulerState:
    """Simulated per-device availability, affinity pins and block residency."""

    def __init__(self, n_devices: int, profile: Optional[DeviceProfile] = None):
        if n_devices < 1:
            raise InvalidInputError("need at least one device")
        self.n = n_devices
        self.profile = profile or DeviceProfile()
        self.ready_us = [0.0] * n_devices
        self.affinity: dict = {}
        self.resident = [OrderedDict() for _ in range(n_devices)]
        self.used = [0] * n_devices
        self.loads: Counter = Counter()

    def _touch(self, d: int, key: str, nbytes: int, pinned) -> float:
        res = self.resident[d]
        if key in res:
            res.move_to_end(key)
            return 0.0
        cap = self.profile.onchip_memory_bytes
        for victim in list(res):
            if self.used[d] + nbytes <= cap:
                break
            if victim not in pinned:
                self.used[d] -= res.pop(victim)
        res[key] = nbytes
        self.used[d] += nbytes
        self.loads[(d, key)] += 1
        return self.profile.transfer_us(nbytes)

    def place(self, d: int, kind: str, operands: Sequence[tuple], release_us: float) -> tuple[float, float]:
        start = max(self.ready_us[d], release_us)
        keys = {k for k, _ in operands}
        cost = sum(self._touch(d, k, nb, keys) for k, nb in operands)
        cost += self.profile.exec_us(kind)
        self.ready_us[d] = start + cost
        return start, start + cost

    def pick(self, affinity) -> int:
        if affinity is not None and affinity in self.affinity:
            return self.affinity[affinity]
        d = min(range(self.n), key=lambda i: (self.ready_us[i], i))
        if affinity is not None:
            self.affinity[affinity] = d
        return d


def schedule(iq: Sequence[IqEntry], n_devices: int, state: Optional[SchedulerState] = None, release_us: float = 0.0) -> list[int]:
    """Assign each IQ entry to a device, in queue order.

    Entries with an affinity key already pinned go to that device even if it
    is busy; the rest go to the earliest-free device. Updates ``state`` and
    each entry's ``device``/``sim_start``/``sim_finish``.
    """
    state = state or SchedulerState(n_devices)
    if state.n != n_devices:
        raise InvalidInputError(f"state tracks {state.n} devices, asked for {n_devices}")
    out = []
    for e in iq:
        d = state.pick(e.affinity)
        e.device = d
        e.sim_start, e.sim_finish = state.place(d, e.kind, e.operand_sizes, release_us)
        out.append(d)
    return out


# -- traces and makespan replay ----------------------------------------------


@dataclass(frozen=True)
class TraceInstr:
    kind: str
    operands: tuple
    affinity: Optional[tuple]


@dataclass
class TraceTask:
    task_id: int
    # the task may start once every task joined before its enqueue has finished
    joined_before: int
    invokes: list = field(default_factory=list)


@dataclass
class Trace:
    tasks: list
    joined: list

    def instruction_counts(self) -> Counter:
        return Counter(i.kind for t in self.tasks for inv in t.invokes for i in inv)


@dataclass(frozen=True)
class SimResult:
    makespan_us: float
    busy_us: tuple
    loads: dict


def simulate_makespan(trace: Trace, n_devices: int, profile: Optional[DeviceProfile] = None) -> SimResult:
    """Replay a recorded trace on ``n_devices`` simulated devices."""
    state = SchedulerState(n_devices, profile)
    finish: dict = {}
    busy = [0.0] * n_devices
    heap: list = []
    counter = itertools.count()
    released = [False] * len(trace.tasks)
    joined = trace.joined

    def release():
        for idx, t in enumerate(trace.tasks):
            if released[idx]:
                continue
            deps = joined[: t.joined_before]
            if all(d in finish for d in deps):
                released[idx] = True
                at = max((finish[d] for d in deps), default=0.0)
                heapq.heappush(heap, (at, next(counter), idx, 0))

    release()
    while heap:
        at, _, idx, inv = heapq.heappop(heap)
        task = trace.tasks[idx]
        end = at
        if inv < len(task.invokes):
            for ins in task.invokes[inv]:
                d = state.pick(ins.affinity)
                s, f = state.place(d, ins.kind, ins.operands, at)
                busy[d] += f - s
                end = max(end, f)
        if inv + 1 < len(task.invokes):
            heapq.heappush(heap, (end, next(counter), idx, inv + 1))
        else:
            finish[task.task_id] = end
            release()
    if not all(released):
        raise InvalidInputError("trace has tasks whose dependencies never finish")
    return SimResult(max(finish.values(), default=0.0), tuple(busy), dict(state.loads))


# -- runtime -----------------------------------------------------------------


@dataclass(frozen=True)
class ExecRecord:
    task_id: int
    seq: int
    kind: str
    device: int
    coords: tuple


class Runtime:
    """Multi-device runtime exposing the task API.

    Use as a context manager, or call :meth:`close` when done.
    """

    def __init__(self, config: Optional[RuntimeConfig] = None, **overrides):
        cfg = (config or RuntimeConfig()).with_overrides(**overrides)
        self.config = cfg
        self.profile = cfg.profile
        self.devices = [Device(cfg.profile, i, cfg.strict) for i in range(cfg.devices)]
        self._lock = threading.RLock()
        self._local = threading.local()
        self._pool = ThreadPoolExecutor(cfg.task_workers, thread_name_prefix="gptpu-task")
        self._queues = [queue.Queue() for _ in self.devices]
        self._workers = [
            threading.Thread(target=self._device_loop, args=(i,), name=f"gptpu-dev{i}", daemon=True)
            for i in range(cfg.devices)
        ]
        for w in self._workers:
            w.start()
        self._tasks: dict[int, TaskHandle] = {}
        self._task_args: dict[int, tuple] = {}
        self._ids = itertools.count()
        self._buffer_ids = itertools.count()
        self._seq = itertools.count()
        self._sched = SchedulerState(cfg.devices, cfg.profile)
        self._task_time: dict[int, float] = {}
        self.opq: list[OpqEntry] = []
        self.exec_log: list[ExecRecord] = []
        self.clamped_inputs = 0
        self._trace_tasks: dict[int, TraceTask] = {}
        self._joined: list[int] = []
        self._joined_set: set = set()
        self._closed = False

    # -- lifecycle

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._pool.shutdown(wait=True)
        for q in self._queues:
            q.put(None)
        for w in self._workers:
            w.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- buffers

    alloc_dimension = staticmethod(alloc_dimension)

    def create_buffer(self, dim: TensorShape, data=None) -> Buffer:
        if not isinstance(dim, TensorShape):
            dim = TensorShape(*dim)
        t = None if data is None else _check_data(dim, data)
        return Buffer(next(self._buffer_ids), dim, t)

    def buffer(self, data) -> Buffer:
        """Shorthand: an input buffer holding ``data``."""
        t = data if isinstance(data, HostTensor) else HostTensor(data)
        return self.create_buffer(t.shape, t)

    def empty(self, rows: int, cols: int) -> Buffer:
        return self.create_buffer(alloc_dimension(rows, cols))

    # -- tasks

    def enqueue(self, kernel: Callable, *args, **kwargs) -> TaskHandle:
        if self._closed:
            raise UsageError("runtime is closed")
        if not callable(kernel):
            raise InvalidInputError("kernel must be callable")
        bufs = [a for a in itertools.chain(args, kwargs.values()) if isinstance(a, Buffer)]
        with self._lock:
            self._check_alias(bufs)
            tid = next(self._ids)
            h = TaskHandle(tid)
            self._tasks[tid] = h
            self._task_args[tid] = tuple(bufs)
            self._task_time[tid] = 0.0
            self._trace_tasks[tid] = TraceTask(tid, len(self._joined))
        self._pool.submit(self._run_task, h, kernel, args, kwargs)
        return h

    def _check_alias(self, bufs) -> None:
        for b in bufs:
            if not b.writable:
                continue
            for tid, others in self._task_args.items():
                if not self._tasks[tid].done() and any(o is b for o in others):
                    raise BufferAliasError(f"buffer {b.id} is an output referenced by pending task {tid}")

    def _run_task(self, h: TaskHandle, kernel, args, kwargs) -> None:
        self._local.task = h.task_id
        h._advance("running")
        try:
            h.result = kernel(*args, **kwargs)
        except BaseException as e:  # noqa: BLE001 - recorded on the handle
            h.error = e
            h._advance("failed")
        else:
            h._advance("done")
        finally:
            self._local.task = None
            with self._lock:
                self._task_args.pop(h.task_id, None)

    def current_task(self) -> Optional[int]:
        return getattr(self._local, "task", None)

    def _join(self, tids) -> None:
        with self._lock:
            for t in sorted(tids):
                if t not in self._joined_set:
                    self._joined_set.add(t)
                    self._joined.append(t)

    def wait(self, task_id) -> TaskHandle:
        if isinstance(task_id, TaskHandle):
            task_id = task_id.task_id
        h = self._tasks.get(task_id)
        if h is None:
            raise InvalidInputError(f"unknown task id {task_id}")
        if self.current_task() is not None:
            raise UsageError("wait() inside a task would deadlock")
        h.wait()
        self._join([task_id])
        if h.state == "failed":
            raise TaskFailedError(f"task {task_id} failed: {h.error!r}") from h.error
        return h

    def sync(self, raise_on_failure: bool = True) -> list[TaskHandle]:
        """Block until every enqueued task has finished; returns failed handles."""
        if self.current_task() is not None:
            raise UsageError("sync() inside a task would deadlock")
        while True:
            with self._lock:
                pending = [h for h in self._tasks.values() if not h.done()]
            if not pending:
                break
            for h in pending:
                h.wait()
        with self._lock:
            handles = list(self._tasks.values())
        self._join([h.task_id for h in handles])
        failed = [h for h in handles if h.state == "failed"]
        if failed and raise_on_failure:
            raise TaskFailedError(f"{len(failed)} task(s) failed; first: {failed[0].error!r}") from failed[0].error
        return failed

    # -- operators

    def invoke_operator(self, kind, flags=None, inputs: Sequence = (), output: Optional[Buffer] = None, **params) -> HostTensor:
        """Run one operator inside the calling task and write ``output``.

        Blocks the task until every instruction has executed and the host
        aggregation has landed in the output buffer.
        """
        tid = self.current_task()
        if tid is None:
            raise UsageError("invoke_operator must be called from inside an enqueued task")
        desc = kind if isinstance(kind, OpDescriptor) else op(kind, **params)
        if flags is None:
            flags = QuantFlags(self.config.scaling)
        elif isinstance(flags, dict):
            flags = QuantFlags(**{"method": self.config.scaling, **flags})
        arrays = [b.read() if isinstance(b, Buffer) else HostTensor(b) for b in inputs]
        if output is not None and not output.writable:
            raise UsageError(f"buffer {output.id} holds input data and cannot be an output")
        program = lower(desc, arrays, flags, self.profile)
        if output is not None and program.output_shape != output.shape:
            raise InvalidShapeError(f"{desc.kind} produces {program.output_shape}, output buffer is {output.shape}")
        result = self._dispatch(tid, desc, flags, program, inputs, output)
        if output is not None:
            output._write(result)
        return result

    def _dispatch(self, tid, desc, flags, program: InstructionProgram, inputs, output) -> HostTensor:
        entries = []
        with self._lock:
            self.opq.append(
                OpqEntry(tid, desc, tuple(getattr(b, "id", -1) for b in inputs), getattr(output, "id", -1), flags)
            )
            self.clamped_inputs += program.clamped
            for ins in program.instructions:
                aff = (tid, flags, ins.shared_key) if ins.shared_key is not None else None
                entries.append(IqEntry(tid, next(self._seq), ins, aff))
            schedule(entries, len(self.devices), self._sched, self._task_time[tid])
            if entries:
                self._task_time[tid] = max(e.sim_finish for e in entries)
            self._trace_tasks[tid].invokes.append(
                [TraceInstr(e.kind, e.operand_sizes, e.affinity) for e in entries]
            )
        futures = []
        for e in entries:
            f: Future = Future()
            self._queues[e.device].put((e, f))
            futures.append(f)
        results = []
        err = None
        for f in futures:
            try:
                results.append(f.result())
            except BaseException as e:  # noqa: BLE001 - collected, then re-raised once
                err = err or e
        if err is not None:
            raise TaskFailedError(f"task {tid}: {desc.kind} failed on a device: {err}") from err
        return program.assemble(results)

    def _device_loop(self, d: int) -> None:
        dev = self.devices[d]
        q = self._queues[d]
        oracle_mode = self.config.mode == "oracle-replay"
        while True:
            item = q.get()
            if item is None:
                return
            entry, fut = item
            try:
                ins = entry.instruction
                if oracle_mode:
                    keys = [o.key for o in ins.operands]
                    for o in ins.operands:
                        dev.ensure_loaded(o.key, o.block, pinned=keys)
                    res = oracle_execute(ins.op, [o.real for o in ins.operands]).data
                    dev.charge(ins.op.kind)
                else:
                    res = run_on_device(ins, dev).dequantize()
                with self._lock:
                    self.exec_log.append(ExecRecord(entry.task_id, entry.seq, entry.kind, d, entry.coords))
                fut.set_result(res)
            except BaseException as e:  # noqa: BLE001 - delivered to the waiting task
                fut.set_exception(e)

    # -- convenience

    def run(self, kind, inputs: Sequence, flags=None, **params) -> HostTensor:
        """Run a single operator as its own task and wait for it."""
        bufs = [b if isinstance(b, Buffer) else self.buffer(b) for b in inputs]
        out: dict = {}

        def task():
            out["r"] = self.invoke_operator(kind, flags, bufs, None, **params)

        self.wait(self.enqueue(task))
        return out["r"]

    # -- introspection

    def trace(self) -> Trace:
        with self._lock:
            tasks = [self._trace_tasks[t] for t in sorted(self._trace_tasks)]
            return Trace(
                [TraceTask(t.task_id, t.joined_before, [list(i) for i in t.invokes]) for t in tasks],
                list(self._joined),
            )

    def makespan(self, n_devices: Optional[int] = None) -> float:
        return simulate_makespan(self.trace(), n_devices or len(self.devices), self.profile).makespan_us

    def instruction_counts(self) -> dict:
        with self._lock:
            return dict(sorted(Counter(r.kind for r in self.exec_log).items()))

    @property
    def saturation_events(self) -> int:
        return sum(d.saturation_events for d in self.devices)

    @property
    def overflow_events(self) -> int:
        return sum(d.overflow_events for d in self.devices)

    def load_count(self, device: int, key: str) -> int:
        return self.devices[device].load_count(key)
