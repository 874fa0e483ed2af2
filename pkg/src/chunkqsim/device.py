"""Bounded-memory execution device.

`Device` is the backend interface the pipeline drives. `ReferenceDevice` runs
in-process: a single command thread executes gather / apply / scatter
commands in submission order against a device-owned buffer whose size is
checked against the configured memory limit. Transfer strategies do real
memory movement, so their per-command overheads are measurable.
"""
from __future__ import annotations

import enum
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import GateSequence, apply_all, compile_gates
from .planner import Batch

# Below this many groups per worker a gate runs as a single range.
MIN_GROUPS_PER_WORKER = 1 << 14


class Strategy(str, enum.Enum):
    SYNCHRONOUS = "synchronous"
    PER_ELEMENT = "per_element"
    BUFFERED = "buffered"

    @classmethod
    def parse(cls, s: "str | Strategy") -> "Strategy":
        if isinstance(s, Strategy):
            return s
        key = s.strip().lower().replace("-", "_")
        aliases = {"sync": "synchronous", "async": "per_element", "element": "per_element", "buffer": "buffered"}
        return cls(aliases.get(key, key))


class DeviceError(RuntimeError):
    pass


class DeviceMemoryError(DeviceError):
    pass


@dataclass
class DeviceConfig:
    memory_limit_bytes: int = 1 << 30
    kernel_worker_count: int = field(default_factory=lambda: os.cpu_count() or 1)
    strategy: Strategy = Strategy.BUFFERED

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.kernel_worker_count < 1:
            raise ValueError("kernel_worker_count must be >= 1")
        if self.memory_limit_bytes < 16:
            raise ValueError("memory_limit_bytes too small")

    def required_bytes(self, amplitudes: int) -> int:
        """Device bytes needed to hold one batch of `amplitudes` under this strategy."""
        staging = amplitudes * 16 if self.strategy is Strategy.BUFFERED else 0
        return amplitudes * 16 + staging


@dataclass
class TransferStats:
    h2d_seconds: float = 0.0
    d2h_seconds: float = 0.0
    h2d_op_count: int = 0
    d2h_op_count: int = 0
    bytes_moved: int = 0
    kernel_seconds: float = 0.0
    kernel_op_count: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


class CommandHandle:
    """Completion token for one queued device command."""

    __slots__ = ("seq", "name", "status", "error", "value", "_latch", "_callbacks", "_lock")

    PENDING, DONE, FAILED = "pending", "done", "failed"

    def __init__(self, seq: int, name: str):
        self.seq = seq
        self.name = name
        self.status = self.PENDING
        self.error: BaseException | None = None
        self.value = None
        # held until completion; waiters acquire and immediately release it
        self._latch = threading.Lock()
        self._latch.acquire()
        self._callbacks = []
        self._lock = threading.Lock()

    def done(self) -> bool:
        return self.status != self.PENDING

    def _finish(self, status: str, value=None, error: BaseException | None = None):
        with self._lock:
            self.value, self.error = value, error
            self.status = status
            self._latch.release()
            callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)

    def add_done_callback(self, fn):
        """Call fn(handle) on completion (immediately if already complete)."""
        with self._lock:
            if self.status == self.PENDING:
                self._callbacks.append(fn)
                return
        fn(self)

    def wait(self, timeout: float | None = None) -> str:
        if self.status == self.PENDING:
            if self._latch.acquire(timeout=-1 if timeout is None else timeout):
                self._latch.release()
        return self.status

    def result(self):
        self.wait()
        if self.status == self.FAILED:
            raise self.error
        return self.value

    def __repr__(self):
        return f"<CommandHandle #{self.seq} {self.name} {self.status}>"


class Device:
    """Backend interface. Commands are asynchronous and complete in submission order."""

    config: DeviceConfig

    def gather(self, batch: Batch, host: np.ndarray) -> CommandHandle:
        raise NotImplementedError

    def apply_gates(self, gates) -> CommandHandle:
        raise NotImplementedError

    def scatter(self, batch: Batch, host: np.ndarray) -> CommandHandle:
        raise NotImplementedError

    def run_batch(self, batch: Batch, host: np.ndarray, gates) -> CommandHandle:
        """Queue gather, apply and scatter for one batch; returns the scatter handle."""
        self.gather(batch, host)
        if gates:
            self.apply_gates(gates)
        return self.scatter(batch, host)

    def wait(self, handle: CommandHandle) -> str:
        return handle.wait()

    def stats(self) -> TransferStats:
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ReferenceDevice(Device):
    """In-process device with one in-order command thread and enforced memory bounds."""

    def __init__(self, config: DeviceConfig | None = None):
        self.config = config or DeviceConfig()
        self._stats = TransferStats()
        self._stats_lock = threading.Lock()
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._seq = 0
        self._submit_lock = threading.Lock()
        self._failure: BaseException | None = None
        self._buf: np.ndarray | None = None
        self._staging: np.ndarray | None = None
        self._held = 0
        self.peak_held_bytes = 0
        self._kernel_pool = (
            ThreadPoolExecutor(self.config.kernel_worker_count, thread_name_prefix="kernel")
            if self.config.kernel_worker_count > 1
            else None
        )
        self._thread = threading.Thread(target=self._loop, name="device-queue", daemon=True)
        self._closed = False
        self._thread.start()

    # -- queue ------------------------------------------------------------

    def _submit(self, name: str, fn, *args) -> CommandHandle:
        if self._closed:
            raise DeviceError("device is closed")
        with self._submit_lock:
            self._seq += 1
            h = CommandHandle(self._seq, name)
            self._queue.put((h, fn, args))
        return h

    def _loop(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            h, fn, args = item
            if self._failure is not None:
                err = DeviceError(f"{h.name} skipped: an earlier command failed: {self._failure}")
                err.__cause__ = self._failure
                h._finish(CommandHandle.FAILED, error=err)
                continue
            try:
                value = fn(*args)
            except BaseException as e:  # delivered through the handle
                self._failure = e
                h._finish(CommandHandle.FAILED, error=e)
            else:
                h._finish(CommandHandle.DONE, value=value)

    def close(self):
        if not self._closed:
            self._closed = True
            self._queue.put(None)
            self._thread.join()
            if self._kernel_pool is not None:
                self._kernel_pool.shutdown()
            self._release()

    # -- memory -----------------------------------------------------------

    @property
    def held_bytes(self) -> int:
        return self._held

    def _release(self):
        self._buf = self._staging = None
        self._held = 0

    def _ensure(self, amplitudes: int):
        if self._buf is not None and len(self._buf) == amplitudes:
            return
        need = self.config.required_bytes(amplitudes)
        if need > self.config.memory_limit_bytes:
            raise DeviceMemoryError(
                f"batch of {amplitudes} amplitudes needs {need} device bytes, limit is {self.config.memory_limit_bytes}"
            )
        self._release()
        self._buf = np.zeros(amplitudes, np.complex128)
        if self.config.strategy is Strategy.BUFFERED:
            self._staging = np.zeros(amplitudes, np.complex128)
        self._held = need
        self.peak_held_bytes = max(self.peak_held_bytes, need)
        assert self._held <= self.config.memory_limit_bytes

    def _layout(self, batch: Batch) -> np.ndarray:
        return batch.buffer_positions()

    def _account(self, h2d_seconds=0.0, d2h_seconds=0.0, h2d_ops=0, d2h_ops=0, moved=0, kernel_seconds=0.0, kernel_ops=0):
        with self._stats_lock:
            st = self._stats
            st.h2d_seconds += h2d_seconds
            st.d2h_seconds += d2h_seconds
            st.h2d_op_count += h2d_ops
            st.d2h_op_count += d2h_ops
            st.bytes_moved += moved
            st.kernel_seconds += kernel_seconds
            st.kernel_op_count += kernel_ops

    # -- commands ---------------------------------------------------------

    def gather(self, batch: Batch, host: np.ndarray) -> CommandHandle:
        """Move a host batch buffer (members x 2**c, member order) into the device buffer."""
        return self._submit("gather", self._gather, batch, host)

    def apply_gates(self, gates) -> CommandHandle:
        return self._submit("apply_gates", self._apply, gates if isinstance(gates, GateSequence) else list(gates))

    def scatter(self, batch: Batch, host: np.ndarray) -> CommandHandle:
        """Move the device buffer back into `host`; the handle's value is `host`."""
        return self._submit("scatter", self._scatter, batch, host)

    def run_batch(self, batch: Batch, host: np.ndarray, gates) -> CommandHandle:
        """One queued command doing gather, apply and scatter; phases are still accounted separately."""
        if not isinstance(gates, GateSequence):
            gates = list(gates)
        return self._submit("batch", self._run_batch, batch, host, gates)

    def _run_batch(self, batch: Batch, host: np.ndarray, gates):
        if self.config.strategy is not Strategy.BUFFERED:
            self._gather(batch, host)
            if gates:
                self._apply(gates)
            return self._scatter(batch, host)
        # buffered fast path: one layout lookup and one stats update per batch
        total = batch.size
        flat = host.reshape(-1)
        if len(flat) != total:
            raise DeviceError(f"host buffer holds {len(flat)} amplitudes, batch needs {total}")
        self._ensure(total)
        buf, staging = self._buf, self._staging
        pos = self._layout(batch)
        t0 = time.perf_counter()
        staging[:] = flat
        t1 = time.perf_counter()
        buf[pos] = staging
        t2 = time.perf_counter()
        kernel_ops = 2
        if gates:
            gates = self._check_gates(gates, buf)
            t2b = time.perf_counter()
            apply_all(buf, gates)
            kernel_ops += len(gates)
        else:
            t2b = t2
        t3 = time.perf_counter()
        staging[:] = buf[pos]
        t4 = time.perf_counter()
        flat[:] = staging
        t5 = time.perf_counter()
        self._account(h2d_seconds=t1 - t0, d2h_seconds=t5 - t4, h2d_ops=1, d2h_ops=1, moved=32 * total,
                      kernel_seconds=(t2 - t1) + (t3 - t2b) + (t4 - t3), kernel_ops=kernel_ops)
        return host

    def _gather(self, batch: Batch, host: np.ndarray):
        total = batch.size
        src = host.reshape(-1)
        if len(src) != total:
            raise DeviceError(f"host buffer holds {len(src)} amplitudes, batch needs {total}")
        self._ensure(total)
        buf = self._buf
        L = 1 << batch.chunk_qubits
        strategy = self.config.strategy
        t0 = time.perf_counter()
        if strategy is Strategy.SYNCHRONOUS:
            for p in range(len(batch.members)):
                buf[p * L : (p + 1) * L] = src[p * L : (p + 1) * L]
            ops = len(batch.members)
        elif strategy is Strategy.PER_ELEMENT:
            pos = self._layout(batch)
            for k in range(total):
                buf[pos[k]] = src[k]
            ops = total
        else:
            self._staging[:] = src
            ops = 1
        t1 = time.perf_counter()
        if strategy is Strategy.BUFFERED:
            buf[self._layout(batch)] = self._staging
            self._account(h2d_seconds=t1 - t0, h2d_ops=ops, moved=16 * total,
                          kernel_seconds=time.perf_counter() - t1, kernel_ops=1)
        else:
            self._account(h2d_seconds=t1 - t0, h2d_ops=ops, moved=16 * total)

    def _scatter(self, batch: Batch, host: np.ndarray):
        total = batch.size
        dst = host.reshape(-1)
        if len(dst) != total or self._buf is None or len(self._buf) != total:
            raise DeviceError("scatter does not match the gathered batch")
        buf = self._buf
        L = 1 << batch.chunk_qubits
        strategy = self.config.strategy
        perm = 0.0
        if strategy is Strategy.BUFFERED:
            t = time.perf_counter()
            self._staging[:] = buf[self._layout(batch)]
            perm = time.perf_counter() - t
        t0 = time.perf_counter()
        if strategy is Strategy.SYNCHRONOUS:
            for p in range(len(batch.members)):
                dst[p * L : (p + 1) * L] = buf[p * L : (p + 1) * L]
            ops = len(batch.members)
        elif strategy is Strategy.PER_ELEMENT:
            pos = self._layout(batch)
            for k in range(total):
                dst[k] = buf[pos[k]]
            ops = total
        else:
            dst[:] = self._staging
            ops = 1
        self._account(d2h_seconds=time.perf_counter() - t0, d2h_ops=ops, moved=16 * total,
                      kernel_seconds=perm, kernel_ops=int(strategy is Strategy.BUFFERED))
        return host

    def _check_gates(self, gates, buf: np.ndarray) -> GateSequence:
        bits = len(buf).bit_length() - 1
        if isinstance(gates, GateSequence):
            if gates.max_bit >= bits:
                raise DeviceError(f"buffer bit out of range for a {bits}-bit buffer")
            return gates
        return compile_gates(gates, bits)

    def _apply(self, gates):
        buf = self._buf
        if buf is None:
            raise DeviceError("apply_gates before any gather")
        gates = self._check_gates(gates, buf)
        t0 = time.perf_counter()
        workers = self.config.kernel_worker_count
        if self._kernel_pool is None or (len(buf) >> 1) < 2 * MIN_GROUPS_PER_WORKER:
            apply_all(buf, gates)
        else:
            for cg in gates:
                groups = cg.groups(len(buf))
                parts = min(workers, max(1, groups // MIN_GROUPS_PER_WORKER))
                edges = np.linspace(0, groups, parts + 1).astype(np.int64)
                futs = [
                    self._kernel_pool.submit(cg.run, buf, int(edges[i]), int(edges[i + 1])) for i in range(parts)
                ]
                for f in futs:
                    f.result()
        self._account(kernel_seconds=time.perf_counter() - t0, kernel_ops=len(gates))

    def stats(self) -> TransferStats:
        with self._stats_lock:
            return TransferStats(**asdict(self._stats))

    def reset_stats(self):
        with self._stats_lock:
            self._stats = TransferStats()


BACKENDS = {"reference": ReferenceDevice}


def make_device(config: DeviceConfig, backend: str = "reference") -> Device:
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise DeviceError(f"unknown device backend {backend!r}; available: {sorted(BACKENDS)}") from None
    return cls(config)
