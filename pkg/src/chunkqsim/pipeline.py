"""Online execution: sweep every stage over its batches with overlapped phases.

Per device batch: decompress member chunks into a host buffer (decompress
pool) -> gather onto the device -> apply the stage's gates -> scatter back
-> recompress into the store (recompress pool). At most `pipeline_depth`
batches are in flight between decompression and recompression; a batch's
device work is queued as one gather/apply/scatter command. The first
ceil(host_fraction * B) batches of each stage are instead processed entirely
on host workers. Stages are separated by a full barrier.
"""
from __future__ import annotations

import math
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from . import planner
from .circuit import Circuit, check
from .device import Device, DeviceConfig, Strategy, TransferStats, make_device
from .kernels import apply_all, compile_gates
from .oracle import ORACLE_LIMIT, fidelity, simulate_dense
from .planner import Batch, ExecutionPlan, Stage
from .store import ChunkStore, init_basis_state


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


class BarrierError(PipelineError):
    pass


@dataclass
class PipelineConfig:
    chunk_qubits: int = 16
    batch_qubits: int = 20
    error_bound: float = 1e-5
    strategy: Strategy = Strategy.BUFFERED
    decompress_workers: int = 2
    recompress_workers: int = 2
    host_fraction: float = 0.0
    pipeline_depth: int = 2
    renormalize: bool = False
    seed: int = 0
    kernel_workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    device_memory_bytes: int | None = None
    backend: str = "reference"

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)

    def problems(self, num_qubits: int | None = None) -> list[str]:
        errs = []
        if not (isinstance(self.error_bound, (int, float)) and math.isfinite(self.error_bound) and self.error_bound >= 0):
            errs.append(f"error bound must be finite and >= 0, got {self.error_bound}")
        if not 0.0 <= self.host_fraction <= 1.0:
            errs.append(f"host fraction must lie in [0, 1], got {self.host_fraction}")
        for name in ("decompress_workers", "recompress_workers", "pipeline_depth", "kernel_workers"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.chunk_qubits < 1:
            errs.append("chunk qubits must be >= 1")
        if num_qubits is not None:
            try:
                planner.check_params(num_qubits, self.chunk_qubits, self.batch_qubits)
            except planner.PlanError as e:
                errs.append(str(e))
        if self.device_memory_bytes is not None and not errs:
            need = self.device_config().required_bytes(1 << self.batch_qubits)
            if self.device_memory_bytes < need:
                errs.append(f"device memory {self.device_memory_bytes} B cannot hold a 2^{self.batch_qubits} batch ({need} B)")
        return errs

    def check(self, num_qubits: int | None = None) -> "PipelineConfig":
        errs = self.problems(num_qubits)
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def device_config(self) -> DeviceConfig:
        cfg = DeviceConfig(strategy=self.strategy, kernel_worker_count=self.kernel_workers)
        cfg.memory_limit_bytes = self.device_memory_bytes or cfg.required_bytes(1 << self.batch_qubits)
        return cfg

    def as_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d


PHASES = ("decompress", "h2d", "kernel", "d2h", "host_apply", "recompress")


@dataclass
class SimulationReport:
    num_qubits: int
    num_gates: int
    norm: float
    fidelity: float | None
    phase_seconds: dict
    wall_seconds: float
    overlap_efficiency: float
    footprint: dict
    stage_batch_counts: list
    transfer: dict
    config: dict
    digest: str

    def as_dict(self) -> dict:
        return asdict(self)


def norm(store: ChunkStore) -> float:
    """Sum of |a|^2 over the store, compensated across and within chunks."""
    parts = []
    for _, block in store.blocks():
        parts.append(math.fsum((block.real * block.real + block.imag * block.imag).ravel().tolist()))
    return math.fsum(parts)


def host_apply_batch(store: ChunkStore, stage: Stage, batch: Batch, gates=None) -> np.ndarray:
    """Process one batch entirely on the calling thread and store it back.

    Returns the updated amplitudes (member-major) as they were before recompression.
    """
    if gates is None:
        gates = compile_gates(stage.remapped_gates(), batch.chunk_qubits + len(stage.high_set))
    host = store.load_many(batch.members.tolist())
    pos = batch.buffer_positions()
    buf = np.empty(batch.size, np.complex128)
    buf[pos] = host.reshape(-1)
    apply_all(buf, gates)
    host.reshape(-1)[:] = buf[pos]
    store.store_many(batch.members.tolist(), host)
    return host


@njit(nogil=True, cache=True)
def _first_stale(epoch, members, k):
    """First member whose epoch is not k, or -1."""
    for i in members:
        if epoch[i] != k:
            return i
    return -1


@njit(nogil=True, cache=True)
def _mark(epoch, members, value):
    for i in members:
        epoch[i] = value


class _Workers:
    """Fixed set of threads draining a job queue; lighter than an executor (no futures).

    Jobs must handle their own errors.
    """

    def __init__(self, count: int, name: str):
        self._jobs: queue.SimpleQueue = queue.SimpleQueue()
        self._threads = [threading.Thread(target=self._loop, name=f"{name}-{i}", daemon=True) for i in range(count)]
        for t in self._threads:
            t.start()

    def _loop(self):
        get = self._jobs.get
        while True:
            job = get()
            if job is None:
                return
            job[0](*job[1:])

    def submit(self, fn, *args):
        self._jobs.put((fn, *args))

    def close(self):
        for _ in self._threads:
            self._jobs.put(None)
        for t in self._threads:
            t.join()


class _Runner:
    def __init__(self, store: ChunkStore, device: Device, config: PipelineConfig):
        self.store = store
        self.device = device
        self.cfg = config
        self.epoch = np.zeros(store.num_chunks, np.int64)
        # per-operation durations; list.append is atomic, so workers need no lock
        self.durations = {"decompress": [], "host_apply": [], "recompress": []}
        self._lock = threading.Lock()
        self.live_buffers = 0
        self.peak_buffers = 0
        self.batch_bytes = 0
        self.failures: list[BaseException] = []
        self.decompress = _Workers(config.decompress_workers, "decompress")
        self.recompress = _Workers(config.recompress_workers, "recompress")
        self.host = _Workers(config.decompress_workers, "host")

    def close(self):
        for w in (self.decompress, self.recompress, self.host):
            w.close()

    @property
    def times(self) -> dict:
        return {phase: math.fsum(d) for phase, d in self.durations.items()}

    def _buffers(self, delta: int):
        with self._lock:
            self.live_buffers += delta
            if self.live_buffers > self.peak_buffers:
                self.peak_buffers = self.live_buffers

    def _fail(self, exc: BaseException, k: int, batch: Batch, phase: str):
        with self._lock:
            self.failures.append(_context(exc, k, batch, phase))

    # -- host-side work -----------------------------------------------------

    def _load(self, k: int, batch: Batch) -> np.ndarray:
        t = time.perf_counter()
        members = batch.members
        i = _first_stale(self.epoch, members, k)
        if i >= 0:
            raise BarrierError(f"chunk {i} read in stage {k} but last written in stage {self.epoch[i] - 1}")
        host = self.store.load_many(members.tolist())
        self._buffers(1)
        self.durations["decompress"].append(time.perf_counter() - t)
        return host

    def _save(self, k: int, batch: Batch, host: np.ndarray):
        t = time.perf_counter()
        self.store.store_many(batch.members.tolist(), host)
        _mark(self.epoch, batch.members, k + 1)
        self._buffers(-1)
        self.durations["recompress"].append(time.perf_counter() - t)

    def _host_batch(self, k: int, batch: Batch, gates, done: queue.SimpleQueue):
        try:
            host = self._load(k, batch)
            pos = batch.buffer_positions()
            buf = np.empty(batch.size, np.complex128)
            buf[pos] = host.reshape(-1)
            t1 = time.perf_counter()
            apply_all(buf, gates)
            self.durations["host_apply"].append(time.perf_counter() - t1)
            host.reshape(-1)[:] = buf[pos]
            self._save(k, batch, host)
        except BaseException as e:
            self._fail(e, k, batch, "host")
        finally:
            done.put(None)

    # -- device-side work ---------------------------------------------------

    def _decompress_job(self, k: int, batch: Batch, gates, slots: queue.SimpleQueue):
        try:
            host = self._load(k, batch)
        except BaseException as e:
            self._fail(e, k, batch, "decompress")
            slots.put(None)
            return
        try:
            h = self.device.run_batch(batch, host, gates)
        except BaseException as e:
            self._fail(e, k, batch, "device")
            self._buffers(-1)
            slots.put(None)
            return
        h.add_done_callback(lambda h: self._scattered(h, k, batch, host, slots))

    def _scattered(self, h, k: int, batch: Batch, host: np.ndarray, slots: queue.SimpleQueue):
        if h.status == h.FAILED:
            self._fail(h.error, k, batch, "device")
            self._buffers(-1)
            slots.put(None)
        else:
            self.recompress.submit(self._recompress_job, k, batch, host, slots)

    def _recompress_job(self, k: int, batch: Batch, host: np.ndarray, slots: queue.SimpleQueue):
        try:
            self._save(k, batch, host)
        except BaseException as e:
            self._fail(e, k, batch, "recompress")
        finally:
            slots.put(None)

    # -- stage driver -------------------------------------------------------

    def run_stage(self, stage: Stage):
        """Process every batch of `stage`; returns only when all of them are stored (barrier)."""
        cfg = self.cfg
        n, c = self.store.num_qubits, self.store.chunk_qubits
        k = stage.index
        gates = compile_gates(stage.remapped_gates(), c + len(stage.high_set))
        all_batches = list(planner.batches(stage, n, c))
        n_host = math.ceil(cfg.host_fraction * len(all_batches))
        self.batch_bytes = all_batches[0].size * 16

        host_done: queue.SimpleQueue = queue.SimpleQueue()
        for b in all_batches[:n_host]:
            self.host.submit(self._host_batch, k, b, gates, host_done)

        # Each device batch holds one slot token from decompression until it
        # is recompressed; collecting all tokens back is the stage barrier.
        depth = cfg.pipeline_depth
        slots: queue.SimpleQueue = queue.SimpleQueue()
        for _ in range(depth):
            slots.put(None)
        for b in all_batches[n_host:]:
            slots.get()
            if self.failures:
                slots.put(None)
                break
            self.decompress.submit(self._decompress_job, k, b, gates, slots)
        for _ in range(depth):
            slots.get()
        for _ in range(n_host):
            host_done.get()
        if self.failures:
            raise self.failures[0]

    def renormalize(self, k: int):
        scale = 1.0 / math.sqrt(norm(self.store))
        t = time.perf_counter()
        for i in range(self.store.num_chunks):
            self.store.store_chunk(i, self.store.load_chunk(i) * scale)
            self.epoch[i] = k + 1
        self.durations["recompress"].append(time.perf_counter() - t)


def _context(exc: BaseException, stage: int, batch: Batch, phase: str) -> PipelineError:
    if isinstance(exc, PipelineError) and getattr(exc, "located", False):
        return exc
    err = PipelineError(f"stage {stage}, batch {batch.ordinal} ({phase}): {type(exc).__name__}: {exc}")
    err.__cause__ = exc
    err.located = True
    return err


def run(
    circuit: Circuit,
    config: PipelineConfig,
    *,
    device: Device | None = None,
    with_fidelity: bool = True,
    oracle_limit: int = ORACLE_LIMIT,
    execution_plan: ExecutionPlan | None = None,
) -> tuple[ChunkStore, SimulationReport]:
    """Simulate `circuit` from |0...0> and return the final store and its report."""
    check(circuit)
    n = circuit.num_qubits
    config.check(n)
    p = execution_plan or planner.plan(circuit, config.chunk_qubits, config.batch_qubits)
    store = init_basis_state(n, config.chunk_qubits, config.error_bound)
    own_device = device is None
    dev = device or make_device(config.device_config(), config.backend)
    before = dev.stats()
    runner = _Runner(store, dev, config)
    t0 = time.perf_counter()
    try:
        for stage in p.stages:
            runner.run_stage(stage)
        if config.renormalize:
            runner.renormalize(len(p.stages))
    finally:
        runner.close()
        if own_device:
            dev.close()
    wall = time.perf_counter() - t0
    stats = _delta(dev.stats(), before)

    nrm = norm(store)
    fid = None
    if with_fidelity and n <= oracle_limit:
        fid = fidelity(simulate_dense(circuit, oracle_limit), store)
    times = runner.times
    phases = {
        "decompress": times["decompress"],
        "h2d": stats.h2d_seconds,
        "kernel": stats.kernel_seconds,
        "d2h": stats.d2h_seconds,
        "host_apply": times["host_apply"],
        "recompress": times["recompress"],
    }
    fp = store.footprint().as_dict()
    fp["transient_peak_bytes"] = runner.peak_buffers * runner.batch_bytes
    report = SimulationReport(
        num_qubits=n,
        num_gates=len(circuit.gates),
        norm=nrm,
        fidelity=fid,
        phase_seconds=phases,
        wall_seconds=wall,
        overlap_efficiency=stats.kernel_seconds / wall if wall > 0 else 0.0,
        footprint=fp,
        stage_batch_counts=[p.batch_count(s) for s in p.stages],
        transfer=stats.as_dict(),
        config=config.as_dict(),
        digest=f"{store.digest():016x}",
    )
    return store, report


def _delta(after: TransferStats, before: TransferStats) -> TransferStats:
    a, b = asdict(after), asdict(before)
    return TransferStats(**{k: a[k] - b[k] for k in a})
