"""Host/device transfer benchmark: gather + scatter of random batches, no kernels."""
from __future__ import annotations

import os
import platform
import statistics

import numpy as np

from .device import DeviceConfig, DeviceMemoryError, ReferenceDevice, Strategy
from .planner import Batch

DEFAULT_EXPONENTS = (16, 20)


def _summary(samples: list[float]) -> dict:
    return {"median": statistics.median(samples), "min": min(samples), "max": max(samples), "samples": samples}


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "numpy": np.__version__,
    }


def measure(exponent: int, strategy: Strategy, repetitions: int, chunk_qubits: int = 16,
            memory_limit_bytes: int | None = None, seed: int = 0) -> dict:
    """Median/min/max H2D and D2H seconds for one (size, strategy) cell."""
    strategy = Strategy.parse(strategy)
    c = min(chunk_qubits, exponent)
    total = 1 << exponent
    cfg = DeviceConfig(strategy=strategy, kernel_worker_count=1)
    need = cfg.required_bytes(total)
    cfg.memory_limit_bytes = memory_limit_bytes or need
    if need > cfg.memory_limit_bytes:
        raise DeviceMemoryError(f"2^{exponent} amplitudes need {need} device bytes, limit is {cfg.memory_limit_bytes}")
    batch = Batch(0, np.arange(1 << (exponent - c), dtype=np.int64), c)
    rng = np.random.default_rng(seed)
    src = rng.standard_normal((len(batch.members), 1 << c)) + 1j * rng.standard_normal((len(batch.members), 1 << c))
    back = np.empty_like(src)
    h2d, d2h = [], []
    with ReferenceDevice(cfg) as dev:
        for _ in range(repetitions):
            s0 = dev.stats()
            dev.gather(batch, src).result()
            s1 = dev.stats()
            dev.scatter(batch, back).result()
            s2 = dev.stats()
            h2d.append(s1.h2d_seconds - s0.h2d_seconds)
            d2h.append(s2.d2h_seconds - s1.d2h_seconds)
            if not np.array_equal(back, src):
                raise AssertionError(f"{strategy.value}: scatter(gather(x)) != x")
        st = dev.stats()
    return {
        "qubits": exponent,
        "amplitudes": total,
        "strategy": strategy.value,
        "h2d_seconds": _summary(h2d),
        "d2h_seconds": _summary(d2h),
        "h2d_ops_per_rep": st.h2d_op_count // repetitions,
        "d2h_ops_per_rep": st.d2h_op_count // repetitions,
        "bytes_moved": st.bytes_moved,
    }


def bench_transfer(exponents=DEFAULT_EXPONENTS, strategies=tuple(Strategy), repetitions: int = 3,
                   chunk_qubits: int = 16, memory_limit_bytes: int | None = None) -> dict:
    strategies = [Strategy.parse(s) for s in strategies]
    rows = []
    for e in exponents:
        cells = [measure(e, s, repetitions, chunk_qubits, memory_limit_bytes) for s in strategies]
        base = next((r for r in cells if r["strategy"] == Strategy.SYNCHRONOUS.value), None)
        for r in cells:
            if base is not None:
                r["h2d_ratio"] = r["h2d_seconds"]["median"] / base["h2d_seconds"]["median"]
                r["d2h_ratio"] = r["d2h_seconds"]["median"] / base["d2h_seconds"]["median"]
        rows.extend(cells)
    table = []
    for e in exponents:
        line = {"qubits": e}
        for r in rows:
            if r["qubits"] == e:
                line[r["strategy"]] = f"{r['h2d_seconds']['median']:.4g}/{r['d2h_seconds']['median']:.4g}"
        table.append(line)
    return {
        "machine": machine_info(),
        "repetitions": repetitions,
        "chunk_qubits": chunk_qubits,
        "baseline": Strategy.SYNCHRONOUS.value,
        "rows": rows,
        "table": table,
    }
