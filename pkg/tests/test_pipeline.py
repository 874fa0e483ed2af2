import itertools

import numpy as np
import pytest

from chunkqsim import codec
from chunkqsim.circuit import Circuit, Gate, ghz, random_circuit
from chunkqsim.device import DeviceConfig, ReferenceDevice, Strategy
from chunkqsim.kernels import compile_gates
from chunkqsim.oracle import simulate_dense
from chunkqsim.pipeline import (
    PHASES,
    BarrierError,
    ConfigError,
    PipelineConfig,
    PipelineError,
    _Runner,
    host_apply_batch,
    norm,
    run,
)
from chunkqsim.planner import batches, plan
from chunkqsim.store import init_basis_state

from helpers import random_state


def cfg(**kw):
    base = dict(chunk_qubits=4, batch_qubits=6, error_bound=0.0, kernel_workers=1)
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def circ10():
    return random_circuit(10, 50, seed=17)


@pytest.fixture(scope="module")
def ref10(circ10):
    return simulate_dense(circ10).amplitudes


@pytest.mark.parametrize(
    "strategy,f,d", list(itertools.product(list(Strategy), [0.0, 0.5, 1.0], [1, 3]))
)
def test_lossless_matches_oracle(circ10, ref10, strategy, f, d):
    store, report = run(circ10, cfg(strategy=strategy, host_fraction=f, pipeline_depth=d), with_fidelity=False)
    assert np.abs(store.to_dense() - ref10).max() <= 1e-12
    assert abs(report.norm - 1) <= 1e-12


def test_scheduling_independence(circ10):
    digests = set()
    for strategy, d, dw, rw, kw in [
        (Strategy.BUFFERED, 1, 1, 1, 1),
        (Strategy.BUFFERED, 3, 3, 2, 2),
        (Strategy.SYNCHRONOUS, 2, 2, 3, 1),
        (Strategy.PER_ELEMENT, 4, 1, 1, 3),
    ]:
        c = cfg(error_bound=1e-6, strategy=strategy, pipeline_depth=d, decompress_workers=dw,
                recompress_workers=rw, kernel_workers=kw, host_fraction=0.5)
        digests.add(run(circ10, c, with_fidelity=False)[1].digest)
    assert len(digests) == 1


def test_ghz16_lossy_fidelity():
    _, report = run(ghz(16), PipelineConfig(chunk_qubits=12, batch_qubits=16, error_bound=1e-6, kernel_workers=1))
    assert report.fidelity >= 0.9999


def test_empty_circuit():
    store, report = run(Circuit(8, []), cfg(error_bound=1e-5))
    init = init_basis_state(8, 4, 1e-5)
    assert report.phase_seconds["kernel"] == 0 and report.stage_batch_counts == []
    assert report.digest == f"{init.digest():016x}"
    assert report.norm == 1.0 and report.fidelity == 1.0


def test_report_shape(circ10):
    _, report = run(circ10, cfg())
    d = report.as_dict()
    assert set(d) == {
        "num_qubits", "num_gates", "norm", "fidelity", "phase_seconds", "wall_seconds", "overlap_efficiency",
        "footprint", "stage_batch_counts", "transfer", "config", "digest",
    }
    assert set(d["phase_seconds"]) == set(PHASES)
    assert set(d["footprint"]) == {"current_bytes", "peak_bytes", "dense_bytes", "ratio", "transient_peak_bytes"}
    assert len(d["digest"]) == 16
    assert d["config"]["strategy"] == "buffered"


def test_transient_peak_bound(circ10):
    for d in (1, 2, 3):
        _, report = run(circ10, cfg(pipeline_depth=d, host_fraction=0.5, decompress_workers=2), with_fidelity=False)
        assert report.footprint["transient_peak_bytes"] <= (d + 2) * (1 << 6) * 16


def test_host_vs_device_bit_exact(rng):
    n, c, m = 8, 3, 6
    circ = random_circuit(n, 30, seed=2)
    stage = plan(circ, c, m).stages[0]
    batch = next(iter(batches(stage, n, c)))
    store = init_basis_state(n, c, 0.0)
    store.store_many(range(store.num_chunks), random_state(rng, n).reshape(-1, 1 << c))
    before = store.load_many(batch.members.tolist())
    gates = compile_gates(stage.remapped_gates(), m)

    dev = ReferenceDevice(DeviceConfig(kernel_worker_count=1, strategy=Strategy.BUFFERED))
    with dev:
        dev.gather(batch, before.copy())
        dev.apply_gates(gates)
        device_out = dev.scatter(batch, np.empty_like(before)).result()
    host_out = host_apply_batch(store, stage, batch, gates)
    assert np.array_equal(host_out, device_out)


def test_zero_batch_stays_zero():
    n, c, m = 6, 2, 4
    circ = Circuit(n, [Gate("H", (0,)), Gate("CX", (2, 3)), Gate("RZ", (3,), (0.3,))])
    stage = plan(circ, c, m).stages[0]
    store = init_basis_state(n, c, 1e-5)
    zero_batch = [b for b in batches(stage, n, c) if 0 not in b.members][0]
    out = host_apply_batch(store, stage, zero_batch)
    assert not out.any()


def test_single_batch_host_vs_device_within_codec():
    circ = random_circuit(8, 30, seed=6)
    eb = 1e-5
    a, _ = run(circ, cfg(chunk_qubits=4, batch_qubits=8, error_bound=eb, host_fraction=1.0), with_fidelity=False)
    b, _ = run(circ, cfg(chunk_qubits=4, batch_qubits=8, error_bound=eb, host_fraction=0.0), with_fidelity=False)
    d = a.to_dense() - b.to_dense()
    assert np.abs(d.real).max() <= 2 * eb and np.abs(d.imag).max() <= 2 * eb


def test_norm_fresh_and_lossless(circ10):
    assert norm(init_basis_state(10, 4, 1e-5)) == 1.0
    store, _ = run(circ10, cfg(), with_fidelity=False)
    assert abs(norm(store) - 1) <= 1e-12


def test_lossy_norm_drift_reported():
    _, report = run(random_circuit(16, 100, seed=1), PipelineConfig(chunk_qubits=10, batch_qubits=14, error_bound=1e-4))
    assert abs(report.norm - 1) <= 0.05
    assert report.norm != 1.0


def test_renormalize():
    # the rescaled state goes through one more round trip, so only that round trip's drift remains:
    # |sum (x+d)^2 - sum x^2| <= 2 eps sum|x| + 2N eps^2
    eb = 1e-3
    circ = random_circuit(10, 60, seed=3)
    store, report = run(circ, cfg(error_bound=eb, renormalize=True), with_fidelity=False)
    x = store.to_dense()
    comps = np.abs(np.concatenate([x.real, x.imag]))
    assert abs(report.norm - 1) <= 2 * eb * (comps.sum() + len(comps) * eb) + len(comps) * eb**2
    _, plain = run(circ, cfg(error_bound=eb), with_fidelity=False)
    assert abs(report.norm - 1) < abs(plain.norm - 1)


def test_sweep_count_and_bound():
    # every stage recompresses each amplitude once; per-stage drift is at most eb per component
    circ = random_circuit(9, 40, seed=12)
    eb = 1e-6
    p = plan(circ, 3, 5)
    store, _ = run(circ, cfg(chunk_qubits=3, batch_qubits=5, error_bound=eb), with_fidelity=False, execution_plan=p)
    ref = simulate_dense(circ).amplitudes
    # unitaries preserve the error vector's 2-norm; each round trip adds at most eb * sqrt(2N)
    err = store.to_dense() - ref
    assert np.linalg.norm(err) <= (len(p.stages) + 1) * eb * np.sqrt(2 * len(ref))


def test_config_validation():
    with pytest.raises(ConfigError):
        run(Circuit(6, []), cfg(error_bound=-1))
    with pytest.raises(ConfigError):
        run(Circuit(6, []), cfg(host_fraction=1.5))
    with pytest.raises(ConfigError):
        run(Circuit(6, []), cfg(chunk_qubits=4, batch_qubits=5))
    with pytest.raises(ConfigError, match="device memory"):
        run(Circuit(6, []), cfg(device_memory_bytes=100))
    assert cfg().problems(10) == []


def test_device_failure_surfaces_with_context():
    c = cfg()
    dev = ReferenceDevice(DeviceConfig(memory_limit_bytes=16, kernel_worker_count=1))
    with dev, pytest.raises(PipelineError, match="stage 0"):
        run(random_circuit(8, 10, seed=1), c, device=dev)


def test_barrier_detects_stale_chunk():
    circ = random_circuit(8, 20, seed=9)
    c = cfg()
    p = plan(circ, 4, 6)
    store = init_basis_state(8, 4, 0.0)
    with ReferenceDevice(c.device_config()) as dev:
        r = _Runner(store, dev, c)
        try:
            r.epoch[5] = 7  # pretend chunk 5 was written in a later stage
            with pytest.raises(PipelineError) as e:
                r.run_stage(p.stages[0])
            assert isinstance(e.value.__cause__, BarrierError)
        finally:
            r.close()


def test_stages_advance_epochs():
    circ = random_circuit(8, 40, seed=9)
    c = cfg()
    p = plan(circ, 4, 6)
    store = init_basis_state(8, 4, 0.0)
    with ReferenceDevice(c.device_config()) as dev:
        r = _Runner(store, dev, c)
        try:
            for s in p.stages:
                r.run_stage(s)
                assert (r.epoch == s.index + 1).all()
        finally:
            r.close()


def test_codec_error_surfaces():
    store = init_basis_state(6, 2, 1e-5)
    cc = store.chunk(3)
    bad = codec.CompressedChunk(3, cc.codec_id, cc.error_bound, cc.element_count, cc.payload, cc.checksum ^ 1)
    store.put(bad)
    stage = plan(random_circuit(6, 5, seed=0), 2, 4).stages[0]
    b = [b for b in batches(stage, 6, 2) if 3 in b.members][0]
    with pytest.raises(codec.ChecksumError):
        host_apply_batch(store, stage, b)
