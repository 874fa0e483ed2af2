"""State-vector simulation over independently compressed amplitude chunks."""
from .circuit import Circuit, Gate, gate_matrix, parse_qasm, to_qasm, validate
from .codec import CompressedChunk, compress, decompress, ratio
from .device import DeviceConfig, ReferenceDevice, Strategy, TransferStats
from .oracle import DenseState, fidelity, simulate_dense
from .pipeline import PipelineConfig, SimulationReport, host_apply_batch, norm, run
from .planner import ExecutionPlan, Stage, batches, plan, remap_gate
from .store import ChunkStore, init_basis_state

__version__ = "0.1.0"
