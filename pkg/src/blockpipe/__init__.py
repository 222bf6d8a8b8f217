"""blockpipe: lazy matrix-trace runtime with block lowering and pipelined scheduling."""
import os as _os

# Worker threads parallelize around BLAS; keep BLAS itself single-threaded.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")

from .matrix import (BlockView, ConfigError, Matrix, Opcode, Precision,
                     ShapeError, make_matrix, pad_dims)
from .reference import reference_eval
from .lowering import Partitioning, LoweredGraph, lower_graph, partition
from .trace import ForceReason, Session, TraceConfig

__all__ = [
    "BlockView", "ConfigError", "ForceReason", "LoweredGraph", "Matrix",
    "Opcode", "Partitioning", "Precision", "Session", "ShapeError",
    "TraceConfig", "lower_graph", "make_matrix", "pad_dims", "partition",
    "reference_eval",
]
