"""Calibration: run every opcode over a sweep of block sizes through the
instrumented engine and collect per-stage durations for model fitting."""
from __future__ import annotations

import numpy as np

from . import engine
from .lowering import axis_units_cap, lower_graph
from .matrix import Matrix, Opcode, from_logical
from .scheduler import Schedule
from .timemodel import ProfileSample, TimeModel, fit, sweep_sizes

PROFILE_SCALARS = {Opcode.SADD: 3.0, Opcode.SSUB: 3.0, Opcode.SMUL: 3.0,
                   Opcode.MOD: 4.0}


def profile(cfg: engine.EngineConfig, stride: int = 16,
            mm_stride: int | None = None, reps: int = 5, seed: int = 0,
            opcodes: list[Opcode] | None = None) -> list[ProfileSample]:
    """Measure df/ex/wb durations over strided block-size sweeps."""
    if mm_stride is None:
        mm_stride = stride * 2
    divisor = cfg.divisor
    cap_side = divisor * axis_units_cap(divisor, cfg.buffer_elems)
    sizes = sweep_sizes(divisor, cap_side, stride)
    mm_sizes = sweep_sizes(divisor, cap_side, mm_stride)
    rng = np.random.default_rng(seed)
    run_cfg = engine.EngineConfig(
        workers=1, buffer_elems=cfg.buffer_elems, divisor=divisor,
        precision=cfg.precision, mailbox_capacity=cfg.mailbox_capacity,
        instrumented=False)

    samples: list[ProfileSample] = []
    for opcode in (opcodes or list(Opcode)):
        if opcode.is_matmul:
            combos = [(n1, n2, n3) for n1 in mm_sizes for n2 in mm_sizes
                      for n3 in mm_sizes]
        else:
            combos = [(n1, n2) for n1 in sizes for n2 in sizes]
        scalar = PROFILE_SCALARS.get(opcode)

        sources: dict[int, Matrix] = {}
        dims_to_src: dict[tuple[int, int], int] = {}
        next_id = 0

        def src_for(dims):
            nonlocal next_id
            if dims not in dims_to_src:
                data = rng.random(dims, dtype=np.float64).astype(
                    cfg.precision.dtype) + 0.5
                sources[next_id] = from_logical(cfg.precision, data, divisor)
                dims_to_src[dims] = next_id
                next_id += 1
            return dims_to_src[dims]

        ops = []
        nvec_of: dict[int, tuple[int, ...]] = {}
        for nvec in combos:
            if opcode.is_matmul:
                a = src_for((nvec[0], nvec[1]))
                b = src_for((nvec[1], nvec[2]))
                shape = (nvec[0], nvec[2])
                operands = (a, b)
            else:
                a = src_for((nvec[0], nvec[1]))
                operands = (a, a) if opcode.arity == 2 else (a,)
                shape = (nvec[0], nvec[1])
            for _ in range(reps):
                nonce = next_id
                next_id += 1
                ops.append((nonce, opcode, operands, scalar, shape))
                nvec_of[nonce] = nvec

        src_shapes = {sid: m.shape for sid, m in sources.items()}
        lg = lower_graph(ops, src_shapes, divisor, cfg.buffer_elems)
        sched_nodes = lg.schedulable()
        # every profiled op lowers to exactly one block instruction
        assert len(sched_nodes) == len(ops)
        order = list(range(len(sched_nodes)))
        sched = Schedule([order], [0.0] * len(order), 0.0, "profile")
        op_shapes = {nid: shape for (nid, _, _, _, shape) in ops}
        result = engine.run(lg, sched, run_cfg, sources, op_shapes)
        lid_to_origin = {node.id: node.origin for node in sched_nodes}
        for row in result.report.instructions:
            origin = lid_to_origin[row["id"]]
            samples.append(ProfileSample(
                opcode, nvec_of[origin],
                float(row["df_ns"]), float(row["ex_ns"]), float(row["wb_ns"])))
    return samples


def calibrate(cfg: engine.EngineConfig, stride: int = 16,
              mm_stride: int | None = None, reps: int = 5,
              seed: int = 0) -> tuple[list[ProfileSample], TimeModel]:
    samples = profile(cfg, stride=stride, mm_stride=mm_stride, reps=reps,
                      seed=seed)
    return samples, fit(samples)
