"""Dual ascent on the RLT cost model.

One iteration at level 3 (lower levels drop the E and D phases)::

    spread B->C, C->D, D->E
    mean over E classes, concentrate E->D
    mean over D classes, concentrate D->C
    mean over C classes, concentrate C->B
    broadcast B, concentrate B->LB

Every phase leaves the cost of each integer assignment unchanged and keeps
all coefficients non-negative, so LB is a valid lower bound throughout.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .assignment import concentrate_many, solve_assignment, extract_residual
from .errors import (
    LevelUnavailable,
    MissingComplementary,
    NegativeSourceCoefficient,
    PeerDisconnected,
    RLTQAPError,
    WorkerFailure,
)
from .model import Instance
from .runtime.messages import Phase, PhaseMessage
from .runtime.partition import PartitionMap, build_partition
from .runtime.phases import collect_outgoing, ghost_table, perm_table
from .runtime.transport import (
    DEFAULT_TIMEOUT,
    InProcessHub,
    LocalTransport,
    SocketTransport,
    Transport,
    exchange as exchange_messages,
)
from .tensors import (
    ARITY,
    CostState,
    block_size,
    check_budget,
    check_level,
    estimate_memory,
    init_costs,
    offset_tuple,
)

log = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 8 * 1024**3

PhaseHook = Callable[[str, CostState], None]


class StopReason(str, enum.Enum):
    TARGET_REACHED = "TargetReached"
    ITERATION_LIMIT = "IterationLimit"
    STALLED = "Stalled"


@dataclass
class EngineConfig:
    max_iterations: int = 300
    target: float | None = None
    level: int = 3
    tolerance: float = 1e-6
    log_every: int = 1
    precision: int = 64
    memory_budget: int | None = DEFAULT_MEMORY_BUDGET
    stall_iterations: int = 10
    stall_rel: float = 1e-9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.level not in (1, 2, 3):
            raise LevelUnavailable(f"level must be 1, 2 or 3, got {self.level}")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    lb: float
    spread_s: float = 0.0
    transfer_s: float = 0.0
    concentrate_s: float = 0.0
    comm_bytes: int = 0


@dataclass
class BoundReport:
    instance: str
    n: int
    level: int
    precision: int
    partition: dict
    lb_trajectory: list[tuple[int, float]]
    records: list[IterationRecord]
    final_lb: float
    target: float | None
    iterations_run: int
    stop_reason: StopReason
    wall_time: float

    @property
    def gap_percent(self) -> float | None:
        if self.target is None:
            return None
        if self.target == 0:
            return 0.0
        return (self.target - self.final_lb) / self.target * 100.0

    @property
    def lb_ceil(self) -> int:
        """Integer bound valid for integer-data instances.

        The slack scales with the working precision so float32 rounding
        (about 3e-5 at |LB| ~ 500) cannot push the bound past an integer.
        """
        eps = float(np.finfo(np.float32 if self.precision == 32 else np.float64).eps)
        slack = max(1e-6, 64 * eps * max(1.0, abs(self.final_lb)))
        return math.ceil(self.final_lb - slack)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop_reason"] = self.stop_reason.value
        d["gap_percent"] = self.gap_percent
        d["lb_ceil"] = self.lb_ceil
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        g = self.gap_percent
        gap = "n/a" if g is None else f"{0.0 if abs(g) < 0.005 else g:.2f}%"
        target = "none" if self.target is None else f"{self.target:g}"
        return (f"{self.instance or 'instance'} n={self.n} RLT{self.level}: "
                f"LB={self.final_lb:.6f} (ceil {self.lb_ceil}) target={target} gap={gap} "
                f"iterations={self.iterations_run} stop={self.stop_reason.value} "
                f"workers={self.partition.get('workers', 1)} time={self.wall_time:.1f}s")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "lb", "spread_s", "transfer_s", "concentrate_s", "comm_bytes"])
            for r in self.records:
                w.writerow([r.iteration, repr(float(r.lb)), f"{r.spread_s:.6f}", f"{r.transfer_s:.6f}",
                            f"{r.concentrate_s:.6f}", r.comm_bytes])


# cost manipulation -----------------------------------------------------------

_BELOW = {"B": "C", "C": "D", "D": "E"}


def spread_down(state: CostState, source: str) -> CostState:
    """Move every owned coefficient of ``source`` evenly onto its sub-block one level down."""
    if source not in _BELOW:
        raise LevelUnavailable(f"cannot spread from {source!r}")
    target = state.tensor(_BELOW[source])
    n = state.n
    if source == "B":
        rows = state.pairs // n, state.pairs % n
        target += (state.b[rows] / (n - 1))[:, None, None]
        state.b[rows] = 0
    else:
        src = state.tensor(source)
        divisor = n - ARITY[source]
        target += (src / divisor)[..., None, None]
        src[...] = 0
    return state


def concentrate_up(state: CostState, source: str) -> CostState:
    """Hungarian concentration of every owned ``source`` submatrix one level up.

    ``B`` concentrates the full (broadcast) B matrix into LB.
    """
    if source == "B":
        bb = state.b.astype(np.float64)
        if bb.min() < -state.eps:
            raise NegativeSourceCoefficient(f"negative B coefficient {bb.min():.3g}")
        bb = np.maximum(bb, 0.0)
        res = solve_assignment(bb)
        resid = extract_residual(bb, res)
        state.b[...] = resid
        state.lb += res.value
        return state
    upper = {"C": "B", "D": "C", "E": "D"}.get(source)
    if upper is None:
        raise LevelUnavailable(f"cannot concentrate from {source!r}")
    values = concentrate_many(state.tensor(source), eps=state.eps)
    if upper == "B":
        n = state.n
        state.b[state.pairs // n, state.pairs % n] += values.astype(state.dtype)
    else:
        state.tensor(upper)[...] += values.astype(state.dtype)
    return state


def mean_transfer(state: CostState, name: str, incoming: list[PhaseMessage] = ()) -> CostState:
    """Replace each owned coefficient by the mean of its complementary class.

    Members owned elsewhere are looked up in ``incoming``.
    """
    if name not in ("C", "D", "E"):
        raise LevelUnavailable(f"no complementaries for tensor {name!r}")
    L = ARITY[name]
    keys, vals = ghost_table(state, name, list(incoming))
    status, missing = K.mean_classes(state.flat(name), state.slot_of_pair, L, state.n,
                                     perm_table(L), keys, vals)
    if status == K.ERR_MISSING:
        bs = block_size(state.n, L)
        tup = offset_tuple(int(missing // bs), int(missing % bs), L, state.n)
        raise MissingComplementary(f"no value received for {name}{tup}")
    return state


def apply_broadcast(state: CostState, incoming: list[PhaseMessage]) -> CostState:
    for msg in incoming:
        t = msg.tuples.astype(np.int64)
        state.b[t[:, 0], t[:, 1]] = msg.values
    return state


# exchange callbacks ----------------------------------------------------------

Exchange = Callable[[CostState, Phase, int], list[PhaseMessage]]


def local_exchange(state: CostState, phase: Phase, iteration: int) -> list[PhaseMessage]:
    return []


class Channel:
    """Exchange callback bound to a transport and partition map."""

    def __init__(self, transport: Transport, partition: PartitionMap):
        self.transport = transport
        self.partition = partition

    def __call__(self, state, phase, iteration):
        if self.partition.workers == 1:
            return []
        out = collect_outgoing(state, phase, self.partition, iteration)
        return exchange_messages(self.transport, phase, iteration, out, state.precision, state.n)

    @property
    def bytes_sent(self) -> int:
        return self.transport.bytes_sent


# iteration -------------------------------------------------------------------

class _Steps:
    """Runs phases in order: times them, tags errors with the phase, calls the hook."""

    def __init__(self, state: CostState, hook: PhaseHook | None, record: IterationRecord | None):
        self.state = state
        self.hook = hook
        self.record = record

    def __call__(self, label: str, kind: str, fn, *args):
        t0 = time.perf_counter()
        try:
            fn(*args)
        except RLTQAPError as exc:
            if getattr(exc, "phase", None) is None:
                exc.phase = label
            raise
        if self.record is not None:
            setattr(self.record, kind, getattr(self.record, kind) + time.perf_counter() - t0)
        if self.hook:
            self.hook(label, self.state)


def _transfer(state, exchange, name, iteration):
    mean_transfer(state, name, exchange(state, Phase.for_tensor(name), iteration))


def _broadcast(state, exchange, iteration):
    apply_broadcast(state, exchange(state, Phase.MENS_B, iteration))


def _ascend(step: _Steps, exchange, iteration, names):
    state = step.state
    for name in names:
        step(f"transfer_{name}", "transfer_s", _transfer, state, exchange, name, iteration)
        step(f"concentrate_{name}", "concentrate_s", concentrate_up, state, name)
    step("broadcast_B", "transfer_s", _broadcast, state, exchange, iteration)
    step("concentrate_B", "concentrate_s", concentrate_up, state, "B")


def run_preloop(state: CostState, exchange: Exchange = local_exchange,
                on_phase: PhaseHook | None = None, record: IterationRecord | None = None) -> CostState:
    """Initial C transfer, C->B, B broadcast, B->LB."""
    _ascend(_Steps(state, on_phase, record), exchange, 0, ("C",))
    return state


def run_iteration(state: CostState, exchange: Exchange = local_exchange, iteration: int = 1,
                  on_phase: PhaseHook | None = None, record: IterationRecord | None = None) -> CostState:
    """One full spread / transfer / concentrate cycle; phases are reported to ``on_phase``."""
    step = _Steps(state, on_phase, record)
    for name in state.tensor_names[:-1]:
        step(f"spread_{name}", "spread_s", spread_down, state, name)
    _ascend(step, exchange, iteration, tuple(reversed(state.tensor_names[1:])))
    return state


# driver ----------------------------------------------------------------------

@dataclass
class Runtime:
    """How to execute: number of workers, transport and partition scheme.

    ``transport="inprocess"`` runs all workers as threads of this process;
    ``"sockets"`` runs only ``worker_id`` and talks to the peers in ``hosts``.
    """

    workers: int = 1
    transport: str = "inprocess"
    scheme: str = "block-cyclic"
    hosts: list[tuple[str, int]] | None = None
    worker_id: int = 0
    timeout: float = DEFAULT_TIMEOUT
    bind: str | None = None

    def __post_init__(self):
        if self.transport == "sockets":
            if not self.hosts:
                raise ValueError("socket transport needs a host list")
            self.workers = len(self.hosts)
            if not 0 <= self.worker_id < self.workers:
                raise ValueError(f"worker id {self.worker_id} outside host list of {self.workers}")
        elif self.transport != "inprocess":
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def run_worker(inst: Instance, config: EngineConfig, partition: PartitionMap,
               transport: Transport, on_phase: PhaseHook | None = None,
               on_record: Callable[[IterationRecord], None] | None = None,
               per_worker_budget: bool = True) -> BoundReport:
    """Run the whole bound computation for one worker of ``partition``."""
    started = time.perf_counter()
    me = transport.worker_id
    pairs = partition.pairs_of(me)
    budget = config.memory_budget if per_worker_budget else None
    state = init_costs(inst, config.level, config.precision, pairs=pairs, budget=budget)
    channel = Channel(transport, partition)
    target = config.target

    def reached(lb):
        return target is not None and lb >= target - config.tolerance

    records: list[IterationRecord] = []
    trajectory: list[tuple[int, float]] = []

    def log_record(rec: IterationRecord, force: bool = False):
        if force or rec.iteration % config.log_every == 0:
            records.append(rec)
            trajectory.append((rec.iteration, rec.lb))
        if on_record:
            on_record(rec)
        log.info("worker %d iteration %d LB=%.9f spread=%.2fs transfer=%.2fs concentrate=%.2fs bytes=%d",
                 me, rec.iteration, rec.lb, rec.spread_s, rec.transfer_s, rec.concentrate_s, rec.comm_bytes)

    rec = IterationRecord(0, 0.0)
    sent0 = channel.bytes_sent
    run_preloop(state, channel, on_phase, rec)
    rec.lb = state.lb
    rec.comm_bytes = channel.bytes_sent - sent0
    log_record(rec, force=True)

    cont = 0
    stall = 0
    reason = StopReason.TARGET_REACHED if reached(state.lb) else None
    while reason is None:
        cont += 1
        prev = state.lb
        rec = IterationRecord(cont, 0.0)
        sent0 = channel.bytes_sent
        run_iteration(state, channel, cont, on_phase, rec)
        rec.lb = state.lb
        rec.comm_bytes = channel.bytes_sent - sent0
        if state.lb - prev < config.stall_rel * max(1.0, abs(prev)):
            stall += 1
        else:
            stall = 0
        if reached(state.lb):
            reason = StopReason.TARGET_REACHED
        elif cont >= config.max_iterations:
            reason = StopReason.ITERATION_LIMIT
        elif stall >= config.stall_iterations:
            reason = StopReason.STALLED
        log_record(rec, force=reason is not None)

    return BoundReport(
        instance=inst.name,
        n=inst.n,
        level=config.level,
        precision=config.precision,
        partition=partition.describe(),
        lb_trajectory=trajectory,
        records=records,
        final_lb=float(state.lb),
        target=target,
        iterations_run=cont,
        stop_reason=reason,
        wall_time=time.perf_counter() - started,
    )


def run(inst: Instance, config: EngineConfig | None = None, runtime: Runtime | None = None,
        on_phase: PhaseHook | None = None,
        on_record: Callable[[IterationRecord], None] | None = None) -> BoundReport:
    """Compute an RLT lower bound for ``inst``.

    ``config.target`` defaults to the instance's known optimum. With several
    in-process workers, the report of worker 0 is returned (all workers hold
    the same LB trajectory).
    """
    config = config or EngineConfig()
    runtime = runtime or Runtime()
    if config.target is None and inst.known_optimum is not None:
        config = EngineConfig(**{**asdict(config), "target": inst.known_optimum})
    check_level(inst.n, config.level)
    partition = build_partition(inst.n, runtime.workers, runtime.scheme)

    if runtime.transport == "sockets":
        est = estimate_memory(inst.n, config.level, config.precision, runtime.workers)
        check_budget(est, config.memory_budget, per_worker=True)
        try:
            transport = SocketTransport(runtime.hosts, runtime.worker_id, runtime.timeout, runtime.bind)
        except PeerDisconnected as exc:
            raise WorkerFailure(str(exc)) from exc
        try:
            return run_worker(inst, config, partition, transport, on_phase, on_record)
        except PeerDisconnected as exc:
            raise WorkerFailure(f"worker {runtime.worker_id}: {exc}") from exc
        finally:
            transport.close()

    est = estimate_memory(inst.n, config.level, config.precision, runtime.workers)
    check_budget(est, config.memory_budget)
    if runtime.workers == 1:
        return run_worker(inst, config, partition, LocalTransport(), on_phase, on_record, False)

    hub = InProcessHub(runtime.workers, runtime.timeout)
    results: list[BoundReport | None] = [None] * runtime.workers
    errors: list[BaseException | None] = [None] * runtime.workers

    def target_fn(w):
        try:
            results[w] = run_worker(inst, config, partition, hub.transport(w),
                                    on_phase if w == 0 else None,
                                    on_record if w == 0 else None, False)
        except BaseException as exc:  # noqa: BLE001 - reported via WorkerFailure
            errors[w] = exc
            hub.failed.set()

    threads = [threading.Thread(target=target_fn, args=(w,), name=f"rltqap-worker-{w}")
               for w in range(runtime.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    primary = [e for e in errors if e is not None and not isinstance(e, PeerDisconnected)]
    failed = primary or [e for e in errors if e is not None]
    if failed:
        w = errors.index(failed[0])
        raise WorkerFailure(f"worker {w} failed: {failed[0]!r}") from failed[0]
    return results[0]
