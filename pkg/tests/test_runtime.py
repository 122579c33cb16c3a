import socket
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rltqap.ascent import EngineConfig, Runtime, mean_transfer, run
from rltqap.errors import (
    BadMagic,
    IterationMismatch,
    MissingComplementary,
    PhaseDesync,
    TooManyWorkers,
    TrailingData,
    TruncatedPayload,
    TupleOutOfRange,
    VersionMismatch,
    WorkerFailure,
)
from rltqap.model import random_instance
from rltqap.runtime.messages import HEADER, Phase, PhaseMessage, decode, encode, encoded_size
from rltqap.runtime.partition import build_partition
from rltqap.runtime.phases import collect_outgoing
from rltqap.runtime.transport import InProcessHub, exchange
from rltqap.tensors import complementaries, init_costs, offset_tuple


def free_ports(k):
    socks = []
    for _ in range(k):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


# partition -------------------------------------------------------------------

def test_partition_examples():
    one = build_partition(4, 1)
    assert one.loads() == [16]
    full = build_partition(4, 16)
    assert full.loads() == [1] * 16
    assert sorted(full.owner_of_pair.tolist()) == list(range(16))
    assert build_partition(20, 20).loads() == [20] * 20
    assert build_partition(5, 3).owner(1, 2) == (1 * 5 + 2) % 3


@pytest.mark.parametrize("scheme", ["block-cyclic", "contiguous"])
@pytest.mark.parametrize("n, workers", [(4, 3), (5, 7), (6, 36), (7, 2)])
def test_partition_balanced_cover(scheme, n, workers):
    part = build_partition(n, workers, scheme)
    loads = part.loads()
    assert sum(loads) == n * n
    assert max(loads) - min(loads) <= 1
    pairs = np.concatenate([part.pairs_of(w) for w in range(workers)])
    assert sorted(pairs.tolist()) == list(range(n * n))


def test_partition_errors():
    with pytest.raises(TooManyWorkers):
        build_partition(3, 10)
    with pytest.raises(ValueError):
        build_partition(3, 2, "striped")


# outgoing sets ---------------------------------------------------------------

def worker_states(inst, level, workers, scheme="block-cyclic"):
    part = build_partition(inst.n, workers, scheme)
    states = [init_costs(inst, level, pairs=part.pairs_of(w)) for w in range(workers)]
    return part, states


def owned_tuples(state, name, arity):
    n = state.n
    arr = state.flat(name)
    for slot, pr in enumerate(state.pairs):
        for off in range(arr.shape[1]):
            yield offset_tuple(int(pr), off, arity, n), arr[slot, off]


def test_collect_single_worker():
    inst = random_instance(4, seed=0)
    part, (s,) = worker_states(inst, 2, 1)
    assert collect_outgoing(s, Phase.COMP_C, part) == {}
    mens = collect_outgoing(s, Phase.MENS_B, part)
    assert list(mens) == [0] and len(mens[0]) == 16


@pytest.mark.parametrize("name, phase, arity, n, workers", [
    ("C", Phase.COMP_C, 2, 4, 2),
    ("D", Phase.COMP_D, 3, 5, 3),
    ("E", Phase.COMP_E, 4, 5, 2),
])
def test_collect_matches_class_enumeration(name, phase, arity, n, workers):
    inst = random_instance(n, seed=n)
    part, states = worker_states(inst, 3, workers)
    for w, s in enumerate(states):
        out = collect_outgoing(s, phase, part, iteration=7)
        expected = {d: set() for d in range(workers) if d != w}
        for tup, _ in owned_tuples(s, name, arity):
            dests = {part.owner(m[0], m[1]) for m in complementaries(name, tup)} - {w}
            for d in dests:
                expected[d].add(tup)
        assert set(out) == set(expected)
        for d, msg in out.items():
            got = [tuple(int(x) for x in t) for t in msg.tuples]
            assert len(got) == len(set(got)), "duplicate sends"
            assert set(got) == expected[d]
            assert msg.iteration == 7 and msg.source == w


def route(states, part, phase):
    """Deliver every worker's outgoing messages without a transport."""
    inbox = [[] for _ in states]
    for s in states:
        for d, msg in collect_outgoing(s, phase, part).items():
            if d != msg.source:
                inbox[d].append(msg)
    return inbox


@pytest.mark.parametrize("workers, scheme", [(2, "block-cyclic"), (3, "contiguous"), (7, "block-cyclic")])
def test_distributed_mean_matches_single_worker(workers, scheme):
    inst = random_instance(5, seed=31)
    rng = np.random.default_rng(5)
    whole = init_costs(inst, 3)
    whole.e[...] = rng.random(whole.e.shape)
    part, states = worker_states(inst, 3, workers, scheme)
    for s in states:
        s.e[...] = whole.e[s.pairs]
    total = sum(s.e.sum() for s in states)
    inbox = route(states, part, Phase.COMP_E)
    for s, msgs in zip(states, inbox):
        mean_transfer(s, "E", msgs)
    mean_transfer(whole, "E")
    for s in states:
        assert np.array_equal(s.e, whole.e[s.pairs])
    assert sum(s.e.sum() for s in states) == pytest.approx(total, rel=1e-12)


def test_missing_complementary():
    inst = random_instance(4, seed=2)
    part, states = worker_states(inst, 2, 2)
    states[0].c[...] = 1.0
    with pytest.raises(MissingComplementary):
        mean_transfer(states[0], "C", [])


# codec -----------------------------------------------------------------------

def test_codec_sizes():
    empty = PhaseMessage.empty(Phase.COMP_E, 3, 9)
    assert len(encode(empty)) == HEADER.size == 16
    one = PhaseMessage.from_entries(Phase.MENS_B, 0, 1, [((2, 3), 1.5)])
    data = encode(one)
    assert len(data) == 16 + 2 + 8 == encoded_size(Phase.MENS_B, 1, 64)
    assert decode(data) == one
    assert decode(data).entries == [((2, 3), 1.5)]


phases = st.sampled_from(list(Phase))


@st.composite
def messages(draw):
    phase = draw(phases)
    precision = draw(st.sampled_from([32, 64]))
    count = draw(st.integers(0, 20))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    tuples = rng.integers(0, 256, (count, phase.arity)).astype(np.uint8)
    dtype = np.float32 if precision == 32 else np.float64
    values = rng.standard_normal(count).astype(dtype) * 1e3
    return PhaseMessage(phase, draw(st.integers(0, 0xFFFF)), draw(st.integers(0, 2**32 - 1)), tuples, values)


@given(messages())
def test_codec_round_trip(msg):
    data = encode(msg)
    assert len(data) == encoded_size(msg.phase, len(msg), msg.precision)
    assert decode(data, msg.precision) == msg


@given(messages(), st.data())
def test_codec_rejects_truncation(msg, data):
    raw = encode(msg)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(TruncatedPayload):
        decode(raw[:cut], msg.precision)


def test_codec_errors():
    raw = encode(PhaseMessage.from_entries(Phase.COMP_C, 1, 2, [((0, 1, 2, 3), 4.0)]))
    with pytest.raises(BadMagic):
        decode(b"XXXX" + raw[4:])
    with pytest.raises(VersionMismatch):
        decode(raw[:4] + bytes([2]) + raw[5:])
    with pytest.raises(TrailingData):
        decode(raw + b"\0")
    with pytest.raises(TupleOutOfRange):
        decode(raw, n=3)
    assert decode(raw, n=4).entries == [((0, 1, 2, 3), 4.0)]


# exchange --------------------------------------------------------------------

def test_exchange_single_worker():
    hub = InProcessHub(1)
    assert exchange(hub.transport(0), Phase.COMP_C, 1, {}, 64) == []


def run_threads(fns):
    errors = []

    def wrap(fn):
        try:
            fn()
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=wrap, args=(f,)) for f in fns]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def test_exchange_two_workers_symmetric():
    hub = InProcessHub(2, timeout=10)
    got = {}
    m01 = PhaseMessage.from_entries(Phase.COMP_C, 0, 4, [((0, 1, 2, 3), 1.0)])
    m10 = PhaseMessage.from_entries(Phase.COMP_C, 1, 4, [((2, 3, 0, 1), 2.0)])

    def worker(w, out):
        got[w] = exchange(hub.transport(w), Phase.COMP_C, 4, out, 64)

    run_threads([lambda: worker(0, {1: m01}), lambda: worker(1, {0: m10})])
    assert got[0] == [m10] and got[1] == [m01]


def test_exchange_stress_four_workers():
    hub = InProcessHub(4, timeout=30)
    workers = 4
    log = {w: [] for w in range(workers)}

    def payload(src, dst, it):
        rng = np.random.default_rng(src * 1000 + dst * 100 + it)
        k = int(rng.integers(0, 6))
        return PhaseMessage(Phase.COMP_D, src, it, rng.integers(0, 8, (k, 6)), rng.random(k))

    def worker(w):
        t = hub.transport(w)
        for it in range(100):
            phase = Phase.COMP_D
            out = {d: payload(w, d, it) for d in range(workers) if d != w}
            log[w].append(exchange(t, phase, it, out, 64))

    run_threads([lambda w=w: worker(w) for w in range(workers)])
    for w in range(workers):
        for it, msgs in enumerate(log[w]):
            assert [m.source for m in msgs] == [s for s in range(workers) if s != w]
            for m in msgs:
                assert m == payload(m.source, w, it)


def test_exchange_iteration_mismatch():
    hub = InProcessHub(2, timeout=5)
    hub.transport(1).send(0, encode(PhaseMessage.empty(Phase.COMP_C, 1, 5)))
    with pytest.raises(IterationMismatch):
        exchange(hub.transport(0), Phase.COMP_C, 4, {}, 64)


def test_exchange_phase_desync():
    hub = InProcessHub(2, timeout=5)
    hub.transport(1).send(0, encode(PhaseMessage.empty(Phase.COMP_D, 1, 4)))
    with pytest.raises(PhaseDesync):
        exchange(hub.transport(0), Phase.COMP_C, 4, {}, 64)


# end to end ------------------------------------------------------------------

def trajectory(report):
    return [(it, float(lb).hex()) for it, lb in report.lb_trajectory]


def test_inprocess_workers_bit_identical():
    inst = random_instance(6, seed=12)
    config = EngineConfig(level=3, max_iterations=3, target=None)
    ref = trajectory(run(inst, config))
    for workers, scheme in [(2, "block-cyclic"), (5, "contiguous")]:
        got = run(inst, config, Runtime(workers=workers, scheme=scheme))
        assert trajectory(got) == ref
        assert got.partition["workers"] == workers


def test_sockets_bit_identical():
    inst = random_instance(6, seed=13)
    config = EngineConfig(level=2, max_iterations=3, target=None)
    ref = trajectory(run(inst, config))
    hosts = [("127.0.0.1", p) for p in free_ports(3)]
    reports = {}

    def worker(w):
        reports[w] = run(inst, config, Runtime(transport="sockets", hosts=hosts, worker_id=w, timeout=30))

    run_threads([lambda w=w: worker(w) for w in range(3)])
    for w in range(3):
        assert trajectory(reports[w]) == ref
        assert sum(r.comm_bytes for r in reports[w].records) > 0


def test_socket_peer_missing_is_worker_failure():
    hosts = [("127.0.0.1", p) for p in free_ports(2)]
    with pytest.raises(WorkerFailure):
        run(random_instance(4, seed=0), EngineConfig(level=1, max_iterations=1),
            Runtime(transport="sockets", hosts=hosts, worker_id=1, timeout=1.0))


def test_inprocess_failure_propagates(monkeypatch):
    import rltqap.ascent as ascent

    real = ascent.concentrate_up

    def boom(state, source):
        if source == "D" and 0 not in state.pairs:
            raise ascent.NegativeSourceCoefficient("injected")
        return real(state, source)

    monkeypatch.setattr(ascent, "concentrate_up", boom)
    with pytest.raises(WorkerFailure, match="injected"):
        run(random_instance(5, seed=1), EngineConfig(level=2, max_iterations=2, target=None),
            Runtime(workers=2, timeout=20))
