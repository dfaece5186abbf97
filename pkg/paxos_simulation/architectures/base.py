#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from abc import ABC, abstractmethod
from collections import deque
from enum import Enum
from typing import Callable, Deque, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from paxos_simulation.errors import SimulationError
from paxos_simulation.kernel import seconds
from paxos_simulation.network import Network, NodeSpec, DestDown
from paxos_simulation.paxos import (
    Acceptor, AgreementAudit, DecisionCollector, Learner, Proposer, ProtocolError, Reject, Value)
from paxos_simulation.steering import SteeringParams

LEADER = "leader"
PROPOSER = "proposer"
ACCEPTOR = "acceptor"
LEARNER = "learner"
ROLES = (LEADER, PROPOSER, ACCEPTOR, LEARNER)

# message kinds
REQUEST = "REQ"
RESPONSE = "RESP"
BATCH = "BATCH"
PHASE1A = "1A"
PHASE1B = "1B"
PHASE2A = "2A"
PHASE2B = "2B"
REJECT = "REJECT"

ID_SIZE = 8


class BadConfig(SimulationError):
    pass


class NodeNotInRing(SimulationError):
    pass


class Variant(Enum):
    LIBPAXOS = "LIBPAXOS"
    OPENREPLICA = "OPENREPLICA"
    SPAXOS = "SPAXOS"
    RINGPAXOS = "RINGPAXOS"

    def __str__(self) -> str:
        return self.value


class ArchConfig:
    """
    Which library model to wire, on which nodes, with which roles and parameters.
    """

    def __init__(
        self,
        variant: Variant,
        nodes: Sequence[Tuple[NodeSpec, FrozenSet[str]]],
        f: int = 1,
        batch_bytes: int = 0,
        batch_timeout_s: float = 0.005,
        ring_order: Optional[Sequence[str]] = None,
        ring_entry: Optional[str] = None,
        steering: Optional[SteeringParams] = None,
        instance_timeout_s: float = 0.5,
        session_timeout_s: float = 3.0,
        reconfig_delay_s: float = 0.5,
        ring_window: int = 32,
        order_batch: int = 64,
        order_window: int = 16,
        proxies: int = 1
    ) -> None:
        self.variant = variant
        self.nodes = [(spec, frozenset(roles)) for spec, roles in nodes]
        self.f = f
        self.batch_bytes = batch_bytes
        self.batch_timeout_s = batch_timeout_s
        self.ring_order = list(ring_order) if ring_order else None
        self.ring_entry = ring_entry
        self.steering = steering or SteeringParams.build()
        self.instance_timeout_s = instance_timeout_s
        self.session_timeout_s = session_timeout_s
        self.reconfig_delay_s = reconfig_delay_s
        self.ring_window = ring_window
        self.order_batch = order_batch
        self.order_window = order_window
        self.proxies = proxies

    @property
    def node_ids(self) -> List[str]:
        return [spec.id for spec, _ in self.nodes]

    def roles(self, node_id: str) -> FrozenSet[str]:
        for spec, roles in self.nodes:
            if spec.id == node_id:
                return roles
        raise BadConfig("Unknown node {}".format(node_id))

    def having(self, role: str) -> List[str]:
        return [spec.id for spec, roles in self.nodes if role in roles]

    @property
    def leader(self) -> str:
        leaders = self.having(LEADER)
        if len(leaders) != 1:
            raise BadConfig("Expected exactly one leader, got {}".format(leaders))
        return leaders[0]

    @property
    def acceptors(self) -> List[str]:
        return self.having(ACCEPTOR)

    @property
    def learners(self) -> List[str]:
        return self.having(LEARNER)

    @property
    def batch_timeout(self) -> int:
        return seconds(self.batch_timeout_s)

    @property
    def instance_timeout(self) -> int:
        return seconds(self.instance_timeout_s)

    @property
    def session_timeout(self) -> int:
        return seconds(self.session_timeout_s)

    @property
    def reconfig_delay(self) -> int:
        return seconds(self.reconfig_delay_s)

    def validate(self):
        """
        Raises BadConfig unless the node table matches the variant.
        """
        ids = self.node_ids
        if len(set(ids)) != len(ids):
            raise BadConfig("Duplicate node ids in {}".format(ids))
        if self.f < 1:
            raise BadConfig("f must be at least 1, got {}".format(self.f))
        for spec, roles in self.nodes:
            unknown = roles - set(ROLES)
            if unknown:
                raise BadConfig("Node {} has unknown roles {}".format(spec.id, sorted(unknown)))

        if len(self.acceptors) != 2 * self.f + 1:
            raise BadConfig("Need {} acceptors for f={}, got {}".format(2 * self.f + 1, self.f, len(self.acceptors)))

        leader = self.leader
        if PROPOSER not in self.roles(leader):
            raise BadConfig("Leader {} must be a proposer".format(leader))
        if self.steering.enabled and self.variant != Variant.LIBPAXOS:
            raise BadConfig("Quorum steering is only available for {}".format(Variant.LIBPAXOS))

        if self.variant in (Variant.LIBPAXOS, Variant.OPENREPLICA):
            if ACCEPTOR in self.roles(leader):
                raise BadConfig("{} runs the leader on a separate node".format(self.variant))
            if self.variant == Variant.LIBPAXOS and not self.learners:
                raise BadConfig("{} needs at least one learner".format(self.variant))

        elif self.variant == Variant.SPAXOS:
            for spec, roles in self.nodes:
                if not {PROPOSER, ACCEPTOR, LEARNER} <= roles:
                    raise BadConfig("S-Paxos replica {} must be proposer, acceptor and learner".format(spec.id))

        elif self.variant == Variant.RINGPAXOS:
            if ACCEPTOR not in self.roles(leader):
                raise BadConfig("The Ring Paxos coordinator must be an acceptor")
            if not self.learners:
                raise BadConfig("{} needs at least one learner".format(self.variant))
            if not self.ring_order or sorted(self.ring_order) != sorted(ids):
                raise BadConfig("Ring order {} must list every node exactly once".format(self.ring_order))
            if self.ring_entry is not None and self.ring_entry not in ids:
                raise BadConfig("Ring entry {} is not a ring node".format(self.ring_entry))
            if self.ring_window < 1:
                raise BadConfig("Ring window must be positive")
        return self


class Process(ABC):
    """
    Protocol role running on one node. Messages are dispatched on their kind
    through HANDLERS; CPU and bandwidth costs are charged by the network.
    """

    HANDLERS: Dict[str, Callable] = {}

    def __init__(self, node_id: str, cluster) -> None:
        self.id = node_id
        self.cluster = cluster
        self.network: Network = cluster.network
        self.cfg: ArchConfig = cluster.cfg

    @property
    def now(self) -> int:
        return self.network.engine.now()

    @abstractmethod
    def start(self):
        pass

    def send(self, dst: str, kind: str, payload: int = 0, body=None):
        return self.network.send_to(self.id, dst, kind, payload, body)

    def timer(self, delay: int, kind: str, action: Callable, *args) -> int:
        return self.network.timer(self.id, delay, kind, action, *args)

    def cancel(self, handle) -> bool:
        return self.network.engine.cancel(handle)

    def is_alive(self, node_id: str) -> bool:
        return self.network.node(node_id).alive

    def on_message(self, msg):
        handler = self.HANDLERS.get(msg.kind)
        if handler is None:
            raise ProtocolError("{} at {} cannot handle {}".format(type(self).__name__, self.id, msg.kind))
        handler(self, msg)

    def on_peer_down(self, error: DestDown):
        pass

    def respond(self, dst: str, client_ids: Sequence):
        self.send(dst, RESPONSE, ID_SIZE * len(client_ids), tuple(client_ids))

    def __str__(self) -> str:
        return "{} {}".format(type(self).__name__, self.id)


def deliver_ready(collector: DecisionCollector, learner: Learner) -> List[Tuple[int, Value]]:
    """
    Delivers the gap-free prefix of decided instances and returns it with instance numbers.
    """
    first = learner.next_instance
    values = learner.deliver(collector.decided)
    return list(zip(range(first, first + len(values)), values))


class LeaderProcess(Process):
    """
    The single configured proposer. Phase 1 is pre-executed at start; requests
    arriving before the promises are queued.
    """

    HANDLERS = {
        PHASE1B: lambda self, m: self.on_promise(m),
        PHASE2B: lambda self, m: self.on_accepted(m),
        REJECT: lambda self, m: self.on_reject(m),
    }

    def __init__(self, node_id: str, cluster, acceptors: Iterable[str]) -> None:
        super().__init__(node_id, cluster)
        self.acceptors = sorted(acceptors)
        self.proposer = Proposer(node_id, self.acceptors, self.cfg.f, audit=cluster.audit)
        self.waiting: Deque[Tuple[Value, str]] = deque()
        self.timeouts: Dict[int, int] = {}
        self.origins: Dict[int, str] = {}

    def start(self):
        msg = self.proposer.prepare()
        for acceptor in self.acceptors:
            self.send(acceptor, PHASE1A, 0, msg)

    def targets(self) -> List[str]:
        return self.proposer.live_acceptors

    def submit(self, value: Value, origin: str):
        if not self.proposer.ready:
            self.waiting.append((value, origin))
            return
        self.propose(value, origin)

    def propose(self, value: Value, origin: str):
        messages = self.proposer.propose(value, self.targets())
        instance = messages[0][1].instance
        self.origins[instance] = origin
        for dst, msg in messages:
            self.send(dst, PHASE2A, value.payload_size, msg)
        self._arm_timeout(instance)

    def on_promise(self, m):
        was_ready = self.proposer.ready
        for dst, msg in self.proposer.on_phase1b(m.body):
            self.send(dst, PHASE2A, msg.value.payload_size, msg)
        if not was_ready and self.proposer.ready:
            while self.waiting:
                self.propose(*self.waiting.popleft())

    def on_reject(self, m):
        self.proposer.on_reject(m.body)

    def on_accepted(self, m):
        decision = self.proposer.on_phase2b(m.body)
        if decision is None:
            return
        self.cancel(self.timeouts.pop(decision.instance, None))
        self.decided(decision)

    def decided(self, decision):
        pass

    def on_timeout(self, instance: int):
        self.timeouts.pop(instance, None)
        if instance not in self.proposer.pending:
            return
        if self.proposer.needs_retry(instance):
            msg = self.proposer.retry(instance)
            for acceptor in self.proposer.live_acceptors:
                self.send(acceptor, PHASE1A, 0, msg)
        self._arm_timeout(instance)

    def on_peer_down(self, error: DestDown):
        if error.node_id in self.acceptors:
            self.proposer.down.add(error.node_id)

    def _arm_timeout(self, instance: int):
        self.timeouts[instance] = self.timer(self.cfg.instance_timeout, "timeout", self.on_timeout, instance)


class AcceptorProcess(Process):
    """
    Acceptor answering Phase 1 to its sender and sending Phase 2B to the sender and
    every listener, with the full value or a value reference.
    """

    HANDLERS = {
        PHASE1A: lambda self, m: self.on_prepare(m),
        PHASE2A: lambda self, m: self.on_accept(m),
    }

    def __init__(self, node_id: str, cluster, listeners: Iterable[str] = (), value_in_2b: bool = True) -> None:
        super().__init__(node_id, cluster)
        self.acceptor = Acceptor(node_id)
        self.listeners = list(listeners)
        self.value_in_2b = value_in_2b

    def start(self):
        pass

    def on_prepare(self, m):
        for reply in self.acceptor.on_phase1a(m.body):
            if isinstance(reply, Reject):
                self.send(m.src, REJECT, 0, reply)
            else:
                self.send(m.src, PHASE1B, reply.v_val.payload_size if reply.v_val else 0, reply)

    def on_accept(self, m):
        reply = self.acceptor.on_phase2a(m.body)
        if isinstance(reply, Reject):
            self.send(m.src, REJECT, 0, reply)
            return

        payload = reply.value.payload_size if self.value_in_2b else 0
        for dst in [m.src] + [node for node in self.listeners if node != m.src]:
            self.send(dst, PHASE2B, payload, reply)


class Cluster:
    """
    The processes of one run wired onto a network, plus the hooks clients need:
    attach points per policy and the node client proxies forward batches to.
    """

    def __init__(self, cfg: ArchConfig, network: Network, metrics=None, audit: AgreementAudit = None,
                 warnings: List[str] = None) -> None:
        self.cfg = cfg
        self.network = network
        self.metrics = metrics
        self.audit = audit or AgreementAudit()
        self.warnings = warnings if warnings is not None else []

        self.processes: Dict[str, Process] = {}
        self.clients: Dict[str, Process] = {}
        self.attach_points: Dict[str, List[str]] = {}
        self.proxy_target: Optional[str] = None
        self.delivery_node: Optional[str] = None
        self.coordination = None

    @property
    def engine(self):
        return self.network.engine

    def add(self, process: Process) -> Process:
        self.processes[process.id] = process
        self.network.attach(process.id, process)
        return process

    def start(self):
        for node_id in sorted(self.processes):
            self.processes[node_id].start()

    def learners(self) -> List[Learner]:
        return [p.learner for _, p in sorted(self.processes.items()) if getattr(p, "learner", None) is not None]

    def record_delivery(self, instance: int, value: Value, first_quorum):
        if self.metrics is not None:
            self.metrics.on_decision(instance, value, self.engine.now(), first_quorum)
