#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Ring Paxos: processes form a logical uni-directional ring. The coordinator puts
a Phase 2A on the ring, every acceptor adds its vote, the first one to see f+1
votes decides and the decision keeps circulating until every process has
seen it. Blocking I/O between ring neighbours; replies to clients take a
direct latency-only path.

A crashed member is noticed by the coordination service after its session
timeout; the ring is rebuilt without it and the coordinator re-runs Phase 1 at
a higher ballot and re-proposes what is still undecided.
"""

from collections import deque, namedtuple
from typing import Deque, List

from paxos_simulation.architectures.base import (
    ACCEPTOR, BATCH, ID_SIZE, LEARNER, RESPONSE, ArchConfig, BadConfig, Cluster, NodeNotInRing, Process, Variant,
    deliver_ready)
from paxos_simulation.network import HEADER_SIZE, Discipline
from paxos_simulation.paxos import (
    Acceptor, DecisionCollector, Learner, Phase1A, Phase1B, Phase2A, Phase2B, Proposer, Reject, Value, quorum_size)

RING_2 = "RING2"
RING_1 = "RING1"

RingMessage = namedtuple('RingMessage', ['epoch', 'ballot', 'instance', 'value', 'votes', 'decider'])
RingPrepare = namedtuple('RingPrepare', ['epoch', 'phase1a', 'replies'])


class RingState(namedtuple('RingState', ['order', 'epoch', 'reconfiguring_until'])):
    """
    Ring membership as installed by the coordination service. Decisions are
    suspended while reconfiguring_until lies in the future.
    """

    def successor(self, node_id: str) -> str:
        idx = self.order.index(node_id)
        return self.order[(idx + 1) % len(self.order)]

    def frozen(self, now: int) -> bool:
        return self.reconfiguring_until is not None and now < self.reconfiguring_until


def ring_reconfigure(rs: RingState, dead: str, at: int, session_timeout: int = 3_000_000_000,
                     reconfig_delay: int = 500_000_000) -> RingState:
    """
    Ring without the dead node, frozen until the crash was detected (session
    timeout) and the new ring installed (reconfiguration delay).
    """
    if dead not in rs.order:
        raise NodeNotInRing("Node {} is not part of ring {}".format(dead, list(rs.order)))
    order = tuple(node for node in rs.order if node != dead)
    return RingState(order, rs.epoch + 1, at + session_timeout + reconfig_delay)


class RingNode(Process):

    HANDLERS = {
        BATCH: lambda self, m: self.on_batch(m),
        RING_2: lambda self, m: self.on_ring(m),
        RING_1: lambda self, m: self.on_ring_prepare(m),
    }

    def __init__(self, node_id: str, cluster, ring: RingState) -> None:
        super().__init__(node_id, cluster)
        self.ring = ring
        roles = self.cfg.roles(node_id)
        self.coordinator = self.cfg.leader
        self.acceptor = Acceptor(node_id) if ACCEPTOR in roles else None
        self.collector = DecisionCollector(self.cfg.f, audit=cluster.audit)
        self.learner = Learner(node_id, audit=cluster.audit) if LEARNER in roles else None

    def start(self):
        pass

    @property
    def successor(self) -> str:
        return self.ring.successor(self.id)

    def on_batch(self, m):
        self.forward(BATCH, m.size - HEADER_SIZE, m.body)

    def forward(self, kind: str, payload: int, body):
        self.send(self.successor, kind, payload, body)

    def stale(self, epoch: int) -> bool:
        return epoch != self.ring.epoch or self.ring.frozen(self.now)

    def vote(self, msg: RingMessage) -> RingMessage:
        """
        Adds this acceptor's Phase 2B to the circulating message; the vote that
        completes f+1 makes this node the decider.
        """
        if msg.decider is not None or self.acceptor is None:
            return msg
        reply = self.acceptor.on_phase2a(Phase2A(msg.ballot, msg.instance, msg.value))
        if not isinstance(reply, Phase2B):
            return msg
        votes = msg.votes + (self.id,)
        decider = self.id if len(votes) >= quorum_size(self.cfg.f) else None
        return msg._replace(votes=votes, decider=decider)

    def on_ring(self, m):
        if self.stale(m.body.epoch):
            return
        msg = self.vote(m.body)
        if msg.decider is not None:
            self.learn(msg)
        self.pass_on(msg)

    def pass_on(self, msg: RingMessage):
        """
        Forwards a Phase 2 message. A decision stops in front of its decider; past
        the coordinator every node has seen the value, so only the id travels.
        """
        if msg.decider is not None and self.successor == msg.decider:
            return
        carried = msg.decider is None or (self.id != self.coordinator and self.successor != self.coordinator)
        self.forward(RING_2, msg.value.payload_size if carried else ID_SIZE, msg)

    def learn(self, msg: RingMessage):
        first_quorum = frozenset(msg.votes[:quorum_size(self.cfg.f)])
        if not self.collector.learn(msg.instance, msg.value, msg.ballot, first_quorum):
            return
        if self.learner is None:
            return
        for instance, value in deliver_ready(self.collector, self.learner):
            if self.id == self.cluster.delivery_node:
                self.cluster.record_delivery(instance, value, self.collector.first_quorums[instance])
                for client, seq in value.client_ids:
                    self.network.post(self.id, client, RESPONSE, ID_SIZE, ((client, seq),))

    def on_ring_prepare(self, m):
        msg = m.body
        if self.stale(msg.epoch):
            return
        if self.acceptor is not None:
            msg = msg._replace(replies=msg.replies + tuple(self.acceptor.on_phase1a(msg.phase1a)))
        self.forward(RING_1, _reported_bytes(msg.replies), msg)

    def install(self, ring: RingState, dead: str):
        self.ring = ring


class RingCoordinator(RingNode):
    """
    Ring leader: pre-executes Phase 1 around the ring, keeps at most ring_window
    instances in flight and frees a slot when the decision passes by.
    """

    def __init__(self, node_id: str, cluster, ring: RingState) -> None:
        super().__init__(node_id, cluster, ring)
        self.proposer = Proposer(node_id, self.cfg.acceptors, self.cfg.f, audit=cluster.audit)
        self.queue: Deque[Value] = deque()
        self.resume_timer = None

    def start(self):
        self.prepare(self.proposer.prepare())

    def prepare(self, phase1a: Phase1A):
        replies = tuple(self.acceptor.on_phase1a(phase1a)) if self.acceptor is not None else ()
        msg = RingPrepare(self.ring.epoch, phase1a, replies)
        self.forward(RING_1, _reported_bytes(msg.replies), msg)

    def on_batch(self, m):
        self.queue.append(Value(m.size - HEADER_SIZE, m.body))
        self.propose()

    def propose(self):
        if not self.proposer.ready or self.ring.frozen(self.now):
            return
        while self.queue and len(self.proposer.pending) < self.cfg.ring_window:
            value = self.queue.popleft()
            _, msg = self.proposer.propose(value, self.proposer.live_acceptors)[0]
            self.circulate(msg)

    def circulate(self, phase2a: Phase2A):
        msg = RingMessage(self.ring.epoch, phase2a.ballot, phase2a.instance, phase2a.value, (), None)
        self.pass_on(self.vote(msg))

    def on_ring(self, m):
        msg = m.body
        if self.stale(msg.epoch):
            return
        if msg.decider is None:
            # went round without collecting f+1 votes
            self.cluster.warnings.append("{}: instance {} came back undecided".format(self.id, msg.instance))
            return
        for acceptor in msg.votes[:quorum_size(self.cfg.f)]:
            self.proposer.on_phase2b(Phase2B(msg.ballot, msg.instance, msg.value, acceptor))
        self.learn(msg)
        self.pass_on(msg)
        self.propose()

    def on_ring_prepare(self, m):
        msg = m.body
        if self.stale(msg.epoch):
            return
        for reply in msg.replies:
            if isinstance(reply, Reject):
                self.proposer.on_reject(reply)
            else:
                self.proposer.on_phase1b(reply)
        if not self.proposer.ready:
            self.cluster.warnings.append("{}: ring Phase 1 at {} without a quorum".format(self.id, self.proposer.ballot))
            return
        for phase2a in self.proposer.reproposals():
            self.circulate(phase2a)
        self.propose()

    def install(self, ring: RingState, dead: str):
        super().install(ring, dead)
        self.proposer.down.add(dead)
        self.cancel(self.resume_timer)
        self.resume_timer = self.timer(max(0, ring.reconfiguring_until - self.now), "reconfigured", self.reconfigured)

    def reconfigured(self):
        """
        Runs Phase 1 on the new ring from the first instance not known to be decided.
        """
        self.resume_timer = None
        undecided = self.proposer.undecided()
        first = undecided[0] if undecided else self.proposer.next_instance
        self.prepare(self.proposer.prepare_from(first))


class CoordinationService:
    """
    Stand-in for the external coordination service: it notices a crashed ring
    member after the session timeout and installs the new ring at every live
    member.
    """

    def __init__(self, cluster: Cluster, ring: RingState) -> None:
        self.cluster = cluster
        self.ring = ring
        self.history: List[RingState] = [ring]

    def on_crash(self, node_id: str):
        if node_id not in self.ring.order:
            return
        engine = self.cluster.engine
        engine.schedule_in(self.cluster.cfg.session_timeout, "coordination", "detect:" + node_id,
                           self.detect, node_id, engine.now())

    def detect(self, node_id: str, crashed_at: int):
        cfg = self.cluster.cfg
        self.ring = ring_reconfigure(self.ring, node_id, crashed_at, cfg.session_timeout, cfg.reconfig_delay)
        self.history.append(self.ring)
        for member in self.ring.order:
            process = self.cluster.processes[member]
            if self.cluster.network.node(member).alive:
                process.install(self.ring, node_id)


def _reported_bytes(replies) -> int:
    return sum(r.v_val.payload_size for r in replies if isinstance(r, Phase1B) and r.v_val is not None)


def wire_ring(cfg: ArchConfig, cluster: Cluster) -> Cluster:
    if cfg.variant != Variant.RINGPAXOS:
        raise BadConfig("wire_ring needs variant {}, got {}".format(Variant.RINGPAXOS, cfg.variant))

    order = tuple(cfg.ring_order)
    for src in order:
        for dst in order:
            if src != dst:
                cluster.network.set_discipline(src, dst, Discipline.BLOCKING)

    ring = RingState(order, 0, None)
    for node_id in order:
        if node_id == cfg.leader:
            cluster.add(RingCoordinator(node_id, cluster, ring))
        else:
            cluster.add(RingNode(node_id, cluster, ring))

    service = CoordinationService(cluster, ring)
    cluster.network.crash_watchers.append(service.on_crash)
    cluster.coordination = service

    cluster.delivery_node = [node for node in order if node in cfg.learners][0]
    cluster.proxy_target = cfg.ring_entry or cfg.leader
    cluster.attach_points = {"PROXY": []}
    return cluster
