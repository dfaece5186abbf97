#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
S-Paxos: every replica takes client requests, batches them and forwards each
batch to all other replicas, which acknowledge to everyone. A batch acknowledged
by f+1 replicas is stable. The leader orders stable batch ids only; a replica
executes an instance once it is decided and all its batches are stable and
present. Replica-to-replica connections use blocking I/O.
"""

from collections import deque, namedtuple
from typing import Deque, Dict, List, Optional, Set, Tuple

from paxos_simulation.architectures.base import (
    ID_SIZE, PHASE1A, PHASE1B, PHASE2A, PHASE2B, REJECT, REQUEST, ArchConfig, BadConfig, Cluster, Process,
    Variant)
from paxos_simulation.network import HEADER_SIZE, DestDown, Discipline
from paxos_simulation.paxos import (
    DECIDED, Acceptor, DecisionCollector, Learner, Phase2B, Proposer, Reject, Value, quorum_size)

FORWARD = "FWD"
ACK = "ACK"
FETCH = "FETCH"

Batch = namedtuple('Batch', ['batch_id', 'size', 'client_ids'])


class StableTracker:
    """
    Per batch id: which replicas are known to hold it, whether it is stable, its
    ordered position and whether it was executed.
    """

    Entry = namedtuple('Entry', ['forwarder', 'holders', 'ordered_at', 'executed'])

    def __init__(self, f: int) -> None:
        self.f = f
        self.holders: Dict[tuple, Set[str]] = {}
        self.ordered: Dict[tuple, int] = {}
        self.executed: Set[tuple] = set()

    def add_holder(self, batch_id: tuple, replica: str) -> bool:
        """
        Records that replica holds the batch. Returns True when this makes it stable.
        """
        holders = self.holders.setdefault(batch_id, {batch_id[0]})
        was_stable = len(holders) >= quorum_size(self.f)
        holders.add(replica)
        return not was_stable and len(holders) >= quorum_size(self.f)

    def is_stable(self, batch_id: tuple) -> bool:
        return len(self.holders.get(batch_id, ())) >= quorum_size(self.f)

    def mark_ordered(self, batch_id: tuple, instance: int):
        self.ordered.setdefault(batch_id, instance)

    def mark_executed(self, batch_id: tuple):
        if not self.is_stable(batch_id) or batch_id not in self.ordered:
            raise AssertionError("Batch {} executed before it was stable and ordered".format(batch_id))
        self.executed.add(batch_id)

    def entry(self, batch_id: tuple) -> Entry:
        return StableTracker.Entry(batch_id[0], frozenset(self.holders.get(batch_id, ())),
                                   self.ordered.get(batch_id), batch_id in self.executed)


class SPaxosReplica(Process):

    HANDLERS = {
        REQUEST: lambda self, m: self.on_request(m),
        FORWARD: lambda self, m: self.on_forward(m),
        ACK: lambda self, m: self.on_ack(m),
        FETCH: lambda self, m: self.on_fetch(m),
        PHASE1A: lambda self, m: self.on_prepare(m),
        PHASE1B: lambda self, m: self.on_promise(m),
        PHASE2A: lambda self, m: self.on_accept(m),
        PHASE2B: lambda self, m: self.on_accepted(m),
        REJECT: lambda self, m: self.on_reject(m),
    }

    def __init__(self, node_id: str, cluster) -> None:
        super().__init__(node_id, cluster)
        self.replicas = [r for r in self.cfg.acceptors if r != node_id]
        self.leader = self.cfg.leader
        self.down: Set[str] = set()

        self.acceptor = Acceptor(node_id)
        self.collector = DecisionCollector(self.cfg.f, audit=cluster.audit)
        self.learner = Learner(node_id, audit=cluster.audit)
        self.tracker = StableTracker(self.cfg.f)
        self.batches: Dict[tuple, Batch] = {}
        self.fetching: Set[tuple] = set()

        self.pending: List[Tuple[str, int, int]] = []
        self.pending_bytes = 0
        self.flush_timer = None
        self.batch_no = 0

        self.proposer: Optional[Proposer] = None
        self.to_order: Deque[tuple] = deque()
        if node_id == self.leader:
            self.proposer = Proposer(node_id, self.cfg.acceptors, self.cfg.f, audit=cluster.audit)

    @property
    def live_replicas(self) -> List[str]:
        return [r for r in self.replicas if r not in self.down]

    def start(self):
        if self.proposer is not None:
            msg = self.proposer.prepare()
            for reply in self.acceptor.on_phase1a(msg):
                self.proposer.on_phase1b(reply)
            for replica in self.replicas:
                self.send(replica, PHASE1A, 0, msg)

    #
    #   Dissemination
    #

    def on_request(self, m):
        client, seq = m.body
        size = m.size - HEADER_SIZE
        self.pending.append((client, seq, size))
        self.pending_bytes += size
        if self.pending_bytes >= self.cfg.batch_bytes:
            self.flush()
        elif self.flush_timer is None:
            self.flush_timer = self.timer(self.cfg.batch_timeout, "flush", self.flush)

    def flush(self):
        self.cancel(self.flush_timer)
        self.flush_timer = None
        if not self.pending:
            return

        self.batch_no += 1
        batch = Batch((self.id, self.batch_no), self.pending_bytes, tuple((c, s) for c, s, _ in self.pending))
        self.pending = []
        self.pending_bytes = 0

        self.batches[batch.batch_id] = batch
        self.tracker.add_holder(batch.batch_id, self.id)
        for replica in self.live_replicas:
            self.send(replica, FORWARD, batch.size, batch)

    def on_forward(self, m):
        batch = m.body
        self.batches[batch.batch_id] = batch
        self.fetching.discard(batch.batch_id)
        stable = self.tracker.add_holder(batch.batch_id, m.src)
        stable = self.tracker.add_holder(batch.batch_id, self.id) or stable
        if batch.batch_id[0] == m.src:
            for replica in self.live_replicas:
                self.send(replica, ACK, ID_SIZE, batch.batch_id)
        if stable:
            self.on_stable(batch.batch_id)
        self.execute()

    def on_ack(self, m):
        if self.tracker.add_holder(m.body, m.src):
            self.on_stable(m.body)
            self.execute()

    def on_fetch(self, m):
        batch = self.batches.get(m.body)
        if batch is not None:
            self.send(m.src, FORWARD, batch.size, batch)

    def on_stable(self, batch_id: tuple):
        if self.proposer is not None:
            self.to_order.append(batch_id)
            self.order()

    #
    #   Ordering
    #

    def order(self):
        """
        Proposes stable batch ids, up to order_batch per instance and order_window
        instances in flight.
        """
        if self.proposer is None or not self.proposer.ready:
            return
        while self.to_order and len(self.proposer.pending) < self.cfg.order_window:
            ids = [self.to_order.popleft() for _ in range(min(self.cfg.order_batch, len(self.to_order)))]
            value = Value(ID_SIZE * len(ids), ids)
            messages = self.proposer.propose(value, self.cfg.acceptors)
            for dst, msg in messages:
                if dst == self.id:
                    self.accept_locally(msg)
                elif dst not in self.down:
                    self.send(dst, PHASE2A, value.payload_size, msg)

    def on_prepare(self, m):
        for reply in self.acceptor.on_phase1a(m.body):
            self.send(m.src, REJECT if isinstance(reply, Reject) else PHASE1B, 0, reply)

    def on_promise(self, m):
        was_ready = self.proposer.ready
        for dst, msg in self.proposer.on_phase1b(m.body):
            if dst == self.id:
                self.accept_locally(msg)
            else:
                self.send(dst, PHASE2A, msg.value.payload_size, msg)
        if not was_ready and self.proposer.ready:
            self.order()

    def on_reject(self, m):
        self.proposer.on_reject(m.body)

    def on_accept(self, m):
        reply = self.acceptor.on_phase2a(m.body)
        if isinstance(reply, Reject):
            self.send(m.src, REJECT, 0, reply)
            return
        for replica in self.live_replicas:
            self.send(replica, PHASE2B, 0, reply)
        self.count(reply)

    def accept_locally(self, msg):
        reply = self.acceptor.on_phase2a(msg)
        if isinstance(reply, Phase2B):
            for replica in self.live_replicas:
                self.send(replica, PHASE2B, 0, reply)
            self.count(reply)

    def on_accepted(self, m):
        self.count(m.body)

    def count(self, msg: Phase2B):
        if self.proposer is not None:
            decision = self.proposer.on_phase2b(msg)
            if decision is not None:
                self.collector.learn(decision.instance, decision.value, decision.ballot, decision.first_quorum)
                self.order()
                self.execute()
            return

        status, decision = self.collector.on_phase2b(msg.acceptor, msg.ballot, msg.instance, msg.value)
        if status == DECIDED:
            self.execute()

    #
    #   Execution
    #

    def execute(self):
        """
        Executes decided instances in order while their batches are stable and present.
        """
        while self.learner.next_instance in self.collector.decided:
            instance = self.learner.next_instance
            value = self.collector.decided[instance]
            for batch_id in value.client_ids:
                self.tracker.mark_ordered(batch_id, instance)

            missing = [b for b in value.client_ids if b not in self.batches or not self.tracker.is_stable(b)]
            if missing:
                self.fetch(missing)
                return

            self.learner.deliver({instance: value})
            batches = [self.batches[b] for b in value.client_ids]
            for batch in batches:
                self.tracker.mark_executed(batch.batch_id)
                if batch.batch_id[0] == self.id:
                    for client, seq in batch.client_ids:
                        self.respond(client, ((client, seq),))

            if self.id == self.cluster.delivery_node:
                executed = Value(sum(b.size for b in batches),
                                 tuple(cid for b in batches for cid in b.client_ids))
                self.cluster.record_delivery(instance, executed, self.collector.first_quorums[instance])

    def fetch(self, batch_ids: List[tuple]):
        for batch_id in batch_ids:
            if batch_id in self.batches or batch_id in self.fetching:
                continue
            holders = [r for r in sorted(self.tracker.holders.get(batch_id, ()))
                       if r != self.id and r not in self.down]
            if holders:
                self.fetching.add(batch_id)
                self.send(holders[0], FETCH, ID_SIZE, batch_id)

    def on_peer_down(self, error: DestDown):
        if error.node_id not in self.replicas:
            return
        self.down.add(error.node_id)
        if self.proposer is not None:
            self.proposer.down.add(error.node_id)
        self.fetching = set()
        self.execute()


def wire_spaxos(cfg: ArchConfig, cluster: Cluster) -> Cluster:
    if cfg.variant != Variant.SPAXOS:
        raise BadConfig("wire_spaxos needs variant {}, got {}".format(Variant.SPAXOS, cfg.variant))

    replicas = cfg.acceptors
    for src in replicas:
        for dst in replicas:
            if src != dst:
                cluster.network.set_discipline(src, dst, Discipline.BLOCKING)

    for replica in replicas:
        cluster.add(SPaxosReplica(replica, cluster))

    cluster.delivery_node = cfg.leader
    cluster.attach_points = {"RANDOM_REPLICA": list(replicas), "LEADER_ONLY": [cfg.leader]}
    return cluster
