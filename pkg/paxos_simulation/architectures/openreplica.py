#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
OpenReplica: client proxies send batches to the leader replica, which runs Phase 2
against the acceptors over non-blocking sockets and retries refused writes until
they succeed. Acceptors acknowledge with a value reference only; the leader
replica delivers, executes and answers.
"""

from paxos_simulation.architectures.base import (
    BATCH, REQUEST, AcceptorProcess, ArchConfig, BadConfig, Cluster, LeaderProcess, Variant, deliver_ready)
from paxos_simulation.network import HEADER_SIZE, Discipline
from paxos_simulation.paxos import Decision, Learner, Value


class ReplicaLeader(LeaderProcess):

    HANDLERS = {
        **LeaderProcess.HANDLERS,
        BATCH: lambda self, m: self.on_batch(m),
        REQUEST: lambda self, m: self.on_request(m),
    }

    def __init__(self, node_id: str, cluster) -> None:
        super().__init__(node_id, cluster, cluster.cfg.acceptors)
        self.learner = Learner(node_id, audit=cluster.audit)

    def on_batch(self, m):
        self.submit(Value(m.size - HEADER_SIZE, m.body), m.src)

    def on_request(self, m):
        self.submit(Value(m.size - HEADER_SIZE, (m.body,)), m.src)

    def decided(self, decision: Decision):
        collector = self.proposer.collector
        for instance, value in deliver_ready(collector, self.learner):
            self.cluster.record_delivery(instance, value, collector.first_quorums[instance])
            self.respond(self.origins.pop(instance), value.client_ids)


def wire_openreplica(cfg: ArchConfig, cluster: Cluster) -> Cluster:
    if cfg.variant != Variant.OPENREPLICA:
        raise BadConfig("wire_openreplica needs variant {}, got {}".format(Variant.OPENREPLICA, cfg.variant))

    leader = cfg.leader
    for acceptor in cfg.acceptors:
        cluster.network.set_discipline(leader, acceptor, Discipline.NONBLOCK_RETRY)
        cluster.network.set_discipline(acceptor, leader, Discipline.NONBLOCK_RETRY)

    cluster.add(ReplicaLeader(leader, cluster))
    for acceptor in cfg.acceptors:
        cluster.add(AcceptorProcess(acceptor, cluster, listeners=(), value_in_2b=False))

    cluster.delivery_node = leader
    cluster.proxy_target = leader
    cluster.attach_points = {"PROXY": [], "LEADER_ONLY": [leader]}
    return cluster
