#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Libpaxos: clients talk to the proposer, acceptors send their Phase 2B with the
value to the proposer and to the learners, the learner answers the clients.
Every connection uses non-blocking I/O with unbounded application buffers.

With steering enabled the proposer runs Libpaxos+ and restricts Phase 2A to the
acceptors that most often formed the first quorum during the step's probe.
"""

from typing import Dict, List

from paxos_simulation.architectures.base import (
    PHASE2A, PHASE2B, REQUEST, AcceptorProcess, ArchConfig, BadConfig, Cluster, LeaderProcess, Process,
    Variant, deliver_ready)
from paxos_simulation.network import HEADER_SIZE, DestDown, Discipline
from paxos_simulation.paxos import DECIDED, Decision, DecisionCollector, Learner, Value
from paxos_simulation.steering import (
    StepEvent, StepOutcome, StepState, phase2a_targets, record_first_quorum, step_advance)


class LibpaxosProposer(LeaderProcess):

    HANDLERS = {
        **LeaderProcess.HANDLERS,
        REQUEST: lambda self, m: self.on_request(m),
    }

    def __init__(self, node_id: str, cluster) -> None:
        super().__init__(node_id, cluster, cluster.cfg.acceptors)
        params = self.cfg.steering
        self.steering = None
        if params.enabled:
            self.steering = StepState(self.acceptors, self.cfg.f, params.probe_len, params.steer_len,
                                      warnings=cluster.warnings)
        self.suspicion: Dict[str, int] = {}

    def on_request(self, m):
        self.submit(Value(m.size - HEADER_SIZE, (m.body,)), m.src)

    def targets(self) -> List[str]:
        if self.steering is None:
            return super().targets()
        targets = phase2a_targets(self.steering)
        live = [a for a in targets if a not in self.proposer.down]
        return live if len(live) > self.cfg.f else targets

    def on_accepted(self, m):
        if self.steering is not None and not self.steering.probing and m.body.acceptor in self.steering.selected:
            self._arm_suspicion(m.body.acceptor)
        super().on_accepted(m)

    def decided(self, decision: Decision):
        ss = self.steering
        if ss is None:
            return
        if ss.probing:
            record_first_quorum(ss, decision.first_quorum)
        was_probing = ss.probing
        if step_advance(ss, StepEvent.INSTANCE_DONE) == StepOutcome.NEW_STEP:
            self.new_step()
        elif was_probing and not ss.probing:
            for acceptor in sorted(ss.selected):
                self._arm_suspicion(acceptor)

    def new_step(self):
        """
        Starts a probe and sends the undecided instances to the acceptors they skipped.
        """
        for handle in self.suspicion.values():
            self.cancel(handle)
        self.suspicion = {}

        for instance in self.proposer.undecided():
            state = self.proposer.pending[instance]
            if state.retrying:
                continue
            missing = [a for a in self.proposer.live_acceptors if a not in state.targets]
            if missing:
                for dst, msg in self.proposer.resend(instance, missing):
                    self.send(dst, PHASE2A, msg.value.payload_size, msg)

    def on_suspicion(self, acceptor: str):
        self.suspicion.pop(acceptor, None)
        if self.steering is None or self.steering.probing or acceptor not in self.steering.selected:
            return
        if not self.proposer.pending:
            self._arm_suspicion(acceptor)
            return
        self.cluster.warnings.append("{}: suspecting acceptor {} at {} ns".format(self.id, acceptor, self.now))
        if step_advance(self.steering, StepEvent.SUSPECT, acceptor) == StepOutcome.NEW_STEP:
            self.new_step()

    def on_peer_down(self, error: DestDown):
        super().on_peer_down(error)
        ss = self.steering
        if ss is not None and error.node_id in self.acceptors:
            ss.down.add(error.node_id)
            if step_advance(ss, StepEvent.SUSPECT, error.node_id) == StepOutcome.NEW_STEP:
                self.new_step()

    def _arm_suspicion(self, acceptor: str):
        self.cancel(self.suspicion.get(acceptor))
        self.suspicion[acceptor] = self.timer(
            self.cfg.steering.suspicion_timeout, "suspect:" + acceptor, self.on_suspicion, acceptor)


class LibpaxosLearner(Process):

    HANDLERS = {
        PHASE2B: lambda self, m: self.on_accepted(m),
    }

    def __init__(self, node_id: str, cluster) -> None:
        super().__init__(node_id, cluster)
        self.collector = DecisionCollector(self.cfg.f, audit=cluster.audit)
        self.learner = Learner(node_id, audit=cluster.audit)

    def start(self):
        pass

    def on_accepted(self, m):
        msg = m.body
        status, _ = self.collector.on_phase2b(msg.acceptor, msg.ballot, msg.instance, msg.value)
        if status != DECIDED:
            return

        for instance, value in deliver_ready(self.collector, self.learner):
            if self.id == self.cluster.delivery_node:
                self.cluster.record_delivery(instance, value, self.collector.first_quorums[instance])
                for client, seq in value.client_ids:
                    self.respond(client, ((client, seq),))


def wire_libpaxos(cfg: ArchConfig, cluster: Cluster) -> Cluster:
    if cfg.variant != Variant.LIBPAXOS:
        raise BadConfig("wire_libpaxos needs variant {}, got {}".format(Variant.LIBPAXOS, cfg.variant))

    leader = cfg.leader
    learners = [node for node in cfg.learners if node != leader]
    for acceptor in cfg.acceptors:
        for src, dst in [(leader, acceptor), (acceptor, leader)] + [(acceptor, learner) for learner in learners]:
            cluster.network.set_discipline(src, dst, Discipline.NONBLOCK_APPBUF)

    cluster.add(LibpaxosProposer(leader, cluster))
    for acceptor in cfg.acceptors:
        cluster.add(AcceptorProcess(acceptor, cluster, listeners=learners, value_in_2b=True))
    for learner in learners:
        cluster.add(LibpaxosLearner(learner, cluster))

    cluster.delivery_node = learners[0]
    cluster.attach_points = {"LEADER_ONLY": [leader]}
    return cluster
