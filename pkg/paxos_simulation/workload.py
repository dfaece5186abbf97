#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Closed-loop clients, the client proxies of OpenReplica and Ring Paxos, the
optional load cap and the failure schedule.
"""

from collections import namedtuple
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from paxos_simulation.architectures.base import BATCH, ID_SIZE, REQUEST, RESPONSE, Cluster, Process
from paxos_simulation.errors import SimulationError
from paxos_simulation.kernel import millis, seconds
from paxos_simulation.network import HEADER_SIZE, DestDown, InstanceClass, Network, NodeSpec
from paxos_simulation.paxos import ProtocolError

ADMISSION_WINDOW = millis(100)
DEFER_JITTER = 100_000
WARMUP_JITTER = millis(10)
RECONNECT_DELAY = seconds(1)


class BadPolicy(SimulationError):
    pass


class BadFailure(SimulationError):
    pass


class DuplicateFailure(BadFailure):
    pass


class AttachPolicy(Enum):
    LEADER_ONLY = "LEADER_ONLY"
    RANDOM_REPLICA = "RANDOM_REPLICA"
    PROXY = "PROXY"

    def __str__(self) -> str:
        return self.value


class Admission(Enum):
    ALLOW = "ALLOW"
    DEFER = "DEFER"


FailureEvent = namedtuple('FailureEvent', ['node', 'at'])


class ClientSpec(namedtuple('ClientSpec', ['id', 'attach_policy', 'request_size', 'think_time', 'outstanding'])):
    """
    Template of a client population; id is the prefix of the client names.
    think_time is in seconds.
    """

    @classmethod
    def build(cls, id="C", attach_policy=AttachPolicy.LEADER_ONLY, request_size=4096, think_time=0.0,
              outstanding=1):
        if outstanding < 1:
            raise BadPolicy("A client needs at least one outstanding request, got {}".format(outstanding))
        if request_size <= 0:
            raise BadPolicy("Request size must be positive, got {}".format(request_size))
        return cls(id, AttachPolicy(attach_policy), int(request_size), float(think_time), int(outstanding))


#
#   Load cap
#

class LoadCap:
    """
    Aggregate admission budget of all clients, accounted per 100 ms window
    aligned to t=0.
    """

    def __init__(self, target_mbps: Optional[float] = None) -> None:
        self.target_mbps = target_mbps
        self.window = -1
        self.admitted = 0
        self.total = 0

    @property
    def budget(self) -> float:
        if self.target_mbps is None:
            return float("inf")
        return self.target_mbps * 1e6 / 8 * ADMISSION_WINDOW / 1e9

    def admit(self, now: int, size: int) -> Admission:
        window = now // ADMISSION_WINDOW
        if window != self.window:
            self.window = window
            self.admitted = 0
        decision = admission_gate(self, self.admitted)
        if decision == Admission.ALLOW:
            self.admitted += size
            self.total += size
        return decision

    def next_window(self, now: int) -> int:
        return (now // ADMISSION_WINDOW + 1) * ADMISSION_WINDOW


def admission_gate(cap: Optional[LoadCap], pending_bytes: int) -> Admission:
    """
    ALLOW while the bytes admitted in the current window are below the cap's
    window budget; the request that crosses it is still admitted.
    """
    if cap is None or cap.target_mbps is None:
        return Admission.ALLOW
    return Admission.ALLOW if pending_bytes < cap.budget else Admission.DEFER


#
#   Processes
#

class Client(Process):
    """
    Closed-loop client: never more than `outstanding` unanswered requests.
    """

    HANDLERS = {
        RESPONSE: lambda self, m: self.on_response(m),
    }

    def __init__(self, node_id: str, cluster: Cluster, spec: ClientSpec, target: str,
                 candidates: Sequence[str], cap: Optional[LoadCap] = None) -> None:
        super().__init__(node_id, cluster)
        self.spec = spec
        self.target = target
        self.candidates = list(candidates)
        self.cap = cap
        self.rng = cluster.engine.stream("client:" + node_id)

        self.seq = 0
        self.in_flight: Dict[int, int] = {}
        self.answered = 0
        self.sent = 0

    def start(self):
        for _ in range(self.spec.outstanding):
            self.timer(int(self.rng.uniform() * WARMUP_JITTER), "issue", self.issue)

    def issue(self):
        if len(self.in_flight) >= self.spec.outstanding:
            return
        if self.cap is not None and self.cap.admit(self.now, self.spec.request_size) == Admission.DEFER:
            delay = self.cap.next_window(self.now) - self.now + int(self.rng.uniform() * DEFER_JITTER)
            self.timer(delay, "deferred", self.issue)
            return

        self.seq += 1
        self.in_flight[self.seq] = self.now
        self.submit(self.seq)

    def submit(self, seq: int):
        self.sent += 1
        self.send(self.target, REQUEST, self.spec.request_size, (self.id, seq))

    def on_response(self, m):
        for client, seq in m.body:
            if client != self.id:
                continue
            sent_at = self.in_flight.pop(seq, None)
            if sent_at is None:
                raise ProtocolError("Client {} got a response for {} twice or without a request".format(self.id, seq))
            self.answered += 1
            if self.cluster.metrics is not None:
                self.cluster.metrics.on_response(self.id, sent_at, self.now)
            if self.spec.think_time > 0:
                self.timer(seconds(self.spec.think_time), "think", self.issue)
            else:
                self.issue()

    def on_peer_down(self, error: DestDown):
        if error.node_id == self.target:
            self.timer(RECONNECT_DELAY, "reattach", self.reattach)

    def reattach(self):
        """
        Moves to another live candidate and resubmits everything unanswered.
        """
        live = [c for c in self.candidates if c != self.target and self.is_alive(c)]
        if not live:
            self.cluster.warnings.append("{}: no live node to reattach to".format(self.id))
            return
        self.target = live[int(self.rng.uniform() * len(live))]
        for seq in sorted(self.in_flight):
            self.submit(seq)


class ClientProxy(Process):
    """
    Batches client requests towards the cluster's proxy target and fans
    responses out to the clients.
    """

    HANDLERS = {
        REQUEST: lambda self, m: self.on_request(m),
        RESPONSE: lambda self, m: self.on_response(m),
    }

    def __init__(self, node_id: str, cluster: Cluster) -> None:
        super().__init__(node_id, cluster)
        self.pending: List[Tuple[str, int]] = []
        self.pending_bytes = 0
        self.flush_timer = None
        self.batches = 0

    def start(self):
        pass

    def on_request(self, m):
        self.pending.append(m.body)
        self.pending_bytes += m.size - HEADER_SIZE
        if self.pending_bytes >= self.cfg.batch_bytes:
            self.flush()
        elif self.flush_timer is None:
            self.flush_timer = self.timer(self.cfg.batch_timeout, "flush", self.flush)

    def flush(self):
        self.cancel(self.flush_timer)
        self.flush_timer = None
        if not self.pending:
            return
        self.batches += 1
        self.send(self.cluster.proxy_target, BATCH, self.pending_bytes, tuple(self.pending))
        self.pending = []
        self.pending_bytes = 0

    def on_response(self, m):
        for client, seq in m.body:
            self.send(client, RESPONSE, ID_SIZE, ((client, seq),))


#
#   Spawning
#

def _add_endpoint(network: Network, node_id: str, near: str):
    region = network.node(near).spec.region
    network.add_node(NodeSpec.build(node_id, InstanceClass.CLIENT, region))


def spawn_clients(cluster: Cluster, spec: ClientSpec, n: int, cap: Optional[LoadCap] = None) -> List[Client]:
    """
    Attaches n clients according to spec.attach_policy and schedules their first
    requests.
    """
    policy = str(spec.attach_policy)
    if policy not in cluster.attach_points:
        raise BadPolicy("Policy {} is not available for {}, use one of {}".format(
            policy, cluster.cfg.variant, sorted(cluster.attach_points)))

    network = cluster.network
    candidates = cluster.attach_points[policy]
    if spec.attach_policy == AttachPolicy.PROXY:
        proxies = []
        for i in range(max(1, cluster.cfg.proxies)):
            proxy_id = "{}X{}".format(spec.id, i + 1)
            _add_endpoint(network, proxy_id, cluster.proxy_target)
            proxy = ClientProxy(proxy_id, cluster)
            network.attach(proxy_id, proxy)
            cluster.clients[proxy_id] = proxy
            proxies.append(proxy_id)
        candidates = proxies

    rng = cluster.engine.stream("attach:" + spec.id)
    clients = []
    for i in range(n):
        client_id = "{}{}".format(spec.id, i + 1)
        if spec.attach_policy == AttachPolicy.RANDOM_REPLICA:
            target = candidates[int(rng.uniform() * len(candidates))]
        else:
            target = candidates[i % len(candidates)]
        _add_endpoint(network, client_id, target)
        client = Client(client_id, cluster, spec, target, candidates, cap)
        network.attach(client_id, client)
        cluster.clients[client_id] = client
        clients.append(client)

    for client in clients:
        client.start()
    return clients


def apply_failures(network: Network, schedule: Iterable[FailureEvent], duration: Optional[float] = None):
    """
    Schedules one crash per entry. Times are seconds.
    """
    schedule = list(schedule)
    seen = set()
    for event in schedule:
        if event.node in seen:
            raise DuplicateFailure("Node {} appears twice in the failure schedule".format(event.node))
        seen.add(event.node)
        if event.at < 0 or (duration is not None and event.at >= duration):
            raise BadFailure("Failure of {} at {} s lies outside the run".format(event.node, event.at))

    for event in schedule:
        network.crash(event.node, seconds(event.at))
