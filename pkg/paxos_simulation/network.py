#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from collections import deque, namedtuple
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from paxos_simulation.errors import SimulationError
from paxos_simulation.kernel import Engine, NANOSECONDS, millis, seconds
from paxos_simulation.utils import get_instance_classes, get_region_table

HEADER_SIZE = 64
DEFAULT_KERNEL_BUFFER = 16 * 1024 * 1024
RETRY_BACKOFF = millis(1)
SERVICE_JITTER = 0.02
METRIC_WINDOW = seconds(1)


class DestDown(SimulationError):
    def __init__(self, node_id: str) -> None:
        super().__init__("Destination {} is down".format(node_id))
        self.node_id = node_id


class SenderDown(SimulationError):
    def __init__(self, node_id: str) -> None:
        super().__init__("Sender {} is dead and cannot send".format(node_id))
        self.node_id = node_id


class AlreadyDead(SimulationError):
    pass


class UnknownNode(SimulationError):
    pass


class InstanceClass(Enum):
    MICRO = "MICRO"
    SMALL = "SMALL"
    LARGE = "LARGE"
    CLIENT = "CLIENT"

    def __str__(self) -> str:
        return self.value


class Discipline(Enum):
    BLOCKING = "BLOCKING"
    NONBLOCK_RETRY = "NONBLOCK_RETRY"
    NONBLOCK_APPBUF = "NONBLOCK_APPBUF"


class SendResult(Enum):
    ACCEPTED = "ACCEPTED"
    WOULD_BLOCK = "WOULD_BLOCK"
    SENDER_BLOCKED = "SENDER_BLOCKED"
    APP_BUFFERED = "APP_BUFFERED"
    DEST_DOWN = "DEST_DOWN"


ModeledMessage = namedtuple('ModeledMessage', ['msg_id', 'kind', 'size', 'sent_at', 'src', 'dst', 'body'])


def _rate(value) -> float:
    return float("inf") if value is None else float(value)


class NodeSpec:
    """
    Static description of a node: capacity by instance class unless overridden.
    cpu_rate and bandwidth are bytes per second, fixed_msg_cost is seconds per message.
    """

    @classmethod
    def build(cls, node_id: str, klass: InstanceClass, region: str, **overrides):
        defaults = get_instance_classes()[klass.value]
        values = {key: overrides.get(key) if overrides.get(key) is not None else defaults[key]
                  for key in ("cpu_rate", "bandwidth", "fixed_msg_cost")}
        return cls(node_id, klass, region, _rate(values["cpu_rate"]), _rate(values["bandwidth"]),
                   float(values["fixed_msg_cost"]))

    def __init__(self, node_id: str, klass: InstanceClass, region: str, cpu_rate: float,
                 bandwidth: float, fixed_msg_cost: float) -> None:
        if cpu_rate <= 0 or bandwidth <= 0:
            raise SimulationError("Node {} needs positive cpu_rate and bandwidth".format(node_id))
        if fixed_msg_cost < 0:
            raise SimulationError("Node {} has a negative fixed_msg_cost".format(node_id))

        self.id = node_id
        self.klass = klass
        self.region = region
        self.cpu_rate = cpu_rate
        self.bandwidth = bandwidth
        self.fixed_msg_cost = fixed_msg_cost
        self.alive = True

    def __str__(self) -> str:
        return "{} ({}, {})".format(self.id, self.klass, self.region)


class LinkSpec:
    """
    Directed link. one_way_latency is integer nanoseconds, bandwidth bytes per second
    (inf when the link adds no cap beyond the sender's NIC).
    """

    @classmethod
    def between_regions(cls, src: NodeSpec, dst: NodeSpec):
        table = get_region_table()
        entry = table["same_region"]
        if src.region != dst.region:
            entry = next((p for p in table["pairs"] if set(p["regions"]) == {src.region, dst.region}), None)
            if entry is None:
                raise SimulationError("No latency known between regions {} and {}".format(src.region, dst.region))

        bandwidth = entry.get("bandwidth_mbps")
        return cls(src.id, dst.id,
                   one_way_latency=int(round(entry["rtt_ms"] * 1_000_000 / 2)),
                   bandwidth=float("inf") if bandwidth is None else bandwidth * 1e6 / 8)

    def __init__(self, src: str, dst: str, one_way_latency: int, bandwidth: float = float("inf")) -> None:
        if one_way_latency < 0 or bandwidth <= 0:
            raise SimulationError("Invalid link {} -> {}".format(src, dst))
        self.src = src
        self.dst = dst
        self.one_way_latency = int(one_way_latency)
        self.bandwidth = bandwidth


class ChannelState:
    """
    One direction of a connection. kernel_buf_used counts bytes accepted and not yet
    consumed by the receiver; the application buffer and the retry queue hold
    messages that did not fit.
    """

    def __init__(self, src: str, dst: str, discipline: Discipline, link: LinkSpec,
                 kernel_buf_capacity: int = DEFAULT_KERNEL_BUFFER) -> None:
        self.src = src
        self.dst = dst
        self.discipline = discipline
        self.link = link
        self.kernel_buf_capacity = kernel_buf_capacity
        self.kernel_buf_used = 0
        self.app_buf_used = 0
        self.sender_blocked = False

        self.writable = True
        self.tx_free = 0
        self.app_queue: Deque[ModeledMessage] = deque()
        self.retry_queue: Deque[ModeledMessage] = deque()
        self.blocked_message: Optional[ModeledMessage] = None
        self.retry_timer = None

        self.bytes_enqueued = 0
        self.bytes_delivered = 0
        self.bytes_discarded = 0

    def has_room(self, size: int) -> bool:
        return self.kernel_buf_used == 0 or self.kernel_buf_used + size <= self.kernel_buf_capacity

    @property
    def waiting_bytes(self) -> int:
        waiting = sum(m.size for m in self.retry_queue)
        if self.blocked_message is not None:
            waiting += self.blocked_message.size
        return waiting

    def __str__(self) -> str:
        return "{} -> {} [{}]".format(self.src, self.dst, self.discipline.value)


class Node:
    """
    Runtime side of a node: a single FIFO CPU, an egress NIC and the process
    handling its messages.
    """

    def __init__(self, spec: NodeSpec, rng) -> None:
        self.spec = spec
        self.rng = rng
        self.process = None

        self.inbox: Deque[Tuple[ModeledMessage, ChannelState]] = deque()
        self.cpu_busy = False
        self.busy_until = 0
        self.nic_free = 0
        self.stalled_on: Optional[ChannelState] = None
        self.deferred: Deque[Callable] = deque()

        self.busy_by_window: Dict[int, int] = {}
        self.retry_by_window: Dict[int, int] = {}

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def alive(self) -> bool:
        return self.spec.alive

    def service_time(self, size: int) -> int:
        cost = self.spec.fixed_msg_cost + size / self.spec.cpu_rate
        return int(round(self.rng.jitter(cost, SERVICE_JITTER) * NANOSECONDS))

    def account(self, start: int, duration: int, ledger: Dict[int, int]):
        """
        Adds [start, start + duration) to a per-window ledger, split at window boundaries.
        """
        end = start + duration
        while start < end:
            window = start // METRIC_WINDOW
            boundary = (window + 1) * METRIC_WINDOW
            chunk = min(end, boundary) - start
            ledger[window] = ledger.get(window, 0) + chunk
            start += chunk


class Network:
    """
    Nodes, links and channels of one simulation run.
    """

    def __init__(self, engine: Engine, kernel_buf_capacity: int = DEFAULT_KERNEL_BUFFER) -> None:
        self.engine = engine
        self.kernel_buf_capacity = kernel_buf_capacity

        self.nodes: Dict[str, Node] = {}
        self.links: Dict[Tuple[str, str], LinkSpec] = {}
        self.channels: Dict[Tuple[str, str], ChannelState] = {}
        self.disciplines: Dict[Tuple[str, str], Discipline] = {}
        self.default_discipline = Discipline.NONBLOCK_APPBUF

        self.crash_watchers: List[Callable[[str], None]] = []
        self._doomed = set()
        self._notified = set()
        self._msg_ids = 0

    #
    #   Topology
    #

    def add_node(self, spec: NodeSpec) -> Node:
        node = Node(spec, self.engine.stream("service:{}".format(spec.id)))
        self.nodes[spec.id] = node
        return node

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode("Unknown node {}".format(node_id))

    def attach(self, node_id: str, process) -> None:
        self.node(node_id).process = process

    def set_link(self, link: LinkSpec) -> None:
        self.links[(link.src, link.dst)] = link

    def link(self, src: str, dst: str) -> LinkSpec:
        key = (src, dst)
        if key not in self.links:
            self.links[key] = LinkSpec.between_regions(self.node(src).spec, self.node(dst).spec)
        return self.links[key]

    def set_discipline(self, src: str, dst: str, discipline: Discipline) -> None:
        self.disciplines[(src, dst)] = discipline

    def channel(self, src: str, dst: str) -> ChannelState:
        key = (src, dst)
        if key not in self.channels:
            self.channels[key] = ChannelState(
                src, dst, self.disciplines.get(key, self.default_discipline), self.link(src, dst),
                kernel_buf_capacity=self.kernel_buf_capacity)
        return self.channels[key]

    def message(self, src: str, dst: str, kind: str, payload: int, body=None) -> ModeledMessage:
        self._msg_ids += 1
        return ModeledMessage(self._msg_ids, kind, HEADER_SIZE + int(payload), self.engine.now(), src, dst, body)

    #
    #   Sending
    #

    def send(self, ch: ChannelState, m: ModeledMessage) -> SendResult:
        """
        Hands a message to a channel according to its I/O discipline.
        """
        node = self.node(ch.src)
        if not node.alive:
            raise SenderDown(ch.src)

        if node.stalled_on is not None:
            node.deferred.append(lambda: self.send(ch, m))
            return SendResult.SENDER_BLOCKED

        self._charge(node, node.spec.fixed_msg_cost)

        if not self.node(ch.dst).alive:
            ch.bytes_enqueued += m.size
            ch.bytes_discarded += m.size
            self._notify_down(ch.src, ch.dst)
            return SendResult.DEST_DOWN

        if ch.discipline == Discipline.NONBLOCK_APPBUF:
            if ch.app_queue or not ch.has_room(m.size):
                ch.app_queue.append(m)
                ch.app_buf_used += m.size
                ch.bytes_enqueued += m.size
                return SendResult.APP_BUFFERED

        elif ch.discipline == Discipline.NONBLOCK_RETRY:
            if ch.retry_queue or not ch.writable or not ch.has_room(m.size):
                # queueing behind earlier refusals is not a refusal by the kernel
                ch.writable = ch.writable and ch.has_room(m.size)
                ch.retry_queue.append(m)
                ch.bytes_enqueued += m.size
                self._arm_retry(ch)
                return SendResult.WOULD_BLOCK

        elif not ch.has_room(m.size):
            ch.sender_blocked = True
            ch.blocked_message = m
            ch.bytes_enqueued += m.size
            node.stalled_on = ch
            return SendResult.SENDER_BLOCKED

        ch.bytes_enqueued += m.size
        self._transmit(ch, m)
        return SendResult.ACCEPTED

    def send_to(self, src: str, dst: str, kind: str, payload: int, body=None) -> SendResult:
        return self.send(self.channel(src, dst), self.message(src, dst, kind, payload, body))

    def post(self, src: str, dst: str, kind: str, payload: int, body=None) -> None:
        """
        Latency-only lossless delivery that bypasses buffers and CPUs.
        """
        m = self.message(src, dst, kind, payload, body)
        self.engine.schedule_in(self.link(src, dst).one_way_latency, dst, "post:" + kind, self._deliver_post, m)

    def retry(self, ch: ChannelState) -> int:
        """
        Retries the pending messages of a NONBLOCK_RETRY channel. Every message still
        refused costs the sender one fixed_msg_cost. Returns the number of refusals.
        """
        ch.retry_timer = None
        node = self.node(ch.src)
        if not node.alive or not self.node(ch.dst).alive:
            return 0

        while ch.retry_queue and ch.writable and ch.has_room(ch.retry_queue[0].size):
            self._charge(node, node.spec.fixed_msg_cost)
            self._transmit(ch, ch.retry_queue.popleft())

        refused = len(ch.retry_queue)
        if refused:
            tax = int(round(refused * node.spec.fixed_msg_cost * NANOSECONDS))
            node.account(max(self.engine.now(), node.busy_until), tax, node.retry_by_window)
            self._charge(node, refused * node.spec.fixed_msg_cost)
            self._arm_retry(ch)
        return refused

    def drain(self, ch: ChannelState) -> List[ModeledMessage]:
        """
        Moves as many application-buffered or blocked messages into the kernel buffer
        as there is room for, FIFO. Returns the messages that departed.
        """
        departed = []
        if ch.blocked_message is not None and ch.has_room(ch.blocked_message.size):
            m, ch.blocked_message = ch.blocked_message, None
            ch.sender_blocked = False
            self._transmit(ch, m)
            departed.append(m)
            self._resume(self.node(ch.src))

        while ch.app_queue and ch.has_room(ch.app_queue[0].size):
            m = ch.app_queue.popleft()
            ch.app_buf_used -= m.size
            self._transmit(ch, m)
            departed.append(m)

        if not ch.writable and ch.kernel_buf_used <= ch.kernel_buf_capacity // 2:
            ch.writable = True
        return departed

    #
    #   Failures and observation
    #

    def crash(self, node_id: str, at: int) -> None:
        """
        Schedules a fail-stop crash of a node.
        """
        node = self.node(node_id)
        if node_id in self._doomed or not node.alive:
            raise AlreadyDead("Node {} is already dead or scheduled to crash".format(node_id))
        self._doomed.add(node_id)
        self.engine.schedule(at, "network", "crash", self._crash_now, node_id)

    def buffer_occupancy(self, node_id: str) -> Dict[str, Tuple[int, int]]:
        """
        Outgoing buffered bytes of a node per peer: (kernel_buf_used, app_buf_used).
        """
        return {ch.dst: (ch.kernel_buf_used, ch.app_buf_used)
                for (src, _), ch in sorted(self.channels.items()) if src == node_id}

    def timer(self, node_id: str, delay: int, kind: str, action: Callable, *args) -> int:
        """
        Schedules work for a node's process; it waits while the node is stalled on a send.
        """
        return self.engine.schedule_in(delay, node_id, kind, self._run_action, node_id, action, args)

    def cpu_busy(self, node_id: str) -> Dict[int, int]:
        return self.node(node_id).busy_by_window

    def retry_tax(self, node_id: str) -> Dict[int, int]:
        return self.node(node_id).retry_by_window

    #
    #   Helpers
    #

    def _charge(self, node: Node, cost: float):
        if cost <= 0:
            return
        duration = int(round(cost * NANOSECONDS))
        start = max(self.engine.now(), node.busy_until)
        node.account(start, duration, node.busy_by_window)
        node.busy_until = start + duration

    def _transmit(self, ch: ChannelState, m: ModeledMessage):
        node = self.node(ch.src)
        depart = max(self.engine.now(), node.busy_until)

        nic_start = max(depart, node.nic_free)
        nic_end = nic_start + self._serialization(m.size, node.spec.bandwidth)
        node.nic_free = nic_end

        link_start = max(nic_start, ch.tx_free)
        link_end = max(nic_end, link_start + self._serialization(m.size, ch.link.bandwidth))
        ch.tx_free = link_end

        ch.kernel_buf_used += m.size
        self.engine.schedule(link_end + ch.link.one_way_latency, ch.dst, "arrive:" + m.kind, self._arrive, ch, m)

    @staticmethod
    def _serialization(size: int, bandwidth: float) -> int:
        if bandwidth == float("inf"):
            return 0
        return int(round(size * NANOSECONDS / bandwidth))

    def _arrive(self, ch: ChannelState, m: ModeledMessage):
        if not self.node(ch.src).alive:
            return
        node = self.node(ch.dst)
        node.inbox.append((m, ch))
        self._kick(node)

    def _kick(self, node: Node):
        if node.cpu_busy or not node.inbox or not node.alive:
            return

        m, ch = node.inbox.popleft()
        ch.kernel_buf_used -= m.size
        ch.bytes_delivered += m.size

        start = max(self.engine.now(), node.busy_until)
        duration = node.service_time(m.size) if node.spec.cpu_rate != float("inf") else 0
        node.account(start, duration, node.busy_by_window)
        node.busy_until = start + duration
        node.cpu_busy = True
        self.engine.schedule(node.busy_until, node.id, "process:" + m.kind, self._processed, node, m)

        if self.node(ch.src).alive:
            self.drain(ch)

    def _processed(self, node: Node, m: ModeledMessage):
        # a stalled node keeps reading its sockets; handling waits for the send to complete
        node.cpu_busy = False
        if node.process is not None:
            if node.stalled_on is not None:
                node.deferred.append(lambda: node.process.on_message(m))
            else:
                node.process.on_message(m)
        self._kick(node)

    def _resume(self, node: Node):
        node.stalled_on = None
        while node.deferred and node.stalled_on is None:
            node.deferred.popleft()()
        self._kick(node)

    def _run_action(self, node_id: str, action: Callable, args: tuple):
        node = self.node(node_id)
        if node.stalled_on is not None:
            node.deferred.append(lambda: action(*args))
            return
        action(*args)

    def _arm_retry(self, ch: ChannelState):
        if ch.retry_timer is None:
            ch.retry_timer = self.engine.schedule_in(RETRY_BACKOFF, ch.src, "retry", self.retry, ch)

    def _deliver_post(self, m: ModeledMessage):
        node = self.node(m.dst)
        if node.alive and node.process is not None:
            node.process.on_message(m)

    def _notify_down(self, observer: str, dead: str):
        if (observer, dead) in self._notified:
            return
        self._notified.add((observer, dead))
        latency = self.link(observer, dead).one_way_latency
        self.engine.schedule_in(latency, observer, "down:" + dead, self._peer_down, observer, dead)

    def _peer_down(self, observer: str, dead: str):
        node = self.node(observer)
        if node.process is not None:
            self._run_action(observer, node.process.on_peer_down, (DestDown(dead),))

    def _crash_now(self, node_id: str):
        node = self.node(node_id)
        node.spec.alive = False
        self.engine.halt(node_id)
        node.inbox.clear()
        node.deferred.clear()
        node.stalled_on = None

        observers = set()
        for (src, dst), ch in sorted(self.channels.items()):
            if node_id not in (src, dst):
                continue
            ch.bytes_discarded += ch.kernel_buf_used + ch.app_buf_used + ch.waiting_bytes
            ch.kernel_buf_used = 0
            ch.app_buf_used = 0
            ch.app_queue.clear()
            ch.retry_queue.clear()
            self.engine.cancel(ch.retry_timer)
            ch.retry_timer = None
            ch.writable = True

            was_blocked = ch.sender_blocked
            ch.sender_blocked = False
            ch.blocked_message = None

            peer = dst if src == node_id else src
            peer_node = self.node(peer)
            if src == node_id:
                peer_node.inbox = deque(entry for entry in peer_node.inbox if entry[1] is not ch)
            if dst == node_id and was_blocked:
                self._resume(peer_node)
            if peer_node.alive:
                observers.add(peer)

        for peer in sorted(observers):
            self._notify_down(peer, node_id)

        for watcher in self.crash_watchers:
            watcher(node_id)
