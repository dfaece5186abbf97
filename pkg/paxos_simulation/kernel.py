#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import hashlib
import heapq
import zlib
from collections import deque, namedtuple
from typing import Callable, Deque, Dict, List, Optional, Set

import numpy as np

from paxos_simulation.errors import SimulationError

NANOSECONDS = 1_000_000_000


class PastEvent(SimulationError):
    pass


def seconds(value: float) -> int:
    """
    Converts seconds to integer nanoseconds of virtual time.
    """
    return int(round(value * NANOSECONDS))


def millis(value: float) -> int:
    return int(round(value * 1_000_000))


def to_seconds(t: int) -> float:
    return t / NANOSECONDS


SimEvent = namedtuple('SimEvent', ['fire_at', 'seq', 'target', 'kind', 'action', 'args'])
TraceEntry = namedtuple('TraceEntry', ['fire_at', 'seq', 'target', 'kind'])


class RngStream:
    """
    Named random stream. The generator state is derived from the scenario seed
    and a CRC of the stream label only, so streams never share draws.
    """

    def __init__(self, seed: int, stream_id: str) -> None:
        self.stream_id = stream_id
        self._generator = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(stream_id.encode("utf-8")),))))

    def uniform(self) -> float:
        return float(self._generator.random())

    def jitter(self, value: float, spread: float) -> float:
        """
        Returns value scaled by a factor drawn uniformly from [1 - spread, 1 + spread).
        """
        if spread <= 0:
            return value
        return value * (1.0 - spread + 2.0 * spread * self.uniform())


def rng_uniform(stream: RngStream) -> float:
    return stream.uniform()


class Engine:
    """
    Deterministic discrete-event engine.

    Events are dispatched in (fire_at, seq) order where seq is a global insertion
    counter. Time is integer nanoseconds and only moves through dispatching.
    """

    def __init__(self, seed: int = 0, keep_trace: bool = False, trace_limit: Optional[int] = None) -> None:
        self.seed = seed
        self.keep_trace = keep_trace

        self._now = 0
        self._seq = 0
        self._queue: List[tuple] = []
        self._pending: Dict[int, SimEvent] = {}
        self._halted: Set[str] = set()
        self._streams: Dict[str, RngStream] = {}

        self.dispatched = 0
        self.discarded = 0
        self.trace: Deque[TraceEntry] = deque(maxlen=trace_limit)
        self._digest = hashlib.sha256()

    def now(self) -> int:
        return self._now

    def pending(self) -> int:
        return len(self._pending)

    def stream(self, stream_id: str) -> RngStream:
        """
        Returns the named random stream, creating it on first use.
        """
        if stream_id not in self._streams:
            self._streams[stream_id] = RngStream(self.seed, stream_id)
        return self._streams[stream_id]

    def schedule(self, fire_at: int, target: str, kind: str, action: Callable, *args) -> int:
        """
        Puts an event into the queue and returns its handle.
        """
        if fire_at < self._now:
            raise PastEvent("Cannot schedule {} at {} ns, clock is at {} ns".format(kind, fire_at, self._now))

        event = SimEvent(int(fire_at), self._seq, target, kind, action, args)
        self._seq += 1
        self._pending[event.seq] = event
        heapq.heappush(self._queue, (event.fire_at, event.seq))
        return event.seq

    def schedule_in(self, delay: int, target: str, kind: str, action: Callable, *args) -> int:
        return self.schedule(self._now + int(delay), target, kind, action, *args)

    def cancel(self, handle: Optional[int]) -> bool:
        """
        Removes a pending event. Returns False if it already fired or was cancelled.
        """
        if handle is None:
            return False
        return self._pending.pop(handle, None) is not None

    def halt(self, target: str) -> None:
        """
        Discards every event addressed to target from now on.
        """
        self._halted.add(target)

    def is_halted(self, target: str) -> bool:
        return target in self._halted

    def run_until(self, t_end: int) -> int:
        """
        Dispatches every event with fire_at <= t_end and leaves the clock at t_end.
        """
        count = 0
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, seq = heapq.heappop(self._queue)
            event = self._pending.pop(seq, None)
            if event is None:
                continue

            self._now = fire_at
            if event.target in self._halted:
                self.discarded += 1
                continue

            self._record(event)
            event.action(*event.args)
            count += 1

        self._now = max(self._now, int(t_end))
        self.dispatched += count
        return count

    def trace_digest(self) -> str:
        return self._digest.hexdigest()

    def _record(self, event: SimEvent):
        line = "{},{},{},{}\n".format(event.fire_at, event.seq, event.target, event.kind)
        self._digest.update(line.encode("utf-8"))
        if self.keep_trace:
            self.trace.append(TraceEntry(event.fire_at, event.seq, event.target, event.kind))
