#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Paxos state machines: ballots, acceptor transitions, the proposer's value-selection
rule, decision collection at f+1 and in-order delivery. Nothing in here knows
about the network; architectures turn the returned messages into traffic.
"""

from collections import namedtuple
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from paxos_simulation.errors import SimulationError

PRE_EXECUTION_WINDOW = 2 ** 20


class ProtocolError(AssertionError):
    pass


class InsufficientTargets(SimulationError):
    pass


class SafetyViolation(SimulationError):
    pass


class Ballot(namedtuple('Ballot', ['round', 'proposer_id'])):
    """
    Round number. Compared lexicographically by (round, proposer_id), so distinct
    proposers never share a ballot.
    """

    def next(self):
        return Ballot(self.round + 1, self.proposer_id)

    def above(self, other):
        """
        Smallest ballot of this proposer strictly greater than other.
        """
        candidate = Ballot(max(self.round, other.round), self.proposer_id)
        return candidate if candidate > other else Ballot(candidate.round + 1, self.proposer_id)

    def __str__(self) -> str:
        return "({},{})".format(self.round, self.proposer_id)


ZERO = Ballot(0, "")


class Value(namedtuple('Value', ['payload_size', 'client_ids'])):
    """
    A batch of client requests. client_ids holds (client, request seq) pairs.
    """

    def __new__(cls, payload_size: int, client_ids: Sequence = ()):
        if payload_size <= 0:
            raise ProtocolError("Value payload must be positive, got {}".format(payload_size))
        return super().__new__(cls, int(payload_size), tuple(client_ids))


Phase1A = namedtuple('Phase1A', ['ballot', 'first', 'last'])
Phase1B = namedtuple('Phase1B', ['ballot', 'instance', 'v_rnd', 'v_val', 'acceptor'])
Phase2A = namedtuple('Phase2A', ['ballot', 'instance', 'value'])
Phase2B = namedtuple('Phase2B', ['ballot', 'instance', 'value', 'acceptor'])
Reject = namedtuple('Reject', ['ballot', 'instance', 'c_rnd', 'acceptor'])

DECIDED = "DECIDED"
PENDING = "PENDING"

Decision = namedtuple('Decision', ['instance', 'value', 'ballot', 'first_quorum'])


def quorum_size(f: int) -> int:
    return f + 1


def quorums(acceptors: Sequence[str], f: int) -> List[frozenset]:
    """
    All majority quorums of an acceptor set.
    """
    return [frozenset(q) for q in combinations(sorted(acceptors), quorum_size(f))]


class AcceptorInstanceState:

    def __init__(self, instance: int, c_rnd: Ballot = ZERO) -> None:
        self.instance = instance
        self.c_rnd = c_rnd
        self.v_rnd: Optional[Ballot] = None
        self.v_val: Optional[Value] = None

    def __repr__(self) -> str:
        return "AcceptorInstanceState({}, c_rnd={}, v_rnd={}, v_val={})".format(
            self.instance, self.c_rnd, self.v_rnd, self.v_val)


def on_phase1a(a: AcceptorInstanceState, b: Ballot, acceptor: str = ""):
    """
    Promise not to accept anything below b, reporting any accepted value.
    """
    if b >= a.c_rnd:
        a.c_rnd = b
        return Phase1B(b, a.instance, a.v_rnd, a.v_val, acceptor)
    return Reject(b, a.instance, a.c_rnd, acceptor)


def on_phase2a(a: AcceptorInstanceState, b: Ballot, v: Value, acceptor: str = ""):
    """
    Accept v at b unless a higher round was promised.
    """
    if b >= a.c_rnd:
        a.c_rnd = b
        a.v_rnd = b
        a.v_val = v
        return Phase2B(b, a.instance, v, acceptor)
    return Reject(b, a.instance, a.c_rnd, acceptor)


def choose_value(promises: Iterable[Phase1B], fallback: Value) -> Value:
    """
    Value of the promise with the highest v_rnd, or fallback if no acceptor accepted one.
    """
    accepted = [p for p in promises if p.v_rnd is not None]
    if not accepted:
        return fallback
    return max(accepted, key=lambda p: p.v_rnd).v_val


class Acceptor:
    """
    Acceptor role of one node. Instance states are created on demand and start
    from the highest range promise covering them (pre-executed Phase 1).
    """

    def __init__(self, acceptor_id: str) -> None:
        self.id = acceptor_id
        self.instances: Dict[int, AcceptorInstanceState] = {}
        self.range_promises: List[Tuple[int, int, Ballot]] = []

    def state(self, instance: int) -> AcceptorInstanceState:
        if instance not in self.instances:
            c_rnd = ZERO
            for first, last, ballot in self.range_promises:
                if first <= instance < last and ballot > c_rnd:
                    c_rnd = ballot
            self.instances[instance] = AcceptorInstanceState(instance, c_rnd)
        return self.instances[instance]

    def on_phase1a(self, msg: Phase1A) -> List:
        """
        Handles a (range) Phase 1A. Known instances answer one by one; the rest of
        the range is covered by a single promise.
        """
        known = sorted(i for i in self.instances if msg.first <= i < msg.last)
        replies = [on_phase1a(self.instances[i], msg.ballot, self.id) for i in known]

        if any(isinstance(r, Reject) for r in replies):
            return replies

        promised = max((b for first, last, b in self.range_promises
                        if first < msg.last and msg.first < last), default=ZERO)
        if msg.ballot < promised:
            return replies + [Reject(msg.ballot, msg.first, promised, self.id)]

        self.range_promises.append((msg.first, msg.last, msg.ballot))
        if not replies:
            replies.append(Phase1B(msg.ballot, msg.first, None, None, self.id))
        return replies

    def on_phase2a(self, msg: Phase2A):
        return on_phase2a(self.state(msg.instance), msg.ballot, msg.value, self.id)


class ProposerInstanceState:

    def __init__(self, instance: int, crnd: Ballot) -> None:
        self.instance = instance
        self.crnd = crnd
        self.phase1_promises: Dict[str, Phase1B] = {}
        self.phase2_acks: Dict[Ballot, List[str]] = {}
        self.proposed: Optional[Value] = None
        self.decided = False
        self.first_quorum: Optional[frozenset] = None

        self.targets: Tuple[str, ...] = ()
        self.rejected = False
        self.retrying = False


def phase1a(p: Sequence[ProposerInstanceState], b: Ballot, first: int, last: int,
            used: Optional[Ballot] = None) -> Phase1A:
    """
    Phase 1A for the instance range [first, last). A single message over a large
    range reserves future instances (pre-execution).
    """
    if used is not None and not b > used:
        raise ProtocolError("Ballot {} is not greater than previously used {}".format(b, used))
    if last <= first:
        raise ProtocolError("Empty instance range [{}, {})".format(first, last))
    for state in p:
        state.crnd = b
        state.phase1_promises = {}
    return Phase1A(b, first, last)


def phase2a(p: ProposerInstanceState, b: Ballot, v: Value, targets: Iterable[str], f: int) -> List[Tuple[str, Phase2A]]:
    targets = sorted(set(targets))
    if len(targets) < quorum_size(f):
        raise InsufficientTargets("Phase 2A needs at least {} targets, got {}".format(quorum_size(f), targets))
    p.crnd = b
    p.proposed = v
    p.targets = tuple(targets)
    msg = Phase2A(b, p.instance, v)
    return [(target, msg) for target in targets]


class DecisionCollector:
    """
    Counts Phase 2B acknowledgements per instance and ballot at one participant.
    The first f+1 acceptors acknowledging the same ballot form the first quorum.
    """

    def __init__(self, f: int, audit=None) -> None:
        self.f = f
        self.audit = audit
        self.instances: Dict[int, ProposerInstanceState] = {}
        self.decided: Dict[int, Value] = {}
        self.first_quorums: Dict[int, frozenset] = {}

    def on_phase2b(self, frm: str, b: Ballot, instance: int, value: Optional[Value] = None):
        """
        Records an acknowledgement and returns (DECIDED, Decision) on the f+1-th matching
        ack, else (PENDING, None). Acks after the decision are absorbed.
        """
        if instance in self.decided:
            return PENDING, None

        state = self.instances.get(instance)
        if state is None:
            state = self.instances[instance] = ProposerInstanceState(instance, b)

        acks = state.phase2_acks.setdefault(b, [])
        if frm in acks:
            return PENDING, None
        acks.append(frm)
        if value is not None:
            state.proposed = value

        if len(acks) < quorum_size(self.f):
            return PENDING, None

        del self.instances[instance]
        state.decided = True
        state.first_quorum = frozenset(acks[:quorum_size(self.f)])
        self.decided[instance] = state.proposed
        self.first_quorums[instance] = state.first_quorum
        if self.audit is not None:
            self.audit.record(instance, state.proposed)
        return DECIDED, Decision(instance, state.proposed, b, state.first_quorum)

    def learn(self, instance: int, value: Value, ballot: Ballot, first_quorum: frozenset) -> bool:
        """
        Takes a decision made elsewhere (a circulating decision message). Returns
        False if the instance was already known.
        """
        if instance in self.decided:
            if self.audit is not None:
                self.audit.record(instance, value)
            return False
        self.instances.pop(instance, None)
        self.decided[instance] = value
        self.first_quorums[instance] = frozenset(first_quorum)
        if self.audit is not None:
            self.audit.record(instance, value)
        return True

    def is_decided(self, instance: int) -> bool:
        return instance in self.decided


class Learner:
    """
    Delivers decided instances in instance order; a gap holds back everything after it.
    """

    def __init__(self, name: str = "", audit=None) -> None:
        self.name = name
        self.audit = audit
        self.next_instance = 0
        self.delivered: List[Tuple[int, Value]] = []

    def deliver(self, decided: Dict[int, Value]) -> List[Value]:
        values = []
        while self.next_instance in decided:
            value = decided[self.next_instance]
            values.append(value)
            self.delivered.append((self.next_instance, value))
            if self.audit is not None:
                self.audit.record_delivery(self.name, self.next_instance, value)
            self.next_instance += 1
        return values


def deliver(learner: Learner, decided: Dict[int, Value]) -> List[Value]:
    return learner.deliver(decided)


class Proposer:
    """
    Bookkeeping of the single configured leader.

    Phase 1 is pre-executed once over a window of instances; afterwards every new
    value goes straight to Phase 2 at the window ballot. An instance that times out
    and can no longer be decided by the acceptors it targeted (a REJECT, or too many
    of them down) is retried with its own Phase 1 at a higher ballot.
    """

    def __init__(self, proposer_id: str, acceptors: Iterable[str], f: int, audit=None,
                 window: int = PRE_EXECUTION_WINDOW) -> None:
        self.id = proposer_id
        self.acceptors = sorted(acceptors)
        self.f = f
        self.window = window

        self.ballot = Ballot(1, proposer_id)
        self.highest: Optional[Ballot] = None
        self.prepared: Set[str] = set()
        self.next_instance = 0

        self.pending: Dict[int, ProposerInstanceState] = {}
        self.collector = DecisionCollector(f, audit)
        self.down: Set[str] = set()
        self.promises: Dict[int, Dict[str, Phase1B]] = {}

    @property
    def ready(self) -> bool:
        return len(self.prepared) >= quorum_size(self.f)

    @property
    def live_acceptors(self) -> List[str]:
        return [a for a in self.acceptors if a not in self.down]

    def prepare(self) -> Phase1A:
        """
        Pre-executes Phase 1 over the whole instance window.
        """
        msg = phase1a([], self.ballot, 0, self.window, self.highest)
        self.highest = self.ballot
        self.prepared = set()
        return msg

    def prepare_from(self, first: int) -> Phase1A:
        """
        Phase 1 again over [first, window) at a ballot above every ballot used so
        far, e.g. after the acceptor set changed under the pending instances.
        """
        b = (self.highest or self.ballot).next()
        msg = phase1a(list(self.pending.values()), b, first, self.window, self.highest)
        self.ballot = b
        self.highest = b
        self.prepared = set()
        self.promises = {}
        return msg

    def reproposals(self) -> List[Phase2A]:
        """
        Phase 2A at the current ballot for every pending instance, with the value
        that the promises force (or the proposer's own).
        """
        if not self.ready:
            raise ProtocolError("Proposer {} has no Phase 1 quorum at {}".format(self.id, self.ballot))
        messages = []
        for instance in self.undecided():
            state = self.pending[instance]
            value = choose_value(self.promises.get(instance, {}).values(), state.proposed)
            state.retrying = False
            state.rejected = False
            messages.append(phase2a(state, self.ballot, value, self.live_acceptors, self.f)[0][1])
        return messages

    def propose(self, value: Value, targets: Iterable[str]) -> List[Tuple[str, Phase2A]]:
        if not self.ready:
            raise ProtocolError("Proposer {} has no Phase 1 quorum yet".format(self.id))
        if self.next_instance >= self.window:
            raise ProtocolError("Pre-executed window of {} instances exhausted".format(self.window))

        state = ProposerInstanceState(self.next_instance, self.ballot)
        self.next_instance += 1
        self.pending[state.instance] = state
        return phase2a(state, self.ballot, value, targets, self.f)

    def resend(self, instance: int, targets: Iterable[str]) -> List[Tuple[str, Phase2A]]:
        """
        Phase 2A of a pending instance at its current ballot to additional acceptors.
        """
        state = self.pending[instance]
        targets = sorted(set(targets))
        state.targets = tuple(sorted(set(state.targets) | set(targets)))
        msg = Phase2A(state.crnd, instance, state.proposed)
        return [(target, msg) for target in targets]

    def on_phase1b(self, reply: Phase1B) -> List[Tuple[str, Phase2A]]:
        """
        Collects promises. Returns the Phase 2A messages of a retried instance once
        f+1 promises for its ballot are in.
        """
        if reply.ballot == self.ballot:
            self.prepared.add(reply.acceptor)
            if reply.v_rnd is not None:
                self.promises.setdefault(reply.instance, {})[reply.acceptor] = reply
            return []

        state = self.pending.get(reply.instance)
        if state is None or not state.retrying or reply.ballot != state.crnd:
            return []

        state.phase1_promises[reply.acceptor] = reply
        if len(state.phase1_promises) < quorum_size(self.f):
            return []

        state.retrying = False
        value = choose_value(state.phase1_promises.values(), state.proposed)
        return phase2a(state, state.crnd, value, self.live_acceptors, self.f)

    def on_phase2b(self, msg: Phase2B) -> Optional[Decision]:
        status, decision = self.collector.on_phase2b(msg.acceptor, msg.ballot, msg.instance, msg.value)
        if status != DECIDED:
            return None
        self.pending.pop(msg.instance, None)
        return decision

    def on_reject(self, msg: Reject) -> None:
        """
        Jumps future ballots above the rejecting promise.
        """
        self.highest = max(self.highest or ZERO, Ballot(msg.c_rnd.round, self.id).above(msg.c_rnd))
        state = self.pending.get(msg.instance)
        if state is not None:
            state.rejected = True

    def needs_retry(self, instance: int) -> bool:
        state = self.pending.get(instance)
        if state is None or state.retrying:
            return False
        live_targets = [a for a in state.targets if a not in self.down]
        return state.rejected or len(live_targets) < quorum_size(self.f)

    def retry(self, instance: int) -> Phase1A:
        """
        Phase 1A for one timed-out instance at a ballot above every ballot used so far.
        """
        state = self.pending[instance]
        b = (self.highest or self.ballot).next()
        msg = phase1a([state], b, instance, instance + 1, self.highest)
        self.highest = b
        state.retrying = True
        state.rejected = False
        return msg

    def undecided(self) -> List[int]:
        return sorted(self.pending)


class AgreementAudit:
    """
    Run-wide safety audit: one value per instance across all participants, and
    prefix-compatible delivery sequences across learners.
    """

    def __init__(self) -> None:
        self.decisions: Dict[int, Value] = {}
        self.deliveries: Dict[int, Value] = {}
        self.learners: Set[str] = set()

    def record(self, instance: int, value: Value) -> None:
        known = self.decisions.setdefault(instance, value)
        if known != value:
            raise SafetyViolation("Instance {} decided both {} and {}".format(instance, known, value))

    def record_delivery(self, learner: str, instance: int, value: Value) -> None:
        self.learners.add(learner)
        known = self.deliveries.setdefault(instance, value)
        if known != value:
            raise SafetyViolation("Learner {} delivered {} at position {}, another learner delivered {}".format(
                learner, value, instance, known))


def check_prefixes(learners: Iterable[Learner]) -> None:
    """
    Raises SafetyViolation unless all delivered sequences are prefix-comparable.
    """
    sequences = sorted((learner.delivered for learner in learners), key=len)
    for shorter, longer in zip(sequences, sequences[1:]):
        if longer[:len(shorter)] != shorter:
            raise SafetyViolation("Learner delivery sequences diverge")
