#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Quorum steering for the Libpaxos proposer.

Execution is divided into steps. During the probe prefix of a step Phase 2A goes
to every acceptor and the proposer counts how often each acceptor lands in an
instance's first quorum; for the rest of the step Phase 2A goes only to the f+1
acceptors with the highest counts.
"""

from collections import namedtuple
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set

from paxos_simulation.kernel import seconds
from paxos_simulation.paxos import ProtocolError, quorum_size

DEFAULT_PROBE_LEN = 100
DEFAULT_STEER_LEN = 900
DEFAULT_SUSPICION_TIMEOUT = 1.0


class StepEvent(Enum):
    INSTANCE_DONE = "INSTANCE_DONE"
    SUSPECT = "SUSPECT"


class StepOutcome(Enum):
    CONTINUE = "CONTINUE"
    NEW_STEP = "NEW_STEP"


class SteeringParams(namedtuple('SteeringParams', ['enabled', 'probe_len', 'steer_len', 'suspicion_timeout_s'])):

    @classmethod
    def build(cls, enabled: bool = False, probe_len: int = DEFAULT_PROBE_LEN, steer_len: int = DEFAULT_STEER_LEN,
              suspicion_timeout_s: float = DEFAULT_SUSPICION_TIMEOUT):
        return cls(bool(enabled), int(probe_len), int(steer_len), float(suspicion_timeout_s))

    @property
    def suspicion_timeout(self) -> int:
        return seconds(self.suspicion_timeout_s)


class StepState:

    def __init__(self, acceptors: Iterable[str], f: int, probe_len: int = DEFAULT_PROBE_LEN,
                 steer_len: int = DEFAULT_STEER_LEN, warnings: Optional[List[str]] = None) -> None:
        if probe_len < 1 or steer_len < 0:
            raise ValueError("Invalid step lengths: probe {}, steer {}".format(probe_len, steer_len))

        self.acceptors = sorted(acceptors)
        self.f = f
        self.probe_len = probe_len
        self.steer_len = steer_len
        self.warnings = warnings if warnings is not None else []

        self.step_no = 0
        self.instances_in_step = 0
        self.counters: Dict[str, int] = {a: 0 for a in self.acceptors}
        self.down: Set[str] = set()
        self.selected: Optional[Set[str]] = None
        self.suspicion_deadline = None

    @property
    def probing(self) -> bool:
        return self.selected is None

    def reset(self) -> None:
        self.step_no += 1
        self.instances_in_step = 0
        self.counters = {a: 0 for a in self.acceptors}
        self.selected = None
        self.suspicion_deadline = None

    def __str__(self) -> str:
        phase = "probe" if self.probing else "steer {}".format(sorted(self.selected))
        return "step {} ({}, {} instances)".format(self.step_no, phase, self.instances_in_step)


def record_first_quorum(ss: StepState, q: Iterable[str]) -> None:
    q = set(q)
    if not ss.probing:
        raise ProtocolError("First quorums are only recorded while probing ({})".format(ss))
    if len(q) != quorum_size(ss.f):
        raise ProtocolError("First quorum {} does not have {} members".format(sorted(q), quorum_size(ss.f)))
    for acceptor in q:
        ss.counters[acceptor] += 1


def select_quorum(ss: StepState) -> Set[str]:
    """
    The f+1 acceptors with the highest counters, ties broken by lowest id. Acceptors
    known to be down are left out while f+1 others remain.
    """
    if all(count == 0 for count in ss.counters.values()):
        ss.warnings.append("Step {}: no first quorum recorded while probing, selecting by id".format(ss.step_no))
    candidates = [a for a in ss.acceptors if a not in ss.down]
    if len(candidates) < quorum_size(ss.f):
        candidates = ss.acceptors
    ranked = sorted(candidates, key=lambda a: (-ss.counters[a], a))
    return set(ranked[:quorum_size(ss.f)])


def phase2a_targets(ss: StepState, instance: int = None) -> List[str]:
    if ss.probing:
        return list(ss.acceptors)
    return sorted(ss.selected)


def step_advance(ss: StepState, event: StepEvent, acceptor: str = None) -> StepOutcome:
    """
    Advances the step on a decided instance or a suspicion. The quorum is selected
    when the probe prefix is complete; the step ends after probe_len + steer_len
    instances or when a selected acceptor is suspected.
    """
    if event == StepEvent.SUSPECT:
        if ss.selected is not None and acceptor in ss.selected:
            ss.reset()
            return StepOutcome.NEW_STEP
        return StepOutcome.CONTINUE

    ss.instances_in_step += 1
    if ss.instances_in_step >= ss.probe_len + ss.steer_len:
        ss.reset()
        return StepOutcome.NEW_STEP
    if ss.probing and ss.instances_in_step >= ss.probe_len:
        ss.selected = select_quorum(ss)
    return StepOutcome.CONTINUE
