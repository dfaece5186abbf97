#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import unittest
from itertools import combinations, permutations

from parameterized import parameterized

from paxos_simulation.paxos import (
    Acceptor, AcceptorInstanceState, AgreementAudit, Ballot, DECIDED, DecisionCollector, InsufficientTargets,
    Learner, PENDING, Phase1A, Phase1B, Phase2A, Phase2B, Proposer, ProposerInstanceState, ProtocolError, Reject,
    SafetyViolation, Value, check_prefixes, choose_value, deliver, on_phase1a, on_phase2a, phase1a, phase2a, quorums)

X = Value(200, [("C1", 0)])
Y = Value(4096, [("C2", 0)])
Z = Value(100, [("C3", 0)])


def b(round, proposer="P1"):
    return Ballot(round, proposer)


class BallotTest(unittest.TestCase):

    def test_lexicographic_order(self):
        self.assertLess(b(1, "P2"), b(2, "P1"))
        self.assertLess(b(2, "P1"), b(2, "P2"))

    @parameterized.expand([
        (b(1, "P1"), b(3, "P2"), b(3, "P1").next()),
        (b(1, "P2"), b(3, "P1"), b(3, "P2")),
        (b(5, "P1"), b(3, "P2"), b(5, "P1")),
    ])
    def test_above(self, mine, other, expected):
        self.assertEqual(mine.above(other), expected)
        self.assertGreater(mine.above(other), other)

    def test_value_needs_payload(self):
        with self.assertRaises(ProtocolError):
            Value(0)


class Phase1Test(unittest.TestCase):

    def test_pre_execution_covers_a_range(self):
        msg = phase1a([], b(1), 0, 1000)

        self.assertEqual(msg, Phase1A(b(1), 0, 1000))

    def test_retry_uses_a_higher_ballot(self):
        state = ProposerInstanceState(7, b(1))

        msg = phase1a([state], b(2), 7, 8, used=b(1))

        self.assertEqual(msg.ballot, b(2))
        self.assertEqual(state.crnd, b(2))

    @parameterized.expand([
        (b(1), b(1)),
        (b(1), b(2)),
    ])
    def test_ballot_must_grow(self, ballot, used):
        with self.assertRaises(ProtocolError):
            phase1a([], ballot, 0, 10, used=used)

    def test_virgin_acceptor_promises(self):
        reply = on_phase1a(AcceptorInstanceState(0), b(1), "A1")

        self.assertEqual(reply, Phase1B(b(1), 0, None, None, "A1"))

    def test_lower_ballot_is_rejected(self):
        state = AcceptorInstanceState(0, c_rnd=b(3))

        reply = on_phase1a(state, b(2), "A1")

        self.assertIsInstance(reply, Reject)
        self.assertEqual(reply.c_rnd, b(3))
        self.assertEqual(state.c_rnd, b(3))

    def test_promise_reports_accepted_value(self):
        state = AcceptorInstanceState(0)
        on_phase2a(state, b(2), X)

        reply = on_phase1a(state, b(4), "A1")

        self.assertEqual((reply.v_rnd, reply.v_val), (b(2), X))
        self.assertEqual(state.c_rnd, b(4))


class ChooseValueTest(unittest.TestCase):

    @parameterized.expand([
        ("no values", [(None, None), (None, None)], Z),
        ("highest round wins", [(b(2), X), (b(1), Y)], X),
        ("any value forces it", [(None, None), (b(1), Y)], Y),
    ])
    def test_choose_value(self, _, promises, expected):
        replies = [Phase1B(b(5), 0, v_rnd, v_val, "A{}".format(k)) for k, (v_rnd, v_val) in enumerate(promises)]

        self.assertEqual(choose_value(replies, Z), expected)


class Phase2Test(unittest.TestCase):

    @parameterized.expand([
        (["A1", "A2", "A3"],),
        (["A1", "A2"],),
    ])
    def test_targets(self, targets):
        messages = phase2a(ProposerInstanceState(0, b(1)), b(1), X, targets, f=1)

        self.assertEqual([dst for dst, _ in messages], sorted(targets))
        self.assertTrue(all(msg == Phase2A(b(1), 0, X) for _, msg in messages))

    def test_too_few_targets(self):
        with self.assertRaises(InsufficientTargets):
            phase2a(ProposerInstanceState(0, b(1)), b(1), X, ["A1"], f=1)

    def test_accept_at_promised_ballot(self):
        state = AcceptorInstanceState(0, c_rnd=b(1))

        reply = on_phase2a(state, b(1), X, "A1")

        self.assertEqual(reply, Phase2B(b(1), 0, X, "A1"))
        self.assertEqual((state.c_rnd, state.v_rnd, state.v_val), (b(1), b(1), X))

    def test_reject_below_promise(self):
        state = AcceptorInstanceState(0, c_rnd=b(5))

        reply = on_phase2a(state, b(4), X, "A1")

        self.assertIsInstance(reply, Reject)
        self.assertIsNone(state.v_val)

    def test_accept_raises_both_rounds(self):
        state = AcceptorInstanceState(0, c_rnd=b(1))

        on_phase2a(state, b(3), X)

        self.assertEqual(state.c_rnd, b(3))
        self.assertEqual(state.v_rnd, b(3))


class AcceptorRangeTest(unittest.TestCase):

    def test_range_promise_covers_future_instances(self):
        acceptor = Acceptor("A1")

        replies = acceptor.on_phase1a(Phase1A(b(1), 0, 1000))

        self.assertEqual(replies, [Phase1B(b(1), 0, None, None, "A1")])
        self.assertEqual(acceptor.state(999).c_rnd, b(1))
        self.assertEqual(acceptor.state(1000).c_rnd, Ballot(0, ""))

    def test_lower_range_promise_is_rejected(self):
        acceptor = Acceptor("A1")
        acceptor.on_phase1a(Phase1A(b(3), 0, 100))

        replies = acceptor.on_phase1a(Phase1A(b(2), 50, 60))

        self.assertEqual(len(replies), 1)
        self.assertIsInstance(replies[0], Reject)

    def test_known_instances_answer_individually(self):
        acceptor = Acceptor("A1")
        acceptor.on_phase1a(Phase1A(b(1), 0, 100))
        acceptor.on_phase2a(Phase2A(b(1), 3, X))

        replies = acceptor.on_phase1a(Phase1A(b(2), 0, 100))

        self.assertEqual(replies, [Phase1B(b(2), 3, b(1), X, "A1")])


class CollectorTest(unittest.TestCase):

    def test_f_plus_one_decides(self):
        collector = DecisionCollector(f=1)

        self.assertEqual(collector.on_phase2b("A1", b(1), 0, X), (PENDING, None))
        status, decision = collector.on_phase2b("A3", b(1), 0, X)

        self.assertEqual(status, DECIDED)
        self.assertEqual(decision.value, X)
        self.assertEqual(decision.first_quorum, frozenset({"A1", "A3"}))

    def test_mismatched_ballots_do_not_count_together(self):
        collector = DecisionCollector(f=1)

        collector.on_phase2b("A1", b(1), 0, X)

        self.assertEqual(collector.on_phase2b("A2", b(2), 0, X), (PENDING, None))

    def test_late_ack_is_absorbed(self):
        collector = DecisionCollector(f=1)
        collector.on_phase2b("A1", b(1), 0, X)
        collector.on_phase2b("A2", b(1), 0, X)

        self.assertEqual(collector.on_phase2b("A3", b(1), 0, X), (PENDING, None))
        self.assertEqual(collector.first_quorums[0], frozenset({"A1", "A2"}))

    def test_duplicate_ack_counts_once(self):
        collector = DecisionCollector(f=1)
        collector.on_phase2b("A1", b(1), 0, X)

        self.assertEqual(collector.on_phase2b("A1", b(1), 0, X), (PENDING, None))

    def test_learn(self):
        collector = DecisionCollector(f=1)

        self.assertTrue(collector.learn(4, X, b(1), {"A1", "A2"}))
        self.assertFalse(collector.learn(4, X, b(1), {"A1", "A2"}))
        self.assertTrue(collector.is_decided(4))


class DeliverTest(unittest.TestCase):

    def test_gap_free_prefix(self):
        learner = Learner("L")
        decided = {0: X, 2: Z}

        self.assertEqual(deliver(learner, decided), [X])

        decided[1] = Y
        self.assertEqual(deliver(learner, decided), [Y, Z])
        self.assertEqual(deliver(learner, decided), [])
        self.assertEqual([i for i, _ in learner.delivered], [0, 1, 2])

    def test_prefixes(self):
        a, c = Learner("a"), Learner("c")
        a.deliver({0: X, 1: Y})
        c.deliver({0: X})

        check_prefixes([a, c])

    def test_diverging_learners(self):
        a, c = Learner("a"), Learner("c")
        a.deliver({0: X})
        c.deliver({0: Y})

        with self.assertRaises(SafetyViolation):
            check_prefixes([a, c])


class AuditTest(unittest.TestCase):

    def test_two_values_for_one_instance(self):
        audit = AgreementAudit()
        audit.record(0, X)
        audit.record(0, X)

        with self.assertRaises(SafetyViolation):
            audit.record(0, Y)

    def test_collectors_share_the_audit(self):
        audit = AgreementAudit()
        first, second = DecisionCollector(1, audit), DecisionCollector(1, audit)
        first.on_phase2b("A1", b(1), 0, X)
        first.on_phase2b("A2", b(1), 0, X)

        with self.assertRaises(SafetyViolation):
            second.learn(0, Y, b(2), {"A2", "A3"})


class QuorumTest(unittest.TestCase):

    def test_every_pair_of_quorums_intersects(self):
        all_quorums = quorums(["A1", "A2", "A3"], f=1)

        self.assertEqual(len(all_quorums), 3)
        for q1, q2 in combinations(all_quorums, 2):
            self.assertTrue(q1 & q2)


class StabilityTest(unittest.TestCase):
    """
    Once a value is decided, any later Phase 1 quorum forces it.
    """

    @parameterized.expand([(list(q),) for q in permutations(["A1", "A2", "A3"], 2)])
    def test_decided_value_is_forced(self, phase1_quorum):
        acceptors = {name: Acceptor(name) for name in ("A1", "A2", "A3")}
        for name in ("A1", "A2", "A3"):
            acceptors[name].on_phase1a(Phase1A(b(1), 0, 10))

        # X decided at ballot 1 by A1 and A2, A3 never saw it
        for name in ("A1", "A2"):
            acceptors[name].on_phase2a(Phase2A(b(1), 0, X))

        replies = []
        for name in phase1_quorum:
            replies += acceptors[name].on_phase1a(Phase1A(b(2, "P2"), 0, 10))
        promises = [r for r in replies if isinstance(r, Phase1B) and r.instance == 0]

        self.assertFalse(any(isinstance(r, Reject) for r in replies))
        self.assertEqual(choose_value(promises, Y), X)


class ProposerTest(unittest.TestCase):

    def setUp(self) -> None:
        self.proposer = Proposer("P", ["A1", "A2", "A3"], f=1, window=100)

    def promise_all(self):
        msg = self.proposer.prepare()
        for name in ("A1", "A2"):
            self.proposer.on_phase1b(Phase1B(msg.ballot, 0, None, None, name))

    def test_not_ready_before_promises(self):
        self.proposer.prepare()

        with self.assertRaises(ProtocolError):
            self.proposer.propose(X, ["A1", "A2", "A3"])

    def test_propose_decide(self):
        self.promise_all()

        messages = self.proposer.propose(X, ["A1", "A2", "A3"])
        msg = messages[0][1]
        self.assertIsNone(self.proposer.on_phase2b(Phase2B(msg.ballot, msg.instance, X, "A2")))
        decision = self.proposer.on_phase2b(Phase2B(msg.ballot, msg.instance, X, "A3"))

        self.assertEqual(decision.instance, 0)
        self.assertEqual(decision.first_quorum, frozenset({"A2", "A3"}))
        self.assertEqual(self.proposer.undecided(), [])

    def test_window_exhaustion(self):
        proposer = Proposer("P", ["A1", "A2", "A3"], f=1, window=1)
        msg = proposer.prepare()
        for name in ("A1", "A2"):
            proposer.on_phase1b(Phase1B(msg.ballot, 0, None, None, name))
        proposer.propose(X, ["A1", "A2"])

        with self.assertRaises(ProtocolError):
            proposer.propose(Y, ["A1", "A2"])

    def test_needs_retry_when_targets_are_down(self):
        self.promise_all()
        self.proposer.propose(X, ["A1", "A2"])

        self.assertFalse(self.proposer.needs_retry(0))
        self.proposer.down.add("A2")
        self.assertTrue(self.proposer.needs_retry(0))

    def test_retry_reproposes_the_forced_value(self):
        self.promise_all()
        self.proposer.propose(X, ["A1", "A2"])
        self.proposer.down.add("A2")

        retry = self.proposer.retry(0)
        self.assertEqual(retry, Phase1A(b(2, "P"), 0, 1))
        self.assertFalse(self.proposer.needs_retry(0))

        self.assertEqual(self.proposer.on_phase1b(Phase1B(retry.ballot, 0, b(1, "P"), X, "A1")), [])
        messages = self.proposer.on_phase1b(Phase1B(retry.ballot, 0, None, None, "A3"))

        self.assertEqual([dst for dst, _ in messages], ["A1", "A3"])
        self.assertEqual(messages[0][1], Phase2A(retry.ballot, 0, X))

    def test_reject_raises_the_next_ballot(self):
        self.promise_all()
        self.proposer.propose(X, ["A1", "A2"])

        self.proposer.on_reject(Reject(b(1, "P"), 0, b(7, "Q"), "A1"))

        self.assertTrue(self.proposer.needs_retry(0))
        self.assertGreater(self.proposer.retry(0).ballot, b(7, "Q"))

    def test_prepare_from_and_reproposals(self):
        self.promise_all()
        self.proposer.propose(X, ["A1", "A2", "A3"])
        self.proposer.propose(Y, ["A1", "A2", "A3"])
        self.proposer.down.add("A2")

        msg = self.proposer.prepare_from(0)
        self.assertEqual(msg, Phase1A(b(2, "P"), 0, 100))
        with self.assertRaises(ProtocolError):
            self.proposer.reproposals()

        self.proposer.on_phase1b(Phase1B(msg.ballot, 1, b(1, "P"), Y, "A1"))
        self.proposer.on_phase1b(Phase1B(msg.ballot, 0, None, None, "A3"))
        messages = self.proposer.reproposals()

        self.assertEqual(messages, [Phase2A(msg.ballot, 0, X), Phase2A(msg.ballot, 1, Y)])
