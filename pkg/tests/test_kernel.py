#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import unittest

from parameterized import parameterized

from paxos_simulation.kernel import Engine, PastEvent, millis, rng_uniform, seconds, to_seconds


class TimeConversionTest(unittest.TestCase):

    @parameterized.expand([
        (1.0, 1_000_000_000),
        (0.5, 500_000_000),
        (0.000001, 1_000),
        (0.0, 0),
    ])
    def test_seconds(self, value, expected):
        self.assertEqual(seconds(value), expected)

    def test_millis_and_back(self):
        self.assertEqual(millis(1.5), 1_500_000)
        self.assertAlmostEqual(to_seconds(millis(250)), 0.25)


class EngineTest(unittest.TestCase):

    def setUp(self) -> None:
        self.engine = Engine(seed=1)
        self.fired = []

    def record(self, label):
        self.fired.append((self.engine.now(), label))

    def test_dispatches_in_time_order(self):
        self.engine.schedule(30, "n", "x", self.record, "c")
        self.engine.schedule(10, "n", "x", self.record, "a")
        self.engine.schedule(20, "n", "x", self.record, "b")

        self.engine.run_until(100)

        self.assertEqual(self.fired, [(10, "a"), (20, "b"), (30, "c")])
        self.assertEqual(self.engine.now(), 100)

    def test_ties_break_on_insertion_order(self):
        for label in ["first", "second", "third"]:
            self.engine.schedule(5, "n", "x", self.record, label)

        self.engine.run_until(5)

        self.assertEqual([label for _, label in self.fired], ["first", "second", "third"])

    def test_events_after_the_horizon_stay_queued(self):
        self.engine.schedule(10, "n", "x", self.record, "early")
        self.engine.schedule(11, "n", "x", self.record, "late")

        self.assertEqual(self.engine.run_until(10), 1)
        self.assertEqual(self.engine.pending(), 1)
        self.assertEqual(self.engine.now(), 10)

    def test_schedule_in_is_relative_to_now(self):
        self.engine.schedule(10, "n", "x", lambda: self.engine.schedule_in(5, "n", "y", self.record, "nested"))

        self.engine.run_until(100)

        self.assertEqual(self.fired, [(15, "nested")])

    def test_scheduling_in_the_past_raises(self):
        self.engine.run_until(50)

        with self.assertRaises(PastEvent):
            self.engine.schedule(49, "n", "x", self.record, "too late")

    def test_cancel(self):
        handle = self.engine.schedule(10, "n", "x", self.record, "cancelled")
        self.engine.schedule(20, "n", "x", self.record, "kept")

        self.assertTrue(self.engine.cancel(handle))
        self.assertFalse(self.engine.cancel(handle))
        self.assertFalse(self.engine.cancel(None))
        self.engine.run_until(100)

        self.assertEqual(self.fired, [(20, "kept")])

    def test_halted_target_events_are_discarded(self):
        self.engine.schedule(10, "dead", "x", self.record, "lost")
        self.engine.schedule(10, "alive", "x", self.record, "kept")
        self.engine.halt("dead")

        self.engine.run_until(100)

        self.assertEqual(self.fired, [(10, "kept")])
        self.assertEqual(self.engine.discarded, 1)
        self.assertTrue(self.engine.is_halted("dead"))


class DeterminismTest(unittest.TestCase):

    def run_engine(self, seed):
        engine = Engine(seed=seed, keep_trace=True, trace_limit=3)
        stream = engine.stream("workload")

        def tick(k):
            if k < 10:
                engine.schedule_in(int(1000 * stream.uniform()) + 1, "n{}".format(k % 3), "tick", tick, k + 1)

        engine.schedule(0, "n0", "tick", tick, 0)
        engine.run_until(seconds(1))
        return engine

    def test_same_seed_same_digest(self):
        self.assertEqual(self.run_engine(7).trace_digest(), self.run_engine(7).trace_digest())

    def test_different_seed_different_digest(self):
        self.assertNotEqual(self.run_engine(7).trace_digest(), self.run_engine(8).trace_digest())

    def test_trace_keeps_the_last_entries(self):
        engine = self.run_engine(7)

        self.assertEqual(len(engine.trace), 3)
        self.assertEqual(engine.trace[-1].kind, "tick")

    def test_streams_are_independent_of_creation_order(self):
        a = Engine(seed=3)
        b = Engine(seed=3)
        a.stream("x").uniform()
        first_a = a.stream("y").uniform()
        first_b = b.stream("y").uniform()

        self.assertEqual(first_a, first_b)

    @parameterized.expand([
        (0.0, 10.0, 10.0, 10.0),
        (0.1, 10.0, 9.0, 11.0),
    ])
    def test_jitter_bounds(self, spread, value, low, high):
        stream = Engine(seed=5).stream("jitter")
        for _ in range(100):
            v = stream.jitter(value, spread)
            self.assertGreaterEqual(v, low)
            self.assertLessEqual(v, high)

    def test_uniform_is_in_unit_interval(self):
        stream = Engine(seed=11).stream("u")
        draws = [rng_uniform(stream) for _ in range(1000)]

        self.assertTrue(all(0.0 <= d < 1.0 for d in draws))
        self.assertGreater(len(set(draws)), 990)
