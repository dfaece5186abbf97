#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import filecmp
import os
import unittest
from tempfile import TemporaryDirectory

from parameterized import parameterized

from paxos_simulation.__main__ import SCENARIOS_FOLDER, main
from paxos_simulation.management import (
    SimulationManager, derive_capped, measure_peak, resolve_scenario, run_scenario, sweep_duration,
    sweep_extension, sweep_kill_times)
from paxos_simulation.kernel import seconds
from paxos_simulation.scenario import ScenarioSemanticError, load_scenario, preset, render_scenario
from paxos_simulation.simulation import Simulation
from paxos_simulation.workload import FailureEvent
from tests.utils import small

BUNDLE = ["throughput.csv", "latency.csv", "quorum.csv", "buffers.csv", "summary.csv", "leader.csv"]


class SimulationTest(unittest.TestCase):

    def test_same_seed_same_run(self):
        first = Simulation(small("config_a_4k_libpaxos"), seed=3).run()
        second = Simulation(small("config_a_4k_libpaxos"), seed=3).run()

        self.assertEqual(first.digest, second.digest)
        self.assertEqual(first.summary, second.summary)

    def test_seed_changes_the_run(self):
        first = Simulation(small("config_a_4k_libpaxos"), seed=3).run()
        second = Simulation(small("config_a_4k_libpaxos"), seed=4).run()

        self.assertNotEqual(first.digest, second.digest)

    def test_seed_defaults_to_the_scenario(self):
        simulation = Simulation(small("config_a_4k_libpaxos", seed=9))

        self.assertEqual(simulation.parameters.seed, 9)
        self.assertEqual(simulation.leader, "P")

    def test_byte_identical_bundles(self):
        s = small("config_a_4k_openreplica")
        with TemporaryDirectory() as a, TemporaryDirectory() as b:
            run_scenario(s, out=a, verbose=False)
            run_scenario(s, out=b, verbose=False)

            self.assertEqual(sorted(os.listdir(a)), sorted(BUNDLE))
            match, mismatch, errors = filecmp.cmpfiles(a, b, BUNDLE, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))

    def test_placeholder_is_rejected(self):
        s = small("config_a_4k_libpaxos", failures=(FailureEvent("A2", None),))

        with self.assertRaises(ScenarioSemanticError):
            Simulation(s)

    def test_failure_free_run_has_no_downtime(self):
        result = Simulation(small("config_a_4k_ringpaxos")).run()

        self.assertEqual(result.downtime.gaps, [])
        self.assertEqual(result.summary["max_gap_s"], 0.0)
        self.assertEqual(result.warnings, [])

    def test_trace_excerpt(self):
        simulation = Simulation(small("config_a_4k_libpaxos", duration=2.0))
        simulation.run()

        self.assertEqual(len(simulation.trace_excerpt(5)), 5)
        self.assertEqual(len(simulation.leader_utilization()), simulation.series.windows)

    def test_stall_at_the_end_is_a_lower_bound(self):
        s = small("config_a_4k_ringpaxos", duration=4.0, failures=(FailureEvent("A2", 2.0),))
        simulation = Simulation(s)
        result = simulation.run(max_extension_s=1.0)

        self.assertTrue(result.downtime.open_ended)
        self.assertEqual(simulation.series.duration, seconds(5))
        self.assertEqual(result.downtime.gaps[-1][1], 4.5)
        self.assertTrue(any("lower bound" in w for w in result.warnings))

    def test_run_extends_until_decisions_resume(self):
        s = small("config_a_4k_ringpaxos", duration=5.0, failures=(FailureEvent("A2", 2.0),))
        cut = Simulation(s).run()
        simulation = Simulation(s)
        result = simulation.run(max_extension_s=60.0)

        self.assertTrue(cut.downtime.open_ended)
        self.assertFalse(result.downtime.open_ended)
        self.assertEqual(simulation.series.duration, seconds(15))
        # ring reconfigured after the session timeout plus the reconfiguration delay
        self.assertGreater(result.downtime.max_gap_s, 3.0)
        self.assertLess(result.downtime.max_gap_s, 4.5)
        self.assertGreater(result.downtime.max_gap_s, cut.downtime.max_gap_s)
        self.assertFalse(any("lower bound" in w for w in result.warnings))
        self.assertTrue(any("extended by 10 s" in w for w in result.warnings))


class ManagementTest(unittest.TestCase):

    @parameterized.expand([
        (20.0, 100.0),
        (50.0, 120.0),
        (200.0, 420.0),
    ])
    def test_sweep_duration(self, kill_time, expected):
        self.assertEqual(sweep_duration(preset("config_a_4k_libpaxos"), kill_time), expected)

    @parameterized.expand([
        (10.0, 100.0),
        (200.0, 860.0),
    ])
    def test_sweep_extension(self, kill_time, expected):
        self.assertEqual(sweep_extension(kill_time), expected)

    def test_derive_capped(self):
        capped = derive_capped(preset("config_a_4k_libpaxos"), 100.0, 0.7)

        self.assertAlmostEqual(capped.load_cap_mbps, 70.0)
        with self.assertRaises(ScenarioSemanticError):
            derive_capped(capped, 100.0, 0.0)

    def test_peak_needs_an_uncapped_scenario(self):
        with self.assertRaises(ScenarioSemanticError):
            measure_peak(derive_capped(preset("config_a_4k_libpaxos"), 100.0), verbose=False)

    def test_peak(self):
        with TemporaryDirectory() as out:
            peak = measure_peak(small("config_a_4k_libpaxos", duration=2.0), out=out, verbose=False)

        self.assertGreater(peak, 0.0)

    def test_resolve(self):
        self.assertEqual(resolve_scenario("config_b_4k_spaxos"), preset("config_b_4k_spaxos"))
        self.assertEqual(resolve_scenario(os.path.join(SCENARIOS_FOLDER, "wan_spaxos.ini")).name, "wan_spaxos")
        with self.assertRaises(ScenarioSemanticError):
            resolve_scenario("nope")

    def test_sweep_needs_a_placeholder(self):
        with TemporaryDirectory() as out:
            with self.assertRaises(ScenarioSemanticError):
                sweep_kill_times(small("config_a_4k_libpaxos"), [1.0], False, out, verbose=False)

    def test_empty_sweep(self):
        base = small("config_a_4k_libpaxos", failures=(FailureEvent("A2", None),))
        with TemporaryDirectory() as out:
            frame = sweep_kill_times(base, [], False, out, verbose=False)

            self.assertTrue(os.path.isfile(os.path.join(out, "sweep.csv")))
        self.assertEqual(list(frame.columns), ["kill_time_s", "steering", "downtime_s"])
        self.assertEqual(len(frame), 0)

    def test_sweep(self):
        base = small("config_a_4k_libpaxosplus", failures=(FailureEvent("A2", None),))
        with TemporaryDirectory() as out:
            frame = sweep_kill_times(base, [1.0], True, out, verbose=False)

            self.assertTrue(os.path.isfile(os.path.join(out, "kill_1_on", "summary.csv")))
        self.assertEqual(frame.iloc[0]["kill_time_s"], 1.0)
        self.assertEqual(frame.iloc[0]["steering"], "on")
        self.assertGreaterEqual(frame.iloc[0]["downtime_s"], 0.0)

    def test_manager_finds_scenarios(self):
        manager = SimulationManager(SCENARIOS_FOLDER)

        self.assertEqual([os.path.basename(f) for f in manager.scenario_files],
                         ["libpaxos_kill_acceptor.ini", "ringpaxos_kill_acceptor.ini", "wan_spaxos.ini"])
        self.assertIsNone(manager.scenario)


class CommandsTest(unittest.TestCase):

    def test_presets(self):
        self.assertEqual(main(["presets"]), 0)

    def test_unknown_scenario(self):
        self.assertEqual(main(["run", "nope"]), 1)

    def test_unknown_command(self):
        self.assertEqual(main(["bogus"]), 2)

    def test_render(self):
        with TemporaryDirectory() as out:
            target = os.path.join(out, "d200.ini")

            self.assertEqual(main(["render", "config_d_200_spaxos", "--out", target]), 0)
            self.assertEqual(load_scenario(target), preset("config_d_200_spaxos"))

    def test_run(self):
        with TemporaryDirectory() as out:
            file = os.path.join(out, "small.ini")
            with open(file, "w", encoding="utf-8") as f:
                f.write(render_scenario(small("config_a_4k_libpaxos", duration=2.0)))

            self.assertEqual(main(["run", file, "--seed", "2", "--out", os.path.join(out, "bundle")]), 0)
            self.assertTrue(os.path.isfile(os.path.join(out, "bundle", "summary.csv")))
