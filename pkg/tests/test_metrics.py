#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from parameterized import parameterized

from paxos_simulation.kernel import Engine, millis, seconds
from paxos_simulation.metrics import (
    EmptySamples, MetricSeries, downtime, latency_stats, leader_cpu, origin_fit, retry_tax, separation,
    summary_frame, two_means, write_bundle)
from paxos_simulation.network import InstanceClass, Network, NodeSpec
from paxos_simulation.paxos import Value

ACCEPTORS = ["A1", "A2", "A3"]


def first_line(file):
    with open(file, encoding="utf-8") as f:
        return f.readline().strip()


def series_with_decisions(times_s, duration=100, warmup=10, cooldown=10, size=4096):
    series = MetricSeries(seconds(duration), ACCEPTORS, warmup=seconds(warmup), cooldown=seconds(cooldown))
    for k, t in enumerate(times_s):
        series.on_decision(k, Value(size), seconds(t), {"A1", "A2"})
    return series


class SeriesTest(unittest.TestCase):

    def test_one_decision_throughput(self):
        series = MetricSeries(seconds(3), ACCEPTORS)

        series.on_decision(0, Value(4096), millis(1500), {"A1", "A3"})

        self.assertAlmostEqual(series.throughput_mbps[1], 0.032768)
        self.assertEqual(list(series.instances_per_s), [0.0, 1.0, 0.0])
        self.assertEqual({a: int(series.quorum_counts[a][1]) for a in ACCEPTORS}, {"A1": 1, "A2": 0, "A3": 1})

    def test_windows_are_dense(self):
        series = MetricSeries(seconds(5), ACCEPTORS)

        series.on_decision(0, Value(100), seconds(4.5), {"A1", "A2"})

        self.assertEqual(series.windows, 5)
        self.assertEqual(list(series.decisions), [0, 0, 0, 0, 1])

    def test_throughput_conservation(self):
        series = MetricSeries(seconds(10), ACCEPTORS)
        sizes = [200, 4096, 102400, 300, 7]
        for k, size in enumerate(sizes):
            series.on_decision(k, Value(size), seconds(k * 1.7), {"A2", "A3"})

        total_bits = float(np.sum(series.throughput_mbps) * 1e6 * series.window_s)

        self.assertAlmostEqual(total_bits, sum(sizes) * 8)
        per_window = sum(series.quorum_counts[a] for a in ACCEPTORS)
        self.assertTrue(np.array_equal(per_window, 2 * series.decisions))

    def test_measurement_interval(self):
        series = MetricSeries(seconds(100), ACCEPTORS, warmup=seconds(10), cooldown=seconds(10))

        self.assertEqual(series.interval, (seconds(10), seconds(90)))
        self.assertEqual(list(series.measured_windows()), list(range(10, 90)))

    def test_extension_moves_the_interval_end(self):
        series = MetricSeries(seconds(20), ACCEPTORS, warmup=seconds(2), cooldown=seconds(2))

        series.extend_to(seconds(30))
        series.extend_to(seconds(25))

        self.assertEqual(series.duration, seconds(30))
        self.assertEqual(series.windows, 30)
        self.assertEqual(series.interval, (seconds(2), seconds(28)))
        self.assertEqual(len(series.quorum_counts["A3"]), 30)


class DowntimeTest(unittest.TestCase):

    def test_continuous_decisions(self):
        report = downtime(series_with_decisions(np.arange(0, 100, 0.5)))

        self.assertEqual((report.gaps, report.max_gap_s), ([], 0.0))

    def test_single_stall(self):
        times = list(np.arange(10, 50, 0.1)) + list(np.arange(54, 90.01, 0.1))

        report = downtime(series_with_decisions(times))

        self.assertEqual(len(report.gaps), 1)
        self.assertAlmostEqual(report.gaps[0][0], times[399], places=6)
        self.assertAlmostEqual(report.max_gap_s, 54 - times[399], places=6)

    def test_longest_gap_wins(self):
        times = list(np.arange(10, 20, 0.5)) + list(np.arange(23, 40, 0.5)) + list(np.arange(58, 90.1, 0.5))

        report = downtime(series_with_decisions(times))

        self.assertEqual(len(report.gaps), 2)
        self.assertAlmostEqual(report.max_gap_s, 58 - 39.5, places=6)

    def test_gaps_below_min_gap_are_ignored(self):
        times = list(np.arange(10, 50, 0.1)) + list(np.arange(50.8, 90.01, 0.1))

        self.assertEqual(downtime(series_with_decisions(times)).gaps, [])

    def test_warmup_is_not_downtime(self):
        times = list(np.arange(9.5, 90.01, 0.25))

        self.assertEqual(downtime(series_with_decisions(times)).max_gap_s, 0.0)

    @parameterized.expand([
        ("stall runs into the end", list(np.arange(10, 60, 0.1)), True),
        ("decisions resume", list(np.arange(10, 60, 0.1)) + [89.5], False),
        ("no stall", list(np.arange(10, 90.01, 0.1)), False),
    ])
    def test_open_ended_gap(self, _, times, open_ended):
        report = downtime(series_with_decisions(times))

        self.assertEqual(report.open_ended, open_ended)
        if open_ended:
            self.assertEqual(report.gaps[-1][1], 90.0)


class LatencyTest(unittest.TestCase):

    def test_single_sample(self):
        self.assertEqual(latency_stats([10.0]), {"mean": 10.0, "p50": 10.0, "p95": 10.0, "p99": 10.0, "max": 10.0})

    def test_nearest_rank(self):
        stats = latency_stats(range(1, 101))

        self.assertEqual((stats["p50"], stats["p95"], stats["p99"], stats["max"]), (50.0, 95.0, 99.0, 100.0))
        self.assertAlmostEqual(stats["mean"], 50.5)

    def test_empty(self):
        with self.assertRaises(EmptySamples):
            latency_stats([])


class LeaderCpuTest(unittest.TestCase):

    def setUp(self) -> None:
        self.network = Network(Engine(seed=1))
        self.node = self.network.add_node(NodeSpec.build("P", InstanceClass.SMALL, "us-west-2c"))

    def test_idle(self):
        self.assertEqual(list(leader_cpu(self.network, "P", 3)), [0.0, 0.0, 0.0])

    def test_busy_time_split_over_windows(self):
        self.node.account(seconds(0.5), seconds(1.0), self.node.busy_by_window)

        self.assertEqual(list(leader_cpu(self.network, "P", 3)), [0.5, 0.5, 0.0])

    def test_saturated(self):
        self.node.account(0, seconds(2), self.node.busy_by_window)

        self.assertEqual(list(leader_cpu(self.network, "P", 2)), [1.0, 1.0])

    def test_retry_tax_in_seconds(self):
        self.node.account(seconds(1.2), millis(3), self.node.retry_by_window)

        self.assertAlmostEqual(retry_tax(self.network, "P", 2)[1], 0.003)


class AnalysisTest(unittest.TestCase):

    def test_two_means_splits_modes(self):
        values = [40, 41, 39, 40.5, 20, 21, 19.5, 20.5, 40, 20]

        low, high, labels = two_means(values)

        self.assertAlmostEqual(low, 20.2, places=6)
        self.assertAlmostEqual(high, 40.1, places=6)
        self.assertEqual(list(labels), [1, 1, 1, 1, 0, 0, 0, 0, 1, 0])
        self.assertGreater(separation(low, high), 0.2)

    def test_two_means_of_constant_values(self):
        low, high, labels = two_means([5.0, 5.0, 5.0])

        self.assertEqual((low, high), (5.0, 5.0))
        self.assertEqual(separation(low, high), 0.0)

    @parameterized.expand([
        ([50, 100, 150, 200], [31, 76, 113, 159], 0.772, 0.98),
        ([1, 2, 3], [2, 4, 6], 2.0, 1.0),
    ])
    def test_origin_fit(self, x, y, slope, min_r2):
        fitted, r2 = origin_fit(x, y)

        self.assertAlmostEqual(fitted, slope, places=3)
        self.assertGreaterEqual(r2, min_r2)

    def test_origin_fit_needs_x(self):
        with self.assertRaises(EmptySamples):
            origin_fit([0, 0], [1, 2])


class BundleTest(unittest.TestCase):

    def test_files_and_headers(self):
        series = series_with_decisions(np.arange(0, 20, 0.5), duration=20, warmup=2, cooldown=2)
        series.on_response("C1", seconds(5), seconds(5) + millis(3))
        network = Network(Engine(seed=1))
        network.add_node(NodeSpec.build("P", InstanceClass.SMALL, "us-west-2c"))

        with tempfile.TemporaryDirectory() as directory:
            files = write_bundle(series, network, "P", directory)
            names = [os.path.basename(f) for f in files]
            headers = {name: first_line(os.path.join(directory, name)) for name in names}
            summary = pd.read_csv(os.path.join(directory, "summary.csv"))

        self.assertEqual(names, ["throughput.csv", "latency.csv", "quorum.csv", "buffers.csv", "summary.csv",
                                 "leader.csv"])
        self.assertEqual(headers["throughput.csv"], "t_s,mbps,instances_per_s")
        self.assertEqual(headers["latency.csv"], "t_s,latency_ms,client_id")
        self.assertEqual(headers["quorum.csv"], "t_s,acceptor,first_quorum_count")
        self.assertEqual(headers["buffers.csv"], "t_s,node,peer,kernel_bytes,app_bytes")
        self.assertEqual(headers["summary.csv"], "peak_mbps,mean_mbps,p99_latency_ms,max_gap_s,decisions_total")
        self.assertEqual(int(summary["decisions_total"][0]), 40)
        self.assertAlmostEqual(float(summary["p99_latency_ms"][0]), 3.0)

    def test_summary_without_decisions(self):
        summary = summary_frame(MetricSeries(seconds(5), ACCEPTORS, warmup=seconds(1), cooldown=seconds(1)))

        self.assertEqual(float(summary["mean_mbps"][0]), 0.0)
        self.assertAlmostEqual(float(summary["max_gap_s"][0]), 3.0)
