#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Measured quantities of a run: windowed throughput, client latency, first-quorum
participation, buffer occupancy and leader CPU, plus the analyses run over them.
"""

import math
import os
from collections import namedtuple
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster.vq import kmeans2

from paxos_simulation.errors import SimulationError
from paxos_simulation.kernel import NANOSECONDS, seconds, to_seconds
from paxos_simulation.network import METRIC_WINDOW, Network

FLOAT_FORMAT = "%.6f"
DEFAULT_MIN_GAP = 1.0

DowntimeReport = namedtuple('DowntimeReport', ['gaps', 'max_gap_s', 'open_ended'])
LatencySample = namedtuple('LatencySample', ['t', 'latency', 'client_id'])
BufferSample = namedtuple('BufferSample', ['t', 'node', 'peer', 'kernel_bytes', 'app_bytes'])


class EmptySamples(SimulationError):
    pass


class MetricSeries:
    """
    Dense per-window series; a window without decisions holds zeros. Times are
    integer nanoseconds, windows are half-open and aligned to t=0.
    """

    def __init__(self, duration: int, acceptors: Sequence[str] = (), window: int = METRIC_WINDOW,
                 warmup: int = 0, cooldown: int = 0) -> None:
        self.window = window
        self.duration = duration
        self.warmup = warmup
        self.cooldown = cooldown
        self.acceptors = sorted(acceptors)

        windows = max(1, int(math.ceil(duration / window)))
        self.payload_bytes = np.zeros(windows, dtype=np.int64)
        self.decisions = np.zeros(windows, dtype=np.int64)
        self.quorum_counts: Dict[str, np.ndarray] = {a: np.zeros(windows, dtype=np.int64) for a in self.acceptors}

        self.decision_times: List[int] = []
        self.latency_samples: List[LatencySample] = []
        self.buffer_samples: List[BufferSample] = []

    @property
    def windows(self) -> int:
        return len(self.decisions)

    @property
    def window_s(self) -> float:
        return to_seconds(self.window)

    @property
    def throughput_mbps(self) -> np.ndarray:
        return self.payload_bytes * 8 / 1e6 / self.window_s

    @property
    def instances_per_s(self) -> np.ndarray:
        return self.decisions / self.window_s

    @property
    def interval(self) -> Tuple[int, int]:
        """
        Measurement interval: the run without warmup and cooldown.
        """
        return self.warmup, max(self.warmup, self.duration - self.cooldown)

    def measured_windows(self) -> np.ndarray:
        """
        Indices of the windows lying entirely inside the measurement interval.
        """
        start, end = self.interval
        first = int(math.ceil(start / self.window))
        last = end // self.window
        return np.arange(first, min(last, self.windows))

    def _index(self, t: int) -> int:
        idx = int(t // self.window)
        if idx >= self.windows:
            grow = idx + 1 - self.windows
            self.payload_bytes = np.concatenate([self.payload_bytes, np.zeros(grow, dtype=np.int64)])
            self.decisions = np.concatenate([self.decisions, np.zeros(grow, dtype=np.int64)])
            for acceptor in self.acceptors:
                self.quorum_counts[acceptor] = np.concatenate(
                    [self.quorum_counts[acceptor], np.zeros(grow, dtype=np.int64)])
        return idx

    def extend_to(self, duration: int):
        """
        Lengthens the run; the measurement interval moves with its end.
        """
        if duration <= self.duration:
            return
        self.duration = duration
        self._index(duration - 1)

    def on_decision(self, instance: int, value, t: int, first_quorum: Iterable[str] = ()):
        idx = self._index(t)
        self.payload_bytes[idx] += value.payload_size
        self.decisions[idx] += 1
        self.decision_times.append(t)
        for acceptor in first_quorum:
            if acceptor not in self.quorum_counts:
                self.acceptors = sorted(self.acceptors + [acceptor])
                self.quorum_counts[acceptor] = np.zeros(self.windows, dtype=np.int64)
            self.quorum_counts[acceptor][idx] += 1

    def on_response(self, client_id: str, sent_at: int, t: int):
        self.latency_samples.append(LatencySample(t, t - sent_at, client_id))

    def sample_buffers(self, network: Network, t: int, nodes: Iterable[str]):
        for node in sorted(nodes):
            for peer, (kernel, app) in network.buffer_occupancy(node).items():
                self.buffer_samples.append(BufferSample(t, node, peer, kernel, app))


#
#   Analyses
#

def downtime(series: MetricSeries, min_gap: float = DEFAULT_MIN_GAP) -> DowntimeReport:
    """
    Maximal intervals of the measurement interval without a decision that last
    at least min_gap seconds. A gap reaching the end of the interval is open:
    its length is only a lower bound.
    """
    start, end = series.interval
    times = sorted(t for t in series.decision_times if start <= t <= end)
    points = [start] + times + [end]

    gaps = []
    for left, right in zip(points, points[1:]):
        if right - left >= seconds(min_gap):
            gaps.append((to_seconds(left), to_seconds(right)))
    max_gap = max((right - left for left, right in gaps), default=0.0)
    open_ended = end - points[-2] >= seconds(min_gap)
    return DowntimeReport(gaps, max_gap, open_ended)


def latency_stats(samples: Iterable[float]) -> Dict[str, float]:
    """
    mean, p50, p95, p99 and max; percentiles use the nearest-rank method.
    """
    values = np.sort(np.asarray(list(samples), dtype=float))
    if values.size == 0:
        raise EmptySamples("No latency samples")

    def rank(p: float) -> float:
        return float(values[max(0, int(math.ceil(p * values.size / 100.0)) - 1)])

    return {
        "mean": float(values.mean()),
        "p50": rank(50),
        "p95": rank(95),
        "p99": rank(99),
        "max": float(values[-1]),
    }


def leader_cpu(network: Network, leader: str, windows: int, window: int = METRIC_WINDOW) -> np.ndarray:
    """
    Busy fraction of the leader's CPU per window, retry tax included.
    """
    busy = network.cpu_busy(leader)
    values = np.array([busy.get(w, 0) for w in range(windows)], dtype=float) / window
    return np.minimum(values, 1.0)


def retry_tax(network: Network, node: str, windows: int) -> np.ndarray:
    """
    CPU seconds per window spent on refused retries.
    """
    tax = network.retry_tax(node)
    return np.array([tax.get(w, 0) for w in range(windows)], dtype=float) / NANOSECONDS


def two_means(values: Sequence[float]) -> Tuple[float, float, np.ndarray]:
    """
    Splits values into a low and a high cluster. Returns both means and the
    label (0 low, 1 high) of every value.
    """
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise EmptySamples("No values to cluster")
    low, high = data.min(), data.max()
    if low == high:
        return float(low), float(high), np.zeros(data.size, dtype=int)

    centroids, labels = kmeans2(data.reshape(-1, 1), np.array([[low], [high]]), minit='matrix')
    order = np.argsort(centroids[:, 0])
    labels = np.argsort(order)[labels]
    means = centroids[order, 0]
    return float(means[0]), float(means[1]), labels


def separation(low: float, high: float) -> float:
    return 0.0 if high == 0 else (high - low) / high


def origin_fit(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares line through the origin. Returns (slope, coefficient of determination).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    denominator = float(np.dot(x, x))
    if denominator == 0:
        raise EmptySamples("Origin fit needs a non-zero x")
    slope = float(np.dot(x, y)) / denominator
    residual = float(np.sum((y - slope * x) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if total == 0 else 1.0 - residual / total
    return slope, r2


#
#   Output bundle
#

def _write(frame: pd.DataFrame, directory: str, name: str) -> str:
    file = os.path.join(directory, name)
    frame.to_csv(file, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")
    return file


def throughput_frame(series: MetricSeries) -> pd.DataFrame:
    return pd.DataFrame({
        "t_s": np.arange(series.windows) * series.window_s,
        "mbps": series.throughput_mbps,
        "instances_per_s": series.instances_per_s,
    })


def latency_frame(series: MetricSeries) -> pd.DataFrame:
    return pd.DataFrame({
        "t_s": [s.t / NANOSECONDS for s in series.latency_samples],
        "latency_ms": [s.latency / 1e6 for s in series.latency_samples],
        "client_id": [s.client_id for s in series.latency_samples],
    }, columns=["t_s", "latency_ms", "client_id"])


def quorum_frame(series: MetricSeries) -> pd.DataFrame:
    rows = [(w * series.window_s, acceptor, int(series.quorum_counts[acceptor][w]))
            for w in range(series.windows) for acceptor in series.acceptors]
    return pd.DataFrame(rows, columns=["t_s", "acceptor", "first_quorum_count"])


def buffers_frame(series: MetricSeries) -> pd.DataFrame:
    rows = [(s.t / NANOSECONDS, s.node, s.peer, s.kernel_bytes, s.app_bytes) for s in series.buffer_samples]
    return pd.DataFrame(rows, columns=["t_s", "node", "peer", "kernel_bytes", "app_bytes"])


def summary_frame(series: MetricSeries, min_gap: float = DEFAULT_MIN_GAP) -> pd.DataFrame:
    measured = series.measured_windows()
    mbps = series.throughput_mbps[measured] if measured.size else np.zeros(1)
    start, end = series.interval
    latencies = [s.latency / 1e6 for s in series.latency_samples if start <= s.t <= end]
    p99 = latency_stats(latencies)["p99"] if latencies else 0.0
    return pd.DataFrame([{
        "peak_mbps": float(mbps.max()),
        "mean_mbps": float(mbps.mean()),
        "p99_latency_ms": p99,
        "max_gap_s": downtime(series, min_gap).max_gap_s,
        "decisions_total": int(series.decisions.sum()),
    }], columns=["peak_mbps", "mean_mbps", "p99_latency_ms", "max_gap_s", "decisions_total"])


def leader_frame(series: MetricSeries, network: Network, leader: str) -> pd.DataFrame:
    return pd.DataFrame({
        "t_s": np.arange(series.windows) * series.window_s,
        "cpu_util": leader_cpu(network, leader, series.windows, series.window),
        "retry_tax_s": retry_tax(network, leader, series.windows),
    })


def write_bundle(series: MetricSeries, network: Network, leader: str, directory: str,
                 min_gap: float = DEFAULT_MIN_GAP) -> List[str]:
    """
    Writes throughput, latency, quorum, buffers, summary and leader CSVs into directory.
    """
    os.makedirs(directory, exist_ok=True)
    return [
        _write(throughput_frame(series), directory, "throughput.csv"),
        _write(latency_frame(series), directory, "latency.csv"),
        _write(quorum_frame(series), directory, "quorum.csv"),
        _write(buffers_frame(series), directory, "buffers.csv"),
        _write(summary_frame(series, min_gap), directory, "summary.csv"),
        _write(leader_frame(series, network, leader), directory, "leader.csv"),
    ]
