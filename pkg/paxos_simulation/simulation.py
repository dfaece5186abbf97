#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import math
from collections import namedtuple
from contextlib import contextmanager
from typing import List, Optional

import click

import paxos_simulation.cli as cli
from paxos_simulation.architectures import Cluster, build_cluster
from paxos_simulation.kernel import Engine, seconds, to_seconds
from paxos_simulation.metrics import DowntimeReport, MetricSeries, downtime, leader_cpu, summary_frame, write_bundle
from paxos_simulation.network import METRIC_WINDOW, Network
from paxos_simulation.paxos import SafetyViolation, check_prefixes
from paxos_simulation.scenario import Scenario, ScenarioSemanticError, link_specs, placeholders, to_arch_config
from paxos_simulation.workload import ClientSpec, LoadCap, apply_failures, spawn_clients

TRACE_LIMIT = 1000
EXTENSION_STEP = seconds(10)

RunResult = namedtuple('RunResult', ['scenario', 'seed', 'series', 'downtime', 'summary', 'warnings', 'digest'])


class Simulation:
    """
    One run of a scenario: kernel, network, cluster, clients and failures.
    """

    Parameters = namedtuple('Parameters', ['seed', 'duration', 'warmup', 'cooldown', 'step'])

    @classmethod
    def build(cls, scenario: Scenario, seed: Optional[int] = None, verbose: bool = True):
        if verbose:
            cli.out("{} Build simulation {}".format(cli.GLOBE, scenario.name or scenario.variant), bold=True)
            cli.out("{} nodes, {} clients, {} s of simulated time".format(
                len(scenario.nodes), scenario.clients.count, scenario.duration_s))
        return cls(scenario, seed)

    def __init__(self, scenario: Scenario, seed: Optional[int] = None) -> None:
        if placeholders(scenario):
            raise ScenarioSemanticError("failure", "unfilled failure placeholder for {}".format(placeholders(scenario)))

        self.scenario = scenario
        self.parameters = Simulation.Parameters(
            seed=scenario.seed if seed is None else seed,
            duration=seconds(scenario.duration_s),
            warmup=seconds(scenario.warmup_s),
            cooldown=seconds(scenario.cooldown_s),
            step=METRIC_WINDOW)

        self.engine = Engine(self.parameters.seed, keep_trace=True, trace_limit=TRACE_LIMIT)
        self.network = Network(self.engine)
        self.warnings: List[str] = []

        self.cfg = to_arch_config(scenario)
        self.series = MetricSeries(self.parameters.duration, self.cfg.acceptors, warmup=self.parameters.warmup,
                                   cooldown=self.parameters.cooldown)
        self.cluster: Cluster = build_cluster(self.cfg, self.network, self.series, self.warnings)
        for link in link_specs(scenario):
            self.network.set_link(link)

        self.cap = LoadCap(scenario.load_cap_mbps) if scenario.load_cap_mbps is not None else None
        self.clients = []
        self.result: Optional[RunResult] = None

    @property
    def leader(self) -> str:
        return self.cfg.leader

    #
    #   Running
    #

    def start(self):
        c = self.scenario.clients
        spec = ClientSpec.build("C", c.policy, self.scenario.request_size, c.think_time_s, c.outstanding)
        self.cluster.start()
        self.clients = spawn_clients(self.cluster, spec, c.count, self.cap)
        apply_failures(self.network, self.scenario.failures, self.scenario.duration_s)

    def step(self, until: int):
        self.engine.run_until(until)
        self.series.sample_buffers(self.network, until, self.cluster.processes)

    @contextmanager
    def progress(self, show: bool, steps: int):
        if not show:
            yield None
            return
        with click.progressbar(length=steps, label="Simulating", show_pos=True) as bar:
            yield bar

    def run(self, show_progress: bool = False, max_extension_s: float = 0.0) -> RunResult:
        """
        Runs the whole scenario in metric-window steps and audits the outcome. While
        the run ends inside a stall it keeps going, EXTENSION_STEP at a time, for at
        most max_extension_s more seconds.
        """
        self.start()
        duration, step = self.parameters.duration, self.parameters.step
        steps = int(math.ceil(duration / step))

        try:
            with self.progress(show_progress, steps) as bar:
                self.advance(0, duration, bar)
            extended = self.extend(seconds(max_extension_s))
            check_prefixes(self.cluster.learners())
        except SafetyViolation as violation:
            violation.trace = self.trace_excerpt()
            raise

        report: DowntimeReport = downtime(self.series)
        if extended:
            self.warnings.append("Run extended by {:g} s while decisions were stalled".format(to_seconds(extended)))
        if report.open_ended:
            self.warnings.append("Decisions had not resumed at {:g} s; downtime {:.3f} s is a lower bound".format(
                to_seconds(self.series.interval[1]), report.max_gap_s))
        summary = summary_frame(self.series).iloc[0].to_dict()
        self.result = RunResult(self.scenario, self.parameters.seed, self.series, report, summary,
                                list(self.warnings), self.engine.trace_digest())
        return self.result

    def advance(self, start: int, end: int, bar=None):
        t = start
        while t < end:
            t = min(t + self.parameters.step, end)
            self.step(t)
            if bar is not None:
                bar.update(1)

    def extend(self, limit: int) -> int:
        """
        Lengthens the run while its last gap reaches the end. Returns the extra time.
        """
        duration = self.series.duration
        end = duration + max(0, limit)
        while duration < end and downtime(self.series).open_ended:
            longer = min(duration + EXTENSION_STEP, end)
            self.series.extend_to(longer)
            self.advance(duration, longer)
            duration = longer
        return duration - self.parameters.duration

    #
    #   Output
    #

    def leader_utilization(self):
        return leader_cpu(self.network, self.leader, self.series.windows, self.series.window)

    def write_bundle(self, directory: str) -> List[str]:
        return write_bundle(self.series, self.network, self.leader, directory)

    def trace_excerpt(self, n: int = 20) -> List[str]:
        entries = list(self.engine.trace)[-n:]
        return ["{:>15} ns  #{:<9} {:<8} {}".format(e.fire_at, e.seq, e.target, e.kind) for e in entries]
