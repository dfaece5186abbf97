#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Scaled-down scenarios and clusters shared by the tests.
"""

from paxos_simulation.architectures import build_cluster
from paxos_simulation.kernel import Engine
from paxos_simulation.metrics import MetricSeries
from paxos_simulation.network import Network
from paxos_simulation.scenario import Scenario, preset, to_arch_config


def small(name: str, duration: float = 3.0, clients: int = 5, **changes) -> Scenario:
    """
    A preset shortened to a few simulated seconds with a handful of clients.
    """
    s = preset(name)
    s = s._replace(duration_s=duration, warmup_s=0.5, cooldown_s=0.5,
                   clients=s.clients._replace(count=clients))
    return s._replace(**changes)


def cluster_for(s: Scenario, seed: int = 1):
    """
    Engine, network and wired (not started) cluster of a scenario.
    """
    engine = Engine(seed)
    network = Network(engine)
    cfg = to_arch_config(s)
    series = MetricSeries(int(s.duration_s * 1e9), cfg.acceptors)
    cluster = build_cluster(cfg, network, series)
    return engine, network, cluster
