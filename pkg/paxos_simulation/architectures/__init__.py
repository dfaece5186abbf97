#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from typing import List

from paxos_simulation.architectures.base import ArchConfig, BadConfig, Cluster, NodeNotInRing, Variant
from paxos_simulation.architectures.libpaxos import wire_libpaxos
from paxos_simulation.architectures.openreplica import wire_openreplica
from paxos_simulation.architectures.ringpaxos import RingState, ring_reconfigure, wire_ring
from paxos_simulation.architectures.spaxos import StableTracker, wire_spaxos
from paxos_simulation.network import Network

WIRINGS = {
    Variant.LIBPAXOS: wire_libpaxos,
    Variant.OPENREPLICA: wire_openreplica,
    Variant.SPAXOS: wire_spaxos,
    Variant.RINGPAXOS: wire_ring,
}


def build_cluster(cfg: ArchConfig, network: Network, metrics=None, warnings: List[str] = None) -> Cluster:
    """
    Validates the configuration, puts its nodes on the network and wires the
    processes of the configured variant. Processes are not started.
    """
    cfg.validate()
    for spec, _ in cfg.nodes:
        network.add_node(spec)
    return WIRINGS[cfg.variant](cfg, Cluster(cfg, network, metrics=metrics, warnings=warnings))


__all__ = [
    "ArchConfig", "BadConfig", "Cluster", "NodeNotInRing", "RingState", "StableTracker", "Variant", "WIRINGS",
    "build_cluster", "ring_reconfigure",
]
