#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Scenario files and the shipped presets.

A scenario is a sectioned key=value file:

    [scenario]      seed, duration, variant, request size and protocol parameters
    [clients]       client population
    [node.NAME]     class, roles, region and optional capacity overrides
    [link.A.B]      symmetric rtt/bandwidth override between two nodes
    [failure]       NODE = seconds, or NODE = ? for a sweep placeholder
    [steering]      quorum steering parameters
"""

import configparser
from collections import namedtuple
from typing import List, Optional, Tuple

from paxos_simulation.architectures import ArchConfig, BadConfig, Variant
from paxos_simulation.architectures.base import ACCEPTOR, LEADER, LEARNER, PROPOSER, ROLES
from paxos_simulation.errors import SimulationError
from paxos_simulation.network import InstanceClass, LinkSpec, NodeSpec
from paxos_simulation.steering import SteeringParams
from paxos_simulation.utils import get_configurations, get_region_table
from paxos_simulation.workload import AttachPolicy, FailureEvent

PLACEHOLDER = "?"


class ScenarioSyntaxError(SimulationError):
    def __init__(self, line: Optional[int], reason: str) -> None:
        super().__init__("line {}: {}".format(line, reason))
        self.line = line
        self.reason = reason


class ScenarioSemanticError(SimulationError):
    def __init__(self, field: str, reason: str) -> None:
        super().__init__("{}: {}".format(field, reason))
        self.field = field
        self.reason = reason


NodeEntry = namedtuple('NodeEntry', ['name', 'klass', 'roles', 'region', 'cpu_rate', 'bandwidth', 'fixed_msg_cost'])
LinkEntry = namedtuple('LinkEntry', ['a', 'b', 'rtt_ms', 'bandwidth_mbps'])
ClientsEntry = namedtuple('ClientsEntry', ['count', 'outstanding', 'policy', 'think_time_s', 'proxies'])

Scenario = namedtuple('Scenario', [
    'name', 'seed', 'duration_s', 'variant', 'request_size', 'f', 'batch_bytes', 'warmup_s', 'cooldown_s',
    'load_cap_mbps', 'ring_order', 'ring_entry', 'instance_timeout_s', 'session_timeout_s', 'reconfig_delay_s',
    'clients', 'nodes', 'links', 'failures', 'steering', 'output'])


#
#   Helpers
#

def placeholders(s: Scenario) -> List[str]:
    return [event.node for event in s.failures if event.at is None]


def with_failure_at(s: Scenario, at: float) -> Scenario:
    """
    Fills the single failure placeholder of a sweep base.
    """
    pending = placeholders(s)
    if len(pending) != 1:
        raise ScenarioSemanticError("failure", "expected exactly one placeholder, found {}".format(len(pending)))
    failures = tuple(FailureEvent(e.node, float(at)) if e.at is None else e for e in s.failures)
    return s._replace(failures=failures)


def to_arch_config(s: Scenario) -> ArchConfig:
    nodes = [(NodeSpec.build(n.name, n.klass, n.region, cpu_rate=n.cpu_rate, bandwidth=n.bandwidth,
                             fixed_msg_cost=n.fixed_msg_cost), frozenset(n.roles)) for n in s.nodes]
    return ArchConfig(
        s.variant, nodes, f=s.f, batch_bytes=s.batch_bytes, ring_order=s.ring_order, ring_entry=s.ring_entry,
        steering=s.steering, instance_timeout_s=s.instance_timeout_s, session_timeout_s=s.session_timeout_s,
        reconfig_delay_s=s.reconfig_delay_s, proxies=s.clients.proxies)


def link_specs(s: Scenario) -> List[LinkSpec]:
    """
    Both directions of every link override.
    """
    specs = []
    for link in s.links:
        bandwidth = float("inf") if link.bandwidth_mbps is None else link.bandwidth_mbps * 1e6 / 8
        latency = int(round(link.rtt_ms * 1_000_000 / 2))
        specs.append(LinkSpec(link.a, link.b, latency, bandwidth))
        specs.append(LinkSpec(link.b, link.a, latency, bandwidth))
    return specs


def known_regions() -> List[str]:
    table = get_region_table()
    regions = {get_configurations()["default_region"]}
    for pair in table["pairs"]:
        regions.update(pair["regions"])
    return sorted(regions)


#
#   Parsing
#

class _Reader:

    def __init__(self, parser: configparser.ConfigParser) -> None:
        self.parser = parser
        self.used = set()

    def get(self, section: str, key: str, cast=str, default=None, required: bool = False):
        self.used.add((section, key))
        if not self.parser.has_section(section) or not self.parser.has_option(section, key):
            if required:
                raise ScenarioSemanticError("{}.{}".format(section, key), "missing")
            return default
        raw = self.parser.get(section, key).strip()
        if raw == "":
            return default
        try:
            return cast(raw)
        except (ValueError, KeyError) as e:
            raise ScenarioSemanticError("{}.{}".format(section, key), "invalid value {!r} ({})".format(raw, e))

    def check_unused(self):
        for section in self.parser.sections():
            for key in self.parser.options(section):
                if (section, key) not in self.used:
                    raise ScenarioSemanticError("{}.{}".format(section, key), "unknown field")


def _bool(raw: str) -> bool:
    value = raw.lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _names(raw: str) -> Tuple[str, ...]:
    return tuple(name.strip() for name in raw.split(",") if name.strip())


def _read(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ScenarioSyntaxError(e.lineno, "line outside of a section")
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ScenarioSyntaxError(e.lineno, e.message.splitlines()[0])
    except configparser.ParsingError as e:
        line, content = e.errors[0]
        raise ScenarioSyntaxError(line, "cannot parse {}".format(content))
    return parser


def parse_scenario(text: str) -> Scenario:
    """
    Parses and validates a scenario. Raises ScenarioSyntaxError with the line
    number or ScenarioSemanticError with the field name.
    """
    parser = _read(text)
    r = _Reader(parser)

    for section in parser.sections():
        if section not in ("scenario", "clients", "failure", "steering") \
                and not section.startswith("node.") and not section.startswith("link."):
            raise ScenarioSemanticError(section, "unknown section")
    if not parser.has_section("scenario"):
        raise ScenarioSemanticError("scenario", "missing section")

    s = "scenario"
    variant = r.get(s, "variant", lambda v: Variant[v.upper()], required=True)
    duration = r.get(s, "duration_s", float, required=True)
    warmup = r.get(s, "warmup_s", float, 10.0)
    cooldown = r.get(s, "cooldown_s", float, 10.0)
    if duration <= 0:
        raise ScenarioSemanticError("scenario.duration_s", "must be positive")
    if warmup < 0 or cooldown < 0 or warmup + cooldown >= duration:
        raise ScenarioSemanticError("scenario.warmup_s", "warmup and cooldown must leave a measurement interval")

    request_size = r.get(s, "request_size_bytes", int, required=True)
    if request_size <= 0:
        raise ScenarioSemanticError("scenario.request_size_bytes", "must be positive")
    load_cap = r.get(s, "load_cap_mbps", float)
    if load_cap is not None and load_cap <= 0:
        raise ScenarioSemanticError("scenario.load_cap_mbps", "must be positive")

    nodes = []
    regions = known_regions()
    default_region = get_configurations()["default_region"]
    for section in parser.sections():
        if not section.startswith("node."):
            continue
        name = section[len("node."):]
        roles = r.get(section, "roles", _names, ())
        unknown = set(roles) - set(ROLES)
        if unknown:
            raise ScenarioSemanticError(section + ".roles", "unknown roles {}".format(sorted(unknown)))
        region = r.get(section, "region", str, default_region)
        if region not in regions:
            raise ScenarioSemanticError(section + ".region", "unknown region {}".format(region))
        nodes.append(NodeEntry(
            name, r.get(section, "class", lambda v: InstanceClass[v.upper()], required=True),
            tuple(sorted(roles)), region,
            r.get(section, "cpu_rate", float), r.get(section, "bandwidth", float),
            r.get(section, "fixed_msg_cost", float)))
    names = [n.name for n in nodes]

    links = []
    for section in parser.sections():
        if not section.startswith("link."):
            continue
        ends = section[len("link."):].split(".")
        if len(ends) != 2 or not set(ends) <= set(names):
            raise ScenarioSemanticError(section, "a link joins two declared nodes")
        links.append(LinkEntry(ends[0], ends[1], r.get(section, "rtt_ms", float, required=True),
                               r.get(section, "bandwidth_mbps", float)))

    failures = []
    if parser.has_section("failure"):
        for node in parser.options("failure"):
            at = r.get("failure", node, lambda v: None if v == PLACEHOLDER else float(v))
            if node not in names:
                raise ScenarioSemanticError("failure." + node, "unknown node")
            if at is not None and not 0 <= at < duration:
                raise ScenarioSemanticError("failure." + node, "failure at {} s outside a {} s run".format(at, duration))
            failures.append(FailureEvent(node, at))

    clients = ClientsEntry(
        r.get("clients", "count", int, 50), r.get("clients", "outstanding", int, 1),
        r.get("clients", "policy", lambda v: AttachPolicy[v.upper()], AttachPolicy.LEADER_ONLY),
        r.get("clients", "think_time_s", float, 0.0), r.get("clients", "proxies", int, 1))
    if clients.count < 0 or clients.outstanding < 1 or clients.proxies < 1:
        raise ScenarioSemanticError("clients", "count must be >= 0, outstanding and proxies >= 1")

    steering = SteeringParams.build(
        r.get("steering", "enabled", _bool, False), r.get("steering", "probe_len", int, 100),
        r.get("steering", "steer_len", int, 900), r.get("steering", "suspicion_timeout_s", float, 1.0))
    if steering.probe_len < 1 or steering.steer_len < 0:
        raise ScenarioSemanticError("steering", "probe_len must be >= 1 and steer_len >= 0")

    scenario = Scenario(
        name=r.get(s, "name", str, ""),
        seed=r.get(s, "seed", int, 0),
        duration_s=duration,
        variant=variant,
        request_size=request_size,
        f=r.get(s, "f", int, 1),
        batch_bytes=r.get(s, "batch_bytes", int, 0),
        warmup_s=warmup,
        cooldown_s=cooldown,
        load_cap_mbps=load_cap,
        ring_order=r.get(s, "ring_order", _names),
        ring_entry=r.get(s, "ring_entry", str),
        instance_timeout_s=r.get(s, "instance_timeout_s", float, 0.5),
        session_timeout_s=r.get(s, "session_timeout_s", float, 3.0),
        reconfig_delay_s=r.get(s, "reconfig_delay_s", float, 0.5),
        clients=clients,
        nodes=tuple(nodes),
        links=tuple(links),
        failures=tuple(failures),
        steering=steering,
        output=r.get(s, "output", str, "out"))
    r.check_unused()

    try:
        to_arch_config(scenario).validate()
    except BadConfig as e:
        raise ScenarioSemanticError("nodes", str(e))
    except SimulationError as e:
        raise ScenarioSemanticError("nodes", str(e))
    return scenario


def load_scenario(file: str) -> Scenario:
    with open(file, encoding="utf-8") as f:
        return parse_scenario(f.read())


#
#   Rendering
#

def _value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(value)
    return str(value)


def render_scenario(s: Scenario) -> str:
    """
    Writes a scenario back in file form; parse_scenario(render_scenario(s)) == s.
    """
    lines = ["[scenario]"]
    fields = [
        ("name", s.name), ("seed", s.seed), ("duration_s", s.duration_s), ("variant", s.variant.value),
        ("request_size_bytes", s.request_size), ("f", s.f), ("batch_bytes", s.batch_bytes),
        ("warmup_s", s.warmup_s), ("cooldown_s", s.cooldown_s), ("load_cap_mbps", s.load_cap_mbps),
        ("ring_order", s.ring_order), ("ring_entry", s.ring_entry), ("instance_timeout_s", s.instance_timeout_s),
        ("session_timeout_s", s.session_timeout_s), ("reconfig_delay_s", s.reconfig_delay_s), ("output", s.output),
    ]
    lines += ["{} = {}".format(key, _value(value)) for key, value in fields if value not in (None, "")]

    c = s.clients
    lines += ["", "[clients]", "count = {}".format(c.count), "outstanding = {}".format(c.outstanding),
              "policy = {}".format(c.policy.value), "think_time_s = {}".format(_value(c.think_time_s)),
              "proxies = {}".format(c.proxies)]

    for n in s.nodes:
        lines += ["", "[node.{}]".format(n.name), "class = {}".format(n.klass.value),
                  "roles = {}".format(_value(n.roles)), "region = {}".format(n.region)]
        for key in ("cpu_rate", "bandwidth", "fixed_msg_cost"):
            if getattr(n, key) is not None:
                lines.append("{} = {}".format(key, _value(getattr(n, key))))

    for link in s.links:
        lines += ["", "[link.{}.{}]".format(link.a, link.b), "rtt_ms = {}".format(_value(link.rtt_ms))]
        if link.bandwidth_mbps is not None:
            lines.append("bandwidth_mbps = {}".format(_value(link.bandwidth_mbps)))

    if s.failures:
        lines += ["", "[failure]"]
        lines += ["{} = {}".format(e.node, PLACEHOLDER if e.at is None else _value(e.at)) for e in s.failures]

    st = s.steering
    lines += ["", "[steering]", "enabled = {}".format(_value(st.enabled)), "probe_len = {}".format(st.probe_len),
              "steer_len = {}".format(st.steer_len),
              "suspicion_timeout_s = {}".format(_value(st.suspicion_timeout_s))]
    return "\n".join(lines) + "\n"


#
#   Presets
#

_POLICIES = {
    Variant.LIBPAXOS: AttachPolicy.LEADER_ONLY,
    Variant.OPENREPLICA: AttachPolicy.PROXY,
    Variant.SPAXOS: AttachPolicy.RANDOM_REPLICA,
    Variant.RINGPAXOS: AttachPolicy.PROXY,
}


def _preset_nodes(variant: Variant, classes: dict, regions: dict) -> Tuple[Tuple[NodeEntry, ...], Optional[tuple]]:
    def node(name, row, roles):
        return NodeEntry(name, InstanceClass[classes[row]], tuple(sorted(roles)), regions[row], None, None, None)

    acceptors = ["A1", "A2", "A3"]
    if variant == Variant.LIBPAXOS:
        return (node("P", "leader", {LEADER, PROPOSER}),
                *[node(a, a, {ACCEPTOR}) for a in acceptors],
                node("L", "learner", {LEARNER})), None
    if variant == Variant.OPENREPLICA:
        return (node("P", "leader", {LEADER, PROPOSER, LEARNER}),
                *[node(a, a, {ACCEPTOR}) for a in acceptors]), None
    # the leader is acceptor A1 and runs on the leader's machine
    first = NodeEntry("A1", InstanceClass[classes["leader"]], (), regions["A1"], None, None, None)
    if variant == Variant.SPAXOS:
        every = {LEADER, PROPOSER, ACCEPTOR, LEARNER}
        return (first._replace(roles=tuple(sorted(every))),
                *[node(a, a, every - {LEADER}) for a in acceptors[1:]]), None
    return (first._replace(roles=tuple(sorted({LEADER, PROPOSER, ACCEPTOR}))),
            *[node(a, a, {ACCEPTOR}) for a in acceptors[1:]],
            node("L", "learner", {LEARNER})), ("A1", "A2", "A3", "L")


def preset_names() -> List[str]:
    data = get_configurations()
    return ["config_{}_{}_{}".format(config, size, variant)
            for config in sorted(data["configurations"])
            for size in data["sizes"]
            for variant in data["variants"]]


def preset(name: str) -> Scenario:
    """
    Scenario for config_<a-d>_<size>_<variant>.
    """
    data = get_configurations()
    try:
        _, config, size, variant_name = name.split("_")
        configuration = data["configurations"][config]
        request_size = data["sizes"][size]
        params = data["variants"][variant_name]
    except (ValueError, KeyError):
        raise ScenarioSemanticError("preset", "unknown preset {}, see preset_names()".format(name))

    variant = Variant[params["variant"]]
    rows = ("leader", "A1", "A2", "A3", "learner")
    if "regions" in configuration:
        layout = "leader_is_acceptor" if variant in (Variant.SPAXOS, Variant.RINGPAXOS) else "separate_leader"
        regions = configuration["regions"][layout]
    else:
        regions = {row: data["default_region"] for row in rows}

    nodes, ring_order = _preset_nodes(variant, configuration["classes"], regions)
    return Scenario(
        name=name, seed=1, duration_s=100.0, variant=variant, request_size=request_size, f=1,
        batch_bytes=params["batch_bytes"], warmup_s=10.0, cooldown_s=10.0, load_cap_mbps=None,
        ring_order=ring_order, ring_entry=None, instance_timeout_s=0.5, session_timeout_s=3.0,
        reconfig_delay_s=0.5, clients=ClientsEntry(50, 1, _POLICIES[variant], 0.0, 1), nodes=nodes, links=(),
        failures=(), steering=SteeringParams.build(enabled=params["steering"]), output=name)
