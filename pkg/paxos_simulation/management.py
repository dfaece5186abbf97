#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from os import path, listdir, makedirs
from typing import Iterable, List, Optional

import pandas as pd

import paxos_simulation.cli as cli
from paxos_simulation.errors import SimulationError
from paxos_simulation.metrics import FLOAT_FORMAT
from paxos_simulation.scenario import (
    Scenario, ScenarioSemanticError, load_scenario, placeholders, preset, preset_names, render_scenario,
    with_failure_at)
from paxos_simulation.simulation import RunResult, Simulation
from paxos_simulation.workload import FailureEvent

PEAK_OUTSTANDING = 8
DEFAULT_FRACTION = 0.7


#
#   Orchestration
#

def run_scenario(scenario: Scenario, seed: Optional[int] = None, out: Optional[str] = None,
                 verbose: bool = True, max_extension_s: float = 0.0) -> RunResult:
    """
    Runs one scenario and writes its CSV bundle.
    """
    simulation = Simulation.build(scenario, seed, verbose=verbose)
    result = simulation.run(show_progress=verbose, max_extension_s=max_extension_s)

    directory = out or scenario.output
    files = simulation.write_bundle(directory)
    if verbose:
        for message in result.warnings:
            cli.warning(message)
        cli.success("{} Wrote {} files to {}".format(cli.CHART, len(files), directory))
        cli.table(result.summary)
    return result


def sweep_duration(base: Scenario, kill_time: float) -> float:
    # the classic stall grows with the kill time; leave room for the recovery
    return max(base.duration_s, 2 * kill_time + base.cooldown_s + 10.0)


def sweep_extension(kill_time: float) -> float:
    # WAN stalls reach several times the kill time
    return 4 * kill_time + 60.0


def sweep_kill_times(base: Scenario, kill_times: Iterable[float], steering: bool, out: str,
                     verbose: bool = True) -> pd.DataFrame:
    """
    One run per kill time with the base's failure placeholder filled in.
    Writes sweep.csv (kill_time_s, steering, downtime_s) into out.
    """
    if len(placeholders(base)) != 1:
        raise ScenarioSemanticError("failure", "a sweep base needs exactly one `NODE = ?` failure entry")

    label = "on" if steering else "off"
    base = base._replace(steering=base.steering._replace(enabled=steering))
    rows = []
    for kill_time in kill_times:
        scenario = with_failure_at(base, kill_time)
        scenario = scenario._replace(duration_s=sweep_duration(base, kill_time))
        if verbose:
            cli.out("{} Kill {} at {} s, steering {}".format(
                cli.SKULL, placeholders(base)[0], kill_time, label), bold=True)
        directory = path.join(out, "kill_{}_{}".format(_number(kill_time), label))
        result = run_scenario(scenario, out=directory, verbose=verbose,
                              max_extension_s=sweep_extension(kill_time))
        rows.append((float(kill_time), label, result.downtime.max_gap_s))

    makedirs(out, exist_ok=True)
    frame = pd.DataFrame(rows, columns=["kill_time_s", "steering", "downtime_s"])
    frame.to_csv(path.join(out, "sweep.csv"), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return frame


def measure_peak(base: Scenario, out: Optional[str] = None, verbose: bool = True) -> float:
    """
    Mean delivered throughput (Mb/s) with saturating clients and no load cap.
    """
    if base.load_cap_mbps is not None:
        raise ScenarioSemanticError("scenario.load_cap_mbps", "peak measurement needs an uncapped scenario")
    saturated = base._replace(failures=(), clients=base.clients._replace(outstanding=PEAK_OUTSTANDING))
    result = run_scenario(saturated, out=out or path.join(base.output, "peak"), verbose=verbose)
    return float(result.summary["mean_mbps"])


def derive_capped(base: Scenario, peak_mbps: float, fraction: float = DEFAULT_FRACTION) -> Scenario:
    if not 0 < fraction <= 1:
        raise ScenarioSemanticError("fraction", "must lie in (0, 1], got {}".format(fraction))
    return base._replace(load_cap_mbps=round(peak_mbps * fraction, 6))


def resolve_scenario(name_or_file: str) -> Scenario:
    """
    Loads a scenario file, or a shipped preset by name.
    """
    if path.isfile(name_or_file):
        return load_scenario(name_or_file)
    if name_or_file in preset_names():
        return preset(name_or_file)
    raise ScenarioSemanticError("scenario", "{} is neither a file nor a preset".format(name_or_file))


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(value)


#
#   Interactive menu
#

class SimulationManager:

    ACTIONS = {
        "Load a scenario file": lambda self: self.load_file(),
        "Load a preset": lambda self: self.load_preset(),
        "Show the scenario": lambda self: self.show(),
        "Run the scenario": lambda self: self.run(),
        "Sweep kill times": lambda self: self.sweep(),
        "Measure peak throughput": lambda self: self.peak(),
        "Exit the Simulation": lambda self: self.exit()
    }

    def __init__(self, scenarios_folder_path: Optional[str] = None) -> None:
        cli.out("--- PAXOS SIMULATION ---", bold=True, color='yellow')

        self.scenario_files = _get_all_file_of_folder(scenarios_folder_path) if scenarios_folder_path else []
        self.scenario: Optional[Scenario] = None
        if scenarios_folder_path:
            cli.out("Found {} scenario files in folder {}.".format(len(self.scenario_files), scenarios_folder_path))

        cli.success("Initialization completed. \n")

    def start(self):
        try:
            while True:
                cli.out("Simulation Menu", underline=True, bold=True, color='blue')
                action_key = cli.choice("What do you want to do?", list(self.ACTIONS.keys()))
                try:
                    self.ACTIONS.get(action_key, lambda s: None)(self)
                except (SimulationError, OSError) as error:
                    cli.error("Action failed: {} \n".format(error))

        except KeyboardInterrupt:
            cli.out("\nExit Paxos Simulation.")
            return

    def load_file(self):
        if self.scenario_files:
            file = cli.choice("Select a scenario file", self.scenario_files + ["Other..."])
        else:
            file = "Other..."
        if file == "Other...":
            file = cli.input("Path of the scenario file", type=str)
        self.scenario = load_scenario(file)
        cli.success("Loaded scenario {} \n".format(self.scenario.name or file))

    def load_preset(self):
        name = cli.choice("Select a preset", preset_names())
        self.scenario = preset(name)
        cli.success("Loaded preset {} \n".format(name))

    def show(self):
        if not self._require_scenario():
            return
        cli.out(render_scenario(self.scenario))

    def run(self):
        if not self._require_scenario():
            return
        cli.out("{} Run scenario".format(cli.ROCKET), bold=True)
        seed = cli.input("Seed", type=int, default=self.scenario.seed)
        out = cli.input("Output directory", type=str, default=self.scenario.output)
        run_scenario(self.scenario, seed=seed, out=out)

    def sweep(self):
        if not self._require_scenario():
            return
        scenario = self.scenario
        if not placeholders(scenario):
            node = cli.choice("Which node is killed?", [n.name for n in scenario.nodes])
            scenario = scenario._replace(failures=(FailureEvent(node, None),))
        kill_times = [float(t) for t in cli.input("Kill times in seconds", type=str, default="50,100,150,200").split(",")]
        steering = cli.confirm("Enable quorum steering?", default=False)
        out = cli.input("Output directory", type=str, default=path.join(scenario.output, "sweep"))
        frame = sweep_kill_times(scenario, kill_times, steering, out)
        cli.out(frame.to_string(index=False))

    def peak(self):
        if not self._require_scenario():
            return
        peak_mbps = measure_peak(self.scenario._replace(load_cap_mbps=None))
        cli.success("Peak throughput: {:.3f} Mb/s".format(peak_mbps))
        if cli.confirm("Use a capped scenario from now on?", default=True):
            fraction = cli.input("Fraction of the peak", type=float, default=DEFAULT_FRACTION)
            self.scenario = derive_capped(self.scenario, peak_mbps, fraction)
            cli.success("Load cap set to {} Mb/s \n".format(self.scenario.load_cap_mbps))

    def exit(self):
        """
        Exit Simulation Manager.
        """
        raise KeyboardInterrupt

    def _require_scenario(self) -> bool:
        if self.scenario is None:
            cli.error("No scenario loaded! Load a file or a preset first.")
            return False
        return True


def start_simulation_manager(scenarios_folder_path: Optional[str] = None):
    manager = SimulationManager(scenarios_folder_path)
    manager.start()


def _get_all_file_of_folder(folder) -> List[str]:
    if not path.exists(folder):
        return []

    return sorted(path.join(folder, f) for f in listdir(folder) if path.isfile(path.join(folder, f)))
