#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from sys import exit
from os import path

import click

import paxos_simulation.cli as cli
from paxos_simulation.errors import SimulationError
from paxos_simulation.management import (
    DEFAULT_FRACTION, derive_capped, measure_peak, resolve_scenario, run_scenario, start_simulation_manager,
    sweep_kill_times)
from paxos_simulation.paxos import SafetyViolation
from paxos_simulation.scenario import preset, preset_names, render_scenario

SCENARIOS_FOLDER = path.join(path.abspath(path.dirname(__file__)), "scenarios")


@click.group()
def commands():
    """
    Discrete-event simulation of Paxos libraries under failures.
    """


@commands.command()
@click.argument("scenario")
@click.option("--seed", type=int, default=None, help="Overrides the scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--extend", type=float, default=0.0, show_default=True,
              help="Seconds the run may continue past its end while decisions are stalled.")
def run(scenario, seed, out, extend):
    """Run a scenario file or preset and write its CSV bundle."""
    run_scenario(resolve_scenario(scenario), seed=seed, out=out, max_extension_s=extend)


@commands.command()
@click.option("--base", required=True, help="Scenario file or preset with one `NODE = ?` failure.")
@click.option("--kill-times", default="50,100,150,200", show_default=True, help="Comma separated seconds.")
@click.option("--steering", type=click.Choice(["on", "off"]), default="off", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
def sweep(base, kill_times, steering, out):
    """Run one simulation per kill time and write sweep.csv."""
    scenario = resolve_scenario(base)
    times = [float(t) for t in kill_times.split(",") if t.strip()]
    frame = sweep_kill_times(scenario, times, steering == "on", out or path.join(scenario.output, "sweep"))
    cli.out(frame.to_string(index=False))


@commands.command()
@click.option("--base", required=True, help="Uncapped scenario file or preset.")
@click.option("--fraction", type=float, default=None, help="Write a scenario capped at this fraction of the peak.")
@click.option("--write", "target", type=click.Path(dir_okay=False), default=None,
              help="File for the capped scenario.")
def peak(base, fraction, target):
    """Measure the peak throughput of a scenario."""
    scenario = resolve_scenario(base)
    peak_mbps = measure_peak(scenario)
    cli.success("Peak throughput: {:.3f} Mb/s".format(peak_mbps))
    if fraction is not None or target is not None:
        capped = derive_capped(scenario, peak_mbps, DEFAULT_FRACTION if fraction is None else fraction)
        target = target or "{}_capped.ini".format(scenario.name or "scenario")
        with open(target, "w", encoding="utf-8") as f:
            f.write(render_scenario(capped))
        cli.success("Wrote capped scenario ({} Mb/s) to {}".format(capped.load_cap_mbps, target))


@commands.command()
def presets():
    """List the shipped presets."""
    for name in preset_names():
        cli.out(name)


@commands.command()
@click.argument("name")
@click.option("--out", "target", type=click.Path(dir_okay=False), default=None)
def render(name, target):
    """Print a preset as a scenario file."""
    text = render_scenario(preset(name))
    if target is None:
        click.echo(text, nl=False)
        return
    with open(target, "w", encoding="utf-8") as f:
        f.write(text)
    cli.success("Wrote {}".format(target))


@commands.command()
def menu():
    """Interactive menu."""
    start_simulation_manager(SCENARIOS_FOLDER)


def main(args=None):
    try:
        commands.main(args=args, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        cli.error("Aborted.")
        return 1
    except SafetyViolation as e:
        cli.error("Safety violation: {}".format(e))
        for line in getattr(e, "trace", []):
            cli.out(line)
        return 2
    except SimulationError as e:
        cli.error("{}: {}".format(type(e).__name__, e))
        return 1
    except OSError as e:
        cli.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    exit(main())
