#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import json
from os import path

INSTANCE_CLASSES_FILE = path.join(path.abspath(path.dirname(__file__)), "instance_classes.json")

REGIONS_FILE = path.join(path.abspath(path.dirname(__file__)), "regions.json")

CONFIGURATIONS_FILE = path.join(path.abspath(path.dirname(__file__)), "configurations.json")

_cache = {}


def _load(file):
    if file not in _cache:
        with open(file, encoding="utf-8") as f:
            _cache[file] = json.load(f)
    return _cache[file]


def get_instance_classes():
    """
    Returns the calibration of every instance class (cpu_rate, bandwidth, fixed_msg_cost).
    """
    return _load(INSTANCE_CLASSES_FILE)


def get_region_table():
    return _load(REGIONS_FILE)


def get_configurations():
    return _load(CONFIGURATIONS_FILE)
