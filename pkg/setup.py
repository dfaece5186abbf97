#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import setuptools

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r") as fh:
    requirements = [line for line in fh.read().splitlines() if line and not line.startswith("#")]

setuptools.setup(
    name="paxos-simulation",
    version="0.1.0",
    description="Deterministic discrete-event simulation of Paxos libraries under failures",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "tests.*"]),
    package_data={
        "paxos_simulation": ["*.json", "scenarios/*.ini"],
    },
    install_requires=requirements,
    python_requires=">=3.8",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    entry_points={
        'console_scripts': [
            'paxos-simulation = paxos_simulation.__main__:main',
        ],
    },
)
