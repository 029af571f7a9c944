# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Global fixtures and utilities for integration and unit tests."""


def pytest_addoption(parser):
    """Define some command line options for integration and unit tests."""
    parser.addoption(
        "--duration-scale",
        action="store",
        type=float,
        default=1.0,
        help="scale the length of the simulated integration sequences",
    )
    parser.addoption(
        "--seeds",
        action="store",
        type=int,
        default=5,
        help="number of seeded runs per setting in the parameter sweeps",
    )
