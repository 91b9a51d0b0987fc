"""
HiveSim - Cloud-Edge Swarm Platform
Program, place and simulate multi-phase jobs across a device swarm and a serverless cluster.
"""

__version__ = "1.0.0"
__author__ = "HiveSim Development Team"

from hivesim.dsl import load_program, parse_program, render_program, validate
from hivesim.errors import ConfigError, HiveSimError, ParseError, ValidationError
from hivesim.utils import (
    canonical_json,
    config_hash,
    setup_logging
)

__all__ = [
    'ConfigError',
    'HiveSimError',
    'ParseError',
    'ValidationError',
    'canonical_json',
    'config_hash',
    'load_program',
    'parse_program',
    'render_program',
    'setup_logging',
    'validate'
]
