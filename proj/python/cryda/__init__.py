"""Python face of the cryda toolkit.

The heavy lifting lives in the native extension ``cryda._core``; this package
re-exports it and adds a ``main`` wrapper suitable for console entry points.
"""

import sys

from ._core import (
    ConfigError,
    DataError,
    Error,
    IoError,
    auc,
    default_config_ini,
    estimate_pitch,
    log_mel,
    run_cli,
    validate_config,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "IoError",
    "auc",
    "default_config_ini",
    "estimate_pitch",
    "log_mel",
    "main",
    "run_cli",
    "validate_config",
]


def main(argv=None):
    """Console entry point mirroring the cryda binary."""
    if argv is None:
        argv = sys.argv[1:]
    return run_cli(list(argv))
