"""Quantum time transfer: simulator, offset correlator, and link analysis."""

__version__ = "0.1.0"

from .timetags import (  # noqa: F401
    ChannelParams,
    ClockModel,
    TimeTagSeries,
    build_bob_stream,
    derive_seed,
)
from .config import Scenario, default_scenario, load_config  # noqa: F401
from .correlator import CorrelatorParams, recover_offset  # noqa: F401
