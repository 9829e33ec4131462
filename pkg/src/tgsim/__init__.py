"""System-level simulator for 5G-Advanced downlink multicast to XR
tethering groups: selection / soft-combining cooperation, joint HARQ
feedback processing and joint outer-loop link adaptation."""

from .config import ScenarioConfig, default_config, load_config
from .engine import DropResult, run_campaign, run_drop

__all__ = [
    "ScenarioConfig",
    "default_config",
    "load_config",
    "DropResult",
    "run_campaign",
    "run_drop",
]

__version__ = "0.1.0"
