"""
plugnet - Smart-Plug Cloud Protocol Emulation

Plug, phone, HTTPS server and TURN relay actors over a simulated NAT'd
network, the sharing and connection-hijack attacks against them, and the
trace and firmware analysis utilities used to study the protocol.
"""

__version__ = "0.1.0"
__author__ = "plugnet Development Team"

from .main import PlugNet
from .simnet import SimNetwork
from .actors import HttpsServer, SmartPlug, Smartphone, TurnServer
from .attacks import AttackDriver
from .analysis import FirmwareScanner, classify_trace_fields
from .config import ScenarioConfig, build_config
from .trace_loader import TraceLoader
from .report_generator import ReportGenerator

__all__ = [
    "PlugNet",
    "SimNetwork",
    "SmartPlug",
    "Smartphone",
    "HttpsServer",
    "TurnServer",
    "AttackDriver",
    "FirmwareScanner",
    "classify_trace_fields",
    "ScenarioConfig",
    "build_config",
    "TraceLoader",
    "ReportGenerator",
]
