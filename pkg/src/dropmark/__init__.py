"""Keyed packet-drop watermarking for exfiltration flows through stepping stones."""

from .detector import DetectionConfig, DetectionVerdict, detect, find_outliers, flow_decision, packets_to_detect
from .dsg import DroppingSchedule, PeriodConfig, ScheduleSource, SharedKey, sync_dsg, to_schedule
from .embedder import DropDecision, Embedder, PacketEvent, run_embedder
from .gilbert import GilbertParams, estimate_params, generate, stationary_drop_rate
from .harness import ExperimentPlan, run_invisibility, run_plan, scale_params
from .netsim import BottleneckConfig, PacketTrace, PathConfig, simulate_bottleneck, simulate_exfil_path

__version__ = "0.1.0"

__all__ = [
    "DetectionConfig", "DetectionVerdict", "detect", "find_outliers", "flow_decision", "packets_to_detect",
    "DroppingSchedule", "PeriodConfig", "ScheduleSource", "SharedKey", "sync_dsg", "to_schedule",
    "DropDecision", "Embedder", "PacketEvent", "run_embedder",
    "GilbertParams", "estimate_params", "generate", "stationary_drop_rate",
    "ExperimentPlan", "run_invisibility", "run_plan", "scale_params",
    "BottleneckConfig", "PacketTrace", "PathConfig", "simulate_bottleneck", "simulate_exfil_path",
]
