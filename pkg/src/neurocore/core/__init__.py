"""Core model: SRAM banks, sub-core interpreter and the multi-core system."""

from .core import ENGINES, SubCore
from .memory import Dram, SramBank
from .stats import EnergyLedger, GatingStats
from .system import LossHost, SimResult, System

__all__ = ["ENGINES", "SubCore", "Dram", "SramBank", "EnergyLedger", "GatingStats", "LossHost", "SimResult",
           "System"]
