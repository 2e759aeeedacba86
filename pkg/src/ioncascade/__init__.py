"""Cascaded crosstalk-aware compilation and simulation for trapped-ion chains."""

__version__ = "0.1.0"

from .chain import BeamProfile, IonChain, TrapConfig
from .compiler import CircuitIR, CompilerOptions, Gate, PulseProgram, compile_circuit
from .experiment import NoiseModel, run_program
from .ir import parse

__all__ = [
    "BeamProfile",
    "CircuitIR",
    "CompilerOptions",
    "Gate",
    "IonChain",
    "NoiseModel",
    "PulseProgram",
    "TrapConfig",
    "compile_circuit",
    "parse",
    "run_program",
]
