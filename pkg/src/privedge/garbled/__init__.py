from .circuit import BooleanCircuit, build_argmin_threshold_circuit, build_lrelu_circuit
from .garbling import GarbledCircuit, decode_bits, evaluate, garble
from .ot import OtKeyPair, generate_keys

__all__ = [
    "BooleanCircuit",
    "build_lrelu_circuit",
    "build_argmin_threshold_circuit",
    "GarbledCircuit",
    "garble",
    "evaluate",
    "decode_bits",
    "OtKeyPair",
    "generate_keys",
]
