"""Adaptive network-coded transmission over land-mobile-satellite channels."""

__version__ = "0.1.0"

from .phy import BPSK, MODULATIONS, PSK8, QAM16, QPSK, Modulation, PhyConfig, bit_error_prob, erasure_prob
from .channel import ChannelTrace, LmsParameters, OPEN_AREA_GEO, constant_trace, generate_trace, load_trace, save_trace
from .policies import SCHEMES, Policy, PolicyConfig, PolicyDecision, PolicyState
from .markov import StateSpace, build_matrix, expected_delay
from .rlnc import Decoder, Generation, encode
from .simulator import SimConfig, run_once, run_sweep

__all__ = [
    "__version__",
    "Modulation", "BPSK", "QPSK", "PSK8", "QAM16", "MODULATIONS", "PhyConfig",
    "bit_error_prob", "erasure_prob",
    "ChannelTrace", "LmsParameters", "OPEN_AREA_GEO", "constant_trace", "generate_trace",
    "load_trace", "save_trace",
    "SCHEMES", "Policy", "PolicyConfig", "PolicyDecision", "PolicyState",
    "StateSpace", "build_matrix", "expected_delay",
    "Decoder", "Generation", "encode",
    "SimConfig", "run_once", "run_sweep",
]
