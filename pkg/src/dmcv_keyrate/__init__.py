"""Asymptotic key rates of quaternary discrete-modulated CV-QKD.

Submodules
----------
fock_ops
    Truncated Fock-space operators.
protocol
    Constellations, constraints and postprocessing maps.
channel
    Simulated Gaussian channel statistics.
sdp
    Linear SDP backends with certified duals.
solver
    Frank-Wolfe minimisation and the certified lower bound.
oracle
    Analytical pure-loss rate and the repeaterless bound.
cli
    Command-line batch runner.
"""

from .channel import ChannelModel
from .fock_ops import FockDim
from .oracle import dw_rate_lossonly, holevo_lossonly, plob_bound
from .protocol import HETERODYNE, HOMODYNE, ProtocolSpec
from .solver import KeyRateReport, SolverOptions, key_rate

__all__ = [
    "ChannelModel",
    "FockDim",
    "ProtocolSpec",
    "HOMODYNE",
    "HETERODYNE",
    "SolverOptions",
    "KeyRateReport",
    "key_rate",
    "dw_rate_lossonly",
    "holevo_lossonly",
    "plob_bound",
]

__version__ = "0.1.0"
