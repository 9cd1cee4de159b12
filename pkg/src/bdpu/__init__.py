"""Birth-and-death Polya urn chains on allelic partitions.

Kernels and a compiled simulation engine for the urn chain, its
maximal-count truncation and the modified chain; closed-form stationary and
limit laws; a direct solver for the truncation weights; and executable
checks tying them together.
"""
from .errors import (
    BDPUError,
    InadmissibleMove,
    InsufficientSample,
    ParameterError,
    RegimeError,
    SingularSystem,
    StateExceedsCapacity,
)
from .partition import AllelicPartition, ChainParams, Move, MoveKind, MuSchedule
from .stationary import LimitLaw, ThetaVector, theta_closed_form, theta_sum

__version__ = "0.1.0"

__all__ = [
    "AllelicPartition", "BDPUError", "ChainParams", "InadmissibleMove",
    "InsufficientSample", "LimitLaw", "Move", "MoveKind", "MuSchedule",
    "ParameterError", "RegimeError", "SingularSystem", "StateExceedsCapacity",
    "ThetaVector", "theta_closed_form", "theta_sum",
]
