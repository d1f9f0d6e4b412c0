"""GRAPE design of controlled-Z gates for two qutrits coupled through a bus."""

from .dynamics import ControlPulse, propagate
from .model import (
    ConstantAnharmonicity,
    DeviceParams,
    TabulatedAnharmonicity,
    build_decomposition,
)
from .optimizer import (
    CZ,
    CZPulseOptimizer,
    OptimizationConfig,
    OptimizationResult,
    TargetGate,
    fidelity,
    grape_gradient,
    initial_pulse,
    optimize,
)
from .statespace import DEFAULT_BASIS, Basis, enumerate_basis
from .transfer import GaussianTransferFunction, apply_transfer_function, chain_rule_gradient

__all__ = [
    "Basis",
    "CZ",
    "CZPulseOptimizer",
    "ConstantAnharmonicity",
    "ControlPulse",
    "DEFAULT_BASIS",
    "DeviceParams",
    "GaussianTransferFunction",
    "OptimizationConfig",
    "OptimizationResult",
    "TabulatedAnharmonicity",
    "TargetGate",
    "apply_transfer_function",
    "build_decomposition",
    "chain_rule_gradient",
    "enumerate_basis",
    "fidelity",
    "grape_gradient",
    "initial_pulse",
    "optimize",
    "propagate",
]
