from . import ops
from .gradcheck import fd_gradient, relative_error
from .optim import LrSchedule, OptimizerState, opt_step, zero_grad
from .tensor import (ContractError, DiffTensor, MemoryMeter, NumericalFault, ShapeError, backward,
                     grad_enabled, no_grad)

__all__ = [
    "ops", "fd_gradient", "relative_error", "LrSchedule", "OptimizerState", "opt_step", "zero_grad",
    "ContractError", "DiffTensor", "MemoryMeter", "NumericalFault", "ShapeError", "backward",
    "grad_enabled", "no_grad",
]
