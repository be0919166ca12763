"""Reverse-mode automatic differentiation on numpy arrays."""

from . import ops
from .core import Tape, Var, backward, forward, grad, value
from .optim import ParamStore, adamw_step

__all__ = ["ParamStore", "Tape", "Var", "adamw_step", "backward", "forward", "grad", "ops", "value"]
