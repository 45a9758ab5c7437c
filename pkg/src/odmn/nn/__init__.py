"""Small dense-network numerics: tape autodiff, layers, Adam, gradient checks."""
from . import tape as ops
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import DenseLayer, forward
from .optim import Adam, AdamState, adam_step
from .tape import FrozenStops, Node, Parameter, Tape, backward, stop_gradient

__all__ = [
    "ops", "Node", "Parameter", "Tape", "FrozenStops", "backward", "stop_gradient", "DenseLayer", "forward",
    "Adam", "AdamState", "adam_step", "GradCheckReport", "finite_diff_check",
]
