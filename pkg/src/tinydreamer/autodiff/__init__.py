from . import engine
from .engine import ContractError, ShapeError, Tensor, evaluate, stop_gradient
from .gradcheck import GradCheckReport, check_gradients
from .store import ParameterStore, gradients

__all__ = [
    "engine",
    "Tensor",
    "ShapeError",
    "ContractError",
    "evaluate",
    "stop_gradient",
    "ParameterStore",
    "gradients",
    "check_gradients",
    "GradCheckReport",
]
