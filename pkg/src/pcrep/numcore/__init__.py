"""Reverse-mode array engine: tape autodiff, Adam, and gradient verification."""

from .adam import AdamState, adam_step, init_adam
from .engine import (
    NonFiniteError,
    Tape,
    Tensor,
    absolute,
    add,
    concat_rows,
    linear,
    mul,
    reverse_gradients,
    sigmoid,
    sub,
    take_rows,
    tanh,
    total,
)
from .gradcheck import finite_diff_check

__all__ = [
    "AdamState",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "concat_rows",
    "finite_diff_check",
    "init_adam",
    "linear",
    "mul",
    "reverse_gradients",
    "sigmoid",
    "sub",
    "take_rows",
    "tanh",
    "total",
]
