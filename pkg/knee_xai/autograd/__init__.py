from .tensor import (
    DEFAULT_DTYPE,
    Function,
    GradGraph,
    Tensor,
    as_tensor,
    backward,
    concat,
    gradient_rules,
    get_gradient_rule,
    is_grad_enabled,
    no_grad,
    stack,
)
from .taps import TapHandle, TapRecord, register_tap
from .gradcheck import finite_diff_check

__all__ = [
    "DEFAULT_DTYPE",
    "Function",
    "GradGraph",
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "gradient_rules",
    "get_gradient_rule",
    "is_grad_enabled",
    "no_grad",
    "stack",
    "TapHandle",
    "TapRecord",
    "register_tap",
    "finite_diff_check",
]
