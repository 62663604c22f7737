from .autodiff import (
    Tensor,
    batchnorm,
    column_norms,
    concat,
    conv2d,
    dropout,
    hinge,
    kink_signature,
    maxpool2d,
    no_grad,
    record_kinks,
    roll,
    stack,
    tensor,
)
from .gradcheck import GradCheckReport, ParamCheck, finite_diff_check
from .layers import LayerSpec, forward, lstm_step

__all__ = [
    "Tensor", "tensor", "no_grad", "record_kinks", "kink_signature", "hinge", "concat", "stack",
    "roll", "column_norms", "conv2d", "maxpool2d", "batchnorm", "dropout", "LayerSpec", "forward",
    "lstm_step", "finite_diff_check", "GradCheckReport", "ParamCheck",
]
