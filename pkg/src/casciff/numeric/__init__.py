from .checkpoint import CheckpointError, config_hash, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check, rel_error
from .init import glorot_uniform, make_rng
from .optim import Adam, adam_step
from .autograd import (
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    add_bias,
    backward,
    concat,
    cross_entropy,
    linear,
    log_softmax,
    matmul,
    mean,
    mean_pool,
    mse,
    mul,
    nll_from_logits,
    relu,
    reshape,
    sigmoid,
    softmax,
    split,
    square,
    stack,
    sub,
    sum_,
    sum_of_squares,
    take,
    tanh,
    tensor,
)
