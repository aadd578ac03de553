from . import tensor  # noqa: F401
from .gradcheck import GradCheckResult, grad_check  # noqa: F401
from .network import NetConfig, PoseNet, load_checkpoint, save_checkpoint  # noqa: F401
from .optim import SGD, Adam, OptimizerError, make_optimizer  # noqa: F401
from .tensor import Tensor, constant, no_grad, parameter  # noqa: F401
