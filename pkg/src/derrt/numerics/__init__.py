from .autograd import Tensor, backward, NonFiniteError
from .gaussian import DiagonalGaussian, gaussian_logpdf, logsumexp, STD_FLOOR
from .optim import SGD, sgd_step
from .params import save_params, load_params, dumps_params, loads_params
from .rng import RngStream, rng_stream, derive_seed

__all__ = [
    "Tensor", "backward", "NonFiniteError",
    "DiagonalGaussian", "gaussian_logpdf", "logsumexp", "STD_FLOOR",
    "SGD", "sgd_step",
    "save_params", "load_params", "dumps_params", "loads_params",
    "RngStream", "rng_stream", "derive_seed",
]
