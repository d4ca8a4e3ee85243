"""Online adaptation of function-encoder dynamics models by recursive least squares."""
from . import baselines, envs, fe, mppi, net, numerics, rls
from .errors import FerlsError

__version__ = "0.1.0"
__all__ = ["baselines", "envs", "fe", "mppi", "net", "numerics", "rls", "FerlsError"]
