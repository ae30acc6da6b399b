"""Application kernels written against the runtime task API."""

from .backprop import Network, backprop, init_network
from .blackscholes import blackscholes, cndf
from .gaussian import gaussian
from .gemm import GemmPlan, tpu_gemm
from .hotspot3d import hotspot3d
from .lud import lud
from .pagerank import pagerank

APPS = ("gemm", "pagerank", "hotspot3d", "lud", "gaussian", "backprop", "blackscholes")

# device instructions each application may issue
ALLOWED_INSTRUCTIONS = {
    "gemm": {"conv2d"},
    "pagerank": {"fully_connected"},
    "hotspot3d": {"conv2d"},
    "lud": {"crop", "fully_connected", "conv2d"},
    "gaussian": {"mul"},
    "backprop": {"fully_connected", "tanh", "conv2d", "add"},
    "blackscholes": {"fully_connected"},
}

__all__ = [
    "APPS",
    "ALLOWED_INSTRUCTIONS",
    "GemmPlan",
    "Network",
    "backprop",
    "blackscholes",
    "cndf",
    "gaussian",
    "hotspot3d",
    "init_network",
    "lud",
    "pagerank",
    "tpu_gemm",
]
