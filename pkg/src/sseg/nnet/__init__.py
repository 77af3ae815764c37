"""Desk-scale neural component: dense-tensor reverse-mode differentiation,
the structure encoder/decoder and refinement networks, their losses, the
Adam-style optimizer, and the toy training loop."""

from .autodiff import Tensor, backward, topo_order  # noqa: F401
from .params import ModelParams, load_params, save_params  # noqa: F401
from .optim import Adam  # noqa: F401
