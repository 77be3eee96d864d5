"""Semantic labeling of 3D point clouds (optionally with spectral
attributes) using a 1D fully-convolutional network: preprocessing,
multi-scale block tiling, training with hand-written backpropagation,
multi-scale inference and contest-style evaluation."""

__version__ = "0.1.0"

from .io import PointCloud, Raster                       # noqa: F401
from .blocks import Block, SceneExtent                   # noqa: F401
from .network import (LayerSpec, NetworkParams,          # noqa: F401
                      default_architecture, init_params, forward, backward)
from .training import TrainConfig, fit                   # noqa: F401
from .infer import ScaleConfig, DEFAULT_SCALES, predict, evaluate  # noqa: F401
