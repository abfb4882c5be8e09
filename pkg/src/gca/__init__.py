"""Generative cellular automata on sparse voxel grids."""

from .grid import NeighborhoodSpec, State, make_state
from .kernel import Architecture, ModelParams, OccupancyField, init_params, predict

__all__ = ["Architecture", "ModelParams", "NeighborhoodSpec", "OccupancyField", "State",
           "init_params", "make_state", "predict"]
__version__ = "0.1.0"
