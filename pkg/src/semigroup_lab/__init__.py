"""Numerical laboratory for equicontinuity and stability of Markov semigroups."""

from .measure import Measure, bl_distance, pair
from .semigroup import ClosedFormModel, FlowModel, GeneratorMatrix, GeneratorModel
from .space import MetricSpace, coordinate_space, example_space, flow_space
from .zoo import instantiate

__all__ = ["Measure", "bl_distance", "pair", "ClosedFormModel", "FlowModel", "GeneratorMatrix",
           "GeneratorModel", "MetricSpace", "coordinate_space", "example_space", "flow_space", "instantiate"]
__version__ = "0.1.0"
