"""Control of nonlinear systems through quantized controls and per-control surrogates."""
from .dynamics import SystemModel, TimeGrid, builtin_system, flow_map, rk4_step
from .quantization import (BoxControlSet, QuantizedControlSet, SurAccumulator, hull_distance,
                           interpolate_control, make_star_set, make_vertex_set, sur_round)

__version__ = "0.1.0"

__all__ = [
    "BoxControlSet", "QuantizedControlSet", "SurAccumulator", "SystemModel", "TimeGrid",
    "builtin_system", "flow_map", "hull_distance", "interpolate_control", "make_star_set",
    "make_vertex_set", "rk4_step", "sur_round",
]
