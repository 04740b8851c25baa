"""
Regressor package initialization
"""
from .models import (
    ConvRegressor,
    DensityRegressor,
    Discriminator,
    FlowRegressor,
    FlowTape,
    OpticalRegressor,
    conv_regressor_layout,
    density_forward,
    discriminator_forward,
    discriminator_layout,
    flow_backward,
    flow_forward,
    optical_forward,
    optical_layout,
)
from .optimizers import ADAM, RMSPROP, OptimizerState, optimizer_step
from .params import (
    DiscriminatorParams,
    OpticalRegressorParams,
    ParamLayout,
    ParamVector,
    RegressorParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ADAM",
    "RMSPROP",
    "ConvRegressor",
    "DensityRegressor",
    "Discriminator",
    "DiscriminatorParams",
    "FlowRegressor",
    "FlowTape",
    "OpticalRegressor",
    "OpticalRegressorParams",
    "OptimizerState",
    "ParamLayout",
    "ParamVector",
    "RegressorParams",
    "conv_regressor_layout",
    "density_forward",
    "discriminator_forward",
    "discriminator_layout",
    "flow_backward",
    "flow_forward",
    "init_params",
    "load_checkpoint",
    "optical_forward",
    "optical_layout",
    "optimizer_step",
    "save_checkpoint",
]
