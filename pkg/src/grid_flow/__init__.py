"""
Grid/flow core package initialization
"""
from .flow_field import (
    CHANNEL_NAMES,
    INCOMING,
    N_CHANNELS,
    NEIGHBOR_OFFSETS,
    OUTGOING,
    OUTSIDE,
    SELF,
    CellRegion,
    DensityMap,
    FlowDirection,
    FlowField,
    GridShape,
    ReconstructionMode,
    average_bidirectional,
    boundary_mask,
    broadcast_outgoing,
    conservation_violation_map,
    density_from_flows,
    flow_mask,
    incoming_sum,
    neighbor_cells,
    opposite_channel,
    outgoing_sum,
    reconstruct_density,
    reverse_channels,
    reverse_flow,
    scatter_incoming,
    target_cell_mask,
)
from .optical import OpticalFlowField

__all__ = [
    "OpticalFlowField",
    "CHANNEL_NAMES",
    "INCOMING",
    "N_CHANNELS",
    "NEIGHBOR_OFFSETS",
    "OUTGOING",
    "OUTSIDE",
    "SELF",
    "CellRegion",
    "DensityMap",
    "FlowDirection",
    "FlowField",
    "GridShape",
    "ReconstructionMode",
    "average_bidirectional",
    "boundary_mask",
    "broadcast_outgoing",
    "conservation_violation_map",
    "density_from_flows",
    "flow_mask",
    "incoming_sum",
    "neighbor_cells",
    "opposite_channel",
    "outgoing_sum",
    "reconstruct_density",
    "reverse_channels",
    "reverse_flow",
    "scatter_incoming",
    "target_cell_mask",
]
