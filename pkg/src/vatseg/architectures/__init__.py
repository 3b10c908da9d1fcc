"""The two segmentation networks and their checkpoint container."""

from .checkpoint import Checkpoint, build_network, spec_from_dict, spec_to_dict
from .network import Network
from .unet import UNet, UNetSpec, build_unet
from .vnet import VNet, VNetSpec, build_vnet

__all__ = [
    "Checkpoint",
    "Network",
    "UNet",
    "UNetSpec",
    "VNet",
    "VNetSpec",
    "build_network",
    "build_unet",
    "build_vnet",
    "spec_from_dict",
    "spec_to_dict",
]
